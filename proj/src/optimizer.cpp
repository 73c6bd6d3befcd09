#include "csd/optimizer.hpp"

#include <algorithm>
#include <cmath>

#include "csd/errors.hpp"

namespace csd {

AdamState::AdamState(std::size_t n)
    : m_position(n, Vec3::Zero()),
      v_position(n, Vec3::Zero()),
      m_log_scale(n, Vec3::Zero()),
      v_log_scale(n, Vec3::Zero()),
      m_rotation(n, Vec4::Zero()),
      v_rotation(n, Vec4::Zero()),
      m_color(n, Vec3::Zero()),
      v_color(n, Vec3::Zero()),
      m_opacity(n, 0.0),
      v_opacity(n, 0.0) {}

void AdamState::remap(const std::vector<int>& source) {
    AdamState next(source.size());
    next.step = step;
    next.beta1 = beta1;
    next.beta2 = beta2;
    next.eps = eps;
    for (std::size_t i = 0; i < source.size(); ++i) {
        const int s = source[i];
        next.m_position[i] = m_position[s];
        next.v_position[i] = v_position[s];
        next.m_log_scale[i] = m_log_scale[s];
        next.v_log_scale[i] = v_log_scale[s];
        next.m_rotation[i] = m_rotation[s];
        next.v_rotation[i] = v_rotation[s];
        next.m_color[i] = m_color[s];
        next.v_color[i] = v_color[s];
        next.m_opacity[i] = m_opacity[s];
        next.v_opacity[i] = v_opacity[s];
    }
    *this = std::move(next);
}

namespace {

template <typename T>
void update_group(T& param, T& m, T& v, const T& grad, double lr, double b1, double b2, double bc1,
                  double bc2, double eps) {
    m = b1 * m + (1.0 - b1) * grad;
    if constexpr (std::is_same_v<T, double>) {
        v = b2 * v + (1.0 - b2) * grad * grad;
        param -= lr * (m / bc1) / (std::sqrt(v / bc2) + eps);
    } else {
        v = (b2 * v.array() + (1.0 - b2) * grad.array().square()).matrix();
        param -= (lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps)).matrix();
    }
}

}  // namespace

void adam_step(AdamState& state, GaussianCloud& cloud, const RenderGradients& grads,
               const GroupLearningRates& lr) {
    const std::size_t n = cloud.size();
    if (state.size() != n || grads.position.size() != n)
        throw ShapeError("adam_step: state/gradient size mismatch");
    for (std::size_t i = 0; i < n; ++i) {
        if (!grads.position[i].allFinite() || !grads.log_scale[i].allFinite() ||
            !grads.rotation[i].allFinite() || !grads.color[i].allFinite() ||
            !std::isfinite(grads.opacity_logit[i]))
            throw RejectedStep("adam_step: non-finite gradient at Gaussian " + std::to_string(i));
    }

    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

    for (std::size_t i = 0; i < n; ++i) {
        Gaussian& g = cloud[i];
        update_group(g.position, state.m_position[i], state.v_position[i], grads.position[i],
                     lr.position, state.beta1, state.beta2, bc1, bc2, state.eps);
        update_group(g.log_scale, state.m_log_scale[i], state.v_log_scale[i], grads.log_scale[i],
                     lr.scale, state.beta1, state.beta2, bc1, bc2, state.eps);
        update_group(g.rotation, state.m_rotation[i], state.v_rotation[i], grads.rotation[i],
                     lr.rotation, state.beta1, state.beta2, bc1, bc2, state.eps);
        update_group(g.color, state.m_color[i], state.v_color[i], grads.color[i], lr.color,
                     state.beta1, state.beta2, bc1, bc2, state.eps);
        update_group(g.opacity_logit, state.m_opacity[i], state.v_opacity[i], grads.opacity_logit[i],
                     lr.opacity, state.beta1, state.beta2, bc1, bc2, state.eps);
        // Keep the cloud invariants: unit quaternion, color in [0,1].
        g.rotation.normalize();
        for (int c = 0; c < 3; ++c) g.color[c] = std::clamp(g.color[c], 0.0, 1.0);
    }
}

double position_lr(int iter, double initial, double final_value, int decay_iters) {
    if (decay_iters <= 0) return final_value;
    const double f = std::min(1.0, static_cast<double>(iter) / decay_iters);
    return initial * std::pow(final_value / initial, f);
}

}  // namespace csd
