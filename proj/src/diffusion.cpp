#include "csd/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "csd/errors.hpp"

namespace csd {

NoiseSchedule::NoiseSchedule(ScheduleKind kind, int steps, TimeWeighting weighting)
    : weighting_(weighting) {
    if (steps < 2) throw InvalidParameter("NoiseSchedule: need at least 2 steps");
    alpha_bar_.resize(steps);
    if (kind == ScheduleKind::LinearBeta) {
        const double beta_min = 1e-4, beta_max = 0.02;
        double prod = 1.0;
        for (int i = 0; i < steps; ++i) {
            const double beta = beta_min + (beta_max - beta_min) * i / (steps - 1);
            prod *= 1.0 - beta;
            alpha_bar_[i] = prod;
        }
    } else {
        auto f = [](double u) {
            const double c = std::cos((u + 0.008) / 1.008 * M_PI / 2.0);
            return c * c;
        };
        const double f0 = f(0.0);
        double prev = 1.0;
        for (int i = 0; i < steps; ++i) {
            double ab = f((i + 1.0) / steps) / f0;
            // Cap per-step beta at 0.999 to keep the tail strictly decreasing.
            ab = std::max(ab, prev * 0.001);
            ab = std::min(ab, prev * (1.0 - 1e-9));
            alpha_bar_[i] = ab;
            prev = ab;
        }
    }
}

int NoiseSchedule::index_of(double t) const {
    if (!(t >= 0.0 && t <= 1.0)) throw InvalidParameter("NoiseSchedule: t must be in [0, 1]");
    const int n = static_cast<int>(alpha_bar_.size());
    return std::min(n - 1, static_cast<int>(t * (n - 1)));
}

double NoiseSchedule::alpha(double t) const { return std::sqrt(alpha_bar_[index_of(t)]); }

double NoiseSchedule::sigma(double t) const { return std::sqrt(1.0 - alpha_bar_[index_of(t)]); }

double NoiseSchedule::weight(double t) const {
    if (weighting_ == TimeWeighting::One) return 1.0;
    const double s = sigma(t);
    return s * s;
}

Image forward_diffuse(const Image& x0, double t, const Image& eps, const NoiseSchedule& schedule) {
    if (!x0.same_shape(eps)) throw ShapeError("forward_diffuse: x0/eps shape mismatch");
    if (!(t > 0.0 && t < 1.0)) throw InvalidParameter("forward_diffuse: t must be in (0, 1)");
    const double a = schedule.alpha(t), s = schedule.sigma(t);
    Image out = x0;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a * x0.data[i] + s * eps.data[i];
    return out;
}

Image cfg_combine(const Image& eps_cond, const Image& eps_uncond, double guidance) {
    if (!eps_cond.same_shape(eps_uncond)) throw ShapeError("cfg_combine: shape mismatch");
    if (guidance < 0.0) throw InvalidParameter("cfg_combine: guidance scale must be >= 0");
    Image out = eps_cond;
    for (std::size_t i = 0; i < out.size(); ++i)
        out.data[i] = (1.0 + guidance) * eps_cond.data[i] - guidance * eps_uncond.data[i];
    return out;
}

Image v_to_eps(const Image& v_pred, const Image& x_t, double t, const NoiseSchedule& schedule) {
    if (!v_pred.same_shape(x_t)) throw ShapeError("v_to_eps: shape mismatch");
    const double a = schedule.alpha(t), s = schedule.sigma(t);
    Image out = v_pred;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a * v_pred.data[i] + s * x_t.data[i];
    return out;
}

AnalyticGaussianProvider::AnalyticGaussianProvider(MeanFn mean, double gamma,
                                                   const NoiseSchedule& schedule)
    : mean_(std::move(mean)), gamma_(gamma), schedule_(&schedule) {
    if (gamma < 0.0) throw InvalidParameter("AnalyticGaussianProvider: gamma must be >= 0");
}

AnalyticGaussianProvider::AnalyticGaussianProvider(MeanFn mean, Image diag_gamma,
                                                   const NoiseSchedule& schedule)
    : mean_(std::move(mean)), diag_gamma_(std::move(diag_gamma)), schedule_(&schedule) {
    for (double v : diag_gamma_->data)
        if (v < 0.0) throw InvalidParameter("AnalyticGaussianProvider: gamma must be >= 0");
}

Image AnalyticGaussianProvider::predict_noise(const Image& x_t, double t, const Condition& cond) const {
    const double a = schedule_->alpha(t), s = schedule_->sigma(t);
    const Image m = mean_(cond, x_t.width, x_t.height);
    if (!m.same_shape(x_t)) throw ShapeError("AnalyticGaussianProvider: mean shape mismatch");
    Image out = x_t;
    if (diag_gamma_) {
        if (!diag_gamma_->same_shape(x_t))
            throw ShapeError("AnalyticGaussianProvider: gamma shape mismatch");
        for (std::size_t i = 0; i < out.size(); ++i) {
            const double denom = a * a * diag_gamma_->data[i] + s * s;
            out.data[i] = s * (x_t.data[i] - a * m.data[i]) / denom;
        }
    } else {
        const double denom = a * a * gamma_ + s * s;
        for (std::size_t i = 0; i < out.size(); ++i)
            out.data[i] = s * (x_t.data[i] - a * m.data[i]) / denom;
    }
    return out;
}

AnalyticMixtureProvider::AnalyticMixtureProvider(std::vector<Component> components,
                                                 const NoiseSchedule& schedule)
    : components_(std::move(components)), schedule_(&schedule) {
    if (components_.empty()) throw InvalidParameter("AnalyticMixtureProvider: empty mixture");
    double total = 0.0;
    for (const auto& c : components_) {
        if (!(c.weight > 0.0)) throw InvalidParameter("AnalyticMixtureProvider: weights must be > 0");
        if (c.gamma < 0.0) throw InvalidParameter("AnalyticMixtureProvider: gamma must be >= 0");
        total += c.weight;
    }
    if (std::abs(total - 1.0) > 1e-9)
        throw InvalidParameter("AnalyticMixtureProvider: weights must sum to 1");
}

Image AnalyticMixtureProvider::predict_noise(const Image& x_t, double t, const Condition& cond) const {
    const double a = schedule_->alpha(t), s = schedule_->sigma(t);
    const std::size_t k = components_.size();
    const std::size_t dim = x_t.size();

    std::vector<Image> means(k);
    std::vector<double> log_post(k);
    for (std::size_t c = 0; c < k; ++c) {
        means[c] = components_[c].mean(cond, x_t.width, x_t.height);
        if (!means[c].same_shape(x_t)) throw ShapeError("AnalyticMixtureProvider: mean shape mismatch");
        const double var = a * a * components_[c].gamma + s * s;
        double quad = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
            const double d = x_t.data[i] - a * means[c].data[i];
            quad += d * d;
        }
        log_post[c] = std::log(components_[c].weight) -
                      0.5 * (dim * std::log(2.0 * M_PI * var) + quad / var);
    }
    const double peak = *std::max_element(log_post.begin(), log_post.end());
    double norm = 0.0;
    for (double& lp : log_post) {
        lp = std::exp(lp - peak);
        norm += lp;
    }

    Image out(x_t.width, x_t.height, x_t.channels, 0.0);
    for (std::size_t c = 0; c < k; ++c) {
        const double resp = log_post[c] / norm;
        const double var = a * a * components_[c].gamma + s * s;
        for (std::size_t i = 0; i < dim; ++i)
            out.data[i] += resp * s * (x_t.data[i] - a * means[c].data[i]) / var;
    }
    return out;
}

double AnalyticMixtureProvider::log_density(const Image& x_t, double t, const Condition& cond) const {
    const double a = schedule_->alpha(t), s = schedule_->sigma(t);
    const std::size_t dim = x_t.size();
    std::vector<double> log_terms(components_.size());
    for (std::size_t c = 0; c < components_.size(); ++c) {
        const Image m = components_[c].mean(cond, x_t.width, x_t.height);
        const double var = a * a * components_[c].gamma + s * s;
        double quad = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
            const double d = x_t.data[i] - a * m.data[i];
            quad += d * d;
        }
        log_terms[c] = std::log(components_[c].weight) -
                       0.5 * (dim * std::log(2.0 * M_PI * var) + quad / var);
    }
    const double peak = *std::max_element(log_terms.begin(), log_terms.end());
    double total = 0.0;
    for (double lt : log_terms) total += std::exp(lt - peak);
    return peak + std::log(total);
}

AnalyticJointProvider::AnalyticJointProvider(MeanFn mean, double gamma, double rho,
                                             const NoiseSchedule& schedule)
    : mean_(std::move(mean)), gamma_(gamma), rho_(rho), schedule_(&schedule) {
    // Eigenvalues of the per-pixel 4x4 block are gamma + 3 rho and gamma - rho.
    if (!(gamma + 3.0 * rho > 0.0) || !(gamma - rho > 0.0))
        throw InvalidParameter("AnalyticJointProvider: coupling is not positive definite");
}

Image AnalyticJointProvider::mean_for(const Camera& cam, int prompt_id, int width, int height) const {
    Condition cond;
    cond.prompt_id = prompt_id;
    cond.bucket = view_bucket(cam);
    cond.camera = cam;
    return mean_(cond, width, height);
}

std::array<Image, 4> AnalyticJointProvider::predict_noise(const std::array<Image, 4>& x_t, double t,
                                                          const CameraQuad& quad,
                                                          int prompt_id) const {
    for (int v = 1; v < 4; ++v)
        if (!x_t[v].same_shape(x_t[0])) throw ShapeError("AnalyticJointProvider: view shape mismatch");

    const double a = schedule_->alpha(t), s = schedule_->sigma(t);
    const double diag = a * a * gamma_ + s * s;   // diffused per-view variance
    const double off = a * a * rho_;              // diffused cross-view coupling
    // ((diag - off) I + off J)^-1 = 1/(diag - off) (I - off/(diag + 3 off) J)
    const double inv_base = 1.0 / (diag - off);
    const double mix = off / (diag + 3.0 * off);

    std::array<Image, 4> centered;
    for (int v = 0; v < 4; ++v) {
        const Image m = mean_for(quad[v], prompt_id, x_t[v].width, x_t[v].height);
        if (!m.same_shape(x_t[v])) throw ShapeError("AnalyticJointProvider: mean shape mismatch");
        centered[v] = x_t[v];
        for (std::size_t i = 0; i < centered[v].size(); ++i)
            centered[v].data[i] = x_t[v].data[i] - a * m.data[i];
    }

    std::array<Image, 4> out;
    const std::size_t dim = x_t[0].size();
    for (int v = 0; v < 4; ++v) {
        out[v] = Image(x_t[v].width, x_t[v].height, x_t[v].channels);
        for (std::size_t i = 0; i < dim; ++i) {
            double sum = 0.0;
            for (int w = 0; w < 4; ++w) sum += centered[w].data[i];
            out[v].data[i] = s * inv_base * (centered[v].data[i] - mix * sum);
        }
    }
    return out;
}

}  // namespace csd
