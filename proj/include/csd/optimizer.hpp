#pragma once

#include <cstdint>
#include <vector>

#include "csd/gaussian.hpp"
#include "csd/render.hpp"

namespace csd {

/// Per-group learning rates. The position rate is what the caller passes for
/// the current iteration (the exponential decay lives in the training loop).
struct GroupLearningRates {
    double position = 1e-3;
    double color = 0.01;
    double opacity = 0.05;
    double scale = 5e-3;
    double rotation = 1e-3;
};

/// Adam moments for every Gaussian parameter group; (b1, b2) = (0.9, 0.99),
/// eps = 1e-15 as used for the 3D representation.
struct AdamState {
    std::vector<Vec3> m_position, v_position;
    std::vector<Vec3> m_log_scale, v_log_scale;
    std::vector<Vec4> m_rotation, v_rotation;
    std::vector<Vec3> m_color, v_color;
    std::vector<double> m_opacity, v_opacity;
    std::int64_t step = 0;
    double beta1 = 0.9, beta2 = 0.99, eps = 1e-15;

    explicit AdamState(std::size_t n = 0);
    std::size_t size() const { return m_position.size(); }

    /// Rebuilds the moment arrays after a structural edit: entry i of the new
    /// state copies the moments of `source[i]` in the old state (densified
    /// Gaussians inherit their parent's moments; pruned ones are dropped).
    void remap(const std::vector<int>& source);
};

/// Bias-corrected Adam update of every parameter group. Quaternions are
/// renormalized and colors clamped back to [0,1] after the step so the cloud
/// invariants hold. Throws RejectedStep on non-finite gradients (cloud and
/// state untouched).
void adam_step(AdamState& state, GaussianCloud& cloud, const RenderGradients& grads,
               const GroupLearningRates& lr);

/// Position learning rate with exponential decay from `initial` to
/// `final_value` over `decay_iters` iterations, constant afterwards.
double position_lr(int iter, double initial, double final_value, int decay_iters);

}  // namespace csd
