#pragma once

#include <cstdint>
#include <vector>

#include "csd/gaussian.hpp"
#include "csd/render.hpp"
#include "csd/rng.hpp"

namespace csd {

struct DensifyConfig {
    int interval = 250;
    int stop_iteration = 1500;
    double grad_threshold = 0.01;      // mean 2D positional-gradient norm (px)
    double opacity_floor = 0.01;
    double scale_cap = 0.05;           // max activated world-space scale
    double clone_scale_boundary = 0.01;  // clone at or below, split above
    double split_scale_divisor = 1.6;

    void validate() const;  // throws InvalidParameter
};

/// Accumulated screen-space gradient statistics between densification events.
struct DensifyStats {
    std::vector<double> grad_norm_sum;
    std::vector<int> visit_count;
    std::uint64_t generation = 0;

    DensifyStats() = default;
    explicit DensifyStats(const GaussianCloud& cloud);
    /// Adds one render's statistics; sizes must match the cloud.
    void add(const RenderGradients& grads);
};

struct DensifyReport {
    int cloned = 0;
    int split = 0;
    int pruned = 0;
    /// For each Gaussian of the edited cloud, the index in the pre-edit cloud
    /// whose optimizer moments it inherits (clones and splits point at their
    /// parent).
    std::vector<int> moment_source;
};

/// True iff iter is a positive multiple of the interval not past the stop.
bool should_densify(int iter, const DensifyConfig& cfg);

/// Gradient-driven densification followed by threshold pruning. Gaussians
/// whose mean accumulated positional gradient exceeds the threshold are
/// cloned (small ones, offset by a draw from their own covariance) or split
/// in two (scale divided, positions drawn from the parent). Afterwards every
/// Gaussian below the opacity floor or above the scale cap is removed.
/// Opacities are never reset. Stats are cleared and the generation bumped.
DensifyReport densify_and_prune(GaussianCloud& cloud, DensifyStats& stats, const DensifyConfig& cfg,
                                Rng& rng);

}  // namespace csd
