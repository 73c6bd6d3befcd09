#include "csd/densify.hpp"

#include <cmath>

#include "csd/errors.hpp"

namespace csd {

void DensifyConfig::validate() const {
    if (interval < 1) throw InvalidParameter("DensifyConfig: interval must be >= 1");
    if (!(grad_threshold > 0) || !(opacity_floor > 0) || !(scale_cap > 0) ||
        !(clone_scale_boundary > 0) || !(split_scale_divisor > 1))
        throw InvalidParameter("DensifyConfig: thresholds must be positive");
}

DensifyStats::DensifyStats(const GaussianCloud& cloud)
    : grad_norm_sum(cloud.size(), 0.0), visit_count(cloud.size(), 0), generation(cloud.generation) {}

void DensifyStats::add(const RenderGradients& grads) {
    if (grads.mean2d_grad_norm.size() != grad_norm_sum.size())
        throw ShapeError("DensifyStats: size mismatch");
    for (std::size_t i = 0; i < grad_norm_sum.size(); ++i) {
        grad_norm_sum[i] += grads.mean2d_grad_norm[i];
        visit_count[i] += grads.visible_count[i];
    }
}

bool should_densify(int iter, const DensifyConfig& cfg) {
    return iter > 0 && iter % cfg.interval == 0 && iter <= cfg.stop_iteration;
}

namespace {

Vec3 sample_from_gaussian(const Gaussian& g, Rng& rng) {
    const Mat3 rot = rotation_matrix(g.rotation.normalized());
    const Vec3 n(rng.normal(), rng.normal(), rng.normal());
    return g.position + rot * g.scale().cwiseProduct(n);
}

}  // namespace

DensifyReport densify_and_prune(GaussianCloud& cloud, DensifyStats& stats, const DensifyConfig& cfg,
                                Rng& rng) {
    cfg.validate();
    if (stats.generation != cloud.generation || stats.grad_norm_sum.size() != cloud.size())
        throw GenerationMismatch("densify_and_prune: stats were collected on a different cloud");

    DensifyReport report;
    std::vector<Gaussian> next;
    std::vector<int> source;
    next.reserve(cloud.size() * 2);
    source.reserve(cloud.size() * 2);

    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Gaussian& g = cloud[i];
        const double mean_grad =
            stats.visit_count[i] > 0 ? stats.grad_norm_sum[i] / stats.visit_count[i] : 0.0;
        const double max_scale = g.scale().maxCoeff();
        if (mean_grad > cfg.grad_threshold) {
            if (max_scale <= cfg.clone_scale_boundary) {
                next.push_back(g);
                source.push_back(static_cast<int>(i));
                Gaussian clone = g;
                clone.position = sample_from_gaussian(g, rng);
                next.push_back(clone);
                source.push_back(static_cast<int>(i));
                ++report.cloned;
            } else {
                const Vec3 child_log_scale =
                    g.log_scale.array() - std::log(cfg.split_scale_divisor);
                for (int c = 0; c < 2; ++c) {
                    Gaussian child = g;
                    child.position = sample_from_gaussian(g, rng);
                    child.log_scale = child_log_scale;
                    next.push_back(child);
                    source.push_back(static_cast<int>(i));
                }
                ++report.split;
            }
        } else {
            next.push_back(g);
            source.push_back(static_cast<int>(i));
        }
    }

    std::vector<Gaussian> kept;
    std::vector<int> kept_source;
    kept.reserve(next.size());
    kept_source.reserve(next.size());
    for (std::size_t i = 0; i < next.size(); ++i) {
        const Gaussian& g = next[i];
        if (g.opacity() < cfg.opacity_floor || g.scale().maxCoeff() > cfg.scale_cap) {
            ++report.pruned;
            continue;
        }
        kept.push_back(g);
        kept_source.push_back(source[i]);
    }

    cloud.gaussians = std::move(kept);
    cloud.generation += 1;
    report.moment_source = std::move(kept_source);

    stats.grad_norm_sum.assign(cloud.size(), 0.0);
    stats.visit_count.assign(cloud.size(), 0);
    stats.generation = cloud.generation;
    return report;
}

}  // namespace csd
