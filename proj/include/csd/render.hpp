#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "csd/camera.hpp"
#include "csd/gaussian.hpp"
#include "csd/image.hpp"

namespace csd {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

struct RenderOptions {
    Vec3 background = Vec3(0, 0, 0);
    /// Compositing for a pixel stops once transmittance falls below this; 0 disables.
    double early_stop_transmittance = 1e-4;
    /// Splats contributing less than this at a pixel are skipped there; 0 disables.
    double splat_cutoff = 1.0 / 255.0;
    /// Tile culling radius in standard deviations of the projected footprint;
    /// <= 0 disables tile culling entirely.
    double cull_sigma = 3.0;
    int tile_size = 16;
    int threads = 1;
};

struct RenderedImage {
    Image rgb;    // H x W x 3 in [0, 1]
    Image alpha;  // H x W x 1, accumulated opacity
};

struct Projected {
    Vec2 mean2d;   // pixel coordinates
    Mat2 cov2d;    // includes the low-pass dilation
    double depth;  // view-space z
};

/// Per-Gaussian gradients of a scalar loss plus the accumulated screen-space
/// positional gradient statistic that drives densification.
struct RenderGradients {
    std::vector<Vec3> position;
    std::vector<Vec3> log_scale;
    std::vector<Vec4> rotation;
    std::vector<Vec3> color;
    std::vector<double> opacity_logit;
    std::vector<double> mean2d_grad_norm;  // ||dL/dmean2d|| per render, summed
    std::vector<int> visible_count;        // renders in which the Gaussian projected

    explicit RenderGradients(std::size_t n = 0);
    void accumulate(const RenderGradients& other);  // elementwise add
    void scale(double factor);
};

/// EWA projection of one Gaussian: perspective-projected mean, 2D covariance
/// J W Sigma W^T J^T + 0.3 I, and view depth. Returns nullopt when the
/// Gaussian lies behind the near plane (depth <= 0.01) — the caller skips it.
std::optional<Projected> project_gaussian(const Gaussian& g, const Camera& cam);

/// Front-to-back alpha compositing of the projected Gaussians over the
/// background color (depth order, ties broken by index).
RenderedImage render(const GaussianCloud& cloud, const Camera& cam, const RenderOptions& opts);

/// Analytic gradients of sum_pixels <grad_rgb, C> for all five parameter
/// groups. grad_rgb must be H x W x 3 matching the camera; the forward pass
/// is recomputed internally with the same options.
RenderGradients render_backward(const GaussianCloud& cloud, const Camera& cam,
                                const RenderOptions& opts, const Image& grad_rgb);

}  // namespace csd
