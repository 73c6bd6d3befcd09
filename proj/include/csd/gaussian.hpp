#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "csd/rng.hpp"

namespace csd {

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;

/// One anisotropic 3D Gaussian. Scale is stored in log-space and opacity as a
/// logit so the optimizer works on unconstrained values; `scale()` and
/// `opacity()` give the activated quantities.
struct Gaussian {
    Vec3 position = Vec3::Zero();
    Vec3 log_scale = Vec3::Zero();
    Vec4 rotation = Vec4(1, 0, 0, 0);  // unit quaternion (w, x, y, z)
    Vec3 color = Vec3(0.5, 0.5, 0.5);  // plain RGB in [0, 1]
    double opacity_logit = 0.0;

    Vec3 scale() const { return log_scale.array().exp(); }
    double opacity() const { return 1.0 / (1.0 + std::exp(-opacity_logit)); }
};

/// Ordered collection of Gaussians. `generation` increments on every
/// structural edit (densify/prune) so gradient statistics can be matched
/// against the population they were collected on.
struct GaussianCloud {
    std::vector<Gaussian> gaussians;
    std::uint64_t generation = 0;

    std::size_t size() const { return gaussians.size(); }
    bool empty() const { return gaussians.empty(); }
    Gaussian& operator[](std::size_t i) { return gaussians[i]; }
    const Gaussian& operator[](std::size_t i) const { return gaussians[i]; }
};

/// Sigma = R diag(exp(log_scale))^2 R^T. Renormalizes q when its norm is off
/// by less than 1e-3; larger deviations throw UnnormalizedRotation.
Mat3 covariance_from_scale_rotation(const Vec3& log_scale, const Vec4& q);

/// Rotation matrix of a quaternion assumed unit length.
Mat3 rotation_matrix(const Vec4& q);

/// exp(-1/2 l^T Sigma^-1 l). Throws SingularCovariance when cond(Sigma) >= 1e12.
double evaluate_gaussian(const Mat3& sigma, const Vec3& l);

/// Uniform cloud inside a sphere. Every Gaussian gets the given opacity and
/// color; scales are isotropic at (mean nearest-neighbor distance)/3 clamped
/// to [1e-3, 0.05]; rotations are identity. Deterministic in the seed.
GaussianCloud init_cloud(int count, double radius, double opacity, const Vec3& color,
                         std::uint64_t seed);

/// Binary little-endian PLY, one vertex per Gaussian with float32 properties
/// x y z f_dc_0..2 opacity scale_0..2 rot_0..3 (the common splat layout:
/// colors are stored as SH DC coefficients, opacity as logit, scale as log).
void save_cloud(const GaussianCloud& cloud, const std::string& path);
GaussianCloud load_cloud(const std::string& path);

}  // namespace csd
