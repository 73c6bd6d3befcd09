#pragma once

#include <map>
#include <memory>
#include <string>

#include "csd/diffusion.hpp"
#include "csd/gaussian.hpp"
#include "csd/render.hpp"

namespace csd {

/// Reference cloud whose renders serve as per-view target images: a ball of
/// Gaussians colored by hemisphere (+z side vs -z side), so the canonical
/// front/side/back views form a consistent 3D target set.
GaussianCloud two_tone_ball(int count, double radius, double scale, double opacity,
                            const Vec3& front_color, const Vec3& back_color, std::uint64_t seed);

struct TargetCameraSpec {
    double elevation = 0.0;
    double radius = 2.2;
    double fov = 60.0;
};

/// Canonical camera for a bucket (front az 0, side az 90, back az 180,
/// overhead looking up from below) at the requested resolution.
Camera bucket_camera(ViewBucket bucket, const TargetCameraSpec& spec, int width, int height);

/// Renders a reference cloud at each bucket's canonical camera and serves the
/// results as conditional means; resolutions are cached. When `janus` is set,
/// every bucket is served the front view (a view-blind prior). The
/// unconditional mean is the average over the four bucket images.
class CloudViewTargets {
public:
    CloudViewTargets(GaussianCloud reference, TargetCameraSpec spec, RenderOptions render_opts,
                     bool janus = false);

    Image target(ViewBucket bucket, int width, int height) const;
    MeanFn mean_fn() const;

private:
    const Image& cached(ViewBucket bucket, int width, int height) const;
    GaussianCloud reference_;
    TargetCameraSpec spec_;
    RenderOptions opts_;
    bool janus_;
    mutable std::map<std::tuple<int, int, int>, Image> cache_;
};

/// Uniform color image.
MeanFn solid_mean(const Vec3& color);

}  // namespace csd
