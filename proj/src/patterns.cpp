#include "csd/patterns.hpp"

#include <mutex>

#include "csd/errors.hpp"

namespace csd {

GaussianCloud two_tone_ball(int count, double radius, double scale, double opacity,
                            const Vec3& front_color, const Vec3& back_color, std::uint64_t seed) {
    GaussianCloud cloud = init_cloud(count, radius, opacity, front_color, seed);
    const Vec3 log_scale = Vec3::Constant(std::log(scale));
    for (auto& g : cloud.gaussians) {
        g.log_scale = log_scale;
        g.color = g.position[2] >= 0.0 ? front_color : back_color;
    }
    return cloud;
}

Camera bucket_camera(ViewBucket bucket, const TargetCameraSpec& spec, int width, int height) {
    switch (bucket) {
        case ViewBucket::Front:
            return Camera(0, spec.elevation, spec.radius, spec.fov, width, height);
        case ViewBucket::Side:
            return Camera(90, spec.elevation, spec.radius, spec.fov, width, height);
        case ViewBucket::Back:
            return Camera(180, spec.elevation, spec.radius, spec.fov, width, height);
        case ViewBucket::Overhead:
            return Camera(0, -75, spec.radius, spec.fov, width, height);
    }
    throw InvalidParameter("bucket_camera: bad bucket");
}

CloudViewTargets::CloudViewTargets(GaussianCloud reference, TargetCameraSpec spec,
                                   RenderOptions render_opts, bool janus)
    : reference_(std::move(reference)), spec_(spec), opts_(render_opts), janus_(janus) {}

const Image& CloudViewTargets::cached(ViewBucket bucket, int width, int height) const {
    static std::mutex mutex;
    std::lock_guard<std::mutex> lock(mutex);
    const auto key = std::make_tuple(static_cast<int>(bucket), width, height);
    auto it = cache_.find(key);
    if (it == cache_.end()) {
        const Camera cam = bucket_camera(bucket, spec_, width, height);
        it = cache_.emplace(key, render(reference_, cam, opts_).rgb).first;
    }
    return it->second;
}

Image CloudViewTargets::target(ViewBucket bucket, int width, int height) const {
    return cached(janus_ ? ViewBucket::Front : bucket, width, height);
}

MeanFn CloudViewTargets::mean_fn() const {
    // The unconditional prompt is served the bucket average.
    return [this](const Condition& cond, int width, int height) {
        if (!cond.unconditional() && cond.bucket)
            return target(*cond.bucket, width, height);
        Image avg(width, height, 3, 0.0);
        for (ViewBucket b :
             {ViewBucket::Front, ViewBucket::Side, ViewBucket::Back, ViewBucket::Overhead}) {
            const Image& img = cached(b, width, height);
            for (std::size_t i = 0; i < avg.size(); ++i) avg.data[i] += 0.25 * img.data[i];
        }
        return avg;
    };
}

MeanFn solid_mean(const Vec3& color) {
    return [color](const Condition&, int width, int height) {
        Image img(width, height, 3);
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x)
                for (int c = 0; c < 3; ++c) img.at(y, x, c) = color[c];
        return img;
    };
}

}  // namespace csd
