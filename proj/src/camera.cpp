#include "csd/camera.hpp"

#include <cmath>

#include "csd/errors.hpp"

namespace csd {

namespace {
constexpr double kDegToRad = M_PI / 180.0;
}

double wrap_azimuth(double deg) {
    double a = std::fmod(deg + 180.0, 360.0);
    if (a < 0) a += 360.0;
    return a - 180.0;
}

Camera::Camera(double azimuth, double elevation, double radius, double fov_y, int width, int height)
    : azimuth_deg(wrap_azimuth(azimuth)),
      elevation_deg(elevation),
      radius(radius),
      fov_y_deg(fov_y),
      width(width),
      height(height) {
    if (!(radius > 0.0)) throw InvalidParameter("Camera: radius must be > 0");
    if (!(fov_y > 0.0 && fov_y < 180.0)) throw InvalidParameter("Camera: fov_y must be in (0, 180)");
    if (width < 1 || height < 1) throw InvalidParameter("Camera: image size must be positive");
}

Vec3 Camera::position() const {
    const double az = azimuth_deg * kDegToRad;
    const double el = elevation_deg * kDegToRad;
    return radius * Vec3(std::cos(el) * std::sin(az), std::sin(el), std::cos(el) * std::cos(az));
}

Mat3 Camera::world_to_view() const {
    const Vec3 p = position();
    const Vec3 forward = (-p).normalized();
    Vec3 up(0, 1, 0);
    // Straight-down/up viewpoints need a different reference up.
    if (std::abs(forward.dot(up)) > 1.0 - 1e-9) up = Vec3(0, 0, 1);
    const Vec3 right = forward.cross(up).normalized();
    const Vec3 down = forward.cross(right);
    Mat3 w;
    w.row(0) = right;
    w.row(1) = down;
    w.row(2) = forward;
    return w;
}

Vec3 Camera::to_view(const Vec3& world) const { return world_to_view() * (world - position()); }

double Camera::focal_y() const { return 0.5 * height / std::tan(0.5 * fov_y_deg * kDegToRad); }

Camera Camera::with_resolution(int w, int h) const {
    Camera c = *this;
    c.width = w;
    c.height = h;
    return c;
}

void CameraRanges::validate() const {
    auto check = [](double lo, double hi, const char* what) {
        if (!(lo <= hi)) throw InvalidParameter(std::string("CameraRanges: ") + what + " min > max");
    };
    check(azimuth_min, azimuth_max, "azimuth");
    check(elevation_min, elevation_max, "elevation");
    check(radius_min, radius_max, "radius");
    check(fov_min, fov_max, "fov");
    if (!(radius_min > 0.0)) throw InvalidParameter("CameraRanges: radius must be > 0");
    if (!(fov_min > 0.0 && fov_max < 180.0)) throw InvalidParameter("CameraRanges: fov must be in (0, 180)");
    if (elevation_min < -90.0 || elevation_max > 90.0)
        throw InvalidParameter("CameraRanges: elevation must be within [-90, 90]");
    if (width < 1 || height < 1) throw InvalidParameter("CameraRanges: image size must be positive");
}

namespace {

// Degenerate min == max ranges must still consume one draw so the stream
// stays aligned whatever the configuration.
double draw(Rng& rng, double lo, double hi) {
    const double u = rng.uniform();
    return lo + (hi - lo) * u;
}

}  // namespace

Camera sample_camera(Rng& rng, const CameraRanges& ranges) {
    ranges.validate();
    const double az = draw(rng, ranges.azimuth_min, ranges.azimuth_max);
    const double el = draw(rng, ranges.elevation_min, ranges.elevation_max);
    const double r = draw(rng, ranges.radius_min, ranges.radius_max);
    const double fov = draw(rng, ranges.fov_min, ranges.fov_max);
    return Camera(az, el, r, fov, ranges.width, ranges.height);
}

CameraQuad sample_orthogonal_quad(Rng& rng, const CameraRanges& ranges) {
    const Camera base = sample_camera(rng, ranges);
    CameraQuad quad;
    for (int j = 0; j < 4; ++j)
        quad.views[j] = Camera(base.azimuth_deg + 90.0 * j, base.elevation_deg, base.radius,
                               base.fov_y_deg, base.width, base.height);
    return quad;
}

ViewBucket view_bucket(const Camera& cam) {
    if (std::abs(cam.elevation_deg) > 60.0) return ViewBucket::Overhead;
    const double az = wrap_azimuth(cam.azimuth_deg);
    if (az > -45.0 && az <= 45.0) return ViewBucket::Front;
    const double a = std::abs(az);
    if (a > 45.0 && a <= 135.0) return ViewBucket::Side;
    return ViewBucket::Back;
}

std::string to_string(ViewBucket b) {
    switch (b) {
        case ViewBucket::Front: return "front";
        case ViewBucket::Side: return "side";
        case ViewBucket::Back: return "back";
        case ViewBucket::Overhead: return "overhead";
    }
    return "?";
}

}  // namespace csd
