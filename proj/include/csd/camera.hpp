#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>

#include "csd/gaussian.hpp"
#include "csd/rng.hpp"

namespace csd {

/// Viewpoint looking at the world origin. World frame is right-handed with
/// +y up; azimuth 0 places the camera on the +z axis, positive azimuth
/// rotates toward +x. View space has x right, y down, z forward, so pixel
/// coordinates follow directly from the intrinsics.
struct Camera {
    double azimuth_deg = 0.0;    // in [-180, 180)
    double elevation_deg = 0.0;  // positive above the horizon
    double radius = 2.2;
    double fov_y_deg = 60.0;
    int width = 128;
    int height = 128;

    Camera() = default;
    Camera(double azimuth, double elevation, double radius, double fov_y, int width, int height);

    Vec3 position() const;
    /// World-to-view rotation (rows: right, down, forward).
    Mat3 world_to_view() const;
    /// View-space coordinates of a world point; z is the depth.
    Vec3 to_view(const Vec3& world) const;
    /// Focal lengths in pixels (square pixels, driven by the vertical fov).
    double focal_y() const;
    double focal_x() const { return focal_y(); }
    /// Principal point: the image center.
    double cx() const { return 0.5 * width; }
    double cy() const { return 0.5 * height; }

    Camera with_resolution(int w, int h) const;
};

/// Four cameras sharing elevation/radius/fov whose azimuths are the base
/// azimuth plus exact multiples of 90 degrees.
struct CameraQuad {
    std::array<Camera, 4> views;

    const Camera& operator[](std::size_t i) const { return views[i]; }
    Camera& operator[](std::size_t i) { return views[i]; }
};

/// Sampling ranges for random viewpoints; defaults follow the training setup
/// (radius [2.0, 2.5], elevation [-90, 30], fov [40, 70]).
struct CameraRanges {
    double azimuth_min = -180.0, azimuth_max = 180.0;
    double elevation_min = -90.0, elevation_max = 30.0;
    double radius_min = 2.0, radius_max = 2.5;
    double fov_min = 40.0, fov_max = 70.0;
    int width = 128;
    int height = 128;

    void validate() const;  // throws InvalidParameter
};

Camera sample_camera(Rng& rng, const CameraRanges& ranges);
CameraQuad sample_orthogonal_quad(Rng& rng, const CameraRanges& ranges);

/// Wraps an angle in degrees to [-180, 180).
double wrap_azimuth(double deg);

enum class ViewBucket { Front, Side, Back, Overhead };

/// Direction tag used for view-dependent conditioning. Front covers azimuth
/// (-45, 45], side |azimuth| in (45, 135], back the rest; |elevation| > 60
/// maps to overhead regardless of azimuth.
ViewBucket view_bucket(const Camera& cam);

std::string to_string(ViewBucket b);

}  // namespace csd
