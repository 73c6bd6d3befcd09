#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "csd/gaussian.hpp"
#include "csd/rng.hpp"

namespace csd {

struct GridSpec {
    int resolution = 64;  // cells per axis, >= 8
    /// Axis-aligned bounds; when unset they are computed to enclose the
    /// cloud's 3-sigma extent.
    std::optional<std::pair<Vec3, Vec3>> bounds;
};

struct OccupancyGrid {
    int resolution = 0;
    Vec3 lo = Vec3::Zero(), hi = Vec3::Zero();
    std::vector<std::uint8_t> occupied;  // x-major: index = (z*R + y)*R + x
    double threshold = 0.2;

    std::size_t cell_index(int x, int y, int z) const {
        return (static_cast<std::size_t>(z) * resolution + y) * resolution + x;
    }
    Vec3 cell_center(int x, int y, int z) const;
    double cell_size() const { return (hi[0] - lo[0]) / resolution; }
    std::size_t occupied_count() const;
};

/// Marks cells where the summed local density alpha_i G_i(cell center - mu_i)
/// of nearby Gaussians (3-sigma bounding boxes) exceeds the threshold.
OccupancyGrid density_query(const GaussianCloud& cloud, const GridSpec& spec,
                            double threshold = 0.2);

/// Signed distance in cell units: positive outside (distance to the occupied
/// set), negative inside (minus distance to the free set). Exact Euclidean
/// via the per-axis squared-distance transform. Throws DegenerateField when
/// the grid is uniformly occupied or uniformly free.
std::vector<double> sdf_from_occupancy(const OccupancyGrid& grid);

/// Exact squared Euclidean distance to the nearest zero cell of `mask` on an
/// R^3 lattice (the building block of sdf_from_occupancy, exposed for tests).
std::vector<double> edt_squared(const std::vector<std::uint8_t>& mask, int nx, int ny, int nz);

struct TetGrid {
    int resolution = 0;        // vertices per axis
    Vec3 lo = Vec3::Zero();
    double spacing = 0;        // lattice step (cubic)
    std::vector<Vec3> base_positions;
    std::vector<Vec3> deformation;  // clamped to +-spacing/2 per component
    std::vector<double> sdf;
    std::vector<std::array<int, 4>> tets;  // positively oriented

    std::size_t vertex_index(int x, int y, int z) const {
        return (static_cast<std::size_t>(z) * resolution + y) * resolution + x;
    }
    Vec3 vertex_position(std::size_t i) const { return base_positions[i] + deformation[i]; }
};

/// Regular lattice split into 6 tetrahedra per cube, SDF initialized by
/// sampling `field` at the vertices (world units).
TetGrid build_tetgrid(int resolution, const Vec3& lo, const Vec3& hi,
                      const std::function<double(const Vec3&)>& field);

/// Trilinear interpolation of a cell-unit SDF grid, rescaled to world units;
/// the usual stage-two fitting target.
std::function<double(const Vec3&)> trilinear_sdf_field(const OccupancyGrid& grid,
                                                       const std::vector<double>& sdf);

struct Mesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> faces;
    std::vector<Vec3> colors;  // optional, per vertex

    bool empty() const { return faces.empty(); }
};

/// Sign-change surface extraction over the deformed tetrahedra; vertices sit
/// at the SDF-linear-interpolation zeros along edges, normals point toward
/// positive SDF. Throws InvalidField on NaN SDF values.
Mesh marching_tetrahedra(const TetGrid& grid);

struct FitOptions {
    int iterations = 200;
    double learning_rate = 1e-2;
    int samples_per_iteration = 2048;
    std::uint64_t seed = 0;
};

/// Jointly optimizes per-vertex SDF and deformation so the grid's
/// interpolated field matches `target` at randomly sampled points (Adam,
/// squared error). The deformation clamp is enforced after every step.
/// Throws DivergedFit when the loss quintuples over a 100-step window.
TetGrid fit_tetgrid(TetGrid grid, const std::function<double(const Vec3&)>& target,
                    const FitOptions& opts);

enum class MeshFormat { Obj, PlyBinary };

void export_mesh(const Mesh& mesh, const std::string& path, MeshFormat format);
Mesh import_mesh(const std::string& path, MeshFormat format);

/// Density-weighted average of Gaussian colors within 3 sigma of each vertex;
/// vertices with negligible total weight fall back to grey.
Mesh bake_vertex_colors(Mesh mesh, const GaussianCloud& cloud);

}  // namespace csd
