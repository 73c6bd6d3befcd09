#include "csd/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "csd/errors.hpp"

namespace csd {

Vec3 OccupancyGrid::cell_center(int x, int y, int z) const {
    const double h = cell_size();
    return lo + h * Vec3(x + 0.5, y + 0.5, z + 0.5);
}

std::size_t OccupancyGrid::occupied_count() const {
    std::size_t n = 0;
    for (auto v : occupied) n += v != 0;
    return n;
}

namespace {

struct GaussianEllipsoid {
    Vec3 mu;
    Mat3 inv_cov;
    Vec3 half_extent;  // 3-sigma axis-aligned half extents
    double alpha;
};

std::vector<GaussianEllipsoid> collect_ellipsoids(const GaussianCloud& cloud) {
    std::vector<GaussianEllipsoid> out;
    out.reserve(cloud.size());
    for (const auto& g : cloud.gaussians) {
        const Vec3 s = g.scale();
        const double smax = s.maxCoeff(), smin = s.minCoeff();
        if (!(smin > 0) || (smax * smax) / (smin * smin) >= 1e12) continue;
        const Mat3 rot = rotation_matrix(g.rotation.normalized());
        GaussianEllipsoid e;
        e.mu = g.position;
        e.inv_cov = rot * s.cwiseProduct(s).cwiseInverse().asDiagonal() * rot.transpose();
        const Mat3 cov = rot * s.cwiseProduct(s).asDiagonal() * rot.transpose();
        e.half_extent = 3.0 * cov.diagonal().cwiseSqrt();
        e.alpha = g.opacity();
        out.push_back(e);
    }
    return out;
}

}  // namespace

OccupancyGrid density_query(const GaussianCloud& cloud, const GridSpec& spec, double threshold) {
    if (cloud.empty()) throw EmptyCloud("density_query: empty cloud");
    if (spec.resolution < 8) throw InvalidParameter("density_query: resolution must be >= 8");

    const auto ellipsoids = collect_ellipsoids(cloud);
    if (ellipsoids.empty()) throw EmptyCloud("density_query: no renderable Gaussians");

    OccupancyGrid grid;
    grid.resolution = spec.resolution;
    grid.threshold = threshold;
    if (spec.bounds) {
        grid.lo = spec.bounds->first;
        grid.hi = spec.bounds->second;
    } else {
        Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
        Vec3 hi = -lo;
        for (const auto& e : ellipsoids) {
            lo = lo.cwiseMin(e.mu - e.half_extent);
            hi = hi.cwiseMax(e.mu + e.half_extent);
        }
        // Cubify so cells stay isotropic, with a half-cell pad.
        const Vec3 center = 0.5 * (lo + hi);
        double half = 0.5 * (hi - lo).maxCoeff();
        half += half / spec.resolution;
        grid.lo = center - Vec3::Constant(half);
        grid.hi = center + Vec3::Constant(half);
    }

    const int r = grid.resolution;
    std::vector<double> density(static_cast<std::size_t>(r) * r * r, 0.0);
    const double h = grid.cell_size();
    for (const auto& e : ellipsoids) {
        // Cells whose center lies in the 3-sigma bounding box.
        int cx0[3], cx1[3];
        for (int k = 0; k < 3; ++k) {
            cx0[k] = std::max(0, static_cast<int>(std::floor((e.mu[k] - e.half_extent[k] - grid.lo[k]) / h - 0.5)));
            cx1[k] = std::min(r - 1, static_cast<int>(std::ceil((e.mu[k] + e.half_extent[k] - grid.lo[k]) / h - 0.5)));
        }
        for (int z = cx0[2]; z <= cx1[2]; ++z)
            for (int y = cx0[1]; y <= cx1[1]; ++y)
                for (int x = cx0[0]; x <= cx1[0]; ++x) {
                    const Vec3 d = grid.cell_center(x, y, z) - e.mu;
                    density[grid.cell_index(x, y, z)] +=
                        e.alpha * std::exp(-0.5 * d.dot(e.inv_cov * d));
                }
    }

    grid.occupied.resize(density.size());
    for (std::size_t i = 0; i < density.size(); ++i) grid.occupied[i] = density[i] > threshold;
    return grid;
}

namespace {

constexpr double kEdtInf = 1e20;

// Lower-envelope 1D squared-distance transform (Felzenszwalb-Huttenlocher).
void dt1d(const double* f, double* d, int n, std::vector<int>& v, std::vector<double>& z) {
    v.assign(n, 0);
    z.assign(n + 1, 0.0);
    int k = 0;
    z[0] = -kEdtInf;
    z[1] = kEdtInf;
    for (int q = 1; q < n; ++q) {
        double s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
        while (s <= z[k]) {
            --k;
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = kEdtInf;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        const double dq = q - v[k];
        d[q] = dq * dq + f[v[k]];
    }
}

}  // namespace

std::vector<double> edt_squared(const std::vector<std::uint8_t>& mask, int nx, int ny, int nz) {
    std::vector<double> d(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) d[i] = mask[i] ? kEdtInf : 0.0;
    auto idx = [&](int x, int y, int z) {
        return (static_cast<std::size_t>(z) * ny + y) * nx + x;
    };

    std::vector<double> f(std::max({nx, ny, nz})), out(std::max({nx, ny, nz}));
    std::vector<int> v;
    std::vector<double> z_env;
    // x pass
    for (int z = 0; z < nz; ++z)
        for (int y = 0; y < ny; ++y) {
            for (int x = 0; x < nx; ++x) f[x] = d[idx(x, y, z)];
            dt1d(f.data(), out.data(), nx, v, z_env);
            for (int x = 0; x < nx; ++x) d[idx(x, y, z)] = out[x];
        }
    // y pass
    for (int z = 0; z < nz; ++z)
        for (int x = 0; x < nx; ++x) {
            for (int y = 0; y < ny; ++y) f[y] = d[idx(x, y, z)];
            dt1d(f.data(), out.data(), ny, v, z_env);
            for (int y = 0; y < ny; ++y) d[idx(x, y, z)] = out[y];
        }
    // z pass
    for (int y = 0; y < ny; ++y)
        for (int x = 0; x < nx; ++x) {
            for (int z = 0; z < nz; ++z) f[z] = d[idx(x, y, z)];
            dt1d(f.data(), out.data(), nz, v, z_env);
            for (int z = 0; z < nz; ++z) d[idx(x, y, z)] = out[z];
        }
    return d;
}

std::vector<double> sdf_from_occupancy(const OccupancyGrid& grid) {
    const std::size_t occ = grid.occupied_count();
    if (occ == 0 || occ == grid.occupied.size())
        throw DegenerateField("sdf_from_occupancy: grid is uniform");

    std::vector<std::uint8_t> free_mask(grid.occupied.size());
    for (std::size_t i = 0; i < free_mask.size(); ++i) free_mask[i] = grid.occupied[i] ? 0 : 1;

    const int r = grid.resolution;
    const std::vector<double> dist_to_occ = edt_squared(free_mask, r, r, r);
    const std::vector<double> dist_to_free = edt_squared(grid.occupied, r, r, r);
    std::vector<double> sdf(grid.occupied.size());
    for (std::size_t i = 0; i < sdf.size(); ++i)
        sdf[i] = std::sqrt(dist_to_occ[i]) - std::sqrt(dist_to_free[i]);
    return sdf;
}

TetGrid build_tetgrid(int resolution, const Vec3& lo, const Vec3& hi,
                      const std::function<double(const Vec3&)>& field) {
    if (resolution < 2) throw InvalidParameter("build_tetgrid: resolution must be >= 2");
    TetGrid grid;
    grid.resolution = resolution;
    grid.lo = lo;
    grid.spacing = (hi[0] - lo[0]) / (resolution - 1);
    if (!(grid.spacing > 0)) throw InvalidParameter("build_tetgrid: bad bounds");

    const std::size_t n = static_cast<std::size_t>(resolution) * resolution * resolution;
    grid.base_positions.resize(n);
    grid.deformation.assign(n, Vec3::Zero());
    grid.sdf.resize(n);
    for (int z = 0; z < resolution; ++z)
        for (int y = 0; y < resolution; ++y)
            for (int x = 0; x < resolution; ++x) {
                const std::size_t i = grid.vertex_index(x, y, z);
                grid.base_positions[i] = lo + grid.spacing * Vec3(x, y, z);
                grid.sdf[i] = field(grid.base_positions[i]);
            }

    // Six tetrahedra per cube around the main diagonal 000-111; every cube
    // uses the same diagonal so neighbouring faces triangulate identically.
    static const int kCorner[6][4][3] = {
        {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {1, 1, 1}}, {{0, 0, 0}, {1, 1, 0}, {0, 1, 0}, {1, 1, 1}},
        {{0, 0, 0}, {0, 1, 0}, {0, 1, 1}, {1, 1, 1}}, {{0, 0, 0}, {0, 1, 1}, {0, 0, 1}, {1, 1, 1}},
        {{0, 0, 0}, {0, 0, 1}, {1, 0, 1}, {1, 1, 1}}, {{0, 0, 0}, {1, 0, 1}, {1, 0, 0}, {1, 1, 1}}};

    const int cubes = resolution - 1;
    grid.tets.reserve(static_cast<std::size_t>(cubes) * cubes * cubes * 6);
    for (int z = 0; z < cubes; ++z)
        for (int y = 0; y < cubes; ++y)
            for (int x = 0; x < cubes; ++x)
                for (const auto& tet : kCorner) {
                    std::array<int, 4> ids;
                    for (int k = 0; k < 4; ++k)
                        ids[k] = static_cast<int>(
                            grid.vertex_index(x + tet[k][0], y + tet[k][1], z + tet[k][2]));
                    const Vec3 p0 = grid.base_positions[ids[0]];
                    Mat3 t;
                    t.col(0) = grid.base_positions[ids[1]] - p0;
                    t.col(1) = grid.base_positions[ids[2]] - p0;
                    t.col(2) = grid.base_positions[ids[3]] - p0;
                    if (t.determinant() < 0) std::swap(ids[2], ids[3]);
                    grid.tets.push_back(ids);
                }
    return grid;
}

std::function<double(const Vec3&)> trilinear_sdf_field(const OccupancyGrid& grid,
                                                       const std::vector<double>& sdf) {
    if (sdf.size() != grid.occupied.size()) throw ShapeError("trilinear_sdf_field: size mismatch");
    const OccupancyGrid g = grid;
    const std::vector<double> values = sdf;
    return [g, values](const Vec3& p) {
        const double h = g.cell_size();
        const int r = g.resolution;
        double out = 0.0;
        Vec3 u = (p - g.lo) / h - Vec3::Constant(0.5);
        int i0[3];
        double w[3];
        for (int k = 0; k < 3; ++k) {
            const double c = std::clamp(u[k], 0.0, static_cast<double>(r - 1));
            i0[k] = std::min(static_cast<int>(c), r - 2);
            w[k] = c - i0[k];
        }
        for (int dz = 0; dz < 2; ++dz)
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) {
                    const double weight = (dx ? w[0] : 1 - w[0]) * (dy ? w[1] : 1 - w[1]) *
                                          (dz ? w[2] : 1 - w[2]);
                    out += weight * values[g.cell_index(i0[0] + dx, i0[1] + dy, i0[2] + dz)];
                }
        return out * h;  // cell units -> world units
    };
}

namespace {

struct EdgeVertexCache {
    std::map<std::pair<int, int>, int> cache;
    Mesh* mesh;

    int get(const TetGrid& grid, int a, int b) {
        const auto key = std::minmax(a, b);
        auto it = cache.find(key);
        if (it != cache.end()) return it->second;
        const double sa = grid.sdf[a], sb = grid.sdf[b];
        const double u = sa / (sa - sb);
        const Vec3 pa = grid.vertex_position(a), pb = grid.vertex_position(b);
        const int id = static_cast<int>(mesh->vertices.size());
        mesh->vertices.push_back(pa + u * (pb - pa));
        cache.emplace(key, id);
        return id;
    }
};

}  // namespace

Mesh marching_tetrahedra(const TetGrid& grid) {
    for (double s : grid.sdf)
        if (std::isnan(s)) throw InvalidField("marching_tetrahedra: NaN SDF");

    Mesh mesh;
    EdgeVertexCache edges{{}, &mesh};

    auto emit = [&](int v0, int v1, int v2, const Vec3& gradient) {
        const Vec3 n = (mesh.vertices[v1] - mesh.vertices[v0])
                           .cross(mesh.vertices[v2] - mesh.vertices[v0]);
        if (n.squaredNorm() < 1e-24) return;  // degenerate
        if (n.dot(gradient) < 0)
            mesh.faces.push_back({v0, v2, v1});
        else
            mesh.faces.push_back({v0, v1, v2});
    };

    for (const auto& tet : grid.tets) {
        std::array<double, 4> s;
        int neg_count = 0;
        for (int k = 0; k < 4; ++k) {
            s[k] = grid.sdf[tet[k]];
            neg_count += s[k] < 0;
        }
        if (neg_count == 0 || neg_count == 4) continue;

        // Linear-field gradient inside the (deformed) tet: normals align to it.
        const Vec3 p0 = grid.vertex_position(tet[0]);
        Mat3 t;
        t.col(0) = grid.vertex_position(tet[1]) - p0;
        t.col(1) = grid.vertex_position(tet[2]) - p0;
        t.col(2) = grid.vertex_position(tet[3]) - p0;
        if (std::abs(t.determinant()) < 1e-18) continue;
        const Vec3 ds(s[1] - s[0], s[2] - s[0], s[3] - s[0]);
        const Vec3 gradient = t.transpose().fullPivLu().solve(ds);

        int inside[4], outside[4];
        int ni = 0, no = 0;
        for (int k = 0; k < 4; ++k) (s[k] < 0 ? inside[ni++] : outside[no++]) = tet[k];

        if (ni == 1) {
            emit(edges.get(grid, inside[0], outside[0]), edges.get(grid, inside[0], outside[1]),
                 edges.get(grid, inside[0], outside[2]), gradient);
        } else if (ni == 3) {
            emit(edges.get(grid, outside[0], inside[0]), edges.get(grid, outside[0], inside[1]),
                 edges.get(grid, outside[0], inside[2]), gradient);
        } else {
            const int a = inside[0], b = inside[1], c = outside[0], d = outside[1];
            const int v_ac = edges.get(grid, a, c), v_ad = edges.get(grid, a, d);
            const int v_bd = edges.get(grid, b, d), v_bc = edges.get(grid, b, c);
            emit(v_ac, v_ad, v_bd, gradient);
            emit(v_ac, v_bd, v_bc, gradient);
        }
    }

    // Compact away vertices that only degenerate faces referenced.
    std::vector<int> remap(mesh.vertices.size(), -1);
    Mesh out;
    for (auto& f : mesh.faces) {
        for (int& v : f) {
            if (remap[v] < 0) {
                remap[v] = static_cast<int>(out.vertices.size());
                out.vertices.push_back(mesh.vertices[v]);
            }
            v = remap[v];
        }
        out.faces.push_back(f);
    }
    return out;
}

TetGrid fit_tetgrid(TetGrid grid, const std::function<double(const Vec3&)>& target,
                    const FitOptions& opts) {
    if (opts.iterations < 0 || opts.samples_per_iteration < 1)
        throw InvalidParameter("fit_tetgrid: bad options");
    const std::size_t nv = grid.sdf.size();
    std::vector<double> m_sdf(nv, 0), v_sdf(nv, 0);
    std::vector<Vec3> m_def(nv, Vec3::Zero()), v_def(nv, Vec3::Zero());
    std::vector<double> g_sdf(nv);
    std::vector<Vec3> g_def(nv);
    const double clamp = grid.spacing * 0.5;
    const int cubes = grid.resolution - 1;
    const double extent = cubes * grid.spacing;
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    Rng rng(opts.seed);
    std::vector<double> loss_history;
    for (int iter = 1; iter <= opts.iterations; ++iter) {
        std::fill(g_sdf.begin(), g_sdf.end(), 0.0);
        std::fill(g_def.begin(), g_def.end(), Vec3::Zero().eval());
        double loss = 0.0;

        for (int smp = 0; smp < opts.samples_per_iteration; ++smp) {
            const Vec3 p = grid.lo + extent * Vec3(rng.uniform(), rng.uniform(), rng.uniform());
            int cx[3];
            for (int k = 0; k < 3; ++k)
                cx[k] = std::min(cubes - 1, static_cast<int>((p[k] - grid.lo[k]) / grid.spacing));
            const std::size_t cube = (static_cast<std::size_t>(cx[2]) * cubes + cx[1]) * cubes + cx[0];

            // Pick the cube tet that contains the point (deformed positions).
            double best_min = -std::numeric_limits<double>::infinity();
            Eigen::Vector4d best_bary = Eigen::Vector4d::Zero();
            Vec3 best_grad = Vec3::Zero();
            const std::array<int, 4>* best_tet = nullptr;
            for (int k = 0; k < 6; ++k) {
                const auto& tet = grid.tets[cube * 6 + k];
                const Vec3 p0 = grid.vertex_position(tet[0]);
                Mat3 t;
                t.col(0) = grid.vertex_position(tet[1]) - p0;
                t.col(1) = grid.vertex_position(tet[2]) - p0;
                t.col(2) = grid.vertex_position(tet[3]) - p0;
                const Eigen::PartialPivLU<Mat3> lu(t);
                const Vec3 l123 = lu.solve(p - p0);
                Eigen::Vector4d bary(1.0 - l123.sum(), l123[0], l123[1], l123[2]);
                const double mn = bary.minCoeff();
                if (mn > best_min) {
                    best_min = mn;
                    best_bary = bary;
                    best_tet = &tet;
                    const Vec3 ds(grid.sdf[tet[1]] - grid.sdf[tet[0]],
                                  grid.sdf[tet[2]] - grid.sdf[tet[0]],
                                  grid.sdf[tet[3]] - grid.sdf[tet[0]]);
                    best_grad = t.transpose().partialPivLu().solve(ds);
                }
            }
            if (best_tet == nullptr) continue;

            double value = 0.0;
            for (int k = 0; k < 4; ++k) value += best_bary[k] * grid.sdf[(*best_tet)[k]];
            const double residual = value - target(p);
            loss += residual * residual;
            const double scale = 2.0 * residual / opts.samples_per_iteration;
            for (int k = 0; k < 4; ++k) {
                g_sdf[(*best_tet)[k]] += scale * best_bary[k];
                g_def[(*best_tet)[k]] += scale * (-best_bary[k]) * best_grad;
            }
        }
        loss /= opts.samples_per_iteration;
        loss_history.push_back(loss);
        if (loss_history.size() > 100 && loss > 5.0 * loss_history[loss_history.size() - 101])
            throw DivergedFit("fit_tetgrid: loss increased 5x over 100 steps");

        const double bc1 = 1.0 - std::pow(beta1, iter);
        const double bc2 = 1.0 - std::pow(beta2, iter);
        for (std::size_t i = 0; i < nv; ++i) {
            m_sdf[i] = beta1 * m_sdf[i] + (1 - beta1) * g_sdf[i];
            v_sdf[i] = beta2 * v_sdf[i] + (1 - beta2) * g_sdf[i] * g_sdf[i];
            grid.sdf[i] -= opts.learning_rate * (m_sdf[i] / bc1) / (std::sqrt(v_sdf[i] / bc2) + eps);
            m_def[i] = beta1 * m_def[i] + (1 - beta1) * g_def[i];
            v_def[i] = (beta2 * v_def[i].array() + (1 - beta2) * g_def[i].array().square()).matrix();
            grid.deformation[i] -=
                (opts.learning_rate * (m_def[i].array() / bc1) / ((v_def[i].array() / bc2).sqrt() + eps))
                    .matrix();
            for (int k = 0; k < 3; ++k)
                grid.deformation[i][k] = std::clamp(grid.deformation[i][k], -clamp, clamp);
        }
    }
    return grid;
}

void export_mesh(const Mesh& mesh, const std::string& path, MeshFormat format) {
    for (const auto& f : mesh.faces)
        for (int v : f)
            if (v < 0 || v >= static_cast<int>(mesh.vertices.size()))
                throw InvalidParameter("export_mesh: face index out of range");

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("export_mesh: cannot open " + path);
    const bool colored = mesh.colors.size() == mesh.vertices.size() && !mesh.vertices.empty();

    if (format == MeshFormat::Obj) {
        char buf[256];
        for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
            const Vec3& v = mesh.vertices[i];
            if (colored) {
                const Vec3& c = mesh.colors[i];
                std::snprintf(buf, sizeof(buf), "v %.9g %.9g %.9g %.9g %.9g %.9g\n", v[0], v[1],
                              v[2], c[0], c[1], c[2]);
            } else {
                std::snprintf(buf, sizeof(buf), "v %.9g %.9g %.9g\n", v[0], v[1], v[2]);
            }
            out << buf;
        }
        for (const auto& f : mesh.faces)
            out << "f " << f[0] + 1 << " " << f[1] + 1 << " " << f[2] + 1 << "\n";
    } else {
        out << "ply\nformat binary_little_endian 1.0\n";
        out << "element vertex " << mesh.vertices.size() << "\n";
        out << "property float x\nproperty float y\nproperty float z\n";
        if (colored) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
        out << "element face " << mesh.faces.size() << "\n";
        out << "property list uchar int vertex_indices\nend_header\n";
        for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
            float xyz[3] = {static_cast<float>(mesh.vertices[i][0]),
                            static_cast<float>(mesh.vertices[i][1]),
                            static_cast<float>(mesh.vertices[i][2])};
            out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
            if (colored) {
                unsigned char rgb[3];
                for (int c = 0; c < 3; ++c)
                    rgb[c] = static_cast<unsigned char>(
                        std::lround(std::clamp(mesh.colors[i][c], 0.0, 1.0) * 255.0));
                out.write(reinterpret_cast<const char*>(rgb), sizeof(rgb));
            }
        }
        for (const auto& f : mesh.faces) {
            const unsigned char n = 3;
            out.write(reinterpret_cast<const char*>(&n), 1);
            const int idx[3] = {f[0], f[1], f[2]};
            out.write(reinterpret_cast<const char*>(idx), sizeof(idx));
        }
    }
    if (!out) throw IoError("export_mesh: write failed for " + path);
}

namespace {

Mesh import_obj(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("import_mesh: cannot open " + path);
    Mesh mesh;
    std::string line;
    std::size_t offset = 0;
    while (std::getline(in, line)) {
        const std::size_t line_start = offset;
        offset += line.size() + 1;
        std::istringstream ss(line);
        std::string tag;
        ss >> tag;
        if (tag == "v") {
            double x, y, z;
            if (!(ss >> x >> y >> z)) throw FormatError("import_mesh: bad vertex line", line_start);
            mesh.vertices.emplace_back(x, y, z);
            double r, g, b;
            if (ss >> r >> g >> b) mesh.colors.emplace_back(r, g, b);
        } else if (tag == "f") {
            std::array<int, 3> f{};
            for (int k = 0; k < 3; ++k) {
                std::string tok;
                if (!(ss >> tok)) throw FormatError("import_mesh: bad face line", line_start);
                f[k] = std::stoi(tok.substr(0, tok.find('/'))) - 1;
            }
            mesh.faces.push_back(f);
        }
    }
    if (!mesh.colors.empty() && mesh.colors.size() != mesh.vertices.size())
        throw FormatError("import_mesh: inconsistent vertex colors", 0);
    return mesh;
}

Mesh import_ply(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("import_mesh: cannot open " + path);
    std::string line;
    std::size_t offset = 0;
    auto read_line = [&] {
        if (!std::getline(in, line)) throw FormatError("import_mesh: truncated header", offset);
        offset += line.size() + 1;
    };
    read_line();
    if (line != "ply") throw FormatError("import_mesh: not a ply file", 0);
    read_line();
    if (line != "format binary_little_endian 1.0")
        throw FormatError("import_mesh: unsupported ply format", offset - line.size() - 1);

    std::size_t n_vertices = 0, n_faces = 0;
    bool colored = false;
    while (true) {
        read_line();
        std::istringstream ss(line);
        std::string word;
        ss >> word;
        if (word == "end_header") break;
        if (word == "element") {
            std::string name;
            std::size_t count;
            ss >> name >> count;
            if (name == "vertex") n_vertices = count;
            if (name == "face") n_faces = count;
        } else if (word == "property" && line.find("red") != std::string::npos) {
            colored = true;
        }
    }

    Mesh mesh;
    mesh.vertices.resize(n_vertices);
    if (colored) mesh.colors.resize(n_vertices);
    for (std::size_t i = 0; i < n_vertices; ++i) {
        float xyz[3];
        in.read(reinterpret_cast<char*>(xyz), sizeof(xyz));
        mesh.vertices[i] = Vec3(xyz[0], xyz[1], xyz[2]);
        if (colored) {
            unsigned char rgb[3];
            in.read(reinterpret_cast<char*>(rgb), sizeof(rgb));
            mesh.colors[i] = Vec3(rgb[0], rgb[1], rgb[2]) / 255.0;
        }
        if (!in) throw FormatError("import_mesh: truncated vertex data", offset);
    }
    for (std::size_t i = 0; i < n_faces; ++i) {
        unsigned char n;
        in.read(reinterpret_cast<char*>(&n), 1);
        if (!in || n != 3) throw FormatError("import_mesh: non-triangle face", offset);
        int idx[3];
        in.read(reinterpret_cast<char*>(idx), sizeof(idx));
        if (!in) throw FormatError("import_mesh: truncated face data", offset);
        mesh.faces.push_back({idx[0], idx[1], idx[2]});
    }
    return mesh;
}

}  // namespace

Mesh import_mesh(const std::string& path, MeshFormat format) {
    return format == MeshFormat::Obj ? import_obj(path) : import_ply(path);
}

Mesh bake_vertex_colors(Mesh mesh, const GaussianCloud& cloud) {
    if (cloud.empty()) throw EmptyCloud("bake_vertex_colors: empty cloud");

    std::vector<GaussianEllipsoid> cells;
    std::vector<Vec3> cell_colors;
    cells.reserve(cloud.size());
    for (const auto& g : cloud.gaussians) {
        GaussianCloud one;
        one.gaussians.push_back(g);
        auto e = collect_ellipsoids(one);
        if (e.empty()) continue;  // degenerate covariance, same skip as rendering
        cells.push_back(e[0]);
        cell_colors.push_back(g.color);
    }

    mesh.colors.assign(mesh.vertices.size(), Vec3(0.5, 0.5, 0.5));
    for (std::size_t vi = 0; vi < mesh.vertices.size(); ++vi) {
        double total = 0.0;
        Vec3 acc = Vec3::Zero();
        for (std::size_t i = 0; i < cells.size(); ++i) {
            const Vec3 d = mesh.vertices[vi] - cells[i].mu;
            const double mahal2 = d.dot(cells[i].inv_cov * d);
            if (mahal2 > 9.0) continue;  // outside 3 sigma
            const double w = cells[i].alpha * std::exp(-0.5 * mahal2);
            total += w;
            acc += w * cell_colors[i];
        }
        if (total >= 1e-6) mesh.colors[vi] = acc / total;
    }
    return mesh;
}

}  // namespace csd
