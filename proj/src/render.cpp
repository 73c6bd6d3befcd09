#include "csd/render.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <thread>

#include "csd/errors.hpp"

namespace csd {

namespace {

constexpr double kNearPlane = 0.01;
constexpr double kCovDilation = 0.3;  // low-pass term, px^2
constexpr double kScaleConditionCap = 1e12;

struct Prep {
    int idx = -1;
    Vec2 mean2d = Vec2::Zero();
    double conic[3] = {0, 0, 0};  // inverse 2D covariance (a00, a01, a11)
    double alpha = 0;
    Vec3 color = Vec3::Zero();  // clamped to [0,1]
    bool color_in_range[3] = {false, false, false};
    double depth = 0;
    // Saved intermediates for the backward chain.
    double j00 = 0, j02 = 0, j11 = 0, j12 = 0;
    Vec3 mv = Vec3::Zero();
    Mat3 view_cov = Mat3::Zero();  // W Sigma W^T
    Mat3 rot = Mat3::Identity();
    Vec3 scale = Vec3::Zero();
    Vec4 qhat = Vec4(1, 0, 0, 0);
    double qnorm = 1;
    int x0 = 0, x1 = 0, y0 = 0, y1 = 0;  // pixel bbox, half-open
};

struct Frame {
    std::vector<Prep> preps;            // depth-sorted
    std::vector<std::vector<int>> tiles;  // prep indices per tile, depth-sorted
    int tiles_x = 0, tiles_y = 0;
    Mat3 world_to_view;
};

// Projects every renderable Gaussian and buckets it into the tiles its
// cull-radius bounding box overlaps. Depth order (ties by index) is
// established here so each tile list is already sorted.
Frame prepare(const GaussianCloud& cloud, const Camera& cam, const RenderOptions& opts) {
    Frame frame;
    frame.world_to_view = cam.world_to_view();
    const Vec3 cam_pos = cam.position();
    const double fx = cam.focal_x(), fy = cam.focal_y();

    frame.preps.reserve(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Gaussian& g = cloud[i];
        if (!g.position.allFinite() || !g.log_scale.allFinite() || !g.rotation.allFinite()) continue;

        Prep p;
        p.idx = static_cast<int>(i);
        p.mv = frame.world_to_view * (g.position - cam_pos);
        p.depth = p.mv[2];
        if (p.depth <= kNearPlane) continue;

        p.qnorm = g.rotation.norm();
        if (std::abs(p.qnorm - 1.0) >= 1e-3)
            throw UnnormalizedRotation("render: |q| = " + std::to_string(p.qnorm) + " for Gaussian " +
                                       std::to_string(i));
        p.qhat = g.rotation / p.qnorm;
        p.rot = rotation_matrix(p.qhat);
        p.scale = g.log_scale.array().exp();

        // Degenerate covariance guard: skip instead of inverting garbage.
        const double smax = p.scale.maxCoeff(), smin = p.scale.minCoeff();
        if (!(smin > 0) || (smax * smax) / (smin * smin) >= kScaleConditionCap) continue;

        const Mat3 cov3d = p.rot * p.scale.cwiseProduct(p.scale).asDiagonal() * p.rot.transpose();
        p.view_cov = frame.world_to_view * cov3d * frame.world_to_view.transpose();

        const double inv_z = 1.0 / p.depth;
        p.j00 = fx * inv_z;
        p.j02 = -fx * p.mv[0] * inv_z * inv_z;
        p.j11 = fy * inv_z;
        p.j12 = -fy * p.mv[1] * inv_z * inv_z;
        p.mean2d = Vec2(fx * p.mv[0] * inv_z + cam.cx(), fy * p.mv[1] * inv_z + cam.cy());

        Eigen::Matrix<double, 2, 3> j = Eigen::Matrix<double, 2, 3>::Zero();
        j(0, 0) = p.j00;
        j(0, 2) = p.j02;
        j(1, 1) = p.j11;
        j(1, 2) = p.j12;
        Mat2 cov2d = j * p.view_cov * j.transpose();
        cov2d(0, 0) += kCovDilation;
        cov2d(1, 1) += kCovDilation;

        const double det = cov2d(0, 0) * cov2d(1, 1) - cov2d(0, 1) * cov2d(0, 1);
        if (!(det > 0) || !std::isfinite(det)) continue;
        const double inv_det = 1.0 / det;
        p.conic[0] = cov2d(1, 1) * inv_det;
        p.conic[1] = -cov2d(0, 1) * inv_det;
        p.conic[2] = cov2d(0, 0) * inv_det;

        const double mid = 0.5 * (cov2d(0, 0) + cov2d(1, 1));
        const double lambda_max = mid + std::sqrt(std::max(0.0, mid * mid - det));
        double radius;
        if (opts.cull_sigma > 0) {
            radius = std::ceil(opts.cull_sigma * std::sqrt(lambda_max));
            p.x0 = std::max(0, static_cast<int>(std::floor(p.mean2d[0] - radius)));
            p.x1 = std::min(cam.width, static_cast<int>(std::ceil(p.mean2d[0] + radius)) + 1);
            p.y0 = std::max(0, static_cast<int>(std::floor(p.mean2d[1] - radius)));
            p.y1 = std::min(cam.height, static_cast<int>(std::ceil(p.mean2d[1] + radius)) + 1);
        } else {
            p.x0 = 0, p.x1 = cam.width, p.y0 = 0, p.y1 = cam.height;
        }
        if (p.x0 >= p.x1 || p.y0 >= p.y1) continue;

        p.alpha = 1.0 / (1.0 + std::exp(-g.opacity_logit));
        for (int c = 0; c < 3; ++c) {
            p.color[c] = std::clamp(g.color[c], 0.0, 1.0);
            p.color_in_range[c] = g.color[c] >= 0.0 && g.color[c] <= 1.0;
        }
        frame.preps.push_back(p);
    }

    std::sort(frame.preps.begin(), frame.preps.end(), [](const Prep& a, const Prep& b) {
        return a.depth != b.depth ? a.depth < b.depth : a.idx < b.idx;
    });

    const int ts = std::max(1, opts.tile_size);
    frame.tiles_x = (cam.width + ts - 1) / ts;
    frame.tiles_y = (cam.height + ts - 1) / ts;
    frame.tiles.assign(static_cast<std::size_t>(frame.tiles_x) * frame.tiles_y, {});
    for (std::size_t pi = 0; pi < frame.preps.size(); ++pi) {
        const Prep& p = frame.preps[pi];
        const int tx0 = p.x0 / ts, tx1 = (p.x1 - 1) / ts;
        const int ty0 = p.y0 / ts, ty1 = (p.y1 - 1) / ts;
        for (int ty = ty0; ty <= ty1; ++ty)
            for (int tx = tx0; tx <= tx1; ++tx)
                frame.tiles[static_cast<std::size_t>(ty) * frame.tiles_x + tx].push_back(
                    static_cast<int>(pi));
    }
    return frame;
}

// Splat weight sigma = alpha * exp(-1/2 d^T conic d) at a pixel center, with
// the Gaussian factor returned separately for the backward pass.
inline bool splat_weight(const Prep& p, double px, double py, double cutoff, double& sigma,
                         double& gauss, double& dx, double& dy) {
    dx = px - p.mean2d[0];
    dy = py - p.mean2d[1];
    if (px < p.x0 || px >= p.x1 || py < p.y0 || py >= p.y1) return false;
    double power = -0.5 * (p.conic[0] * dx * dx + 2.0 * p.conic[1] * dx * dy + p.conic[2] * dy * dy);
    if (power > 0) power = 0;
    gauss = std::exp(power);
    sigma = p.alpha * gauss;
    return sigma >= cutoff && sigma > 0;
}

void parallel_tiles(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    };
    std::vector<std::thread> pool;
    const int count = std::min<int>(threads, static_cast<int>(n));
    pool.reserve(count - 1);
    for (int i = 1; i < count; ++i) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
}

}  // namespace

RenderGradients::RenderGradients(std::size_t n)
    : position(n, Vec3::Zero()),
      log_scale(n, Vec3::Zero()),
      rotation(n, Vec4::Zero()),
      color(n, Vec3::Zero()),
      opacity_logit(n, 0.0),
      mean2d_grad_norm(n, 0.0),
      visible_count(n, 0) {}

void RenderGradients::accumulate(const RenderGradients& other) {
    if (position.size() != other.position.size()) throw ShapeError("RenderGradients: size mismatch");
    for (std::size_t i = 0; i < position.size(); ++i) {
        position[i] += other.position[i];
        log_scale[i] += other.log_scale[i];
        rotation[i] += other.rotation[i];
        color[i] += other.color[i];
        opacity_logit[i] += other.opacity_logit[i];
        mean2d_grad_norm[i] += other.mean2d_grad_norm[i];
        visible_count[i] += other.visible_count[i];
    }
}

void RenderGradients::scale(double factor) {
    for (std::size_t i = 0; i < position.size(); ++i) {
        position[i] *= factor;
        log_scale[i] *= factor;
        rotation[i] *= factor;
        color[i] *= factor;
        opacity_logit[i] *= factor;
    }
}

std::optional<Projected> project_gaussian(const Gaussian& g, const Camera& cam) {
    if (!g.position.allFinite() || !g.log_scale.allFinite() || !g.rotation.allFinite())
        throw InvalidParameter("project_gaussian: non-finite Gaussian");
    const Mat3 w = cam.world_to_view();
    const Vec3 mv = w * (g.position - cam.position());
    if (mv[2] <= kNearPlane) return std::nullopt;

    const Mat3 cov3d = covariance_from_scale_rotation(g.log_scale, g.rotation);
    const Mat3 view_cov = w * cov3d * w.transpose();
    const double fx = cam.focal_x(), fy = cam.focal_y(), inv_z = 1.0 / mv[2];
    Eigen::Matrix<double, 2, 3> j = Eigen::Matrix<double, 2, 3>::Zero();
    j(0, 0) = fx * inv_z;
    j(0, 2) = -fx * mv[0] * inv_z * inv_z;
    j(1, 1) = fy * inv_z;
    j(1, 2) = -fy * mv[1] * inv_z * inv_z;

    Projected out;
    out.mean2d = Vec2(fx * mv[0] * inv_z + cam.cx(), fy * mv[1] * inv_z + cam.cy());
    out.cov2d = j * view_cov * j.transpose() + kCovDilation * Mat2::Identity();
    out.depth = mv[2];
    return out;
}

RenderedImage render(const GaussianCloud& cloud, const Camera& cam, const RenderOptions& opts) {
    RenderedImage out;
    out.rgb = Image(cam.width, cam.height, 3);
    out.alpha = Image(cam.width, cam.height, 1);

    const Frame frame = prepare(cloud, cam, opts);
    const int ts = std::max(1, opts.tile_size);

    parallel_tiles(frame.tiles.size(), opts.threads, [&](std::size_t tile) {
        const int tx = static_cast<int>(tile) % frame.tiles_x;
        const int ty = static_cast<int>(tile) / frame.tiles_x;
        const auto& list = frame.tiles[tile];
        const int px1 = std::min(cam.width, (tx + 1) * ts);
        const int py1 = std::min(cam.height, (ty + 1) * ts);
        for (int y = ty * ts; y < py1; ++y) {
            for (int x = tx * ts; x < px1; ++x) {
                const double px = x + 0.5, py = y + 0.5;
                Vec3 color = Vec3::Zero();
                double transmittance = 1.0;
                for (const int pi : list) {
                    const Prep& p = frame.preps[pi];
                    double sigma, gauss, dx, dy;
                    if (!splat_weight(p, px, py, opts.splat_cutoff, sigma, gauss, dx, dy)) continue;
                    color += p.color * (sigma * transmittance);
                    transmittance *= 1.0 - sigma;
                    if (opts.early_stop_transmittance > 0 &&
                        transmittance < opts.early_stop_transmittance)
                        break;
                }
                color += transmittance * opts.background;
                for (int c = 0; c < 3; ++c) out.rgb.at(y, x, c) = color[c];
                out.alpha.at(y, x, 0) = 1.0 - transmittance;
            }
        }
    });
    return out;
}

namespace {

// Screen-space gradient slots for one Gaussian within one tile.
struct TilePartial {
    Vec2 dmean2d = Vec2::Zero();
    double dconic[3] = {0, 0, 0};
    double dalpha = 0;
    Vec3 dcolor = Vec3::Zero();
};

struct Contribution {
    int list_pos;
    double sigma, gauss, transmittance, dx, dy;
};

}  // namespace

RenderGradients render_backward(const GaussianCloud& cloud, const Camera& cam,
                                const RenderOptions& opts, const Image& grad_rgb) {
    if (grad_rgb.width != cam.width || grad_rgb.height != cam.height || grad_rgb.channels != 3)
        throw ShapeError("render_backward: grad_rgb shape mismatch");
    for (double v : grad_rgb.data)
        if (!std::isfinite(v)) throw ShapeError("render_backward: grad_rgb has non-finite entries");

    const Frame frame = prepare(cloud, cam, opts);
    const int ts = std::max(1, opts.tile_size);

    // Pass 1: per-tile screen-space gradients (parallel, tile-local buffers).
    std::vector<std::vector<TilePartial>> partials(frame.tiles.size());
    parallel_tiles(frame.tiles.size(), opts.threads, [&](std::size_t tile) {
        const auto& list = frame.tiles[tile];
        if (list.empty()) return;
        auto& local = partials[tile];
        local.assign(list.size(), TilePartial{});

        const int tx = static_cast<int>(tile) % frame.tiles_x;
        const int ty = static_cast<int>(tile) / frame.tiles_x;
        const int px1 = std::min(cam.width, (tx + 1) * ts);
        const int py1 = std::min(cam.height, (ty + 1) * ts);
        std::vector<Contribution> contribs;
        contribs.reserve(list.size());

        for (int y = ty * ts; y < py1; ++y) {
            for (int x = tx * ts; x < px1; ++x) {
                const Vec3 g_pix(grad_rgb.at(y, x, 0), grad_rgb.at(y, x, 1), grad_rgb.at(y, x, 2));
                const double px = x + 0.5, py = y + 0.5;

                contribs.clear();
                double transmittance = 1.0;
                for (std::size_t li = 0; li < list.size(); ++li) {
                    const Prep& p = frame.preps[list[li]];
                    double sigma, gauss, dx, dy;
                    if (!splat_weight(p, px, py, opts.splat_cutoff, sigma, gauss, dx, dy)) continue;
                    contribs.push_back({static_cast<int>(li), sigma, gauss, transmittance, dx, dy});
                    transmittance *= 1.0 - sigma;
                    if (opts.early_stop_transmittance > 0 &&
                        transmittance < opts.early_stop_transmittance)
                        break;
                }

                // Reverse sweep: `behind` is the composited color of everything
                // after the current splat, so dC/dsigma_i = T_i (c_i - behind).
                Vec3 behind = opts.background;
                for (auto it = contribs.rbegin(); it != contribs.rend(); ++it) {
                    const Prep& p = frame.preps[list[it->list_pos]];
                    TilePartial& slot = local[it->list_pos];

                    slot.dcolor += g_pix * (it->sigma * it->transmittance);
                    const double dsigma = g_pix.dot(it->transmittance * (p.color - behind));
                    slot.dalpha += dsigma * it->gauss;
                    const double dgauss = dsigma * p.alpha * it->gauss;  // includes dG/dpower * power chain
                    // G = exp(-1/2 d^T A d): gradient wrt the offset d and conic A.
                    const double ax = p.conic[0] * it->dx + p.conic[1] * it->dy;
                    const double ay = p.conic[1] * it->dx + p.conic[2] * it->dy;
                    slot.dmean2d[0] += dgauss * ax;
                    slot.dmean2d[1] += dgauss * ay;
                    slot.dconic[0] += -0.5 * dgauss * it->dx * it->dx;
                    slot.dconic[1] += -dgauss * it->dx * it->dy;
                    slot.dconic[2] += -0.5 * dgauss * it->dy * it->dy;

                    behind = p.color * it->sigma + (1.0 - it->sigma) * behind;
                }
            }
        }
    });

    // Pass 2: reduce tile partials in a fixed order so results do not depend
    // on the thread count.
    std::vector<TilePartial> reduced(frame.preps.size());
    for (std::size_t tile = 0; tile < frame.tiles.size(); ++tile) {
        const auto& list = frame.tiles[tile];
        const auto& local = partials[tile];
        for (std::size_t li = 0; li < local.size(); ++li) {
            TilePartial& dst = reduced[list[li]];
            dst.dmean2d += local[li].dmean2d;
            for (int k = 0; k < 3; ++k) dst.dconic[k] += local[li].dconic[k];
            dst.dalpha += local[li].dalpha;
            dst.dcolor += local[li].dcolor;
        }
    }

    // Pass 3: chain the screen-space gradients through projection, covariance
    // construction and the activations back to the raw parameters.
    RenderGradients grads(cloud.size());
    const double fx = cam.focal_x(), fy = cam.focal_y();
    parallel_tiles(frame.preps.size(), opts.threads, [&](std::size_t pi) {
        const Prep& p = frame.preps[pi];
        const TilePartial& t = reduced[pi];
        const int i = p.idx;

        grads.visible_count[i] = 1;
        grads.mean2d_grad_norm[i] = t.dmean2d.norm();
        for (int c = 0; c < 3; ++c)
            if (p.color_in_range[c]) grads.color[i][c] = t.dcolor[c];
        grads.opacity_logit[i] = t.dalpha * p.alpha * (1.0 - p.alpha);

        Mat2 dconic;
        dconic << t.dconic[0], 0.5 * t.dconic[1], 0.5 * t.dconic[1], t.dconic[2];
        Mat2 conic;
        conic << p.conic[0], p.conic[1], p.conic[1], p.conic[2];
        const Mat2 dcov2d = -conic * dconic * conic;

        Eigen::Matrix<double, 2, 3> j = Eigen::Matrix<double, 2, 3>::Zero();
        j(0, 0) = p.j00;
        j(0, 2) = p.j02;
        j(1, 1) = p.j11;
        j(1, 2) = p.j12;

        const Mat3 dview_cov = j.transpose() * dcov2d * j;
        const Eigen::Matrix<double, 2, 3> dj = 2.0 * dcov2d * j * p.view_cov;
        const Mat3 dcov3d = frame.world_to_view.transpose() * dview_cov * frame.world_to_view;

        // View-space position gradient: projection of the mean plus the
        // dependence of the Jacobian itself on depth and lateral offset.
        const double inv_z = 1.0 / p.depth, inv_z2 = inv_z * inv_z;
        Vec3 dmv = j.transpose() * t.dmean2d;
        dmv[0] += dj(0, 2) * (-fx * inv_z2);
        dmv[1] += dj(1, 2) * (-fy * inv_z2);
        dmv[2] += dj(0, 0) * (-fx * inv_z2) + dj(1, 1) * (-fy * inv_z2) +
                  dj(0, 2) * (2.0 * fx * p.mv[0] * inv_z2 * inv_z) +
                  dj(1, 2) * (2.0 * fy * p.mv[1] * inv_z2 * inv_z);
        grads.position[i] = frame.world_to_view.transpose() * dmv;

        // Sigma = (R S)(R S)^T.
        const Mat3 m = p.rot * p.scale.asDiagonal();
        const Mat3 dm = 2.0 * dcov3d * m;
        const Mat3 rt_dm = p.rot.transpose() * dm;
        for (int k = 0; k < 3; ++k) grads.log_scale[i][k] = p.scale[k] * rt_dm(k, k);

        const Mat3 dr = dm * p.scale.asDiagonal();
        const double w = p.qhat[0], qx = p.qhat[1], qy = p.qhat[2], qz = p.qhat[3];
        Vec4 dqhat;
        dqhat[0] = 2.0 * (dr(0, 1) * -qz + dr(0, 2) * qy + dr(1, 0) * qz + dr(1, 2) * -qx +
                          dr(2, 0) * -qy + dr(2, 1) * qx);
        dqhat[1] = 2.0 * (dr(0, 1) * qy + dr(0, 2) * qz + dr(1, 0) * qy + dr(1, 1) * -2.0 * qx +
                          dr(1, 2) * -w + dr(2, 0) * qz + dr(2, 1) * w + dr(2, 2) * -2.0 * qx);
        dqhat[2] = 2.0 * (dr(0, 0) * -2.0 * qy + dr(0, 1) * qx + dr(0, 2) * w + dr(1, 0) * qx +
                          dr(1, 2) * qz + dr(2, 0) * -w + dr(2, 1) * qz + dr(2, 2) * -2.0 * qy);
        dqhat[3] = 2.0 * (dr(0, 0) * -2.0 * qz + dr(0, 1) * -w + dr(0, 2) * qx + dr(1, 0) * w +
                          dr(1, 1) * -2.0 * qz + dr(1, 2) * qy + dr(2, 0) * qx + dr(2, 1) * qy);
        // Through qhat = q / |q|.
        grads.rotation[i] = (dqhat - p.qhat * p.qhat.dot(dqhat)) / p.qnorm;
    });
    return grads;
}

}  // namespace csd
