#include "csd/distill.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "csd/errors.hpp"

namespace csd {

int CsdConfig::resolution_at(int iter) const {
    const double frac = total_iterations > 0 ? static_cast<double>(iter) / total_iterations : 0.0;
    int res = resolution_schedule.empty() ? 128 : resolution_schedule.front().resolution;
    for (const auto& step : resolution_schedule)
        if (frac >= step.from_fraction) res = step.resolution;
    return res;
}

void CsdConfig::validate() const {
    if (!ablation) {
        if (!(lambda >= 0.1 && lambda <= 1.0))
            throw InvalidParameter("CsdConfig: lambda must be in [0.1, 1.0] (set ablation for 0)");
        if (!single_term)
            throw InvalidParameter("CsdConfig: disabling the single-view term requires ablation");
    } else if (lambda < 0.0 || lambda > 1.0) {
        throw InvalidParameter("CsdConfig: lambda must be in [0, 1]");
    }
    if (guidance < 0.0) throw InvalidParameter("CsdConfig: guidance must be >= 0");
    auto range_ok = [](double lo, double hi) { return lo > 0.0 && hi < 1.0 && lo <= hi; };
    if (!range_ok(t_initial_min, t_initial_max) || !range_ok(t_annealed_min, t_annealed_max))
        throw InvalidParameter("CsdConfig: t ranges must be within (0, 1)");
    if (total_iterations < 0) throw InvalidParameter("CsdConfig: total_iterations must be >= 0");
    if (switch_iteration > total_iterations)
        throw InvalidParameter("CsdConfig: switch iteration past total");
    if (adapter_update_every < 1) throw InvalidParameter("CsdConfig: k must be >= 1");
    if (resolution_schedule.empty()) throw InvalidParameter("CsdConfig: empty resolution schedule");
}

double anneal_time_sample(Rng& rng, int iter, const CsdConfig& cfg) {
    const bool annealed = iter >= cfg.switch_at();
    const double lo = annealed ? cfg.t_annealed_min : cfg.t_initial_min;
    const double hi = annealed ? cfg.t_annealed_max : cfg.t_initial_max;
    return rng.uniform(lo, hi);
}

namespace {

double image_norm(const Image& img) {
    double s = 0.0;
    for (double v : img.data) s += v * v;
    return std::sqrt(s);
}

Condition view_condition(int prompt_id, const Camera& cam) {
    Condition c;
    c.prompt_id = prompt_id;
    c.bucket = view_bucket(cam);
    c.camera = cam;
    return c;
}

// omega(t) * (eps_hat - subtrahend), where eps_hat is the CFG-combined
// prediction of the pretrained stand-in at x_t. Shared by the plain
// distillation update and the coupled rule so the two match bit for bit.
Image guided_residual(const Image& x_t, double t, const ScoreProvider& provider,
                      const Camera& cam, double guidance, int prompt_id,
                      const NoiseSchedule& schedule, TimeWeighting weighting,
                      const Image& subtrahend) {
    const Condition cond = view_condition(prompt_id, cam);
    const Image eps_cond = provider.predict_noise(x_t, t, cond);
    const Image eps_uncond = provider.predict_noise(x_t, t, Condition{});
    Image residual = cfg_combine(eps_cond, eps_uncond, guidance);
    const double w = weighting == TimeWeighting::One ? 1.0 : schedule.sigma(t) * schedule.sigma(t);
    for (std::size_t i = 0; i < residual.size(); ++i)
        residual.data[i] = w * (residual.data[i] - subtrahend.data[i]);
    return residual;
}

}  // namespace

SdsStep sds_gradient(const GaussianCloud& cloud, const Camera& cam, const ScoreProvider& provider,
                     double t, const Image& eps, const NoiseSchedule& schedule, double guidance,
                     int prompt_id, const RenderOptions& opts, TimeWeighting weighting) {
    SdsStep step;
    step.render_rgb = render(cloud, cam, opts).rgb;
    const Image x_t = forward_diffuse(step.render_rgb, t, eps, schedule);
    const Image residual =
        guided_residual(x_t, t, provider, cam, guidance, prompt_id, schedule, weighting, eps);
    step.residual_norm = image_norm(residual);
    step.grads = render_backward(cloud, cam, opts, residual);
    return step;
}

CsdStep csd_gradient(const GaussianCloud& cloud, const CameraQuad& quad,
                     const ScoreProvider& single_provider, const AdapterModel* adapter,
                     const MultiViewScoreProvider* multi_provider, double t,
                     const std::array<Image, 4>& eps_joint, int view_index, const CsdConfig& cfg,
                     const NoiseSchedule& schedule, const RenderOptions& opts) {
    if (view_index < 0 || view_index > 3) throw InvalidParameter("csd_gradient: view index");
    const bool use_multi = cfg.lambda != 0.0;
    if (use_multi && multi_provider == nullptr)
        throw InvalidParameter("csd_gradient: lambda > 0 needs a multi-view provider");

    CsdStep step;
    std::array<Image, 4> x_t;
    for (int v = 0; v < 4; ++v) {
        step.renders[v] = render(cloud, quad[v], opts).rgb;
        if (!step.renders[v].same_shape(eps_joint[v]))
            throw ShapeError("csd_gradient: eps shape mismatch on view " + std::to_string(v));
        if (!use_multi && v != view_index) continue;  // render kept for logging only
        x_t[v] = forward_diffuse(step.renders[v], t, eps_joint[v], schedule);
    }

    Image single_residual;
    if (cfg.single_term) {
        const Camera& cam = quad[view_index];
        Image subtrahend;
        if (cfg.single_source == SingleScoreSource::Adapter) {
            if (adapter == nullptr)
                throw InvalidParameter("csd_gradient: adapter source selected but none provided");
            subtrahend =
                adapter->predict(x_t[view_index], t, view_condition(cfg.prompt_id, cam));
        } else {
            subtrahend = eps_joint[view_index];
        }
        single_residual = guided_residual(x_t[view_index], t, single_provider, cam, cfg.guidance,
                                          cfg.prompt_id, schedule, cfg.weighting, subtrahend);
        step.single_norm = image_norm(single_residual);
    }

    std::array<Image, 4> multi_residual;
    if (use_multi) {
        const std::array<Image, 4> eps_m =
            multi_provider->predict_noise(x_t, t, quad, cfg.prompt_id);
        const double w = cfg.weighting == TimeWeighting::One
                             ? cfg.lambda
                             : cfg.lambda * schedule.sigma(t) * schedule.sigma(t);
        double norm_sq = 0.0;
        for (int v = 0; v < 4; ++v) {
            multi_residual[v] = eps_m[v];
            for (std::size_t i = 0; i < multi_residual[v].size(); ++i) {
                multi_residual[v].data[i] = w * (eps_m[v].data[i] - eps_joint[v].data[i]);
                norm_sq += multi_residual[v].data[i] * multi_residual[v].data[i];
            }
        }
        step.multi_norm = std::sqrt(norm_sq);
    }

    bool first = true;
    for (int v = 0; v < 4; ++v) {
        const bool has_single = cfg.single_term && v == view_index;
        if (!has_single && !use_multi) continue;
        const Image* grad_rgb = nullptr;
        Image combined;
        if (has_single && use_multi) {
            combined = single_residual;
            for (std::size_t i = 0; i < combined.size(); ++i)
                combined.data[i] += multi_residual[v].data[i];
            grad_rgb = &combined;
        } else if (has_single) {
            grad_rgb = &single_residual;
        } else {
            grad_rgb = &multi_residual[v];
        }
        RenderGradients view_grads = render_backward(cloud, quad[v], opts, *grad_rgb);
        if (first) {
            step.grads = std::move(view_grads);
            first = false;
        } else {
            step.grads.accumulate(view_grads);
        }
    }
    if (first) step.grads = RenderGradients(cloud.size());
    return step;
}

KlDecomposition kl_product_decomposition_check(const Eigen::MatrixXd& q_joint,
                                               const Eigen::MatrixXd& p_joint) {
    if (q_joint.rows() != p_joint.rows() || q_joint.cols() != p_joint.cols() ||
        q_joint.size() == 0)
        throw InvalidDistribution("kl_check: shape mismatch or empty");
    if ((q_joint.array() <= 0.0).any() || (p_joint.array() <= 0.0).any())
        throw InvalidDistribution("kl_check: zero or negative mass cell");
    if (std::abs(q_joint.sum() - 1.0) > 1e-9 || std::abs(p_joint.sum() - 1.0) > 1e-9)
        throw InvalidDistribution("kl_check: distributions must sum to 1");

    KlDecomposition out;
    for (Eigen::Index a = 0; a < q_joint.rows(); ++a)
        for (Eigen::Index b = 0; b < q_joint.cols(); ++b)
            out.lhs += q_joint(a, b) * std::log(q_joint(a, b) / p_joint(a, b));

    const Eigen::VectorXd qa = q_joint.rowwise().sum();
    const Eigen::VectorXd pa = p_joint.rowwise().sum();
    for (Eigen::Index a = 0; a < q_joint.rows(); ++a) {
        out.rhs += qa[a] * std::log(qa[a] / pa[a]);
        double inner = 0.0;
        for (Eigen::Index b = 0; b < q_joint.cols(); ++b) {
            const double qb = q_joint(a, b) / qa[a];
            const double pb = p_joint(a, b) / pa[a];
            inner += qb * std::log(qb / pb);
        }
        out.rhs += qa[a] * inner;
    }
    out.gap = std::abs(out.lhs - out.rhs);
    return out;
}

RunResult run_optimization(GaussianCloud cloud, const CsdConfig& cfg, const DensifyConfig& densify,
                           const CameraRanges& ranges, const ProviderSet& providers,
                           const RenderOptions& render_opts, const RunSinks& sinks) {
    cfg.validate();
    densify.validate();
    ranges.validate();
    if (providers.single == nullptr || providers.schedule == nullptr)
        throw InvalidParameter("run_optimization: single provider and schedule are required");
    if (cfg.single_source == SingleScoreSource::Adapter &&
        (providers.adapter == nullptr || providers.adapter_state == nullptr))
        throw InvalidParameter("run_optimization: adapter source needs an adapter and its state");

    RunResult result;
    Rng rng(cfg.seed);
    AdamState adam(cloud.size());
    DensifyStats stats(cloud);
    const NoiseSchedule& schedule = *providers.schedule;

    const auto run_start = std::chrono::steady_clock::now();
    auto elapsed_ms = [&] {
        return std::chrono::duration_cast<std::chrono::milliseconds>(
                   std::chrono::steady_clock::now() - run_start)
            .count();
    };

    for (int iter = 1; iter <= cfg.total_iterations; ++iter) {
        const int res = cfg.resolution_at(iter - 1);
        CameraRanges iter_ranges = ranges;
        iter_ranges.width = res;
        iter_ranges.height = res;

        const CameraQuad quad = sample_orthogonal_quad(rng, iter_ranges);
        const double t = anneal_time_sample(rng, iter, cfg);
        const int view_index = static_cast<int>(rng.uniform_index(4));

        std::array<Image, 4> eps_joint;
        for (int v = 0; v < 4; ++v) {
            eps_joint[v] = Image(res, res, 3);
            for (double& x : eps_joint[v].data) x = rng.normal();
        }

        const CsdStep step = csd_gradient(cloud, quad, *providers.single, providers.adapter,
                                          providers.multi, t, eps_joint, view_index, cfg, schedule,
                                          render_opts);

        GroupLearningRates lr = cfg.base_lr;
        lr.position = position_lr(iter - 1, cfg.base_lr.position, cfg.position_lr_final,
                                  cfg.position_lr_decay_iters);
        bool theta_rejected = false;
        try {
            adam_step(adam, cloud, step.grads, lr);
        } catch (const RejectedStep&) {
            ++result.rejected_steps;
            theta_rejected = true;
        }
        if (!theta_rejected) stats.add(step.grads);

        double adapter_loss = std::numeric_limits<double>::quiet_NaN();
        if (providers.adapter != nullptr && iter % cfg.adapter_update_every == 0) {
            const double t2 = anneal_time_sample(rng, iter, cfg);
            Image eps2(res, res, 3);
            for (double& x : eps2.data) x = rng.normal();
            try {
                adapter_loss = adapter_train_step(
                    *providers.adapter, *providers.adapter_state, step.renders[view_index], t2, eps2,
                    view_condition(cfg.prompt_id, quad[view_index]), cfg.adapter_lr, schedule);
            } catch (const RejectedStep&) {
                ++result.rejected_steps;
            }
        }
        if (result.rejected_steps > cfg.rejected_budget)
            throw RejectedStep("run_optimization: rejected-step budget exceeded at iteration " +
                               std::to_string(iter));

        nlohmann::json line;
        line["iter"] = iter;
        line["t"] = t;
        line["single"] = step.single_norm;
        line["multi"] = step.multi_norm;
        if (std::isfinite(adapter_loss)) line["adapter_loss"] = adapter_loss;
        line["count"] = cloud.size();

        if (should_densify(iter, densify)) {
            const DensifyReport report = densify_and_prune(cloud, stats, densify, rng);
            adam.remap(report.moment_source);
            line["densify"] = {{"cloned", report.cloned},
                               {"split", report.split},
                               {"pruned", report.pruned},
                               {"count", cloud.size()}};
        }

        if (sinks.evaluate && sinks.evaluate_every > 0 &&
            (iter % sinks.evaluate_every == 0 || iter == cfg.total_iterations)) {
            const std::string extra = sinks.evaluate(iter, cloud);
            if (!extra.empty()) line["eval"] = nlohmann::json::parse(extra);
        }
        if (sinks.log_wall_clock) line["wall_ms"] = elapsed_ms();
        if (sinks.metrics) sinks.metrics(line.dump());

        if (sinks.snapshot && sinks.snapshot_every > 0 && iter % sinks.snapshot_every == 0)
            sinks.snapshot(iter, cloud);
        if (sinks.checkpoint && sinks.checkpoint_every > 0 && iter % sinks.checkpoint_every == 0)
            sinks.checkpoint(iter, cloud, providers.adapter);

        result.iterations_run = iter;
    }

    if (sinks.checkpoint) sinks.checkpoint(cfg.total_iterations, cloud, providers.adapter);
    result.cloud = std::move(cloud);
    return result;
}

}  // namespace csd
