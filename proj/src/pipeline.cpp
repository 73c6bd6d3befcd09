#include "csd/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "csd/errors.hpp"

namespace csd {

namespace fs = std::filesystem;

ProviderSet BuiltProviders::set() const {
    ProviderSet s;
    s.single = single.get();
    s.multi = multi.get();
    s.adapter = adapter.get();
    s.adapter_state = adapter_state.get();
    s.schedule = &schedule;
    return s;
}

namespace {

Vec3 to_vec3(const std::vector<double>& v) { return Vec3(v[0], v[1], v[2]); }

TargetCameraSpec target_spec(const RunConfig& cfg) {
    return {cfg.provider_target_elevation, cfg.provider_target_radius, cfg.provider_target_fov};
}

}  // namespace

RenderOptions to_render_options(const RunConfig& cfg) {
    RenderOptions opts;
    opts.background = to_vec3(cfg.background);
    opts.early_stop_transmittance = cfg.render_early_stop;
    opts.splat_cutoff = cfg.render_splat_cutoff;
    opts.cull_sigma = cfg.render_cull_sigma;
    opts.tile_size = cfg.render_tile;
    opts.threads = cfg.threads;
    return opts;
}

BuiltProviders build_providers(const RunConfig& cfg) {
    BuiltProviders built;
    built.schedule = std::make_unique<NoiseSchedule>(
        cfg.schedule_kind == "cosine" ? ScheduleKind::Cosine : ScheduleKind::LinearBeta,
        cfg.schedule_steps, cfg.omega == "one" ? TimeWeighting::One : TimeWeighting::SigmaSquared);

    const RenderOptions opts = to_render_options(cfg);
    const TargetCameraSpec spec = target_spec(cfg);
    const GaussianCloud reference = two_tone_ball(
        cfg.provider_ref_count, cfg.provider_ref_radius, cfg.provider_ref_scale,
        cfg.provider_ref_opacity, to_vec3(cfg.provider_front_color),
        to_vec3(cfg.provider_back_color), cfg.provider_seed);

    auto own = [&built](std::unique_ptr<CloudViewTargets> t) {
        built.owned_targets.push_back(std::move(t));
        return built.owned_targets.back().get();
    };
    built.targets = own(std::make_unique<CloudViewTargets>(reference, spec, opts, false));

    if (cfg.provider_kind == "solid") {
        built.single = std::make_unique<AnalyticGaussianProvider>(
            solid_mean(to_vec3(cfg.provider_solid_color)), cfg.provider_gamma, *built.schedule);
    } else if (cfg.provider_kind == "mixture_balls") {
        const GaussianCloud alt = two_tone_ball(
            cfg.provider_ref_count, cfg.provider_ref_radius, cfg.provider_ref_scale,
            cfg.provider_ref_opacity, to_vec3(cfg.provider_alt_front_color),
            to_vec3(cfg.provider_alt_back_color), cfg.provider_seed);
        const CloudViewTargets* mode_a =
            own(std::make_unique<CloudViewTargets>(reference, spec, opts, cfg.provider_janus));
        const CloudViewTargets* mode_b_cond =
            own(std::make_unique<CloudViewTargets>(alt, spec, opts, cfg.provider_janus));
        built.mode_b = own(std::make_unique<CloudViewTargets>(alt, spec, opts, false));
        std::vector<AnalyticMixtureProvider::Component> components;
        components.push_back({cfg.provider_mixture_weight, mode_a->mean_fn(), cfg.provider_gamma});
        components.push_back(
            {1.0 - cfg.provider_mixture_weight, mode_b_cond->mean_fn(), cfg.provider_gamma});
        built.single =
            std::make_unique<AnalyticMixtureProvider>(std::move(components), *built.schedule);
    } else {
        const CloudViewTargets* single_targets =
            own(std::make_unique<CloudViewTargets>(reference, spec, opts, cfg.provider_janus));
        built.single = std::make_unique<AnalyticGaussianProvider>(
            single_targets->mean_fn(), cfg.provider_gamma, *built.schedule);
    }

    if (cfg.multiview_enabled) {
        built.multi = std::make_unique<AnalyticJointProvider>(
            built.targets->mean_fn(), cfg.multiview_gamma, cfg.multiview_rho, *built.schedule);
    }

    if (cfg.adapter_enabled) {
        AdapterConfig acfg;
        acfg.grid = cfg.adapter_grid;
        acfg.hidden = cfg.adapter_hidden;
        acfg.t_embed_dim = cfg.adapter_t_embed;
        acfg.prompt_vocab = cfg.adapter_vocab;
        acfg.weight_decay = cfg.adapter_weight_decay;
        built.adapter = std::make_unique<AdapterModel>(acfg, cfg.seed ^ 0xadc0ffeeull);
        built.adapter_state = std::make_unique<AdamWState>(built.adapter->parameters().size());
    }
    return built;
}

CsdConfig to_csd_config(const RunConfig& cfg) {
    CsdConfig c;
    c.lambda = cfg.lambda;
    c.guidance = cfg.guidance;
    c.weighting = cfg.omega == "one" ? TimeWeighting::One : TimeWeighting::SigmaSquared;
    c.switch_iteration = cfg.switch_iteration;
    c.total_iterations = cfg.iterations;
    c.adapter_update_every = cfg.k;
    c.rejected_budget = cfg.rejected_budget;
    c.prompt_id = cfg.prompt;
    c.base_lr.position = cfg.lr_position;
    c.base_lr.color = cfg.lr_color;
    c.base_lr.opacity = cfg.lr_opacity;
    c.base_lr.scale = cfg.lr_scale;
    c.base_lr.rotation = cfg.lr_rotation;
    c.position_lr_final = cfg.lr_position_final;
    c.position_lr_decay_iters = cfg.lr_position_decay_iters;
    c.adapter_lr = cfg.lr_adapter;
    c.resolution_schedule.clear();
    for (std::size_t i = 0; i + 1 < cfg.resolution_schedule.size(); i += 2)
        c.resolution_schedule.push_back(
            {cfg.resolution_schedule[i], static_cast<int>(cfg.resolution_schedule[i + 1])});
    c.seed = cfg.seed;
    c.ablation = cfg.ablation;
    c.single_term = cfg.single_term;
    c.single_source = cfg.single_source == "noise" ? SingleScoreSource::AddedNoise
                                                   : SingleScoreSource::Adapter;
    return c;
}

DensifyConfig to_densify_config(const RunConfig& cfg) {
    DensifyConfig d;
    d.interval = cfg.densify_interval;
    d.stop_iteration = cfg.densify_stop;
    d.grad_threshold = cfg.densify_grad_threshold;
    d.opacity_floor = cfg.densify_opacity_floor;
    d.scale_cap = cfg.densify_scale_cap;
    d.clone_scale_boundary = cfg.densify_clone_boundary;
    d.split_scale_divisor = cfg.densify_split_divisor;
    return d;
}

CameraRanges to_camera_ranges(const RunConfig& cfg) {
    CameraRanges r;
    r.azimuth_min = cfg.cam_azimuth[0];
    r.azimuth_max = cfg.cam_azimuth[1];
    r.elevation_min = cfg.cam_elevation[0];
    r.elevation_max = cfg.cam_elevation[1];
    r.radius_min = cfg.cam_radius[0];
    r.radius_max = cfg.cam_radius[1];
    r.fov_min = cfg.cam_fov[0];
    r.fov_max = cfg.cam_fov[1];
    return r;
}

double gaussian_render_kl(const Image& rendered, const Image& target, double gamma, double t,
                          const NoiseSchedule& schedule) {
    if (!rendered.same_shape(target)) throw ShapeError("gaussian_render_kl: shape mismatch");
    const double a = schedule.alpha(t), s = schedule.sigma(t);
    const double s2 = s * s;
    const double v = a * a * gamma + s2;
    const double dim = static_cast<double>(rendered.size());
    double dist2 = 0.0;
    for (std::size_t i = 0; i < rendered.size(); ++i) {
        const double d = rendered.data[i] - target.data[i];
        dist2 += d * d;
    }
    return 0.5 * (dim * s2 / v + a * a * dist2 / v - dim + dim * std::log(v / s2));
}

ViewEval evaluate_against_targets(const GaussianCloud& cloud, const CloudViewTargets& targets,
                                  const TargetCameraSpec& spec, double gamma, int resolution,
                                  const RenderOptions& opts, const NoiseSchedule& schedule) {
    ViewEval eval;
    for (int j = 0; j < 4; ++j) {
        const Camera cam(90.0 * j, spec.elevation, spec.radius, spec.fov, resolution, resolution);
        const Image rendered = render(cloud, cam, opts).rgb;
        const Image target = targets.target(view_bucket(cam), resolution, resolution);
        double dist2 = 0.0;
        for (std::size_t i = 0; i < rendered.size(); ++i) {
            const double d = rendered.data[i] - target.data[i];
            dist2 += d * d;
        }
        eval.mean_l2 += 0.25 * std::sqrt(dist2);
        eval.mean_kl += 0.25 * gaussian_render_kl(rendered, target, gamma, 0.5, schedule);
    }
    return eval;
}

std::string resolve_out_dir(const RunConfig& cfg) {
    fs::path p = cfg.out_dir;
    if (p.is_relative()) {
        if (const char* root = std::getenv("CSDGS_OUT_ROOT")) p = fs::path(root) / p;
    }
    return p.string();
}

OptimizeOutcome run_optimize_pipeline(const RunConfig& cfg) {
    cfg.validate();
    const std::string out_dir = resolve_out_dir(cfg);
    fs::create_directories(out_dir);
    fs::create_directories(fs::path(out_dir) / "checkpoints");
    fs::create_directories(fs::path(out_dir) / "snapshots");

    {
        std::ofstream dump(fs::path(out_dir) / "resolved.toml");
        if (!dump) throw IoError("optimize: cannot write resolved config");
        dump << cfg.dump();
    }

    const BuiltProviders providers = build_providers(cfg);
    const CsdConfig csd_cfg = to_csd_config(cfg);
    const DensifyConfig densify_cfg = to_densify_config(cfg);
    const CameraRanges ranges = to_camera_ranges(cfg);
    const RenderOptions render_opts = to_render_options(cfg);

    GaussianCloud cloud =
        init_cloud(cfg.init_count, cfg.init_radius, cfg.init_opacity, to_vec3(cfg.init_color),
                   cfg.seed);

    std::ofstream metrics(fs::path(out_dir) / "metrics.jsonl");
    if (!metrics) throw IoError("optimize: cannot write metrics log");

    const int final_res = csd_cfg.resolution_at(std::max(0, cfg.iterations - 1));
    const TargetCameraSpec spec = target_spec(cfg);

    RunSinks sinks;
    sinks.metrics = [&](const std::string& line) { metrics << line << "\n"; };
    sinks.checkpoint_every = cfg.log_checkpoint_every;
    sinks.checkpoint = [&](int iter, const GaussianCloud& c, const AdapterModel* adapter) {
        char name[64];
        std::snprintf(name, sizeof(name), "cloud_%06d.ply", iter);
        save_cloud(c, (fs::path(out_dir) / "checkpoints" / name).string());
        if (adapter) {
            std::snprintf(name, sizeof(name), "adapter_%06d.bin", iter);
            adapter->save((fs::path(out_dir) / "checkpoints" / name).string());
        }
    };
    sinks.snapshot_every = cfg.log_snapshot_every;
    sinks.snapshot = [&](int iter, const GaussianCloud& c) {
        for (int j = 0; j < 4; ++j) {
            const Camera cam(90.0 * j, 15.0, 2.2, 60.0, final_res, final_res);
            const RenderedImage img = render(c, cam, render_opts);
            char name[64];
            std::snprintf(name, sizeof(name), "snap_%06d_az%03d.png", iter, 90 * j);
            write_png((fs::path(out_dir) / "snapshots" / name).string(), img.rgb, &img.alpha);
        }
    };
    sinks.evaluate_every = cfg.log_evaluate_every;
    sinks.evaluate = [&](int, const GaussianCloud& c) {
        const ViewEval e = evaluate_against_targets(c, *providers.targets, spec, cfg.provider_gamma,
                                                    final_res, render_opts, providers.schedule);
        nlohmann::json j;
        j["l2"] = e.mean_l2;
        j["kl"] = e.mean_kl;
        return j.dump();
    };
    sinks.log_wall_clock = cfg.log_wall_clock;

    RunResult result = run_optimization(std::move(cloud), csd_cfg, densify_cfg, ranges,
                                        providers.set(), render_opts, sinks);

    save_cloud(result.cloud, (fs::path(out_dir) / "cloud_final.ply").string());
    if (providers.adapter) providers.adapter->save((fs::path(out_dir) / "adapter_final.bin").string());

    OptimizeOutcome outcome;
    outcome.cloud = std::move(result.cloud);
    outcome.rejected_steps = result.rejected_steps;
    outcome.out_dir = out_dir;
    return outcome;
}

Mesh extract_mesh_pipeline(const GaussianCloud& cloud, const RunConfig& cfg) {
    GridSpec spec;
    spec.resolution = cfg.mesh_grid_resolution;
    const OccupancyGrid occ = density_query(cloud, spec, cfg.mesh_threshold);
    if (occ.occupied_count() == 0)
        throw DegenerateField("no occupied voxels at threshold " + std::to_string(cfg.mesh_threshold));

    const std::vector<double> sdf = sdf_from_occupancy(occ);
    const auto target = trilinear_sdf_field(occ, sdf);

    TetGrid grid = build_tetgrid(cfg.mesh_tet_resolution, occ.lo, occ.hi, target);
    FitOptions fit;
    fit.iterations = cfg.mesh_fit_iterations;
    fit.learning_rate = cfg.mesh_fit_lr;
    fit.samples_per_iteration = cfg.mesh_fit_samples;
    fit.seed = cfg.seed;
    grid = fit_tetgrid(std::move(grid), target, fit);

    Mesh mesh = marching_tetrahedra(grid);
    return bake_vertex_colors(std::move(mesh), cloud);
}

}  // namespace csd
