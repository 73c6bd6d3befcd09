#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "csd/gaussian.hpp"

namespace csd {

/// Value of one config entry: bool, number, string, or a flat number array.
using ConfigValue = std::variant<bool, double, std::string, std::vector<double>>;

/// Parses the key-sectioned config text ([section] headers, key = value
/// lines, `#` comments; values are strings, booleans, numbers or flat
/// arrays). Returns section.key -> value. Throws InvalidParameter naming the
/// offending line on syntax errors.
std::map<std::string, ConfigValue> parse_config_text(const std::string& text);

/// Parses one `section.key=value` override (same value grammar).
std::pair<std::string, ConfigValue> parse_override(const std::string& assignment);

/// Every knob of the application, flattened. Defaults are the paper-scale
/// training setup; toy configs override what they need.
struct RunConfig {
    // run
    std::uint64_t seed = 0;
    int iterations = 4000;
    int threads = 1;
    std::string out_dir = "runs/default";

    // csd
    double lambda = 0.5;
    double guidance = 7.5;
    std::string omega = "sigma2";  // or "one"
    int k = 1;
    int switch_iteration = -1;
    std::string single_source = "adapter";  // or "noise"
    bool single_term = true;
    bool ablation = false;
    int rejected_budget = 20;
    int prompt = 0;

    // lr
    double lr_position = 1e-3;
    double lr_position_final = 2e-5;
    int lr_position_decay_iters = 1500;
    double lr_color = 0.01;
    double lr_opacity = 0.05;
    double lr_scale = 5e-3;
    double lr_rotation = 1e-3;
    double lr_adapter = 1e-3;

    // schedule
    std::string schedule_kind = "linear";  // or "cosine"
    int schedule_steps = 1000;

    // init
    int init_count = 1000;
    double init_radius = 0.5;
    double init_opacity = 0.1;
    std::vector<double> init_color = {0.5, 0.5, 0.5};

    // camera
    std::vector<double> cam_azimuth = {-180.0, 180.0};
    std::vector<double> cam_elevation = {-90.0, 30.0};
    std::vector<double> cam_radius = {2.0, 2.5};
    std::vector<double> cam_fov = {40.0, 70.0};
    std::vector<double> background = {0.0, 0.0, 0.0};

    // resolution: flattened (fraction, resolution) pairs
    std::vector<double> resolution_schedule = {0.0, 128};

    // render
    double render_early_stop = 1e-4;
    double render_splat_cutoff = 1.0 / 255.0;
    double render_cull_sigma = 3.0;
    int render_tile = 16;

    // densify
    int densify_interval = 250;
    int densify_stop = 1500;
    double densify_grad_threshold = 0.01;
    double densify_opacity_floor = 0.01;
    double densify_scale_cap = 0.05;
    double densify_clone_boundary = 0.01;
    double densify_split_divisor = 1.6;

    // adapter
    bool adapter_enabled = true;
    int adapter_grid = 32;
    int adapter_hidden = 128;
    int adapter_t_embed = 16;
    int adapter_vocab = 8;
    double adapter_weight_decay = 0.01;

    // provider (single-view prior)
    std::string provider_kind = "ball";  // ball | solid | mixture_balls
    double provider_gamma = 0.05;
    bool provider_janus = false;
    int provider_ref_count = 256;
    double provider_ref_radius = 0.35;
    double provider_ref_scale = 0.035;
    double provider_ref_opacity = 0.85;
    std::vector<double> provider_front_color = {0.85, 0.25, 0.2};
    std::vector<double> provider_back_color = {0.2, 0.35, 0.85};
    std::vector<double> provider_alt_front_color = {0.2, 0.35, 0.85};
    std::vector<double> provider_alt_back_color = {0.85, 0.25, 0.2};
    double provider_mixture_weight = 0.5;
    std::vector<double> provider_solid_color = {0.5, 0.5, 0.5};
    double provider_target_elevation = 0.0;
    double provider_target_radius = 2.2;
    double provider_target_fov = 60.0;
    std::uint64_t provider_seed = 7;

    // multiview (joint prior)
    bool multiview_enabled = true;
    double multiview_gamma = 0.05;
    double multiview_rho = 0.1;

    // mesh
    double mesh_threshold = 0.2;
    int mesh_grid_resolution = 64;
    int mesh_tet_resolution = 32;
    int mesh_fit_iterations = 200;
    double mesh_fit_lr = 0.01;
    int mesh_fit_samples = 2048;
    std::string mesh_format = "obj";  // or "ply"

    // log
    int log_snapshot_every = 0;
    int log_checkpoint_every = 0;
    int log_evaluate_every = 100;
    bool log_wall_clock = true;

    /// Applies one section.key value; throws InvalidParameter naming the key
    /// when it is unknown or has the wrong type.
    void apply(const std::string& key, const ConfigValue& value);
    void apply_all(const std::map<std::string, ConfigValue>& values);

    /// Serializes every resolved value; parsing the dump reproduces the
    /// config exactly.
    std::string dump() const;

    void validate() const;
};

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides);

}  // namespace csd
