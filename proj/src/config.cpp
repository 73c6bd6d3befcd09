#include "csd/config.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "csd/errors.hpp"

namespace csd {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    std::size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

ConfigValue parse_value(const std::string& raw, const std::string& context) {
    const std::string v = trim(raw);
    if (v.empty()) throw InvalidParameter("config: empty value for " + context);
    if (v.front() == '"') {
        if (v.size() < 2 || v.back() != '"')
            throw InvalidParameter("config: unterminated string for " + context);
        return v.substr(1, v.size() - 2);
    }
    if (v == "true") return true;
    if (v == "false") return false;
    if (v.front() == '[') {
        if (v.back() != ']') throw InvalidParameter("config: unterminated array for " + context);
        std::vector<double> arr;
        std::string body = v.substr(1, v.size() - 2);
        std::stringstream ss(body);
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = trim(item);
            if (item.empty()) continue;
            char* end = nullptr;
            const double x = std::strtod(item.c_str(), &end);
            if (end != item.c_str() + item.size())
                throw InvalidParameter("config: bad array element '" + item + "' for " + context);
            arr.push_back(x);
        }
        return arr;
    }
    char* end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    if (end != v.c_str() + v.size())
        throw InvalidParameter("config: cannot parse value '" + v + "' for " + context);
    return x;
}

}  // namespace

std::map<std::string, ConfigValue> parse_config_text(const std::string& text) {
    std::map<std::string, ConfigValue> out;
    std::istringstream in(text);
    std::string line, section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        // Strip comments outside strings.
        bool quoted = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"') quoted = !quoted;
            if (line[i] == '#' && !quoted) {
                line = line.substr(0, i);
                break;
            }
        }
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw InvalidParameter("config: bad section header at line " + std::to_string(line_no));
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw InvalidParameter("config: expected key = value at line " + std::to_string(line_no));
        const std::string key = trim(line.substr(0, eq));
        if (key.empty())
            throw InvalidParameter("config: empty key at line " + std::to_string(line_no));
        const std::string full = section.empty() ? key : section + "." + key;
        out[full] = parse_value(line.substr(eq + 1), full);
    }
    return out;
}

std::pair<std::string, ConfigValue> parse_override(const std::string& assignment) {
    const std::size_t eq = assignment.find('=');
    if (eq == std::string::npos)
        throw InvalidParameter("config: override must look like section.key=value: " + assignment);
    const std::string key = trim(assignment.substr(0, eq));
    return {key, parse_value(assignment.substr(eq + 1), key)};
}

namespace {

struct Binding {
    enum Kind { Bool, Int, UInt64, Double, String, Array } kind;
    void* ptr;
};

using Schema = std::vector<std::pair<std::string, Binding>>;

Schema make_schema(RunConfig& c) {
    return {
        {"run.seed", {Binding::UInt64, &c.seed}},
        {"run.iterations", {Binding::Int, &c.iterations}},
        {"run.threads", {Binding::Int, &c.threads}},
        {"run.out_dir", {Binding::String, &c.out_dir}},
        {"csd.lambda", {Binding::Double, &c.lambda}},
        {"csd.guidance", {Binding::Double, &c.guidance}},
        {"csd.omega", {Binding::String, &c.omega}},
        {"csd.k", {Binding::Int, &c.k}},
        {"csd.switch_iteration", {Binding::Int, &c.switch_iteration}},
        {"csd.single_source", {Binding::String, &c.single_source}},
        {"csd.single_term", {Binding::Bool, &c.single_term}},
        {"csd.ablation", {Binding::Bool, &c.ablation}},
        {"csd.rejected_budget", {Binding::Int, &c.rejected_budget}},
        {"csd.prompt", {Binding::Int, &c.prompt}},
        {"lr.position", {Binding::Double, &c.lr_position}},
        {"lr.position_final", {Binding::Double, &c.lr_position_final}},
        {"lr.position_decay_iters", {Binding::Int, &c.lr_position_decay_iters}},
        {"lr.color", {Binding::Double, &c.lr_color}},
        {"lr.opacity", {Binding::Double, &c.lr_opacity}},
        {"lr.scale", {Binding::Double, &c.lr_scale}},
        {"lr.rotation", {Binding::Double, &c.lr_rotation}},
        {"lr.adapter", {Binding::Double, &c.lr_adapter}},
        {"schedule.kind", {Binding::String, &c.schedule_kind}},
        {"schedule.steps", {Binding::Int, &c.schedule_steps}},
        {"init.count", {Binding::Int, &c.init_count}},
        {"init.radius", {Binding::Double, &c.init_radius}},
        {"init.opacity", {Binding::Double, &c.init_opacity}},
        {"init.color", {Binding::Array, &c.init_color}},
        {"camera.azimuth", {Binding::Array, &c.cam_azimuth}},
        {"camera.elevation", {Binding::Array, &c.cam_elevation}},
        {"camera.radius", {Binding::Array, &c.cam_radius}},
        {"camera.fov", {Binding::Array, &c.cam_fov}},
        {"camera.background", {Binding::Array, &c.background}},
        {"resolution.schedule", {Binding::Array, &c.resolution_schedule}},
        {"render.early_stop", {Binding::Double, &c.render_early_stop}},
        {"render.splat_cutoff", {Binding::Double, &c.render_splat_cutoff}},
        {"render.cull_sigma", {Binding::Double, &c.render_cull_sigma}},
        {"render.tile", {Binding::Int, &c.render_tile}},
        {"densify.interval", {Binding::Int, &c.densify_interval}},
        {"densify.stop", {Binding::Int, &c.densify_stop}},
        {"densify.grad_threshold", {Binding::Double, &c.densify_grad_threshold}},
        {"densify.opacity_floor", {Binding::Double, &c.densify_opacity_floor}},
        {"densify.scale_cap", {Binding::Double, &c.densify_scale_cap}},
        {"densify.clone_boundary", {Binding::Double, &c.densify_clone_boundary}},
        {"densify.split_divisor", {Binding::Double, &c.densify_split_divisor}},
        {"adapter.enabled", {Binding::Bool, &c.adapter_enabled}},
        {"adapter.grid", {Binding::Int, &c.adapter_grid}},
        {"adapter.hidden", {Binding::Int, &c.adapter_hidden}},
        {"adapter.t_embed", {Binding::Int, &c.adapter_t_embed}},
        {"adapter.vocab", {Binding::Int, &c.adapter_vocab}},
        {"adapter.weight_decay", {Binding::Double, &c.adapter_weight_decay}},
        {"provider.kind", {Binding::String, &c.provider_kind}},
        {"provider.gamma", {Binding::Double, &c.provider_gamma}},
        {"provider.janus", {Binding::Bool, &c.provider_janus}},
        {"provider.ref_count", {Binding::Int, &c.provider_ref_count}},
        {"provider.ref_radius", {Binding::Double, &c.provider_ref_radius}},
        {"provider.ref_scale", {Binding::Double, &c.provider_ref_scale}},
        {"provider.ref_opacity", {Binding::Double, &c.provider_ref_opacity}},
        {"provider.front_color", {Binding::Array, &c.provider_front_color}},
        {"provider.back_color", {Binding::Array, &c.provider_back_color}},
        {"provider.alt_front_color", {Binding::Array, &c.provider_alt_front_color}},
        {"provider.alt_back_color", {Binding::Array, &c.provider_alt_back_color}},
        {"provider.mixture_weight", {Binding::Double, &c.provider_mixture_weight}},
        {"provider.solid_color", {Binding::Array, &c.provider_solid_color}},
        {"provider.target_elevation", {Binding::Double, &c.provider_target_elevation}},
        {"provider.target_radius", {Binding::Double, &c.provider_target_radius}},
        {"provider.target_fov", {Binding::Double, &c.provider_target_fov}},
        {"provider.seed", {Binding::UInt64, &c.provider_seed}},
        {"multiview.enabled", {Binding::Bool, &c.multiview_enabled}},
        {"multiview.gamma", {Binding::Double, &c.multiview_gamma}},
        {"multiview.rho", {Binding::Double, &c.multiview_rho}},
        {"mesh.threshold", {Binding::Double, &c.mesh_threshold}},
        {"mesh.grid_resolution", {Binding::Int, &c.mesh_grid_resolution}},
        {"mesh.tet_resolution", {Binding::Int, &c.mesh_tet_resolution}},
        {"mesh.fit_iterations", {Binding::Int, &c.mesh_fit_iterations}},
        {"mesh.fit_lr", {Binding::Double, &c.mesh_fit_lr}},
        {"mesh.fit_samples", {Binding::Int, &c.mesh_fit_samples}},
        {"mesh.format", {Binding::String, &c.mesh_format}},
        {"log.snapshot_every", {Binding::Int, &c.log_snapshot_every}},
        {"log.checkpoint_every", {Binding::Int, &c.log_checkpoint_every}},
        {"log.evaluate_every", {Binding::Int, &c.log_evaluate_every}},
        {"log.wall_clock", {Binding::Bool, &c.log_wall_clock}},
    };
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void RunConfig::apply(const std::string& key, const ConfigValue& value) {
    Schema schema = make_schema(*this);
    for (auto& [name, binding] : schema) {
        if (name != key) continue;
        switch (binding.kind) {
            case Binding::Bool:
                if (!std::holds_alternative<bool>(value))
                    throw InvalidParameter("config: " + key + " expects a boolean");
                *static_cast<bool*>(binding.ptr) = std::get<bool>(value);
                return;
            case Binding::Int: {
                if (!std::holds_alternative<double>(value))
                    throw InvalidParameter("config: " + key + " expects an integer");
                const double d = std::get<double>(value);
                if (d != std::floor(d)) throw InvalidParameter("config: " + key + " expects an integer");
                *static_cast<int*>(binding.ptr) = static_cast<int>(d);
                return;
            }
            case Binding::UInt64: {
                if (!std::holds_alternative<double>(value))
                    throw InvalidParameter("config: " + key + " expects an integer");
                const double d = std::get<double>(value);
                if (d < 0 || d != std::floor(d))
                    throw InvalidParameter("config: " + key + " expects a non-negative integer");
                *static_cast<std::uint64_t*>(binding.ptr) = static_cast<std::uint64_t>(d);
                return;
            }
            case Binding::Double:
                if (!std::holds_alternative<double>(value))
                    throw InvalidParameter("config: " + key + " expects a number");
                *static_cast<double*>(binding.ptr) = std::get<double>(value);
                return;
            case Binding::String:
                if (!std::holds_alternative<std::string>(value))
                    throw InvalidParameter("config: " + key + " expects a string");
                *static_cast<std::string*>(binding.ptr) = std::get<std::string>(value);
                return;
            case Binding::Array:
                if (!std::holds_alternative<std::vector<double>>(value))
                    throw InvalidParameter("config: " + key + " expects an array");
                *static_cast<std::vector<double>*>(binding.ptr) = std::get<std::vector<double>>(value);
                return;
        }
    }
    throw InvalidParameter("config: unknown key '" + key + "'");
}

void RunConfig::apply_all(const std::map<std::string, ConfigValue>& values) {
    for (const auto& [key, value] : values) apply(key, value);
}

std::string RunConfig::dump() const {
    RunConfig copy = *this;
    Schema schema = make_schema(copy);
    std::string out;
    std::string section;
    for (const auto& [name, binding] : schema) {
        const std::size_t dot = name.find('.');
        const std::string sec = name.substr(0, dot);
        const std::string key = name.substr(dot + 1);
        if (sec != section) {
            if (!out.empty()) out += "\n";
            out += "[" + sec + "]\n";
            section = sec;
        }
        out += key + " = ";
        switch (binding.kind) {
            case Binding::Bool:
                out += *static_cast<bool*>(binding.ptr) ? "true" : "false";
                break;
            case Binding::Int:
                out += std::to_string(*static_cast<int*>(binding.ptr));
                break;
            case Binding::UInt64:
                out += std::to_string(*static_cast<std::uint64_t*>(binding.ptr));
                break;
            case Binding::Double:
                out += format_double(*static_cast<double*>(binding.ptr));
                break;
            case Binding::String:
                out += "\"" + *static_cast<std::string*>(binding.ptr) + "\"";
                break;
            case Binding::Array: {
                const auto& arr = *static_cast<std::vector<double>*>(binding.ptr);
                out += "[";
                for (std::size_t i = 0; i < arr.size(); ++i) {
                    if (i) out += ", ";
                    out += format_double(arr[i]);
                }
                out += "]";
                break;
            }
        }
        out += "\n";
    }
    return out;
}

void RunConfig::validate() const {
    auto need_size = [](const std::vector<double>& v, std::size_t n, const char* key) {
        if (v.size() != n)
            throw InvalidParameter(std::string("config: ") + key + " expects " + std::to_string(n) +
                                   " values");
    };
    need_size(init_color, 3, "init.color");
    need_size(cam_azimuth, 2, "camera.azimuth");
    need_size(cam_elevation, 2, "camera.elevation");
    need_size(cam_radius, 2, "camera.radius");
    need_size(cam_fov, 2, "camera.fov");
    need_size(background, 3, "camera.background");
    need_size(provider_front_color, 3, "provider.front_color");
    need_size(provider_back_color, 3, "provider.back_color");
    need_size(provider_alt_front_color, 3, "provider.alt_front_color");
    need_size(provider_alt_back_color, 3, "provider.alt_back_color");
    need_size(provider_solid_color, 3, "provider.solid_color");
    if (resolution_schedule.empty() || resolution_schedule.size() % 2 != 0)
        throw InvalidParameter("config: resolution.schedule expects (fraction, resolution) pairs");
    if (omega != "sigma2" && omega != "one")
        throw InvalidParameter("config: csd.omega must be \"sigma2\" or \"one\"");
    if (single_source != "adapter" && single_source != "noise")
        throw InvalidParameter("config: csd.single_source must be \"adapter\" or \"noise\"");
    if (schedule_kind != "linear" && schedule_kind != "cosine")
        throw InvalidParameter("config: schedule.kind must be \"linear\" or \"cosine\"");
    if (provider_kind != "ball" && provider_kind != "solid" && provider_kind != "mixture_balls")
        throw InvalidParameter("config: provider.kind must be ball, solid or mixture_balls");
    if (mesh_format != "obj" && mesh_format != "ply")
        throw InvalidParameter("config: mesh.format must be obj or ply");
    if (iterations < 0) throw InvalidParameter("config: run.iterations must be >= 0");
    if (threads < 1) throw InvalidParameter("config: run.threads must be >= 1");
    if (single_source == "adapter" && !adapter_enabled)
        throw InvalidParameter("config: csd.single_source=adapter requires adapter.enabled");
    if (lambda != 0.0 && !multiview_enabled)
        throw InvalidParameter("config: csd.lambda > 0 requires multiview.enabled");
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
    RunConfig cfg;
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw IoError("config: cannot open " + path);
        std::stringstream buffer;
        buffer << in.rdbuf();
        cfg.apply_all(parse_config_text(buffer.str()));
    }
    for (const auto& o : overrides) {
        const auto [key, value] = parse_override(o);
        cfg.apply(key, value);
    }
    cfg.validate();
    return cfg;
}

}  // namespace csd
