#pragma once

#include <memory>
#include <string>

#include "csd/config.hpp"
#include "csd/distill.hpp"
#include "csd/mesh.hpp"
#include "csd/patterns.hpp"

namespace csd {

/// Owning bundle of everything run_optimization borrows. All members live on
/// the heap so the bundle can be moved without invalidating the pointers the
/// providers hold into each other.
struct BuiltProviders {
    std::unique_ptr<NoiseSchedule> schedule;
    std::vector<std::unique_ptr<CloudViewTargets>> owned_targets;
    const CloudViewTargets* targets = nullptr;  // honest per-bucket targets
    const CloudViewTargets* mode_b = nullptr;   // second mixture mode, if any
    std::unique_ptr<ScoreProvider> single;
    std::unique_ptr<MultiViewScoreProvider> multi;
    std::unique_ptr<AdapterModel> adapter;
    std::unique_ptr<AdamWState> adapter_state;

    ProviderSet set() const;
};

BuiltProviders build_providers(const RunConfig& cfg);
CsdConfig to_csd_config(const RunConfig& cfg);
DensifyConfig to_densify_config(const RunConfig& cfg);
CameraRanges to_camera_ranges(const RunConfig& cfg);
RenderOptions to_render_options(const RunConfig& cfg);

/// Closed-form KL(N(alpha r, sigma^2 I) || N(alpha m, (alpha^2 gamma + sigma^2) I))
/// between the diffused render and the diffused target at timestep t.
double gaussian_render_kl(const Image& rendered, const Image& target, double gamma, double t,
                          const NoiseSchedule& schedule);

struct ViewEval {
    double mean_l2 = 0;  // mean over views of || render - target ||_2
    double mean_kl = 0;  // mean over views of the closed-form KL at t = 0.5
};

/// Renders the canonical quad (azimuths 0/90/180/270 at the target camera
/// spec) and scores it against the per-bucket targets.
ViewEval evaluate_against_targets(const GaussianCloud& cloud, const CloudViewTargets& targets,
                                  const TargetCameraSpec& spec, double gamma, int resolution,
                                  const RenderOptions& opts, const NoiseSchedule& schedule);

struct OptimizeOutcome {
    GaussianCloud cloud;
    int rejected_steps = 0;
    std::string out_dir;
};

/// Full stage-one pipeline: resolves the output directory, dumps the config,
/// streams metrics, writes checkpoints/snapshots and returns the final cloud.
OptimizeOutcome run_optimize_pipeline(const RunConfig& cfg);

/// Stage-two pipeline on an optimized cloud: local density query -> SDF ->
/// deformable tet grid fit -> marching tetrahedra -> vertex colors.
Mesh extract_mesh_pipeline(const GaussianCloud& cloud, const RunConfig& cfg);

/// Resolves cfg.out_dir against the CSDGS_OUT_ROOT environment variable when
/// the configured path is relative.
std::string resolve_out_dir(const RunConfig& cfg);

}  // namespace csd
