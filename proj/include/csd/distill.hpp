#pragma once

#include <Eigen/Dense>
#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "csd/adapter.hpp"
#include "csd/camera.hpp"
#include "csd/densify.hpp"
#include "csd/diffusion.hpp"
#include "csd/optimizer.hpp"
#include "csd/render.hpp"

namespace csd {

/// Where the single-view rendered-image score estimate comes from: the
/// trainable adapter, or the added diffusion noise itself (the base form of
/// the update rule, which reduces the single-view term to plain score
/// distillation and doubles as the no-adapter ablation).
enum class SingleScoreSource { Adapter, AddedNoise };

struct ResolutionStep {
    double from_fraction = 0.0;
    int resolution = 128;
};

struct CsdConfig {
    double lambda = 0.5;       // multi-view regularization weight, [0.1, 1.0]
    double guidance = 7.5;     // CFG scale for the pretrained branch
    TimeWeighting weighting = TimeWeighting::SigmaSquared;
    double t_initial_min = 0.02, t_initial_max = 0.98;
    double t_annealed_min = 0.02, t_annealed_max = 0.50;
    int switch_iteration = -1;  // -1: half of total_iterations
    int total_iterations = 4000;
    int adapter_update_every = 1;  // k
    int rejected_budget = 20;
    int prompt_id = 0;

    GroupLearningRates base_lr;
    double position_lr_final = 2e-5;
    int position_lr_decay_iters = 1500;
    double adapter_lr = 1e-3;

    std::vector<ResolutionStep> resolution_schedule = {
        {0.0, 128}, {0.1, 256}, {0.3, 512}, {0.5, 1024}};
    std::uint64_t seed = 0;

    /// Ablation switches. lambda = 0 (no multi-view term) and disabling the
    /// single-view term are only legal when `ablation` is set.
    bool ablation = false;
    bool single_term = true;
    SingleScoreSource single_source = SingleScoreSource::Adapter;

    int switch_at() const { return switch_iteration >= 0 ? switch_iteration : total_iterations / 2; }
    int resolution_at(int iter) const;
    void validate() const;
};

/// t ~ U(initial range) before the switch iteration, U(annealed range) after.
double anneal_time_sample(Rng& rng, int iter, const CsdConfig& cfg);

struct SdsStep {
    RenderGradients grads;
    double residual_norm = 0;
    Image render_rgb;
};

/// Single-view score distillation update: renders, diffuses with the given
/// (t, eps), forms the guided residual omega(t) (eps_hat - eps) and
/// backpropagates it through the renderer.
SdsStep sds_gradient(const GaussianCloud& cloud, const Camera& cam, const ScoreProvider& provider,
                     double t, const Image& eps, const NoiseSchedule& schedule, double guidance,
                     int prompt_id, const RenderOptions& opts,
                     TimeWeighting weighting = TimeWeighting::SigmaSquared);

struct CsdStep {
    RenderGradients grads;
    double single_norm = 0;  // ||omega (eps_hat - eps_adapter)|| on view i
    double multi_norm = 0;   // ||omega lambda (eps_M - eps)|| over the quad
    std::array<Image, 4> renders;
};

/// Coupled update: the single-view residual on the chosen quad member plus
/// the lambda-weighted multi-view joint residual over all four, sharing t and
/// the per-view noises in eps_joint.
CsdStep csd_gradient(const GaussianCloud& cloud, const CameraQuad& quad,
                     const ScoreProvider& single_provider, const AdapterModel* adapter,
                     const MultiViewScoreProvider* multi_provider, double t,
                     const std::array<Image, 4>& eps_joint, int view_index, const CsdConfig& cfg,
                     const NoiseSchedule& schedule, const RenderOptions& opts);

struct KlDecomposition {
    double lhs = 0;  // KL(q(a,b) || p(a,b))
    double rhs = 0;  // KL(q(a) || p(a)) + E_q(a)[ KL(q(b|a) || p(b|a)) ]
    double gap = 0;
};

/// Chain-rule decomposition of the KL divergence between two strictly
/// positive discrete joints over (A, B). Throws InvalidDistribution on
/// non-positive cells or unnormalized inputs.
KlDecomposition kl_product_decomposition_check(const Eigen::MatrixXd& q_joint,
                                               const Eigen::MatrixXd& p_joint);

/// Everything the training loop pulls noise predictions from.
struct ProviderSet {
    const ScoreProvider* single = nullptr;
    const MultiViewScoreProvider* multi = nullptr;
    AdapterModel* adapter = nullptr;
    AdamWState* adapter_state = nullptr;
    const NoiseSchedule* schedule = nullptr;
};

/// Output hooks for run_optimization; any of them may be empty.
struct RunSinks {
    std::function<void(const std::string& json_line)> metrics;
    std::function<void(int iter, const GaussianCloud&, const AdapterModel*)> checkpoint;
    std::function<void(int iter, const GaussianCloud&)> snapshot;
    /// Extra per-checkpoint evaluation: returns a serialized JSON object
    /// (e.g. {"kl":1.25}) stored under "eval" in the metrics line.
    std::function<std::string(int iter, const GaussianCloud&)> evaluate;
    int checkpoint_every = 0;  // 0: only at the end
    int snapshot_every = 0;
    int evaluate_every = 100;
    bool log_wall_clock = false;
};

struct RunResult {
    GaussianCloud cloud;
    int iterations_run = 0;
    int rejected_steps = 0;
};

/// The iterative training loop: per iteration samples an orthogonal quad and
/// a timestep, takes one coupled-gradient Adam step on the cloud, then every
/// k iterations one adapter training step on the chosen view; densification
/// and pruning run on their own schedule. Deterministic for a fixed seed with
/// threads = 1.
RunResult run_optimization(GaussianCloud cloud, const CsdConfig& cfg, const DensifyConfig& densify,
                           const CameraRanges& ranges, const ProviderSet& providers,
                           const RenderOptions& render_opts, const RunSinks& sinks);

}  // namespace csd
