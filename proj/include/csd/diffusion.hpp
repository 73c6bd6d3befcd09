#pragma once

#include <array>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "csd/camera.hpp"
#include "csd/image.hpp"

namespace csd {

enum class ScheduleKind { LinearBeta, Cosine };
enum class TimeWeighting { SigmaSquared, One };

/// Discretized variance-preserving schedule. alpha(t)^2 + sigma(t)^2 == 1
/// for every entry; continuous t in (0,1) indexes the table by
/// floor(t * (N - 1)).
class NoiseSchedule {
public:
    explicit NoiseSchedule(ScheduleKind kind = ScheduleKind::LinearBeta, int steps = 1000,
                           TimeWeighting weighting = TimeWeighting::SigmaSquared);

    double alpha(double t) const;  // sqrt(alpha_bar)
    double sigma(double t) const;  // sqrt(1 - alpha_bar)
    double weight(double t) const;
    int steps() const { return static_cast<int>(alpha_bar_.size()); }
    double alpha_bar(int index) const { return alpha_bar_[index]; }

private:
    int index_of(double t) const;
    std::vector<double> alpha_bar_;
    TimeWeighting weighting_;
};

/// Conditioning information handed to a score provider. A default-constructed
/// Condition is the unconditional ("empty prompt") case and carries no view.
struct Condition {
    static constexpr int kUnconditional = -1;
    int prompt_id = kUnconditional;
    std::optional<ViewBucket> bucket;
    std::optional<Camera> camera;

    bool unconditional() const { return prompt_id == kUnconditional; }
};

/// Noise-prediction contract: given a diffused image x_t and timestep t,
/// return a same-shape estimate of the noise that produced it. Implementations
/// must be safe to call concurrently.
class ScoreProvider {
public:
    virtual ~ScoreProvider() = default;
    virtual Image predict_noise(const Image& x_t, double t, const Condition& cond) const = 0;
};

/// Multi-view counterpart: x_t holds four stacked views (the images of a
/// CameraQuad, in quad order).
class MultiViewScoreProvider {
public:
    virtual ~MultiViewScoreProvider() = default;
    virtual std::array<Image, 4> predict_noise(const std::array<Image, 4>& x_t, double t,
                                               const CameraQuad& quad, int prompt_id) const = 0;
};

/// x_t = alpha_t x0 + sigma_t eps.
Image forward_diffuse(const Image& x0, double t, const Image& eps, const NoiseSchedule& schedule);

/// Classifier-free guidance: (1 + s) * cond - s * uncond.
Image cfg_combine(const Image& eps_cond, const Image& eps_uncond, double guidance);

/// Converts a v-parameterized prediction to an epsilon prediction:
/// eps = alpha_t * v + sigma_t * x_t (variance-preserving schedules only).
Image v_to_eps(const Image& v_pred, const Image& x_t, double t, const NoiseSchedule& schedule);

/// Produces the conditional mean image for a prompt/view at a resolution.
using MeanFn = std::function<Image(const Condition& cond, int width, int height)>;

/// Exact noise prediction for p0 = N(m(cond), gamma * I):
/// eps(x_t) = sigma_t (alpha_t^2 gamma + sigma_t^2)^-1 (x_t - alpha_t m).
/// An optional per-pixel variance image replaces the scalar gamma.
class AnalyticGaussianProvider : public ScoreProvider {
public:
    AnalyticGaussianProvider(MeanFn mean, double gamma, const NoiseSchedule& schedule);
    AnalyticGaussianProvider(MeanFn mean, Image diag_gamma, const NoiseSchedule& schedule);

    Image predict_noise(const Image& x_t, double t, const Condition& cond) const override;

private:
    MeanFn mean_;
    double gamma_ = 0.0;
    std::optional<Image> diag_gamma_;
    const NoiseSchedule* schedule_;
};

/// Mixture of isotropic Gaussians; the prediction is the responsibility-
/// weighted combination of the component predictions (log-sum-exp stabilized).
class AnalyticMixtureProvider : public ScoreProvider {
public:
    struct Component {
        double weight;
        MeanFn mean;
        double gamma;
    };

    AnalyticMixtureProvider(std::vector<Component> components, const NoiseSchedule& schedule);

    Image predict_noise(const Image& x_t, double t, const Condition& cond) const override;
    /// log p_t(x_t) of the diffused mixture (used by the score-identity checks).
    double log_density(const Image& x_t, double t, const Condition& cond) const;

private:
    std::vector<Component> components_;
    const NoiseSchedule* schedule_;
};

/// Joint Gaussian over four stacked views: per-view variance gamma on the
/// diagonal blocks and coupling rho * I between same-pixel entries of
/// different views. PSD requires gamma + 3 rho > 0 and gamma - rho > 0.
/// The mean attached to each slot follows that slot's camera.
class AnalyticJointProvider : public MultiViewScoreProvider {
public:
    AnalyticJointProvider(MeanFn mean, double gamma, double rho, const NoiseSchedule& schedule);

    std::array<Image, 4> predict_noise(const std::array<Image, 4>& x_t, double t,
                                       const CameraQuad& quad, int prompt_id) const override;
    double gamma() const { return gamma_; }
    double rho() const { return rho_; }
    Image mean_for(const Camera& cam, int prompt_id, int width, int height) const;

private:
    MeanFn mean_;
    double gamma_;
    double rho_;
    const NoiseSchedule* schedule_;
};

}  // namespace csd
