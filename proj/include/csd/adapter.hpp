#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "csd/diffusion.hpp"
#include "csd/image.hpp"

namespace csd {

struct AdapterConfig {
    int grid = 32;           // images are resampled to grid x grid for the net
    int channels = 3;
    int hidden = 128;        // width of the two hidden layers
    int t_embed_dim = 16;    // sinusoidal timestep embedding
    int prompt_vocab = 8;    // one-hot prompt ids
    double weight_decay = 0.01;

    int input_dim() const;
    int output_dim() const { return grid * grid * channels; }
};

/// Small MLP noise predictor: downsampled diffused image + timestep embedding
/// + camera embedding + prompt one-hot -> predicted noise on the coarse grid,
/// bilinearly upsampled back to the image shape. The output layer starts at
/// zero so the initial prediction is exactly zero.
class AdapterModel {
public:
    AdapterModel() = default;
    AdapterModel(const AdapterConfig& cfg, std::uint64_t seed);

    /// Implements the ScoreProvider shape contract; cond must carry a camera.
    Image predict(const Image& x_t, double t, const Condition& cond) const;

    const AdapterConfig& config() const { return cfg_; }
    const std::vector<double>& parameters() const { return params_; }
    std::vector<double>& parameters() { return params_; }

    void save(const std::string& path) const;
    static AdapterModel load(const std::string& path);

    /// Loss and weight gradient of ||predict(x_t) - eps||^2 / n for one sample.
    double loss_and_gradient(const Image& x_t, double t, const Condition& cond, const Image& eps,
                             std::vector<double>& grad) const;

private:
    friend struct AdapterForward;
    AdapterConfig cfg_;
    std::vector<double> params_;
    // Offsets into params_: w1, b1, w2, b2, w3, b3.
    std::size_t o_w1_ = 0, o_b1_ = 0, o_w2_ = 0, o_b2_ = 0, o_w3_ = 0, o_b3_ = 0;
    void layout();
};

/// Decoupled-weight-decay Adam state for the adapter, (b1, b2) = (0.9, 0.999),
/// eps = 1e-8.
struct AdamWState {
    std::vector<double> m, v;
    std::int64_t step = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    explicit AdamWState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// One AdamW step on `params` given gradient `grad`; `weight_decay` is applied
/// decoupled (scaled by lr). Throws RejectedStep on non-finite gradients.
void adamw_step(AdamWState& state, std::vector<double>& params, const std::vector<double>& grad,
                double lr, double weight_decay);

/// Diffuses x0 with the given (t, eps), evaluates the squared-error objective
/// against eps and applies one AdamW step at rate lr. Returns the loss.
/// A non-finite loss throws RejectedStep and leaves the model unchanged.
double adapter_train_step(AdapterModel& model, AdamWState& state, const Image& x0, double t,
                          const Image& eps, const Condition& cond, double lr,
                          const NoiseSchedule& schedule);

}  // namespace csd
