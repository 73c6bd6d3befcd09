#include "csd/adapter.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "csd/errors.hpp"
#include "csd/rng.hpp"

namespace csd {

int AdapterConfig::input_dim() const {
    return grid * grid * channels + t_embed_dim + 5 + prompt_vocab;
}

void AdapterModel::layout() {
    const std::size_t in = cfg_.input_dim(), h = cfg_.hidden, out = cfg_.output_dim();
    o_w1_ = 0;
    o_b1_ = o_w1_ + h * in;
    o_w2_ = o_b1_ + h;
    o_b2_ = o_w2_ + h * h;
    o_w3_ = o_b2_ + h;
    o_b3_ = o_w3_ + out * h;
    params_.assign(o_b3_ + out, 0.0);
}

AdapterModel::AdapterModel(const AdapterConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg.grid < 1 || cfg.hidden < 1 || cfg.t_embed_dim < 2 || cfg.t_embed_dim % 2 != 0 ||
        cfg.prompt_vocab < 1 || (cfg.channels != 1 && cfg.channels != 3))
        throw InvalidParameter("AdapterModel: bad configuration");
    layout();
    Rng rng(seed);
    const std::size_t in = cfg_.input_dim(), h = cfg_.hidden;
    const double s1 = std::sqrt(1.0 / in), s2 = std::sqrt(1.0 / h);
    for (std::size_t i = o_w1_; i < o_b1_; ++i) params_[i] = s1 * (2.0 * rng.uniform() - 1.0);
    for (std::size_t i = o_w2_; i < o_b2_; ++i) params_[i] = s2 * (2.0 * rng.uniform() - 1.0);
    // w3 and b3 stay zero: the untrained adapter predicts exactly zero.
}

namespace {

void embed_inputs(const AdapterConfig& cfg, const Image& x_t, double t, const Condition& cond,
                  std::vector<double>& input) {
    if (!cond.camera) throw InvalidCondition("adapter: condition must carry a camera");
    if (x_t.channels != cfg.channels) throw ShapeError("adapter: channel count mismatch");

    const Image coarse = (x_t.width == cfg.grid && x_t.height == cfg.grid)
                             ? x_t
                             : resize_bilinear(x_t, cfg.grid, cfg.grid);
    input.assign(cfg.input_dim(), 0.0);
    std::size_t k = 0;
    for (double v : coarse.data) input[k++] = v;
    for (int i = 0; i < cfg.t_embed_dim / 2; ++i) {
        const double freq = M_PI * std::pow(2.0, i);
        input[k++] = std::sin(freq * t);
        input[k++] = std::cos(freq * t);
    }
    const double az = cond.camera->azimuth_deg * M_PI / 180.0;
    const double el = cond.camera->elevation_deg * M_PI / 180.0;
    input[k++] = std::sin(az);
    input[k++] = std::cos(az);
    input[k++] = std::sin(el);
    input[k++] = std::cos(el);
    input[k++] = cond.camera->radius;
    if (cond.prompt_id >= 0) {
        if (cond.prompt_id >= cfg.prompt_vocab)
            throw InvalidCondition("adapter: prompt id out of vocabulary");
        input[k + cond.prompt_id] = 1.0;
    }
}

}  // namespace

struct AdapterForward {
    std::vector<double> input, h1, h2, out;

    void run(const AdapterModel& model, const Image& x_t, double t, const Condition& cond) {
        const AdapterConfig& cfg = model.cfg_;
        embed_inputs(cfg, x_t, t, cond, input);
        const std::size_t in = cfg.input_dim(), h = cfg.hidden, o = cfg.output_dim();
        const double* p = model.params_.data();

        h1.assign(h, 0.0);
        for (std::size_t r = 0; r < h; ++r) {
            double acc = p[model.o_b1_ + r];
            const double* row = p + model.o_w1_ + r * in;
            for (std::size_t c = 0; c < in; ++c) acc += row[c] * input[c];
            h1[r] = std::tanh(acc);
        }
        h2.assign(h, 0.0);
        for (std::size_t r = 0; r < h; ++r) {
            double acc = p[model.o_b2_ + r];
            const double* row = p + model.o_w2_ + r * h;
            for (std::size_t c = 0; c < h; ++c) acc += row[c] * h1[c];
            h2[r] = std::tanh(acc);
        }
        out.assign(o, 0.0);
        for (std::size_t r = 0; r < o; ++r) {
            double acc = p[model.o_b3_ + r];
            const double* row = p + model.o_w3_ + r * h;
            for (std::size_t c = 0; c < h; ++c) acc += row[c] * h2[c];
            out[r] = acc;
        }
    }

    // Backpropagates dL/dout into the weight gradient buffer.
    void backward(const AdapterModel& model, const std::vector<double>& dout,
                  std::vector<double>& grad) const {
        const AdapterConfig& cfg = model.cfg_;
        const std::size_t in = cfg.input_dim(), h = cfg.hidden, o = cfg.output_dim();
        const double* p = model.params_.data();
        grad.assign(model.params_.size(), 0.0);

        std::vector<double> dh2(h, 0.0);
        for (std::size_t r = 0; r < o; ++r) {
            grad[model.o_b3_ + r] += dout[r];
            double* grow = grad.data() + model.o_w3_ + r * h;
            const double* row = p + model.o_w3_ + r * h;
            for (std::size_t c = 0; c < h; ++c) {
                grow[c] += dout[r] * h2[c];
                dh2[c] += dout[r] * row[c];
            }
        }
        std::vector<double> dh1(h, 0.0);
        for (std::size_t r = 0; r < h; ++r) {
            const double dpre = dh2[r] * (1.0 - h2[r] * h2[r]);
            grad[model.o_b2_ + r] += dpre;
            double* grow = grad.data() + model.o_w2_ + r * h;
            const double* row = p + model.o_w2_ + r * h;
            for (std::size_t c = 0; c < h; ++c) {
                grow[c] += dpre * h1[c];
                dh1[c] += dpre * row[c];
            }
        }
        for (std::size_t r = 0; r < h; ++r) {
            const double dpre = dh1[r] * (1.0 - h1[r] * h1[r]);
            grad[model.o_b1_ + r] += dpre;
            double* grow = grad.data() + model.o_w1_ + r * in;
            for (std::size_t c = 0; c < in; ++c) grow[c] += dpre * input[c];
        }
    }
};

Image AdapterModel::predict(const Image& x_t, double t, const Condition& cond) const {
    AdapterForward fwd;
    fwd.run(*this, x_t, t, cond);
    Image coarse(cfg_.grid, cfg_.grid, cfg_.channels);
    coarse.data = fwd.out;
    return resize_bilinear(coarse, x_t.width, x_t.height);
}

double AdapterModel::loss_and_gradient(const Image& x_t, double t, const Condition& cond,
                                       const Image& eps, std::vector<double>& grad) const {
    if (!x_t.same_shape(eps)) throw ShapeError("adapter: x_t/eps shape mismatch");
    AdapterForward fwd;
    fwd.run(*this, x_t, t, cond);

    Image coarse(cfg_.grid, cfg_.grid, cfg_.channels);
    coarse.data = fwd.out;
    const Image pred = resize_bilinear(coarse, x_t.width, x_t.height);

    const double n = static_cast<double>(pred.size());
    double loss = 0.0;
    Image dpred(x_t.width, x_t.height, cfg_.channels);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double r = pred.data[i] - eps.data[i];
        loss += r * r;
        dpred.data[i] = 2.0 * r / n;
    }
    loss /= n;

    const Image dcoarse = resize_bilinear_adjoint(dpred, cfg_.grid, cfg_.grid);
    fwd.backward(*this, dcoarse.data, grad);
    return loss;
}

void adamw_step(AdamWState& state, std::vector<double>& params, const std::vector<double>& grad,
                double lr, double weight_decay) {
    if (params.size() != grad.size() || state.m.size() != params.size())
        throw ShapeError("adamw_step: size mismatch");
    for (double g : grad)
        if (!std::isfinite(g)) throw RejectedStep("adamw_step: non-finite gradient");

    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        params[i] -= lr * (mhat / (std::sqrt(vhat) + state.eps) + weight_decay * params[i]);
    }
}

double adapter_train_step(AdapterModel& model, AdamWState& state, const Image& x0, double t,
                          const Image& eps, const Condition& cond, double lr,
                          const NoiseSchedule& schedule) {
    const Image x_t = forward_diffuse(x0, t, eps, schedule);
    std::vector<double> grad;
    const double loss = model.loss_and_gradient(x_t, t, cond, eps, grad);
    if (!std::isfinite(loss)) throw RejectedStep("adapter_train_step: non-finite loss");
    adamw_step(state, model.parameters(), grad, lr, model.config().weight_decay);
    return loss;
}

void AdapterModel::save(const std::string& path) const {
    nlohmann::json header;
    header["dtype"] = "f8";
    header["config"] = {{"grid", cfg_.grid},
                        {"channels", cfg_.channels},
                        {"hidden", cfg_.hidden},
                        {"t_embed_dim", cfg_.t_embed_dim},
                        {"prompt_vocab", cfg_.prompt_vocab},
                        {"weight_decay", cfg_.weight_decay}};
    const std::size_t in = cfg_.input_dim(), h = cfg_.hidden, out = cfg_.output_dim();
    header["tensors"] = nlohmann::json::array(
        {{{"name", "w1"}, {"shape", {h, in}}, {"offset", o_w1_}},
         {{"name", "b1"}, {"shape", {h}}, {"offset", o_b1_}},
         {{"name", "w2"}, {"shape", {h, h}}, {"offset", o_w2_}},
         {{"name", "b2"}, {"shape", {h}}, {"offset", o_b2_}},
         {{"name", "w3"}, {"shape", {out, h}}, {"offset", o_w3_}},
         {{"name", "b3"}, {"shape", {out}}, {"offset", o_b3_}}});
    const std::string text = header.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("adapter save: cannot open " + path);
    const std::uint64_t len = text.size();
    f.write(reinterpret_cast<const char*>(&len), sizeof(len));
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    f.write(reinterpret_cast<const char*>(params_.data()),
            static_cast<std::streamsize>(params_.size() * sizeof(double)));
    if (!f) throw IoError("adapter save: write failed for " + path);
}

AdapterModel AdapterModel::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("adapter load: cannot open " + path);
    std::uint64_t len = 0;
    f.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!f || len > (1u << 20)) throw FormatError("adapter load: bad header length", 0);
    std::string text(len, '\0');
    f.read(text.data(), static_cast<std::streamsize>(len));
    if (!f) throw FormatError("adapter load: truncated header", sizeof(len));

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("adapter load: bad header json: ") + e.what(), sizeof(len));
    }
    AdapterConfig cfg;
    try {
        const auto& c = header.at("config");
        cfg.grid = c.at("grid");
        cfg.channels = c.at("channels");
        cfg.hidden = c.at("hidden");
        cfg.t_embed_dim = c.at("t_embed_dim");
        cfg.prompt_vocab = c.at("prompt_vocab");
        cfg.weight_decay = c.at("weight_decay");
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("adapter load: missing config field: ") + e.what(), sizeof(len));
    }
    AdapterModel model(cfg, 0);
    f.read(reinterpret_cast<char*>(model.params_.data()),
           static_cast<std::streamsize>(model.params_.size() * sizeof(double)));
    if (static_cast<std::size_t>(f.gcount()) != model.params_.size() * sizeof(double))
        throw FormatError("adapter load: truncated tensor data", sizeof(len) + len);
    return model;
}

}  // namespace csd
