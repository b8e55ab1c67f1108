#include "gapcast/genmodel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "gapcast/errors.hpp"

namespace gapcast::genmodel {

namespace {

enum StreamTag : std::uint64_t {
    kDecoderInit = 1,
    kEncoderInit = 2,
    kFlowInit = 3,
    kShuffleStream = 11,
    kNoiseStream = 12,
};

std::vector<std::size_t> widths_with(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
    std::vector<std::size_t> w{in};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(out);
    return w;
}

std::vector<ad::Var> bound_vars(const GenerativeModel::Bound& b) {
    std::vector<ad::Var> out;
    for (const auto* net : {&b.decoder, &b.encoder}) {
        for (std::size_t l = 0; l < net->weights.size(); ++l) {
            out.push_back(net->weights[l]);
            out.push_back(net->biases[l]);
        }
    }
    for (const auto& t : b.flow.transforms) {
        out.insert(out.end(), {t.w_in, t.b_in, t.w_shift, t.b_shift, t.w_scale, t.b_scale});
        if (t.has_context) out.push_back(t.w_ctx);
    }
    return out;
}

ad::Tensor repeat_rows(const ad::Tensor& t, std::size_t times) {
    ad::Tensor out(t.rows() * times, t.cols());
    for (std::size_t r = 0; r < t.rows(); ++r) {
        for (std::size_t k = 0; k < times; ++k) {
            std::copy(t.row_span(r).begin(), t.row_span(r).end(), out.row_span(r * times + k).begin());
        }
    }
    return out;
}

} // namespace

void ModelConfig::validate() const {
    if (data_dim == 0) throw ValidationError("model: data dimension must be positive");
    if (latent_dim == 0) throw ValidationError("model: latent dimension must be positive");
    if (flow_count > 0 && flow_hidden == 0) throw ValidationError("model: flow hidden width must be positive");
    for (auto h : hidden) {
        if (h == 0) throw ValidationError("model: hidden widths must be positive");
    }
}

nlohmann::json ModelConfig::to_json() const {
    return {{"data_dim", data_dim},   {"latent_dim", latent_dim},   {"hidden", hidden},
            {"flow_count", flow_count}, {"flow_hidden", flow_hidden}, {"encoder_uses_mask", encoder_uses_mask},
            {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    try {
        c.data_dim = j.value("data_dim", c.data_dim);
        c.latent_dim = j.value("latent_dim", c.latent_dim);
        c.hidden = j.value("hidden", c.hidden);
        c.flow_count = j.value("flow_count", c.flow_count);
        c.flow_hidden = j.value("flow_hidden", c.flow_hidden);
        c.encoder_uses_mask = j.value("encoder_uses_mask", c.encoder_uses_mask);
        c.seed = j.value("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("model config: ") + e.what());
    }
    return c;
}

GenerativeModel::GenerativeModel(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    const std::size_t d = config_.data_dim;
    const std::size_t du = config_.latent_dim;
    decoder_ = nn::Mlp::init_params(derive_seed(config_.seed, {kDecoderInit}), widths_with(du, config_.hidden, 3 * d),
                                    "decoder");
    encoder_ = nn::Mlp::init_params(derive_seed(config_.seed, {kEncoderInit}),
                                    widths_with(encoder_input_dim(), config_.hidden, 2 * du), "encoder");
    flow_ = flow::FlowChain(derive_seed(config_.seed, {kFlowInit}), du, encoder_.last_hidden_width(),
                            config_.flow_hidden, config_.flow_count);
}

std::vector<nn::Parameter*> GenerativeModel::parameters() {
    std::vector<nn::Parameter*> out;
    decoder_.collect(out);
    encoder_.collect(out);
    flow_.collect(out);
    return out;
}

std::vector<const nn::Parameter*> GenerativeModel::parameters() const {
    std::vector<const nn::Parameter*> out;
    decoder_.collect(out);
    encoder_.collect(out);
    flow_.collect(out);
    return out;
}

std::size_t GenerativeModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : parameters()) n += p->value.size();
    return n;
}

GenerativeModel::Bound GenerativeModel::bind(ad::Tape& tape, bool requires_grad) const {
    return {decoder_.bind(tape, requires_grad), encoder_.bind(tape, requires_grad), flow_.bind(tape, requires_grad)};
}

nn::Checkpoint GenerativeModel::to_checkpoint() const {
    nn::Checkpoint ckpt;
    ckpt.header["kind"] = "gapcast-model";
    ckpt.header["model"] = config_.to_json();
    for (const auto* p : parameters()) ckpt.tensors.push_back(*p);
    return ckpt;
}

GenerativeModel GenerativeModel::from_checkpoint(const nn::Checkpoint& ckpt) {
    if (!ckpt.header.contains("model")) {
        throw ValidationError("checkpoint has no model configuration");
    }
    GenerativeModel m(ModelConfig::from_json(ckpt.header["model"]));
    for (auto* p : m.parameters()) {
        const nn::Parameter* src = ckpt.find(p->name);
        if (src == nullptr) {
            throw ValidationError("checkpoint is missing parameter '" + p->name + "'");
        }
        if (!src->value.same_shape(p->value)) {
            throw ValidationError("checkpoint parameter '" + p->name + "' has shape " + src->value.shape_string() +
                                  ", model expects " + p->value.shape_string());
        }
        p->value = src->value;
    }
    return m;
}

dist::DiagStudentT decode(const GenerativeModel::Bound& b, std::size_t data_dim, ad::Var u) {
    ad::Var out = nn::mlp_forward(b.decoder, u).output;
    ad::Var loc = ad::slice(out, 1, 0, data_dim);
    ad::Var scale = ad::add_scalar(ad::softplus(ad::slice(out, 1, data_dim, 2 * data_dim)), dist::kMinScale);
    ad::Var dof = ad::add_scalar(ad::softplus(ad::slice(out, 1, 2 * data_dim, 3 * data_dim)), dist::kMinDof);
    return {loc, scale, dof};
}

LatentSample encode_sample(const GenerativeModel::Bound& b, const GenerativeModel& model, ad::Var enc_input, Rng& rng,
                           std::size_t K) {
    if (K == 0) throw ValidationError("encode_sample: K must be at least 1");
    const std::size_t du = model.latent_dim();
    auto enc = nn::mlp_forward(b.encoder, enc_input);
    ad::Var mu = ad::broadcast(ad::slice(enc.output, 1, 0, du), K);
    ad::Var sigma = ad::broadcast(
        ad::add_scalar(ad::softplus(ad::slice(enc.output, 1, du, 2 * du)), dist::kMinScale), K);
    ad::Var ctx = ad::broadcast(enc.last_hidden, K);

    const std::size_t n = mu.rows();
    ad::Tensor noise(n, du);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& v : noise.data()) v = normal(rng);

    // log q0(u0) with u0 = mu + sigma * eta reduces to sum(-log sigma) plus a
    // constant in eta.
    ad::Tensor base_const(n, 1);
    for (std::size_t r = 0; r < n; ++r) {
        double s = -static_cast<double>(du) * dist::kHalfLog2Pi;
        for (double e : noise.row_span(r)) s -= 0.5 * e * e;
        base_const(r, 0) = s;
    }
    ad::Tape& tape = *enc_input.tape();
    ad::Var eta = tape.constant(noise);
    ad::Var u0 = ad::add(mu, ad::mul(sigma, eta));
    ad::Var log_q0 = ad::add(ad::neg(ad::sum_rows(ad::log(sigma))), tape.constant(std::move(base_const)));

    auto pushed = model.flow().forward(b.flow, u0, ctx);
    return {pushed.output, ad::sub(log_q0, pushed.log_det_sum), std::move(noise)};
}

ad::Var observed_loglik(const dist::DiagStudentT& d, ad::Var z, ad::Var missing) {
    if (!z.value().same_shape(missing.value())) {
        throw ValidationError("observed_loglik: value and mask shapes differ");
    }
    ad::Var observed = ad::add_scalar(ad::neg(missing), 1.0);
    return ad::sum_rows(ad::mul(dist::student_t_logpdf_elements(d, z), observed));
}

ModelData ModelData::select(std::span<const std::size_t> rows) const {
    ModelData out{ad::Tensor(rows.size(), cols()), ad::Tensor(rows.size(), cols())};
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy(values.row_span(rows[i]).begin(), values.row_span(rows[i]).end(), out.values.row_span(i).begin());
        std::copy(missing.row_span(rows[i]).begin(), missing.row_span(rows[i]).end(), out.missing.row_span(i).begin());
    }
    return out;
}

ModelData make_model_data(const ad::Tensor& values_with_nan) {
    ModelData out{values_with_nan, ad::Tensor(values_with_nan.rows(), values_with_nan.cols())};
    for (std::size_t i = 0; i < out.values.size(); ++i) {
        if (!std::isfinite(out.values[i])) {
            out.values[i] = 0.0;
            out.missing[i] = 1.0;
        }
    }
    return out;
}

ModelData make_model_data(std::span<const data::Window> windows) {
    ModelData out = make_model_data(data::stack_values(windows));
    // Masked cells may still carry a finite value; the mask is authoritative.
    for (std::size_t r = 0; r < windows.size(); ++r) {
        for (std::size_t j = 0; j < windows[r].mask.size(); ++j) {
            if (windows[r].mask[j]) {
                out.values(r, j) = 0.0;
                out.missing(r, j) = 1.0;
            }
        }
    }
    return out;
}

ad::Var encoder_input(ad::Tape& tape, const GenerativeModel& model, const ModelData& batch) {
    if (batch.cols() != model.data_dim()) {
        throw ValidationError("model expects " + std::to_string(model.data_dim()) + " coordinates, batch has " +
                              std::to_string(batch.cols()));
    }
    ad::Var g = tape.constant(batch.values);
    if (!model.config().encoder_uses_mask) return g;
    const ad::Var parts[] = {g, tape.constant(batch.missing)};
    return ad::concat(parts, 1);
}

ElboEstimate elbo(ad::Tape& tape, const GenerativeModel::Bound& b, const GenerativeModel& model,
                  const ModelData& batch, Rng& rng, std::size_t K) {
    if (K == 0) throw ValidationError("elbo: K must be at least 1");
    if (batch.rows() == 0) throw ValidationError("elbo: empty batch");
    const std::size_t T = batch.rows();
    try {
        auto latent = encode_sample(b, model, encoder_input(tape, model, batch), rng, K);
        auto d = decode(b, model.data_dim(), latent.u);
        ad::Var z = tape.constant(repeat_rows(batch.values, K));
        ad::Var s = tape.constant(repeat_rows(batch.missing, K));
        ad::Var log_r = ad::sub(ad::add(observed_loglik(d, z, s), dist::standard_normal_logpdf(latent.u)), latent.log_q);
        ad::Var ratios = ad::reshape(log_r, T, K);
        ad::Var bound = ad::add_scalar(ad::sum(ad::logsumexp_rows(ratios)),
                                       -static_cast<double>(T) * std::log(static_cast<double>(K)));
        return {bound, bound.value().item(), ratios.value(), K};
    } catch (const NonFiniteError& e) {
        if (e.rows == T * K) {
            throw NumericalError("ELBO term non-finite at window " + std::to_string(e.row / K) + ", sample " +
                                 std::to_string(e.row % K) + ": " + e.what());
        }
        throw;
    }
}

double estimate_elbo(const GenerativeModel& model, const ModelData& data, Rng& rng, std::size_t K) {
    constexpr std::size_t kChunk = 256;
    double total = 0.0;
    std::vector<std::size_t> rows;
    for (std::size_t start = 0; start < data.rows(); start += kChunk) {
        rows.resize(std::min(kChunk, data.rows() - start));
        std::iota(rows.begin(), rows.end(), start);
        ad::Tape tape;
        auto b = model.bind(tape, false);
        total += elbo(tape, b, model, data.select(rows), rng, K).value;
    }
    return total / static_cast<double>(data.rows());
}

void TrainConfig::validate() const {
    if (K == 0) throw ValidationError("train: K must be at least 1");
    if (batch_size == 0) throw ValidationError("train: batch size must be positive");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw ValidationError("train: learning rate must be finite and non-negative");
    }
}

nlohmann::json TrainConfig::to_json() const {
    return {{"K", K},
            {"epochs", epochs},
            {"batch_size", batch_size},
            {"learning_rate", learning_rate},
            {"clip_norm", clip_norm},
            {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    try {
        c.K = j.value("K", c.K);
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.clip_norm = j.value("clip_norm", c.clip_norm);
        c.seed = j.value("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("train config: ") + e.what());
    }
    return c;
}

TrainingState start_training(GenerativeModel& model, const TrainConfig& cfg) {
    cfg.validate();
    nn::AdamConfig ac;
    ac.learning_rate = cfg.learning_rate;
    ac.clip_norm = cfg.clip_norm;
    auto params = model.parameters();
    return {nn::AdamState(ac, params), 0, {}};
}

double train_epoch(GenerativeModel& model, TrainingState& state, const ModelData& data, const TrainConfig& cfg) {
    if (data.rows() == 0) throw ValidationError("train: no training windows");
    const std::size_t n = data.rows();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = make_rng(cfg.seed, {kShuffleStream, state.epoch});
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    Rng noise_rng = make_rng(cfg.seed, {kNoiseStream, state.epoch});

    auto params = model.parameters();
    double total = 0.0;
    std::size_t batch_index = 0;
    // Parameters only change through a completed Adam step, which refuses
    // non-finite gradients, so on failure the current values are the last
    // finite state.
    for (std::size_t start = 0; start < n; start += cfg.batch_size, ++batch_index) {
        const std::span<const std::size_t> rows(order.data() + start, std::min(cfg.batch_size, n - start));
        try {
            ad::Tape tape;
            auto b = model.bind(tape, true);
            auto est = elbo(tape, b, model, data.select(rows), noise_rng, cfg.K);
            ad::Var loss = ad::scale(est.bound, -1.0 / static_cast<double>(rows.size()));
            auto grads = tape.backward(loss);
            std::vector<ad::Tensor> g;
            g.reserve(params.size());
            for (auto v : bound_vars(b)) g.push_back(grads.wrt(v));
            state.adam.step(params, g);
            total += est.value;
        } catch (const NumericalError& e) {
            throw NumericalError("training diverged at epoch " + std::to_string(state.epoch) + ", batch " +
                                 std::to_string(batch_index) + ": " + e.what());
        }
    }
    const double mean_bound = total / static_cast<double>(n);
    state.trace.push_back(mean_bound);
    ++state.epoch;
    return mean_bound;
}

std::vector<double> train(GenerativeModel& model, const ModelData& data, const TrainConfig& cfg,
                          const EpochCallback& on_epoch) {
    TrainingState state = start_training(model, cfg);
    while (state.epoch < cfg.epochs) {
        const double bound = train_epoch(model, state, data, cfg);
        if (on_epoch) on_epoch(state.epoch - 1, bound);
    }
    return state.trace;
}

nn::Checkpoint training_checkpoint(const GenerativeModel& model, const TrainingState& state, const TrainConfig& cfg) {
    nn::Checkpoint ckpt = model.to_checkpoint();
    ckpt.header["training"] = {{"epoch", state.epoch},
                               {"adam_step", state.adam.step_count()},
                               {"trace", state.trace},
                               {"config", cfg.to_json()}};
    const auto& adam = state.adam;
    const auto params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        ckpt.tensors.push_back({"adam.m." + params[i]->name, adam.first_moments()[i]});
        ckpt.tensors.push_back({"adam.v." + params[i]->name, adam.second_moments()[i]});
    }
    return ckpt;
}

std::pair<GenerativeModel, TrainingState> restore_training(const nn::Checkpoint& ckpt, const TrainConfig& cfg) {
    GenerativeModel model = GenerativeModel::from_checkpoint(ckpt);
    TrainingState state = start_training(model, cfg);
    if (!ckpt.header.contains("training")) return {std::move(model), std::move(state)};
    const auto& tr = ckpt.header["training"];
    state.epoch = tr.value("epoch", std::size_t{0});
    state.trace = tr.value("trace", std::vector<double>{});
    state.adam.set_step_count(tr.value("adam_step", std::uint64_t{0}));
    const auto params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto* m = ckpt.find("adam.m." + params[i]->name);
        const auto* v = ckpt.find("adam.v." + params[i]->name);
        if (m == nullptr || v == nullptr) {
            throw ValidationError("checkpoint optimizer state is incomplete for '" + params[i]->name + "'");
        }
        state.adam.first_moments()[i] = m->value;
        state.adam.second_moments()[i] = v->value;
    }
    return {std::move(model), std::move(state)};
}

} // namespace gapcast::genmodel
