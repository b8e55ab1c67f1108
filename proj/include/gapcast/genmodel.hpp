#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "json.hpp"
#include "gapcast/autodiff.hpp"
#include "gapcast/data.hpp"
#include "gapcast/dist.hpp"
#include "gapcast/flow.hpp"
#include "gapcast/nn.hpp"
#include "gapcast/random.hpp"

namespace gapcast::genmodel {

struct ModelConfig {
    std::size_t data_dim = 0;
    std::size_t latent_dim = 16;
    std::vector<std::size_t> hidden{64, 64}; ///< shared by encoder and decoder trunks
    std::size_t flow_count = 3;
    std::size_t flow_hidden = 64;
    bool encoder_uses_mask = false; ///< extension: append the mask to g(z)
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

/// Decoder p(z | u): Student's t per data coordinate. Encoder q(u | g(z)):
/// Gaussian base pushed through an affine autoregressive flow conditioned on
/// the encoder's last hidden layer. Prior p(u) = N(0, I).
class GenerativeModel {
public:
    struct Bound {
        nn::Mlp::Bound decoder;
        nn::Mlp::Bound encoder;
        flow::FlowChain::Bound flow;
    };

    GenerativeModel() = default;
    explicit GenerativeModel(ModelConfig config);

    const ModelConfig& config() const { return config_; }
    std::size_t data_dim() const { return config_.data_dim; }
    std::size_t latent_dim() const { return config_.latent_dim; }
    std::size_t encoder_input_dim() const { return config_.data_dim * (config_.encoder_uses_mask ? 2 : 1); }

    nn::Mlp& decoder() { return decoder_; }
    nn::Mlp& encoder() { return encoder_; }
    flow::FlowChain& flow() { return flow_; }
    const nn::Mlp& decoder() const { return decoder_; }
    const nn::Mlp& encoder() const { return encoder_; }
    const flow::FlowChain& flow() const { return flow_; }

    /// Decoder, encoder, then flow parameters; order is stable.
    std::vector<nn::Parameter*> parameters();
    std::vector<const nn::Parameter*> parameters() const;
    std::size_t parameter_count() const;

    Bound bind(ad::Tape& tape, bool requires_grad = true) const;

    /// Parameters plus the model config under header["model"].
    nn::Checkpoint to_checkpoint() const;
    static GenerativeModel from_checkpoint(const nn::Checkpoint& ckpt);

private:
    ModelConfig config_;
    nn::Mlp decoder_;
    nn::Mlp encoder_;
    flow::FlowChain flow_;
};

/// Heads: loc = mu, scale = softplus(.) + 1e-3, dof = softplus(.) + 2.
dist::DiagStudentT decode(const GenerativeModel::Bound& b, std::size_t data_dim, ad::Var u);

struct LatentSample {
    ad::Var u;      ///< (T*K) x d_u, row t*K + k
    ad::Var log_q;  ///< (T*K) x 1
    ad::Tensor noise;
};

/// K reparameterized draws per row of enc_input. Noise is consumed in row order,
/// so with one input row the first k draws do not depend on K.
LatentSample encode_sample(const GenerativeModel::Bound& b, const GenerativeModel& model, ad::Var enc_input, Rng& rng,
                           std::size_t K);

/// Sum over observed coordinates of the per-coordinate log-density, r x 1.
/// `missing` holds 1.0 at missing coordinates and 0.0 elsewhere.
ad::Var observed_loglik(const dist::DiagStudentT& d, ad::Var z, ad::Var missing);

/// Model-ready batch: zero-imputed values and a 0/1 missing indicator, both n x d.
struct ModelData {
    ad::Tensor values;
    ad::Tensor missing;

    std::size_t rows() const { return values.rows(); }
    std::size_t cols() const { return values.cols(); }
    ModelData select(std::span<const std::size_t> rows) const;
};

ModelData make_model_data(std::span<const data::Window> windows);
/// Values with NaN at missing coordinates.
ModelData make_model_data(const ad::Tensor& values_with_nan);

/// Encoder input g(z), optionally followed by the mask.
ad::Var encoder_input(ad::Tape& tape, const GenerativeModel& model, const ModelData& batch);

struct ElboEstimate {
    ad::Var bound;          ///< 1 x 1, differentiable
    double value = 0.0;     ///< nats, summed over windows
    ad::Tensor log_ratios;  ///< T x K
    std::size_t K = 1;
};

/// sum_t [ logsumexp_k log r_tk - log K ],
/// log r_tk = log p(z_t^o | u_tk) + log p(u_tk) - log q(u_tk | g(z_t)).
ElboEstimate elbo(ad::Tape& tape, const GenerativeModel::Bound& b, const GenerativeModel& model,
                  const ModelData& batch, Rng& rng, std::size_t K);

/// Forward-only estimate, in nats per window.
double estimate_elbo(const GenerativeModel& model, const ModelData& data, Rng& rng, std::size_t K);

struct TrainConfig {
    std::size_t K = 50;
    std::size_t epochs = 100;
    std::size_t batch_size = 128;
    double learning_rate = 1e-3;
    double clip_norm = 10.0;
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

struct TrainingState {
    nn::AdamState adam;
    std::size_t epoch = 0;
    std::vector<double> trace; ///< mean bound per window, one entry per finished epoch
};

TrainingState start_training(GenerativeModel& model, const TrainConfig& cfg);

/// Runs one epoch of Adam ascent on the bound and appends to the trace.
/// Shuffle and sampling streams depend only on (seed, epoch), so resuming from a
/// saved state continues identically. On a non-finite bound or gradient the
/// parameters are restored to the last finite step and NumericalError is thrown.
double train_epoch(GenerativeModel& model, TrainingState& state, const ModelData& data, const TrainConfig& cfg);

using EpochCallback = std::function<void(std::size_t epoch, double bound)>;

/// Fresh training run of cfg.epochs epochs. Returns the trace.
std::vector<double> train(GenerativeModel& model, const ModelData& data, const TrainConfig& cfg,
                          const EpochCallback& on_epoch = {});

/// Model, optimizer moments and progress in one checkpoint.
nn::Checkpoint training_checkpoint(const GenerativeModel& model, const TrainingState& state, const TrainConfig& cfg);
/// Restores the model and, when present, the optimizer state.
std::pair<GenerativeModel, TrainingState> restore_training(const nn::Checkpoint& ckpt, const TrainConfig& cfg);

} // namespace gapcast::genmodel
