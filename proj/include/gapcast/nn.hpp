#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "gapcast/autodiff.hpp"
#include "gapcast/random.hpp"

namespace gapcast::nn {

struct Parameter {
    std::string name;
    ad::Tensor value;
};

/// x W + b with b broadcast over rows. x: r x in, W: in x out, b: 1 x out.
ad::Var linear(ad::Var x, ad::Var weight, ad::Var bias);

/// Fully connected network with tanh hidden activations and an identity output
/// layer. Weights are stored input-major (in x out) so a batch is x W + b.
class Mlp {
public:
    struct Bound {
        std::vector<ad::Var> weights;
        std::vector<ad::Var> biases;
    };

    struct Output {
        ad::Var output;
        ad::Var last_hidden; ///< input itself when there are no hidden layers
    };

    Mlp() = default;
    /// All-zero parameters.
    Mlp(std::string name, std::vector<std::size_t> widths);

    /// Glorot-uniform weights, zero biases, reproducible from seed.
    static Mlp init_params(std::uint64_t seed, std::vector<std::size_t> widths, std::string name = "mlp");

    const std::vector<std::size_t>& widths() const { return widths_; }
    const std::string& name() const { return name_; }
    std::size_t input_width() const { return widths_.front(); }
    std::size_t output_width() const { return widths_.back(); }
    std::size_t last_hidden_width() const { return widths_[widths_.size() - 2]; }
    std::size_t layer_count() const { return widths_.size() - 1; }
    std::size_t parameter_count() const;

    Parameter& weight(std::size_t layer) { return params_[2 * layer]; }
    Parameter& bias(std::size_t layer) { return params_[2 * layer + 1]; }
    const Parameter& weight(std::size_t layer) const { return params_[2 * layer]; }
    const Parameter& bias(std::size_t layer) const { return params_[2 * layer + 1]; }

    void collect(std::vector<Parameter*>& out);
    void collect(std::vector<const Parameter*>& out) const;

    Bound bind(ad::Tape& tape, bool requires_grad = true) const;

private:
    std::string name_;
    std::vector<std::size_t> widths_;
    std::vector<Parameter> params_; // W0, b0, W1, b1, ...
};

Mlp::Output mlp_forward(const Mlp::Bound& net, ad::Var x);

/// Glorot-uniform fill of a fan_in x fan_out tensor.
ad::Tensor glorot_uniform(Rng& rng, std::size_t fan_in, std::size_t fan_out);

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double clip_norm = 10.0; ///< global gradient-norm clip; 0 disables
};

/// Bias-corrected Adam with global-norm gradient clipping.
class AdamState {
public:
    AdamState() = default;
    AdamState(AdamConfig config, std::span<Parameter* const> params);

    /// One update. Throws NumericalError naming the parameter and step when a
    /// gradient is non-finite; parameters are left untouched in that case.
    void step(std::span<Parameter* const> params, std::span<const ad::Tensor> grads);

    std::uint64_t step_count() const { return step_; }
    const AdamConfig& config() const { return config_; }
    double last_grad_norm() const { return last_norm_; }

    std::vector<ad::Tensor>& first_moments() { return m_; }
    std::vector<ad::Tensor>& second_moments() { return v_; }
    const std::vector<ad::Tensor>& first_moments() const { return m_; }
    const std::vector<ad::Tensor>& second_moments() const { return v_; }
    void set_step_count(std::uint64_t s) { step_ = s; }

private:
    AdamConfig config_;
    std::uint64_t step_ = 0;
    double last_norm_ = 0.0;
    std::vector<ad::Tensor> m_;
    std::vector<ad::Tensor> v_;
};

/// On-disk parameter dump. Text format, version 1:
///
///   GAPCAST-CHECKPOINT 1
///   HEADER <one-line JSON object>
///   TENSOR <name> <rows> <cols>
///   <row of hexadecimal floats>   (rows lines)
///   ...
///   END
///
/// Hexadecimal floats round-trip doubles exactly.
struct Checkpoint {
    static constexpr int kVersion = 1;

    nlohmann::json header = nlohmann::json::object();
    std::vector<Parameter> tensors;

    const Parameter* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::string checkpoint_to_string(const Checkpoint& ckpt);
Checkpoint checkpoint_from_string(const std::string& text);

} // namespace gapcast::nn
