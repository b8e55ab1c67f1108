#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gapcast/autodiff.hpp"
#include "gapcast/nn.hpp"
#include "gapcast/random.hpp"

namespace gapcast::flow {

/// Log-scales are squashed to (-kMaxLogScale, kMaxLogScale) by a scaled tanh.
inline constexpr double kMaxLogScale = 5.0;

/// Inverse-autoregressive affine transform
///
///     y_j = x_j * exp(a_j(x_<j, c)) + b_j(x_<j, c)
///
/// The conditioner is a one-hidden-layer MADE network: binary masks on the
/// input and output weights guarantee that (a_j, b_j) see only x_1..x_{j-1}.
/// The context c enters the hidden layer unmasked. The Jacobian is lower
/// triangular with log|det| = sum_j a_j. The forward pass is parallel; the
/// inverse runs one dimension at a time.
class AffineArTransform {
public:
    struct Bound {
        ad::Var w_in, b_in, w_ctx;
        ad::Var w_shift, b_shift, w_scale, b_scale;
        ad::Var mask_in, mask_out;
        bool has_context = false;
    };

    struct Conditioner {
        ad::Var shift;
        ad::Var log_scale;
    };

    struct Result {
        ad::Var output;
        ad::Var log_det; ///< r x 1
    };

    AffineArTransform() = default;
    /// Hidden weights are Glorot-initialised from rng; the output layer starts
    /// at zero so the transform is the identity.
    AffineArTransform(std::string name, std::size_t dim, std::size_t context_dim, std::size_t hidden, Rng& rng);

    std::size_t dim() const { return dim_; }
    std::size_t context_dim() const { return context_dim_; }
    std::size_t hidden() const { return hidden_; }
    const ad::Tensor& input_mask() const { return mask_in_; }
    const ad::Tensor& output_mask() const { return mask_out_; }

    nn::Parameter& w_in() { return params_[0]; }
    nn::Parameter& b_in() { return params_[1]; }
    nn::Parameter& w_shift() { return params_[2]; }
    nn::Parameter& b_shift() { return params_[3]; }
    nn::Parameter& w_scale() { return params_[4]; }
    nn::Parameter& b_scale() { return params_[5]; }
    nn::Parameter& w_ctx(); ///< only when context_dim > 0

    void collect(std::vector<nn::Parameter*>& out);
    void collect(std::vector<const nn::Parameter*>& out) const;

    Bound bind(ad::Tape& tape, bool requires_grad = true) const;

    /// ctx is ignored when the transform has no context input.
    static Conditioner condition(const Bound& b, ad::Var x, ad::Var ctx);
    static Result forward(const Bound& b, ad::Var x, ad::Var ctx);

    /// Plain-value conditioner outputs (shift, log_scale) for each row of x.
    std::pair<ad::Tensor, ad::Tensor> evaluate_conditioner(const ad::Tensor& x, const ad::Tensor& ctx) const;
    /// Solves y = f(x) for x, dimension by dimension. Returns x and, per row,
    /// the log|det| of the *inverse* map (= -sum_j a_j).
    std::pair<ad::Tensor, std::vector<double>> inverse(const ad::Tensor& y, const ad::Tensor& ctx) const;

private:
    std::size_t dim_ = 0;
    std::size_t context_dim_ = 0;
    std::size_t hidden_ = 0;
    std::vector<nn::Parameter> params_; // w_in, b_in, w_shift, b_shift, w_scale, b_scale[, w_ctx]
    ad::Tensor mask_in_;
    ad::Tensor mask_out_;
};

/// f_N o ... o f_1 with a fixed reversal permutation between consecutive
/// transforms. An empty chain is the identity (Gaussian posterior).
class FlowChain {
public:
    struct Bound {
        std::vector<AffineArTransform::Bound> transforms;
        ad::Var reverse; ///< dim x dim permutation matrix, constant
    };

    struct Result {
        ad::Var output;
        ad::Var log_det_sum; ///< r x 1
    };

    struct InverseResult {
        ad::Tensor base;
        std::vector<double> log_det_sum; ///< of the inverse traversal; equals minus the forward sum
    };

    FlowChain() = default;
    FlowChain(std::uint64_t seed, std::size_t dim, std::size_t context_dim, std::size_t hidden, std::size_t count);

    std::size_t size() const { return transforms_.size(); }
    std::size_t dim() const { return dim_; }
    std::vector<AffineArTransform>& transforms() { return transforms_; }
    const std::vector<AffineArTransform>& transforms() const { return transforms_; }

    void collect(std::vector<nn::Parameter*>& out);
    void collect(std::vector<const nn::Parameter*>& out) const;

    Bound bind(ad::Tape& tape, bool requires_grad = true) const;
    Result forward(const Bound& b, ad::Var u0, ad::Var ctx) const;
    InverseResult inverse(const ad::Tensor& u_final, const ad::Tensor& ctx) const;

private:
    std::size_t dim_ = 0;
    std::vector<AffineArTransform> transforms_;
};

/// Plain-value forward pass of a chain: (u_N, log_det_sum per row).
std::pair<ad::Tensor, std::vector<double>> flow_forward(const FlowChain& chain, const ad::Tensor& u0,
                                                        const ad::Tensor& ctx);
ad::Tensor flow_inverse(const FlowChain& chain, const ad::Tensor& u_final, const ad::Tensor& ctx);

/// log q(u) = log N(u0; mean, stddev) - sum_n log|det df_n/du|, u0 = inverse(u), per row.
std::vector<double> posterior_logq(const ad::Tensor& base_mean, const ad::Tensor& base_stddev,
                                   const FlowChain& chain, const ad::Tensor& ctx, const ad::Tensor& u_final);

} // namespace gapcast::flow
