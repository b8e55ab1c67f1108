#include "gapcast/flow.hpp"

#include <cmath>

#include "gapcast/dist.hpp"
#include "gapcast/errors.hpp"

namespace gapcast::flow {

namespace {

std::size_t hidden_degree(std::size_t unit, std::size_t dim) {
    // dim == 1: the single output has no admissible inputs, so hidden units
    // see only the context.
    return dim == 1 ? 0 : 1 + unit % (dim - 1);
}

} // namespace

AffineArTransform::AffineArTransform(std::string name, std::size_t dim, std::size_t context_dim, std::size_t hidden,
                                     Rng& rng)
    : dim_(dim), context_dim_(context_dim), hidden_(hidden) {
    if (dim == 0 || hidden == 0) {
        throw ValidationError("AffineArTransform: dimension and hidden width must be positive");
    }
    params_.push_back({name + ".w_in", nn::glorot_uniform(rng, dim, hidden)});
    params_.push_back({name + ".b_in", ad::Tensor(1, hidden)});
    params_.push_back({name + ".w_shift", ad::Tensor(hidden, dim)});
    params_.push_back({name + ".b_shift", ad::Tensor(1, dim)});
    params_.push_back({name + ".w_scale", ad::Tensor(hidden, dim)});
    params_.push_back({name + ".b_scale", ad::Tensor(1, dim)});
    if (context_dim > 0) {
        params_.push_back({name + ".w_ctx", nn::glorot_uniform(rng, context_dim, hidden)});
    }

    mask_in_ = ad::Tensor(dim, hidden);
    mask_out_ = ad::Tensor(hidden, dim);
    for (std::size_t k = 0; k < hidden; ++k) {
        const std::size_t deg = hidden_degree(k, dim);
        for (std::size_t i = 0; i < dim; ++i) {
            mask_in_(i, k) = (i + 1 <= deg) ? 1.0 : 0.0;
        }
        for (std::size_t j = 0; j < dim; ++j) {
            mask_out_(k, j) = (deg < j + 1) ? 1.0 : 0.0;
        }
    }
}

nn::Parameter& AffineArTransform::w_ctx() {
    if (context_dim_ == 0) {
        throw ValidationError("AffineArTransform has no context weights");
    }
    return params_[6];
}

void AffineArTransform::collect(std::vector<nn::Parameter*>& out) {
    for (auto& p : params_) {
        out.push_back(&p);
    }
}

void AffineArTransform::collect(std::vector<const nn::Parameter*>& out) const {
    for (const auto& p : params_) {
        out.push_back(&p);
    }
}

AffineArTransform::Bound AffineArTransform::bind(ad::Tape& tape, bool requires_grad) const {
    Bound b;
    b.w_in = tape.leaf(params_[0].value, requires_grad);
    b.b_in = tape.leaf(params_[1].value, requires_grad);
    b.w_shift = tape.leaf(params_[2].value, requires_grad);
    b.b_shift = tape.leaf(params_[3].value, requires_grad);
    b.w_scale = tape.leaf(params_[4].value, requires_grad);
    b.b_scale = tape.leaf(params_[5].value, requires_grad);
    if (context_dim_ > 0) {
        b.w_ctx = tape.leaf(params_[6].value, requires_grad);
        b.has_context = true;
    }
    b.mask_in = tape.constant(mask_in_);
    b.mask_out = tape.constant(mask_out_);
    return b;
}

AffineArTransform::Conditioner AffineArTransform::condition(const Bound& b, ad::Var x, ad::Var ctx) {
    ad::Var pre = nn::linear(x, ad::mul(b.w_in, b.mask_in), b.b_in);
    if (b.has_context) {
        pre = ad::add(pre, ad::matmul(ctx, b.w_ctx));
    }
    ad::Var h = ad::tanh(pre);
    ad::Var shift = nn::linear(h, ad::mul(b.w_shift, b.mask_out), b.b_shift);
    ad::Var raw = nn::linear(h, ad::mul(b.w_scale, b.mask_out), b.b_scale);
    ad::Var log_scale = ad::scale(ad::tanh(ad::scale(raw, 1.0 / kMaxLogScale)), kMaxLogScale);
    return {shift, log_scale};
}

AffineArTransform::Result AffineArTransform::forward(const Bound& b, ad::Var x, ad::Var ctx) {
    auto [shift, log_scale] = condition(b, x, ctx);
    ad::Var y = ad::add(ad::mul(x, ad::exp(log_scale)), shift);
    return {y, ad::sum_rows(log_scale)};
}

std::pair<ad::Tensor, ad::Tensor> AffineArTransform::evaluate_conditioner(const ad::Tensor& x,
                                                                          const ad::Tensor& ctx) const {
    ad::Tape tape;
    Bound b = bind(tape, false);
    ad::Var c = context_dim_ > 0 ? tape.constant(ctx) : ad::Var{};
    auto out = condition(b, tape.constant(x), c);
    return {out.shift.value(), out.log_scale.value()};
}

std::pair<ad::Tensor, std::vector<double>> AffineArTransform::inverse(const ad::Tensor& y,
                                                                      const ad::Tensor& ctx) const {
    if (y.cols() != dim_) {
        throw ValidationError("AffineArTransform::inverse: width mismatch");
    }
    ad::Tensor x(y.rows(), dim_);
    for (std::size_t j = 0; j < dim_; ++j) {
        auto [shift, log_scale] = evaluate_conditioner(x, ctx);
        for (std::size_t r = 0; r < y.rows(); ++r) {
            x(r, j) = (y(r, j) - shift(r, j)) * std::exp(-log_scale(r, j));
        }
    }
    auto [shift, log_scale] = evaluate_conditioner(x, ctx);
    std::vector<double> log_det(y.rows(), 0.0);
    for (std::size_t r = 0; r < y.rows(); ++r) {
        for (std::size_t j = 0; j < dim_; ++j) {
            log_det[r] -= log_scale(r, j);
        }
    }
    return {std::move(x), std::move(log_det)};
}

FlowChain::FlowChain(std::uint64_t seed, std::size_t dim, std::size_t context_dim, std::size_t hidden,
                     std::size_t count)
    : dim_(dim) {
    Rng rng(seed);
    for (std::size_t n = 0; n < count; ++n) {
        transforms_.emplace_back("flow" + std::to_string(n), dim, context_dim, hidden, rng);
    }
}

void FlowChain::collect(std::vector<nn::Parameter*>& out) {
    for (auto& t : transforms_) {
        t.collect(out);
    }
}

void FlowChain::collect(std::vector<const nn::Parameter*>& out) const {
    for (const auto& t : transforms_) {
        t.collect(out);
    }
}

FlowChain::Bound FlowChain::bind(ad::Tape& tape, bool requires_grad) const {
    Bound b;
    for (const auto& t : transforms_) {
        b.transforms.push_back(t.bind(tape, requires_grad));
    }
    if (dim_ > 0) {
        ad::Tensor p(dim_, dim_);
        for (std::size_t i = 0; i < dim_; ++i) {
            p(i, dim_ - 1 - i) = 1.0;
        }
        b.reverse = tape.constant(std::move(p));
    }
    return b;
}

FlowChain::Result FlowChain::forward(const Bound& b, ad::Var u0, ad::Var ctx) const {
    ad::Var u = u0;
    ad::Var log_det = u0.tape()->constant(ad::Tensor(u0.rows(), 1));
    for (std::size_t n = 0; n < b.transforms.size(); ++n) {
        if (n > 0) {
            u = ad::matmul(u, b.reverse);
        }
        auto step = AffineArTransform::forward(b.transforms[n], u, ctx);
        u = step.output;
        log_det = ad::add(log_det, step.log_det);
    }
    return {u, log_det};
}

FlowChain::InverseResult FlowChain::inverse(const ad::Tensor& u_final, const ad::Tensor& ctx) const {
    ad::Tensor u = u_final;
    std::vector<double> log_det(u.rows(), 0.0);
    for (std::size_t n = transforms_.size(); n-- > 0;) {
        auto [x, ld] = transforms_[n].inverse(u, ctx);
        for (std::size_t r = 0; r < ld.size(); ++r) {
            log_det[r] += ld[r];
        }
        if (n > 0) {
            for (std::size_t r = 0; r < x.rows(); ++r) {
                for (std::size_t j = 0; j < dim_; ++j) {
                    u(r, j) = x(r, dim_ - 1 - j);
                }
            }
        } else {
            u = std::move(x);
        }
    }
    return {std::move(u), std::move(log_det)};
}

std::pair<ad::Tensor, std::vector<double>> flow_forward(const FlowChain& chain, const ad::Tensor& u0,
                                                        const ad::Tensor& ctx) {
    ad::Tape tape;
    auto b = chain.bind(tape, false);
    ad::Var c = ctx.empty() ? ad::Var{} : tape.constant(ctx);
    auto out = chain.forward(b, tape.constant(u0), c);
    return {out.output.value(), out.log_det_sum.value().values()};
}

ad::Tensor flow_inverse(const FlowChain& chain, const ad::Tensor& u_final, const ad::Tensor& ctx) {
    return chain.inverse(u_final, ctx).base;
}

std::vector<double> posterior_logq(const ad::Tensor& base_mean, const ad::Tensor& base_stddev,
                                   const FlowChain& chain, const ad::Tensor& ctx, const ad::Tensor& u_final) {
    if (!base_mean.same_shape(u_final) || !base_stddev.same_shape(u_final)) {
        throw ValidationError("posterior_logq: base parameters must match the sample shape");
    }
    auto inv = chain.inverse(u_final, ctx);
    std::vector<double> out(u_final.rows());
    for (std::size_t r = 0; r < u_final.rows(); ++r) {
        // log q(u) = log q0(u0) - sum log|det df/du| and the inverse log-det is its negative
        out[r] = dist::gaussian_logpdf(inv.base.row_span(r), base_mean.row_span(r), base_stddev.row_span(r)) +
                 inv.log_det_sum[r];
    }
    return out;
}

} // namespace gapcast::flow
