#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "gapcast/autodiff.hpp"
#include "gapcast/random.hpp"

namespace testing {

using gapcast::ad::Tape;
using gapcast::ad::Tensor;
using gapcast::ad::Var;

/// Builds a scalar from leaves bound to `inputs` on a fresh tape.
using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

inline Tensor uniform_tensor(gapcast::Rng& rng, std::size_t r, std::size_t c, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(r, c);
    for (auto& v : t.data()) v = u(rng);
    return t;
}

inline double eval_scalar(const ScalarFn& f, const std::vector<Tensor>& inputs) {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
    return f(tape, leaves).value().item();
}

/// Worst |analytic - numeric| / max(|analytic|, |numeric|, 1e-2) over every
/// input entry, using central differences. The floor turns the relative test
/// into an absolute 1e-6 test near zero for a 1e-4 threshold.
inline double max_gradient_error(const ScalarFn& f, std::vector<Tensor> inputs, double step = 1e-5) {
    std::vector<Tensor> analytic;
    {
        Tape tape;
        std::vector<Var> leaves;
        for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
        auto grads = tape.backward(f(tape, leaves));
        for (auto v : leaves) analytic.push_back(grads.wrt(v));
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        for (std::size_t j = 0; j < inputs[i].size(); ++j) {
            const double x0 = inputs[i][j];
            inputs[i][j] = x0 + step;
            const double up = eval_scalar(f, inputs);
            inputs[i][j] = x0 - step;
            const double down = eval_scalar(f, inputs);
            inputs[i][j] = x0;
            const double numeric = (up - down) / (2.0 * step);
            const double a = analytic[i][j];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-2});
            worst = std::max(worst, std::abs(a - numeric) / denom);
        }
    }
    return worst;
}

} // namespace testing
