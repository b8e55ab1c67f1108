#include "gapcast/special.hpp"

#include <array>
#include <cmath>
#include <numbers>

namespace gapcast::special {

namespace {

constexpr double kLanczosG = 7.0;
constexpr std::array<double, 9> kLanczosCoef = {
    0.99999999999980993,  676.5203681218851,     -1259.1392167224028,
    771.32342877765313,   -176.61502916214059,   12.507343278686905,
    -0.13857109526572012, 9.9843695780195716e-6, 1.5056327351493116e-7,
};

} // namespace

double lgamma(double x) {
    if (x < 0.5) {
        // Gamma(x) Gamma(1 - x) = pi / sin(pi x)
        return std::log(std::numbers::pi / std::sin(std::numbers::pi * x)) - lgamma(1.0 - x);
    }
    x -= 1.0;
    double a = kLanczosCoef[0];
    for (std::size_t i = 1; i < kLanczosCoef.size(); ++i) {
        a += kLanczosCoef[i] / (x + static_cast<double>(i));
    }
    const double t = x + kLanczosG + 0.5;
    return 0.5 * std::log(2.0 * std::numbers::pi) + (x + 0.5) * std::log(t) - t + std::log(a);
}

double digamma(double x) {
    double result = 0.0;
    while (x < 10.0) {
        result -= 1.0 / x;
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    // Bernoulli-number tail: 1/12, 1/120, 1/252, 1/240, 1/132, 691/32760
    const double tail =
        inv2 * (1.0 / 12.0 -
                inv2 * (1.0 / 120.0 -
                        inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * 691.0 / 32760.0)))));
    return result + std::log(x) - 0.5 * inv - tail;
}

} // namespace gapcast::special
