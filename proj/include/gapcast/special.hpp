#pragma once

namespace gapcast::special {

/// log Gamma(x) for x > 0 via the Lanczos approximation (g = 7, 9 coefficients).
/// Reflection handles 0 < x < 0.5.
double lgamma(double x);

/// Digamma psi(x) for x > 0: upward recurrence to x >= 10, then the asymptotic series.
double digamma(double x);

} // namespace gapcast::special
