#pragma once

#include <numbers>
#include <span>

#include "gapcast/autodiff.hpp"
#include "gapcast/random.hpp"

namespace gapcast::dist {

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * log(2 pi)

/// Lower bounds added after softplus on the decoder heads.
inline constexpr double kMinScale = 1e-3;
inline constexpr double kMinDof = 2.0;

/// Diagonal Gaussian; rows are independent cases, columns are dimensions.
struct DiagGaussian {
    ad::Var mean;
    ad::Var stddev;
};

/// Diagonal Student's t with per-dimension location, scale and degrees of freedom.
struct DiagStudentT {
    ad::Var loc;
    ad::Var scale;
    ad::Var dof;
};

/// Per-row log-density, r x 1.
ad::Var gaussian_logpdf(const DiagGaussian& d, ad::Var x);
/// log N(x; 0, I) per row, r x 1.
ad::Var standard_normal_logpdf(ad::Var x);

/// Per-element log-density, same shape as x. Callers mask before summing.
ad::Var student_t_logpdf_elements(const DiagStudentT& d, ad::Var x);
/// Per-row log-density, r x 1.
ad::Var student_t_logpdf(const DiagStudentT& d, ad::Var x);

struct ReparamSample {
    ad::Var value;    ///< mean + stddev * noise, differentiable in mean and stddev
    ad::Tensor noise; ///< standard-normal draw, row-major in (row, dim) order
};

ReparamSample gaussian_rsample(const DiagGaussian& d, Rng& rng);

// Plain-value versions for scoring and tests.
double gaussian_logpdf(std::span<const double> x, std::span<const double> mean, std::span<const double> stddev);
double student_t_logpdf(double x, double loc, double scale, double dof);
double sample_student_t(Rng& rng, double loc, double scale, double dof);

/// Maps normalized power in [0, 1] to the real line and back. Inputs are clipped
/// to [eps, 1 - eps] first because the logit is unbounded at the endpoints.
struct LogitTransform {
    double eps = 1e-4;

    double forward(double p) const;
    double inverse(double r) const;
};

} // namespace gapcast::dist
