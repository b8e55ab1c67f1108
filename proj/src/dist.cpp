#include "gapcast/dist.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "gapcast/errors.hpp"
#include "gapcast/special.hpp"

namespace gapcast::dist {

namespace {

void require_positive(const ad::Tensor& t, const char* what) {
    for (double v : t.data()) {
        if (!(v > 0.0)) {
            throw ValidationError(std::string(what) + " must be strictly positive");
        }
    }
}

} // namespace

ad::Var gaussian_logpdf(const DiagGaussian& d, ad::Var x) {
    require_positive(d.stddev.value(), "Gaussian stddev");
    ad::Var z = ad::div(ad::sub(x, d.mean), d.stddev);
    ad::Var terms = ad::add(ad::log(d.stddev), ad::scale(ad::square(z), 0.5));
    const double cols = static_cast<double>(x.cols());
    return ad::add_scalar(ad::neg(ad::sum_rows(terms)), -kHalfLog2Pi * cols);
}

ad::Var standard_normal_logpdf(ad::Var x) {
    const double cols = static_cast<double>(x.cols());
    return ad::add_scalar(ad::scale(ad::sum_rows(ad::square(x)), -0.5), -kHalfLog2Pi * cols);
}

ad::Var student_t_logpdf_elements(const DiagStudentT& d, ad::Var x) {
    require_positive(d.scale.value(), "Student-t scale");
    require_positive(d.dof.value(), "Student-t degrees of freedom");
    ad::Var half_nu = ad::scale(d.dof, 0.5);
    ad::Var half_nu_plus = ad::add_scalar(half_nu, 0.5);
    ad::Var norm = ad::sub(ad::lgamma(half_nu_plus), ad::lgamma(half_nu));
    norm = ad::sub(norm, ad::scale(ad::log(ad::scale(d.dof, std::numbers::pi)), 0.5));
    norm = ad::sub(norm, ad::log(d.scale));
    ad::Var z = ad::div(ad::sub(x, d.loc), d.scale);
    ad::Var tail = ad::log(ad::add_scalar(ad::div(ad::square(z), d.dof), 1.0));
    return ad::sub(norm, ad::mul(half_nu_plus, tail));
}

ad::Var student_t_logpdf(const DiagStudentT& d, ad::Var x) { return ad::sum_rows(student_t_logpdf_elements(d, x)); }

ReparamSample gaussian_rsample(const DiagGaussian& d, Rng& rng) {
    const ad::Tensor& mu = d.mean.value();
    if (!mu.same_shape(d.stddev.value())) {
        throw ValidationError("gaussian_rsample: mean and stddev shapes differ");
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    ad::Tensor noise(mu.rows(), mu.cols());
    for (double& v : noise.data()) {
        v = normal(rng);
    }
    ad::Var eta = d.mean.tape()->constant(noise);
    return {ad::add(d.mean, ad::mul(d.stddev, eta)), std::move(noise)};
}

double gaussian_logpdf(std::span<const double> x, std::span<const double> mean, std::span<const double> stddev) {
    if (x.size() != mean.size() || x.size() != stddev.size()) {
        throw ValidationError("gaussian_logpdf: dimension mismatch");
    }
    double total = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
        if (!(stddev[j] > 0.0)) {
            throw ValidationError("Gaussian stddev must be strictly positive");
        }
        const double z = (x[j] - mean[j]) / stddev[j];
        total += -kHalfLog2Pi - std::log(stddev[j]) - 0.5 * z * z;
    }
    return total;
}

double student_t_logpdf(double x, double loc, double scale, double dof) {
    if (!(scale > 0.0) || !(dof > 0.0)) {
        throw ValidationError("Student-t scale and degrees of freedom must be strictly positive");
    }
    const double z = (x - loc) / scale;
    return special::lgamma(0.5 * (dof + 1.0)) - special::lgamma(0.5 * dof) - 0.5 * std::log(dof * std::numbers::pi) -
           std::log(scale) - 0.5 * (dof + 1.0) * std::log1p(z * z / dof);
}

double sample_student_t(Rng& rng, double loc, double scale, double dof) {
    std::student_t_distribution<double> t(dof);
    return loc + scale * t(rng);
}

double LogitTransform::forward(double p) const {
    const double q = std::clamp(p, eps, 1.0 - eps);
    return std::log(q / (1.0 - q));
}

double LogitTransform::inverse(double r) const { return 1.0 / (1.0 + std::exp(-r)); }

} // namespace gapcast::dist
