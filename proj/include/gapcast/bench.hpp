#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gapcast/data.hpp"
#include "gapcast/nn.hpp"
#include "gapcast/random.hpp"
#include "gapcast/tensor.hpp"

namespace gapcast::bench {

/// Feature rows (window coordinates except the target, NaN where missing) and
/// targets, both in model space.
struct RegressionData {
    ad::Tensor features;
    std::vector<double> targets;
};

/// Windows with a missing target are dropped when `drop_missing_targets`.
RegressionData regression_data(std::span<const data::Window> windows, bool drop_missing_targets = true);

/// M draws with replacement from the history; the same ensemble serves every
/// forecast origin.
std::vector<double> climatology_ensemble(std::span<const double> history, std::size_t M, Rng& rng);

enum class ImputerKind { Mean, IterativeLinear };

/// Column-wise gap filler. Iterative-linear starts from column means, then
/// cycles through the columns, regressing each on all others' current values,
/// until the largest change is below `tolerance` or `max_iterations` passes.
class Imputer {
public:
    explicit Imputer(ImputerKind kind = ImputerKind::Mean, std::size_t max_iterations = 10, double tolerance = 1e-4);

    /// NaN marks missing. Throws ValidationError for a fully missing column.
    void fit(const ad::Tensor& x);
    ad::Tensor transform(const ad::Tensor& x) const;
    ad::Tensor fit_transform(const ad::Tensor& x);

    ImputerKind kind() const { return kind_; }
    bool fitted() const { return !means_.empty(); }
    const std::vector<double>& means() const { return means_; }

private:
    /// Fills with column means, then applies the per-column regressions.
    ad::Tensor iterate(const ad::Tensor& x, bool refit);

    ImputerKind kind_;
    std::size_t max_iterations_;
    double tolerance_;
    std::vector<double> means_;
    std::vector<std::vector<double>> coefficients_; ///< per column: intercept, then one slope per column (own slot 0)
};

/// Standardizes columns with the statistics of a training matrix.
struct Standardizer {
    std::vector<double> mean;
    std::vector<double> scale;

    static Standardizer fit(const ad::Tensor& x);
    ad::Tensor apply(const ad::Tensor& x) const;
};

struct QrConfig {
    std::vector<double> taus; ///< empty: 0.05, 0.10, ..., 0.95
    std::size_t iterations = 800;
    double learning_rate = 0.02;
};

/// One linear quantile model per tau, fit by full-batch Adam on the pinball
/// loss with iterate averaging over the second half of the run.
class QuantileRegressor {
public:
    void fit(const ad::Tensor& x, std::span<const double> y, const QrConfig& cfg = {});
    /// Quantiles at taus(), sorted to repair crossings.
    std::vector<double> predict(std::span<const double> x) const;
    const std::vector<double>& taus() const { return taus_; }
    /// taus().size() x (features + 1); column 0 is the intercept.
    const ad::Tensor& coefficients() const { return coef_; }

private:
    Standardizer standardizer_;
    std::vector<double> taus_;
    ad::Tensor coef_;
};

/// Stratified inverse-CDF draws u_m = (m + 0.5) / M through the piecewise
/// linear quantile function, extended linearly beyond the outermost levels.
std::vector<double> sample_from_quantiles(std::span<const double> taus, std::span<const double> quantiles,
                                          std::size_t M);

struct GaussConfig {
    std::vector<std::size_t> hidden{32};
    std::size_t epochs = 100;
    std::size_t batch_size = 128;
    double learning_rate = 1e-2;
    std::uint64_t seed = 0;
};

/// MLP emitting (mu, sigma) of the target, sigma = softplus(.) + 1e-3, fit by
/// maximum likelihood.
class GaussianRegressor {
public:
    void fit(const ad::Tensor& x, std::span<const double> y, const GaussConfig& cfg = {});
    std::pair<double, double> predict(std::span<const double> x) const;
    std::vector<double> sample(std::span<const double> x, std::size_t M, Rng& rng) const;
    const nn::Mlp& network() const { return net_; }
    const Standardizer& standardizer() const { return standardizer_; }

private:
    Standardizer standardizer_;
    nn::Mlp net_;
};

/// QR trained on complete data. Throws ValidationError if any coordinate is missing.
QuantileRegressor reference_model(std::span<const data::Window> complete_windows, const QrConfig& cfg = {});

} // namespace gapcast::bench
