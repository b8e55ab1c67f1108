#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gapcast/data.hpp"
#include "gapcast/dist.hpp"
#include "gapcast/genmodel.hpp"
#include "gapcast/missing.hpp"
#include "gapcast/random.hpp"
#include "gapcast/tensor.hpp"

namespace gapcast::forecast {

/// L ancestral draws (u_i, z_i) with self-normalized importance weights.
struct ProposalSet {
    ad::Tensor latent;             ///< L x d_u
    ad::Tensor scenarios;          ///< L x d, model space
    std::vector<double> log_ratios;
    std::vector<double> weights;   ///< zero for dropped proposals
    std::size_t dropped = 0;       ///< proposals with a non-finite ratio
    missing::Mask mask;

    std::size_t size() const { return log_ratios.size(); }
};

/// u_i ~ q(u | g(z^o)), z_i ~ p(z | u_i), and
/// log r_i = log p(z^o | u_i) + log p(u_i) - log q(u_i | g(z^o)) over observed
/// coordinates. Values at missing coordinates are never read.
ProposalSet propose(const genmodel::GenerativeModel& model, std::span<const double> values,
                    std::span<const std::uint8_t> mask, Rng& rng, std::size_t L);

/// Softmax with max shift. Non-finite entries receive weight 0.
std::vector<double> normalize_weights(std::span<const double> log_ratios);

double effective_sample_size(std::span<const double> weights);

enum class Resampling { Multinomial, Systematic };

struct ScenarioSet {
    ad::Tensor scenarios;            ///< M x d, model space
    std::vector<std::size_t> source; ///< proposal index of each scenario
    missing::Mask mask;
};

ScenarioSet resample(const ProposalSet& proposals, std::size_t M, Rng& rng,
                     Resampling scheme = Resampling::Multinomial);

/// Last coordinate of each scenario, in model space.
std::vector<double> target_samples(const ScenarioSet& s);

/// Scenario values at missing feature coordinates (target excluded). Target
/// forecasts discard these, which marginalizes the missing features.
struct Imputations {
    std::vector<std::size_t> coordinates;
    ad::Tensor values; ///< M x coordinates.size()
};
Imputations missing_feature_imputations(const ScenarioSet& s);
Imputations missing_feature_imputations(const ProposalSet& proposals, std::size_t M, Rng& rng);

/// Target ensemble in power space [0, 1].
struct ForecastEnsemble {
    std::vector<double> samples;
    std::int64_t origin = 0;
    std::size_t lead = 1;
};

struct ForecastConfig {
    std::size_t L = 1000;
    std::size_t M = 200;
    Resampling scheme = Resampling::Multinomial;
    std::uint64_t seed = 0;
};

struct WindowForecast {
    ForecastEnsemble ensemble;
    std::size_t dropped = 0;
    double ess = 0.0;
};

/// Forecast for one window; the target coordinate is treated as missing. The
/// random stream depends only on (cfg.seed, index).
WindowForecast forecast_window(const genmodel::GenerativeModel& model, const data::Window& window,
                               const ForecastConfig& cfg, std::size_t index,
                               const dist::LogitTransform& logit = {});

/// Type-7 empirical quantile of sorted data.
double quantile_sorted(std::span<const double> sorted, double level);
/// Levels must be strictly increasing inside (0, 1).
std::vector<double> ensemble_to_quantiles(std::span<const double> samples, std::span<const double> levels);

} // namespace gapcast::forecast
