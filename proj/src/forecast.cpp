#include "gapcast/forecast.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "gapcast/errors.hpp"

namespace gapcast::forecast {

namespace {

constexpr std::uint64_t kForecastStream = 21;

} // namespace

ProposalSet propose(const genmodel::GenerativeModel& model, std::span<const double> values,
                    std::span<const std::uint8_t> mask, Rng& rng, std::size_t L) {
    if (L == 0) throw ValidationError("propose: L must be at least 1");
    const std::size_t d = model.data_dim();
    if (values.size() != d || mask.size() != d) {
        throw ValidationError("propose: window has " + std::to_string(values.size()) + " coordinates, model expects " +
                              std::to_string(d));
    }
    if (mask.back() == 0) {
        throw ValidationError("propose: the target coordinate must be marked missing");
    }
    genmodel::ModelData row{ad::Tensor(1, d), ad::Tensor(1, d)};
    for (std::size_t j = 0; j < d; ++j) {
        if (mask[j]) {
            row.missing[j] = 1.0;
        } else {
            if (!std::isfinite(values[j])) {
                throw ValidationError("propose: observed coordinate " + std::to_string(j) + " is not finite");
            }
            row.values[j] = values[j];
        }
    }

    ad::Tape tape;
    auto b = model.bind(tape, false);
    auto latent = genmodel::encode_sample(b, model, genmodel::encoder_input(tape, model, row), rng, L);
    auto dec = genmodel::decode(b, d, latent.u);
    ad::Tensor z_obs(L, d), s(L, d);
    for (std::size_t i = 0; i < L; ++i) {
        std::copy(row.values.data().begin(), row.values.data().end(), z_obs.row_span(i).begin());
        std::copy(row.missing.data().begin(), row.missing.data().end(), s.row_span(i).begin());
    }
    ad::Var log_r = ad::sub(ad::add(genmodel::observed_loglik(dec, tape.constant(std::move(z_obs)), tape.constant(std::move(s))),
                                    dist::standard_normal_logpdf(latent.u)),
                            latent.log_q);

    ProposalSet out;
    out.latent = latent.u.value();
    out.log_ratios = log_r.value().values();
    out.mask.assign(mask.begin(), mask.end());
    out.scenarios = ad::Tensor(L, d);
    const auto& loc = dec.loc.value();
    const auto& scale = dec.scale.value();
    const auto& dof = dec.dof.value();
    for (std::size_t i = 0; i < loc.size(); ++i) {
        out.scenarios[i] = dist::sample_student_t(rng, loc[i], scale[i], dof[i]);
    }
    out.dropped = static_cast<std::size_t>(
        std::count_if(out.log_ratios.begin(), out.log_ratios.end(), [](double v) { return !std::isfinite(v); }));
    out.weights = normalize_weights(out.log_ratios);
    return out;
}

std::vector<double> normalize_weights(std::span<const double> log_ratios) {
    double peak = -std::numeric_limits<double>::infinity();
    for (double v : log_ratios) {
        if (std::isfinite(v)) peak = std::max(peak, v);
    }
    if (!std::isfinite(peak)) {
        throw NumericalError("normalize_weights: no finite importance ratio");
    }
    std::vector<double> w(log_ratios.size(), 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (std::isfinite(log_ratios[i])) {
            w[i] = std::exp(log_ratios[i] - peak);
            total += w[i];
        }
    }
    for (double& v : w) v /= total;
    return w;
}

double effective_sample_size(std::span<const double> weights) {
    double sq = 0.0;
    for (double w : weights) sq += w * w;
    return sq > 0.0 ? 1.0 / sq : 0.0;
}

ScenarioSet resample(const ProposalSet& proposals, std::size_t M, Rng& rng, Resampling scheme) {
    if (M == 0) throw ValidationError("resample: M must be at least 1");
    if (proposals.size() == 0 || proposals.weights.size() != proposals.size()) {
        throw ValidationError("resample: empty or inconsistent proposal set");
    }
    ScenarioSet out;
    out.mask = proposals.mask;
    out.source.resize(M);
    if (scheme == Resampling::Multinomial) {
        std::discrete_distribution<std::size_t> pick(proposals.weights.begin(), proposals.weights.end());
        for (auto& s : out.source) s = pick(rng);
    } else {
        std::uniform_real_distribution<double> uniform(0.0, 1.0);
        const double u0 = uniform(rng) / static_cast<double>(M);
        double cumulative = proposals.weights[0];
        std::size_t i = 0;
        for (std::size_t m = 0; m < M; ++m) {
            const double u = u0 + static_cast<double>(m) / static_cast<double>(M);
            while (u > cumulative && i + 1 < proposals.size()) cumulative += proposals.weights[++i];
            out.source[m] = i;
        }
    }
    const std::size_t d = proposals.scenarios.cols();
    out.scenarios = ad::Tensor(M, d);
    for (std::size_t m = 0; m < M; ++m) {
        const auto src = proposals.scenarios.row_span(out.source[m]);
        std::copy(src.begin(), src.end(), out.scenarios.row_span(m).begin());
    }
    return out;
}

std::vector<double> target_samples(const ScenarioSet& s) {
    std::vector<double> out(s.scenarios.rows());
    const std::size_t last = s.scenarios.cols() - 1;
    for (std::size_t m = 0; m < out.size(); ++m) out[m] = s.scenarios(m, last);
    return out;
}

Imputations missing_feature_imputations(const ScenarioSet& s) {
    Imputations out;
    for (std::size_t j = 0; j + 1 < s.mask.size(); ++j) {
        if (s.mask[j]) out.coordinates.push_back(j);
    }
    out.values = ad::Tensor(s.scenarios.rows(), out.coordinates.size());
    for (std::size_t m = 0; m < s.scenarios.rows(); ++m) {
        for (std::size_t c = 0; c < out.coordinates.size(); ++c) {
            out.values(m, c) = s.scenarios(m, out.coordinates[c]);
        }
    }
    return out;
}

Imputations missing_feature_imputations(const ProposalSet& proposals, std::size_t M, Rng& rng) {
    return missing_feature_imputations(resample(proposals, M, rng));
}

WindowForecast forecast_window(const genmodel::GenerativeModel& model, const data::Window& window,
                               const ForecastConfig& cfg, std::size_t index, const dist::LogitTransform& logit) {
    Rng rng = make_rng(cfg.seed, {kForecastStream, index});
    missing::Mask mask = window.mask;
    mask.back() = 1;
    auto proposals = propose(model, window.values, mask, rng, cfg.L);
    auto scenarios = resample(proposals, cfg.M, rng, cfg.scheme);
    WindowForecast out;
    out.ensemble.origin = window.origin;
    out.ensemble.lead = window.lead;
    out.ensemble.samples = target_samples(scenarios);
    for (double& v : out.ensemble.samples) v = logit.inverse(v);
    out.dropped = proposals.dropped;
    out.ess = effective_sample_size(proposals.weights);
    return out;
}

double quantile_sorted(std::span<const double> sorted, double level) {
    if (sorted.empty()) throw ValidationError("quantile of an empty sample");
    const double h = (static_cast<double>(sorted.size()) - 1.0) * level;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= sorted.size()) return sorted.back();
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

std::vector<double> ensemble_to_quantiles(std::span<const double> samples, std::span<const double> levels) {
    if (samples.empty()) throw ValidationError("ensemble_to_quantiles: empty ensemble");
    for (std::size_t i = 0; i < levels.size(); ++i) {
        if (!(levels[i] > 0.0 && levels[i] < 1.0) || (i > 0 && levels[i] <= levels[i - 1])) {
            throw ValidationError("quantile levels must be strictly increasing inside (0, 1)");
        }
    }
    std::vector<double> sorted(samples.begin(), samples.end());
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> out;
    out.reserve(levels.size());
    for (double p : levels) out.push_back(quantile_sorted(sorted, p));
    return out;
}

} // namespace gapcast::forecast
