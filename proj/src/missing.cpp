#include "gapcast/missing.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

#include "gapcast/errors.hpp"

namespace gapcast::missing {

namespace {

double sigmoid(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

double mean_probability(std::span<const double> eta, double intercept) {
    double s = 0.0;
    for (double e : eta) {
        s += sigmoid(intercept + e);
    }
    return s / static_cast<double>(eta.size());
}

} // namespace

std::size_t MaskMatrix::missing_count() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

double MaskMatrix::missing_rate() const {
    return bits_.empty() ? 0.0 : static_cast<double>(missing_count()) / static_cast<double>(bits_.size());
}

Mechanism parse_mechanism(std::string_view name) {
    std::string s(name);
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    if (s == "mcar") return Mechanism::MCAR;
    if (s == "mar") return Mechanism::MAR;
    if (s == "mnar") {
        throw ValidationError("MNAR missingness is not supported: the model assumes data missing at random");
    }
    throw ValidationError("unknown missingness mechanism '" + std::string(name) + "'");
}

std::string_view mechanism_name(Mechanism m) { return m == Mechanism::MCAR ? "mcar" : "mar"; }

void MissingnessConfig::validate(std::size_t n_columns) const {
    if (!(rate >= 0.0 && rate <= 1.0)) {
        throw ValidationError("missing rate must lie in [0, 1], got " + std::to_string(rate));
    }
    for (const auto& t : mar_terms) {
        if (t.column >= n_columns) {
            throw ValidationError("MAR covariate column " + std::to_string(t.column) + " out of range");
        }
    }
}

MaskMatrix gen_mask_mcar(const MissingnessConfig& cfg, std::size_t n_rows, std::size_t width, Rng& rng) {
    cfg.validate(width);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    MaskMatrix mask(n_rows, width);
    for (std::size_t r = 0; r < n_rows; ++r) {
        for (std::size_t c = 0; c < width; ++c) {
            mask(r, c) = uniform(rng) < cfg.rate ? 1 : 0;
        }
    }
    return mask;
}

double calibrate_mar_intercept(std::span<const double> linear_predictor, double rate) {
    if (linear_predictor.empty()) {
        throw ValidationError("MAR calibration: no rows");
    }
    constexpr double kBracket = 60.0;
    double lo = -kBracket;
    double hi = kBracket;
    if (mean_probability(linear_predictor, lo) > rate || mean_probability(linear_predictor, hi) < rate) {
        throw ValidationError("MAR calibration failed to bracket the target rate; covariate coefficients are degenerate");
    }
    for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mean_probability(linear_predictor, mid) < rate) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

MaskMatrix gen_mask_mar(const MissingnessConfig& cfg, const std::vector<std::vector<double>>& columns, Rng& rng) {
    cfg.validate(columns.size());
    const std::size_t n_cols = columns.size();
    const std::size_t n_rows = n_cols ? columns.front().size() : 0;
    std::vector<bool> is_covariate(n_cols, false);
    std::vector<double> eta(n_rows, 0.0);
    for (const auto& t : cfg.mar_terms) {
        is_covariate[t.column] = true;
        const auto& col = columns[t.column];
        for (std::size_t r = 0; r < n_rows; ++r) {
            if (!std::isfinite(col[r])) {
                throw ValidationError("MAR covariate column " + std::to_string(t.column) + " has a missing value at row " +
                                      std::to_string(r));
            }
            eta[r] += t.coefficient * col[r];
        }
    }
    std::vector<double> prob(n_rows, cfg.rate);
    if (cfg.rate > 0.0 && cfg.rate < 1.0) {
        const double b0 = calibrate_mar_intercept(eta, cfg.rate);
        for (std::size_t r = 0; r < n_rows; ++r) {
            prob[r] = sigmoid(b0 + eta[r]);
        }
    }
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    MaskMatrix mask(n_rows, n_cols);
    for (std::size_t r = 0; r < n_rows; ++r) {
        for (std::size_t c = 0; c < n_cols; ++c) {
            const double u = uniform(rng);
            if (!is_covariate[c]) {
                mask(r, c) = u < prob[r] ? 1 : 0;
            }
        }
    }
    return mask;
}

std::vector<double> zero_impute(std::span<const double> z, std::span<const std::uint8_t> mask) {
    if (z.size() != mask.size()) {
        throw ValidationError("zero_impute: value and mask lengths differ");
    }
    std::vector<double> g(z.size(), 0.0);
    for (std::size_t i = 0; i < z.size(); ++i) {
        if (mask[i] == 0) {
            if (!std::isfinite(z[i])) {
                throw ValidationError("zero_impute: observed coordinate " + std::to_string(i) + " is not finite");
            }
            g[i] = z[i];
        }
    }
    return g;
}

ObservedMissingSplit split_obs_missing(std::span<const double> z, std::span<const std::uint8_t> mask) {
    if (z.size() != mask.size()) {
        throw ValidationError("split_obs_missing: value and mask lengths differ");
    }
    ObservedMissingSplit s;
    for (std::size_t i = 0; i < z.size(); ++i) {
        if (mask[i]) {
            s.missing_index.push_back(i);
            s.missing_values.push_back(z[i]);
        } else {
            s.observed_index.push_back(i);
            s.observed_values.push_back(z[i]);
        }
    }
    return s;
}

std::vector<double> reassemble(const ObservedMissingSplit& split) {
    std::vector<double> z(split.observed_index.size() + split.missing_index.size());
    for (std::size_t i = 0; i < split.observed_index.size(); ++i) {
        z[split.observed_index[i]] = split.observed_values[i];
    }
    for (std::size_t i = 0; i < split.missing_index.size(); ++i) {
        z[split.missing_index[i]] = split.missing_values[i];
    }
    return z;
}

} // namespace gapcast::missing
