#include "gapcast/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "gapcast/errors.hpp"
#include "gapcast/forecast.hpp"

namespace gapcast::eval {

namespace {

void check_aligned(std::span<const std::vector<double>> ensembles, std::span<const double> observations) {
    if (ensembles.empty()) throw ValidationError("scoring: no forecast cases");
    if (ensembles.size() != observations.size()) {
        throw ValidationError("scoring: " + std::to_string(ensembles.size()) + " ensembles but " +
                              std::to_string(observations.size()) + " observations");
    }
}

void check_levels(std::span<const double> levels) {
    for (double g : levels) {
        if (!(g > 0.0 && g <= 1.0)) throw ValidationError("interval levels must lie in (0, 1]");
    }
}

std::vector<double> sorted_copy(const std::vector<double>& v) {
    if (v.empty()) throw ValidationError("scoring: empty ensemble");
    std::vector<double> s = v;
    std::sort(s.begin(), s.end());
    return s;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

} // namespace

double crps_ensemble(std::span<const double> samples, double observation) {
    if (samples.empty()) throw ValidationError("crps_ensemble: empty ensemble");
    if (!std::isfinite(observation)) throw ValidationError("crps_ensemble: observation is not finite");
    std::vector<double> x(samples.begin(), samples.end());
    std::sort(x.begin(), x.end());
    const auto m = static_cast<double>(x.size());
    double abs_err = 0.0;
    double pair = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        abs_err += std::abs(x[i] - observation);
        // sum_{i<j} (x_(j) - x_(i)) = sum_i gap_i * i * (M - i); every term is non-negative
        if (i > 0) pair += (x[i] - x[i - 1]) * static_cast<double>(i) * (m - static_cast<double>(i));
    }
    return std::max(0.0, abs_err / m - pair / (m * m));
}

double pinball(double q_hat, double y, double tau) {
    const double diff = y - q_hat;
    return diff >= 0.0 ? tau * diff : (tau - 1.0) * diff;
}

std::vector<double> default_levels() {
    std::vector<double> out;
    for (int i = 1; i <= 9; ++i) out.push_back(i / 10.0);
    return out;
}

std::vector<double> default_taus() {
    std::vector<double> out;
    for (int i = 1; i <= 19; ++i) out.push_back(i / 20.0);
    return out;
}

std::pair<double, double> central_interval(std::span<const double> sorted, double gamma) {
    if (gamma >= 1.0) return {0.0, 1.0};
    return {forecast::quantile_sorted(sorted, 0.5 * (1.0 - gamma)), forecast::quantile_sorted(sorted, 0.5 * (1.0 + gamma))};
}

std::vector<double> reliability(std::span<const std::vector<double>> ensembles, std::span<const double> observations,
                                std::span<const double> levels) {
    check_aligned(ensembles, observations);
    check_levels(levels);
    std::vector<double> hits(levels.size(), 0.0);
    for (std::size_t c = 0; c < ensembles.size(); ++c) {
        const auto s = sorted_copy(ensembles[c]);
        for (std::size_t l = 0; l < levels.size(); ++l) {
            auto [lo, hi] = central_interval(s, levels[l]);
            if (observations[c] >= lo && observations[c] <= hi) hits[l] += 1.0;
        }
    }
    for (double& h : hits) h /= static_cast<double>(ensembles.size());
    return hits;
}

std::vector<double> sharpness(std::span<const std::vector<double>> ensembles, std::span<const double> levels) {
    if (ensembles.empty()) throw ValidationError("sharpness: no forecast cases");
    check_levels(levels);
    std::vector<double> width(levels.size(), 0.0);
    for (const auto& e : ensembles) {
        const auto s = sorted_copy(e);
        for (std::size_t l = 0; l < levels.size(); ++l) {
            auto [lo, hi] = central_interval(s, levels[l]);
            width[l] += hi - lo;
        }
    }
    for (double& w : width) w /= static_cast<double>(ensembles.size());
    return width;
}

nlohmann::json ScoreReport::to_json() const {
    nlohmann::json j;
    j["model"] = model;
    j["count"] = count;
    j["crps"] = crps;
    j["crps_percent"] = crps_percent();
    j["reliability"] = nlohmann::json::array();
    j["sharpness"] = nlohmann::json::array();
    j["pinball"] = nlohmann::json::array();
    for (std::size_t l = 0; l < levels.size(); ++l) {
        j["reliability"].push_back({{"level", levels[l]}, {"coverage", coverage[l]}});
        j["sharpness"].push_back({{"level", levels[l]}, {"width", width[l]}});
    }
    for (std::size_t t = 0; t < taus.size(); ++t) {
        j["pinball"].push_back({{"tau", taus[t]}, {"loss", pinball_loss[t]}});
    }
    return j;
}

ScoreReport score(const std::string& model, std::span<const std::vector<double>> ensembles,
                  std::span<const double> observations, std::span<const double> levels, std::span<const double> taus) {
    check_aligned(ensembles, observations);
    ScoreReport r;
    r.model = model;
    r.count = ensembles.size();
    r.levels = levels.empty() ? default_levels() : std::vector<double>(levels.begin(), levels.end());
    r.taus = taus.empty() ? default_taus() : std::vector<double>(taus.begin(), taus.end());
    r.coverage = reliability(ensembles, observations, r.levels);
    r.width = sharpness(ensembles, r.levels);
    r.pinball_loss.assign(r.taus.size(), 0.0);
    double total = 0.0;
    for (std::size_t c = 0; c < ensembles.size(); ++c) {
        total += crps_ensemble(ensembles[c], observations[c]);
        const auto q = forecast::ensemble_to_quantiles(ensembles[c], r.taus);
        for (std::size_t t = 0; t < r.taus.size(); ++t) r.pinball_loss[t] += pinball(q[t], observations[c], r.taus[t]);
    }
    const auto n = static_cast<double>(ensembles.size());
    r.crps = total / n;
    for (double& p : r.pinball_loss) p /= n;
    return r;
}

void write_reliability_csv(std::ostream& out, const ScoreReport& r, std::span<const std::string> preamble) {
    for (const auto& line : preamble) out << "# " << line << '\n';
    out << "level,coverage\n";
    for (std::size_t l = 0; l < r.levels.size(); ++l) out << fmt(r.levels[l]) << ',' << fmt(r.coverage[l]) << '\n';
}

void write_sharpness_csv(std::ostream& out, const ScoreReport& r, std::span<const std::string> preamble) {
    for (const auto& line : preamble) out << "# " << line << '\n';
    out << "level,width\n";
    for (std::size_t l = 0; l < r.levels.size(); ++l) out << fmt(r.levels[l]) << ',' << fmt(r.width[l]) << '\n';
}

} // namespace gapcast::eval
