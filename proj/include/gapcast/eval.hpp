#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace gapcast::eval {

/// CRPS of an ensemble against one observation, via the energy form
/// mean|X - y| - 0.5 mean|X - X'| over all M^2 pairs. The pair sum is computed
/// in O(M log M) from the sorted sample.
double crps_ensemble(std::span<const double> samples, double observation);

/// tau (y - q)+ + (1 - tau) (q - y)+
double pinball(double q_hat, double y, double tau);

/// Nominal central-interval levels 0.1, ..., 0.9.
std::vector<double> default_levels();
/// Quantile grid 0.05, ..., 0.95.
std::vector<double> default_taus();

/// Central gamma-interval [q_(1-g)/2, q_(1+g)/2]. gamma = 1 is the whole unit
/// interval, since the ensemble's support may be narrower than the truth's.
std::pair<double, double> central_interval(std::span<const double> sorted, double gamma);

/// Fraction of observations inside the central interval, per level.
std::vector<double> reliability(std::span<const std::vector<double>> ensembles, std::span<const double> observations,
                                std::span<const double> levels);
/// Mean central-interval width, per level.
std::vector<double> sharpness(std::span<const std::vector<double>> ensembles, std::span<const double> levels);

struct ScoreReport {
    std::string model;
    std::size_t count = 0;
    double crps = 0.0; ///< raw, in capacity units
    std::vector<double> levels;
    std::vector<double> coverage;
    std::vector<double> width;
    std::vector<double> taus;
    std::vector<double> pinball_loss;

    double crps_percent() const { return 100.0 * crps; }
    nlohmann::json to_json() const;
};

ScoreReport score(const std::string& model, std::span<const std::vector<double>> ensembles,
                  std::span<const double> observations, std::span<const double> levels = {},
                  std::span<const double> taus = {});

/// `level,coverage` rows.
void write_reliability_csv(std::ostream& out, const ScoreReport& r, std::span<const std::string> preamble = {});
/// `level,width` rows.
void write_sharpness_csv(std::ostream& out, const ScoreReport& r, std::span<const std::string> preamble = {});

} // namespace gapcast::eval
