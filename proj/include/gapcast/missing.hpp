#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "gapcast/random.hpp"

namespace gapcast::missing {

/// Observation flag convention throughout: 1 = missing, 0 = observed.
using Mask = std::vector<std::uint8_t>;

/// Row-major bit matrix of missingness flags.
class MaskMatrix {
public:
    MaskMatrix() = default;
    MaskMatrix(std::size_t rows, std::size_t cols, std::uint8_t fill = 0) : rows_(rows), cols_(cols), bits_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::uint8_t operator()(std::size_t r, std::size_t c) const { return bits_[r * cols_ + c]; }
    std::uint8_t& operator()(std::size_t r, std::size_t c) { return bits_[r * cols_ + c]; }
    std::span<const std::uint8_t> row(std::size_t r) const { return {bits_.data() + r * cols_, cols_}; }
    const std::vector<std::uint8_t>& bits() const { return bits_; }

    std::size_t missing_count() const;
    double missing_rate() const;

    friend bool operator==(const MaskMatrix&, const MaskMatrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<std::uint8_t> bits_;
};

enum class Mechanism { MCAR, MAR };

/// Parses "mcar" / "mar" (case-insensitive). "mnar" and anything else is rejected.
Mechanism parse_mechanism(std::string_view name);
std::string_view mechanism_name(Mechanism m);

/// Logistic dependence of the MAR missingness probability on one always-observed column.
struct MarTerm {
    std::size_t column = 0;
    double coefficient = 0.0;
};

struct MissingnessConfig {
    Mechanism mechanism = Mechanism::MCAR;
    double rate = 0.0;
    std::vector<MarTerm> mar_terms; ///< covariate columns are never masked
    std::uint64_t seed = 0;

    /// Throws ValidationError for a rate outside [0, 1] or a covariate column out of range.
    void validate(std::size_t n_columns) const;
};

/// Each cell is missing independently with probability cfg.rate. A cell is
/// masked when its uniform draw falls below the rate, so with a shared seed
/// masks are nested across increasing rates.
MaskMatrix gen_mask_mcar(const MissingnessConfig& cfg, std::size_t n_rows, std::size_t width, Rng& rng);

/// columns[c][r] is the value of column c at row r. Cells outside the covariate
/// columns go missing with probability sigmoid(b0 + sum_c beta_c x_rc); b0 is
/// found by bisection so the expected missing rate over maskable cells equals
/// cfg.rate.
MaskMatrix gen_mask_mar(const MissingnessConfig& cfg, const std::vector<std::vector<double>>& columns, Rng& rng);

/// Intercept b0 solving mean_r sigmoid(b0 + eta_r) = rate (to 1e-12).
double calibrate_mar_intercept(std::span<const double> linear_predictor, double rate);

/// g(z): observed coordinates copied, missing coordinates set to 0.
std::vector<double> zero_impute(std::span<const double> z, std::span<const std::uint8_t> mask);

struct ObservedMissingSplit {
    std::vector<std::size_t> observed_index;
    std::vector<double> observed_values;
    std::vector<std::size_t> missing_index;
    std::vector<double> missing_values; ///< whatever was stored at the missing slots
};

ObservedMissingSplit split_obs_missing(std::span<const double> z, std::span<const std::uint8_t> mask);
std::vector<double> reassemble(const ObservedMissingSplit& split);

} // namespace gapcast::missing
