#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gapcast/dist.hpp"
#include "gapcast/missing.hpp"
#include "gapcast/tensor.hpp"

namespace gapcast::data {

/// Seconds since 1970-01-01T00:00:00Z. Accepts "YYYY-MM-DDTHH:MM[:SS][Z]" with
/// 'T' or a space as separator, or a bare date.
std::int64_t parse_timestamp(std::string_view text);
/// "YYYY-MM-DDTHH:MM:SS"
std::string format_timestamp(std::int64_t seconds);

/// Normalized power on a uniform time grid. values[c][r] is NaN where missing.
struct SeriesTable {
    std::vector<std::int64_t> timestamps;
    std::vector<std::string> columns;
    std::vector<std::vector<double>> values;
    std::int64_t step = 3600;

    std::size_t rows() const { return timestamps.size(); }
    std::size_t column_index(std::string_view name) const;
    bool is_missing(std::size_t row, std::size_t col) const;
    /// Per-cell mask in (row, column) order.
    missing::MaskMatrix mask() const;
};

/// Header: `timestamp,<site columns...>[,mask_<site or index>...]`. Empty cells
/// and "NaN" are missing; a mask column value of 1 also marks its site cell
/// missing. Errors carry the offending line number.
SeriesTable parse_csv(std::istream& in, const std::string& source = "<stream>");
SeriesTable load_csv(const std::filesystem::path& path);

/// Writes `timestamp,<columns>`; missing cells are written empty. `preamble`
/// lines are emitted first, each prefixed with "# ".
void write_csv(std::ostream& out, const SeriesTable& table, std::span<const std::string> preamble = {});
/// Writes `timestamp,mask_<column>...` with 0/1 entries.
void write_mask_csv(std::ostream& out, const SeriesTable& table, const missing::MaskMatrix& mask,
                    std::span<const std::string> preamble = {});

/// Returns a copy of `table` with every flagged cell set missing.
SeriesTable apply_mask(const SeriesTable& table, const missing::MaskMatrix& mask);

/// One feature-target vector in logit space: the target site's h lags, then
/// each auxiliary site's h lags, then the target value k steps ahead.
/// Coordinates run oldest to newest within each block; NaN marks missing.
struct Window {
    std::vector<double> values;
    missing::Mask mask;
    std::int64_t origin = 0;     ///< timestamp of the most recent lag
    std::size_t origin_row = 0;  ///< table row of the most recent lag
    std::size_t lead = 1;
    std::size_t feature_length = 1;

    std::size_t dim() const { return values.size(); }
    std::size_t target_index() const { return values.size() - 1; }
    bool target_missing() const { return mask.back() != 0; }
    std::int64_t target_time(std::int64_t step) const { return origin + static_cast<std::int64_t>(lead) * step; }
};

/// sites[0] is the target column; the rest are auxiliary columns.
std::vector<Window> make_windows(const SeriesTable& table, std::size_t feature_length, std::size_t lead,
                                 std::span<const std::size_t> sites, const dist::LogitTransform& logit = {});

struct SplitSpec {
    double train_fraction = 0.8;
};

struct Split {
    std::vector<Window> train;
    std::vector<Window> test;
};

/// The first round(fraction * n) windows train; the rest test. Training data
/// therefore ends at the target time of the last training window, and any
/// window whose target lies beyond that cut is a test window.
Split chronological_split(std::vector<Window> windows, const SplitSpec& spec);

/// Stacks window values (NaN at missing) into an n x d tensor.
ad::Tensor stack_values(std::span<const Window> windows);
missing::MaskMatrix stack_masks(std::span<const Window> windows);

} // namespace gapcast::data
