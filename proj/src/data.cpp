#include "gapcast/data.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

#include "gapcast/errors.hpp"

namespace gapcast::data {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Howard Hinnant's civil-calendar algorithms.
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, std::int64_t& y, unsigned& m, unsigned& d) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    y = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    d = doy - (153 * mp + 2) / 5 + 1;
    m = mp < 10 ? mp + 3 : mp - 9;
    y += m <= 2;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

bool is_missing_token(std::string_view s) { return s.empty() || s == "NaN" || s == "nan" || s == "NA"; }

int parse_int(std::string_view s, std::string_view what, std::string_view full) {
    int v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) {
        throw ValidationError("malformed timestamp '" + std::string(full) + "' (" + std::string(what) + ")");
    }
    return v;
}

[[noreturn]] void fail_at(const std::string& source, std::size_t line, const std::string& msg) {
    throw ValidationError(source + ":" + std::to_string(line) + ": " + msg);
}

void write_preamble(std::ostream& out, std::span<const std::string> preamble) {
    for (const auto& line : preamble) {
        out << "# " << line << '\n';
    }
}

std::string format_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

std::int64_t parse_timestamp(std::string_view text) {
    const std::string_view full = text;
    text = trim(text);
    if (!text.empty() && text.back() == 'Z') text.remove_suffix(1);
    if (text.size() < 10 || text[4] != '-' || text[7] != '-') {
        throw ValidationError("malformed timestamp '" + std::string(full) + "'");
    }
    const int year = parse_int(text.substr(0, 4), "year", full);
    const int month = parse_int(text.substr(5, 2), "month", full);
    const int day = parse_int(text.substr(8, 2), "day", full);
    int hour = 0, minute = 0, second = 0;
    if (text.size() > 10) {
        if ((text[10] != 'T' && text[10] != ' ') || text.size() < 16 || text[13] != ':') {
            throw ValidationError("malformed timestamp '" + std::string(full) + "'");
        }
        hour = parse_int(text.substr(11, 2), "hour", full);
        minute = parse_int(text.substr(14, 2), "minute", full);
        if (text.size() > 16) {
            if (text.size() != 19 || text[16] != ':') {
                throw ValidationError("malformed timestamp '" + std::string(full) + "'");
            }
            second = parse_int(text.substr(17, 2), "second", full);
        }
    }
    if (month < 1 || month > 12 || day < 1 || day > 31 || hour > 23 || minute > 59 || second > 60) {
        throw ValidationError("timestamp field out of range in '" + std::string(full) + "'");
    }
    return days_from_civil(year, static_cast<unsigned>(month), static_cast<unsigned>(day)) * 86400 + hour * 3600 +
           minute * 60 + second;
}

std::string format_timestamp(std::int64_t seconds) {
    std::int64_t days = seconds / 86400;
    std::int64_t rem = seconds % 86400;
    if (rem < 0) {
        rem += 86400;
        --days;
    }
    std::int64_t y = 0;
    unsigned m = 0, d = 0;
    civil_from_days(days, y, m, d);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04lld-%02u-%02uT%02lld:%02lld:%02lld", static_cast<long long>(y), m, d,
                  static_cast<long long>(rem / 3600), static_cast<long long>((rem / 60) % 60),
                  static_cast<long long>(rem % 60));
    return buf;
}

std::size_t SeriesTable::column_index(std::string_view name) const {
    for (std::size_t c = 0; c < columns.size(); ++c) {
        if (columns[c] == name) return c;
    }
    throw ValidationError("column '" + std::string(name) + "' not found");
}

bool SeriesTable::is_missing(std::size_t row, std::size_t col) const { return !std::isfinite(values[col][row]); }

missing::MaskMatrix SeriesTable::mask() const {
    missing::MaskMatrix m(rows(), columns.size());
    for (std::size_t r = 0; r < rows(); ++r) {
        for (std::size_t c = 0; c < columns.size(); ++c) {
            m(r, c) = is_missing(r, c) ? 1 : 0;
        }
    }
    return m;
}

SeriesTable parse_csv(std::istream& in, const std::string& source) {
    SeriesTable table;
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string> header;
    std::vector<std::size_t> data_fields;                          // field index -> data column
    std::vector<std::pair<std::size_t, std::size_t>> mask_fields;  // (field index, data column)

    while (std::getline(in, line)) {
        ++line_no;
        const std::string_view sv = trim(line);
        if (sv.empty() || sv.front() == '#') continue;
        const auto fields = split_fields(sv);

        if (header.empty()) {
            for (auto f : fields) header.emplace_back(f);
            if (header.front() != "timestamp") {
                fail_at(source, line_no, "first column must be 'timestamp'");
            }
            for (std::size_t i = 1; i < header.size(); ++i) {
                if (header[i].rfind("mask_", 0) != 0) {
                    data_fields.push_back(i);
                    table.columns.push_back(header[i]);
                }
            }
            if (table.columns.empty()) {
                fail_at(source, line_no, "no data columns");
            }
            for (std::size_t i = 1; i < header.size(); ++i) {
                if (header[i].rfind("mask_", 0) != 0) continue;
                const std::string suffix = header[i].substr(5);
                std::size_t target = table.columns.size();
                for (std::size_t c = 0; c < table.columns.size(); ++c) {
                    if (table.columns[c] == suffix) target = c;
                }
                if (target == table.columns.size()) {
                    std::size_t idx = 0;
                    auto [p, ec] = std::from_chars(suffix.data(), suffix.data() + suffix.size(), idx);
                    if (ec != std::errc{} || p != suffix.data() + suffix.size() || idx >= table.columns.size()) {
                        fail_at(source, line_no, "mask column '" + header[i] + "' matches no data column");
                    }
                    target = idx;
                }
                mask_fields.emplace_back(i, target);
            }
            table.values.resize(table.columns.size());
            continue;
        }

        if (fields.size() != header.size()) {
            fail_at(source, line_no,
                    "expected " + std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()));
        }
        std::int64_t ts = 0;
        try {
            ts = parse_timestamp(fields[0]);
        } catch (const ValidationError& e) {
            fail_at(source, line_no, e.what());
        }
        table.timestamps.push_back(ts);
        for (std::size_t c = 0; c < data_fields.size(); ++c) {
            const auto f = fields[data_fields[c]];
            double v = kNaN;
            if (!is_missing_token(f)) {
                const std::string s(f);
                char* end = nullptr;
                v = std::strtod(s.c_str(), &end);
                if (end == s.c_str() || *end != '\0' || !std::isfinite(v)) {
                    fail_at(source, line_no, "unparseable value '" + s + "' in column '" + table.columns[c] + "'");
                }
                if (v < 0.0 || v > 1.0) {
                    fail_at(source, line_no,
                            "value " + s + " in column '" + table.columns[c] + "' outside [0, 1] (row " +
                                std::to_string(table.timestamps.size()) + ")");
                }
            }
            table.values[c].push_back(v);
        }
        for (auto [field, col] : mask_fields) {
            const auto f = fields[field];
            if (f == "1") {
                table.values[col].back() = kNaN;
            } else if (f != "0" && !f.empty()) {
                fail_at(source, line_no, "mask entry must be 0 or 1, found '" + std::string(f) + "'");
            }
        }
        const std::size_t n = table.timestamps.size();
        if (n >= 2) {
            const std::int64_t diff = table.timestamps[n - 1] - table.timestamps[n - 2];
            if (diff == 0) fail_at(source, line_no, "duplicate timestamp " + std::string(fields[0]));
            if (diff < 0) fail_at(source, line_no, "timestamps not increasing at " + std::string(fields[0]));
            if (n == 2) {
                table.step = diff;
            } else if (diff != table.step) {
                fail_at(source, line_no, "non-uniform time grid at " + std::string(fields[0]));
            }
        }
    }
    if (header.empty()) {
        throw ValidationError(source + ": empty file");
    }
    return table;
}

SeriesTable load_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ValidationError("cannot open " + path.string());
    }
    return parse_csv(in, path.string());
}

void write_csv(std::ostream& out, const SeriesTable& table, std::span<const std::string> preamble) {
    write_preamble(out, preamble);
    out << "timestamp";
    for (const auto& c : table.columns) out << ',' << c;
    out << '\n';
    for (std::size_t r = 0; r < table.rows(); ++r) {
        out << format_timestamp(table.timestamps[r]);
        for (std::size_t c = 0; c < table.columns.size(); ++c) {
            out << ',';
            if (!table.is_missing(r, c)) out << format_value(table.values[c][r]);
        }
        out << '\n';
    }
}

void write_mask_csv(std::ostream& out, const SeriesTable& table, const missing::MaskMatrix& mask,
                    std::span<const std::string> preamble) {
    if (mask.rows() != table.rows() || mask.cols() != table.columns.size()) {
        throw ValidationError("write_mask_csv: mask shape does not match table");
    }
    write_preamble(out, preamble);
    out << "timestamp";
    for (const auto& c : table.columns) out << ",mask_" << c;
    out << '\n';
    for (std::size_t r = 0; r < table.rows(); ++r) {
        out << format_timestamp(table.timestamps[r]);
        for (std::size_t c = 0; c < mask.cols(); ++c) out << ',' << static_cast<int>(mask(r, c));
        out << '\n';
    }
}

SeriesTable apply_mask(const SeriesTable& table, const missing::MaskMatrix& mask) {
    if (mask.rows() != table.rows() || mask.cols() != table.columns.size()) {
        throw ValidationError("apply_mask: mask shape does not match table");
    }
    SeriesTable out = table;
    for (std::size_t r = 0; r < table.rows(); ++r) {
        for (std::size_t c = 0; c < mask.cols(); ++c) {
            if (mask(r, c)) out.values[c][r] = kNaN;
        }
    }
    return out;
}

std::vector<Window> make_windows(const SeriesTable& table, std::size_t feature_length, std::size_t lead,
                                 std::span<const std::size_t> sites, const dist::LogitTransform& logit) {
    if (feature_length == 0 || lead == 0) {
        throw ValidationError("make_windows: feature length and lead must be at least 1");
    }
    if (sites.empty()) {
        throw ValidationError("make_windows: no site columns given");
    }
    for (auto s : sites) {
        if (s >= table.columns.size()) throw ValidationError("make_windows: site column out of range");
    }
    const std::size_t n = table.rows();
    if (n < feature_length + lead) {
        throw ValidationError("make_windows: table has " + std::to_string(n) + " rows, need at least h + k = " +
                              std::to_string(feature_length + lead));
    }
    const std::size_t dim = sites.size() * feature_length + 1;
    std::vector<Window> out;
    out.reserve(n - feature_length - lead + 1);
    for (std::size_t t = feature_length - 1; t + lead < n; ++t) {
        Window w;
        w.values.reserve(dim);
        w.mask.reserve(dim);
        auto push = [&](std::size_t col, std::size_t row) {
            const double v = table.values[col][row];
            if (std::isfinite(v)) {
                w.values.push_back(logit.forward(v));
                w.mask.push_back(0);
            } else {
                w.values.push_back(kNaN);
                w.mask.push_back(1);
            }
        };
        for (auto s : sites) {
            for (std::size_t r = t + 1 - feature_length; r <= t; ++r) push(s, r);
        }
        push(sites[0], t + lead);
        w.origin = table.timestamps[t];
        w.origin_row = t;
        w.lead = lead;
        w.feature_length = feature_length;
        out.push_back(std::move(w));
    }
    return out;
}

Split chronological_split(std::vector<Window> windows, const SplitSpec& spec) {
    if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
        throw ValidationError("train fraction must lie in (0, 1)");
    }
    for (std::size_t i = 1; i < windows.size(); ++i) {
        if (windows[i].origin <= windows[i - 1].origin) {
            throw ValidationError("chronological_split: windows are not time-ordered");
        }
    }
    const auto cut = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(windows.size())));
    if (cut == 0 || cut >= windows.size()) {
        throw ValidationError("chronological_split: fraction " + format_value(spec.train_fraction) + " on " +
                              std::to_string(windows.size()) + " windows leaves an empty side");
    }
    Split s;
    s.train.assign(std::make_move_iterator(windows.begin()), std::make_move_iterator(windows.begin() + cut));
    s.test.assign(std::make_move_iterator(windows.begin() + cut), std::make_move_iterator(windows.end()));
    return s;
}

ad::Tensor stack_values(std::span<const Window> windows) {
    if (windows.empty()) return {};
    const std::size_t d = windows.front().dim();
    ad::Tensor out(windows.size(), d);
    for (std::size_t i = 0; i < windows.size(); ++i) {
        if (windows[i].dim() != d) throw ValidationError("stack_values: windows differ in dimension");
        std::copy(windows[i].values.begin(), windows[i].values.end(), out.row_span(i).begin());
    }
    return out;
}

missing::MaskMatrix stack_masks(std::span<const Window> windows) {
    if (windows.empty()) return {};
    const std::size_t d = windows.front().dim();
    missing::MaskMatrix out(windows.size(), d);
    for (std::size_t i = 0; i < windows.size(); ++i) {
        if (windows[i].mask.size() != d) throw ValidationError("stack_masks: windows differ in dimension");
        for (std::size_t j = 0; j < d; ++j) out(i, j) = windows[i].mask[j];
    }
    return out;
}

} // namespace gapcast::data
