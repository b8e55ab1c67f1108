#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "gapcast/bench.hpp"
#include "gapcast/data.hpp"
#include "gapcast/eval.hpp"
#include "gapcast/forecast.hpp"
#include "gapcast/genmodel.hpp"
#include "gapcast/missing.hpp"

namespace gapcast::experiment {

inline constexpr const char* kVersion = "0.1.0";

/// AR(2) in logit space, mapped to power with the logistic function.
/// Auxiliary sites share the target's innovations with correlation aux_corr.
struct SyntheticConfig {
    std::size_t rows = 5000;
    std::size_t aux_sites = 0;
    double phi1 = 1.5;
    double phi2 = -0.6;
    double sigma = 0.3;
    double mean = -0.5;
    double aux_corr = 0.8;
    std::string start = "2020-01-01T00:00:00";

    nlohmann::json to_json() const;
    static SyntheticConfig from_json(const nlohmann::json& j);
};

data::SeriesTable synthetic_ar2(const SyntheticConfig& cfg, std::uint64_t seed);

struct MarTermSpec {
    std::string column;
    double coefficient = 0.0;
};

struct RunConfig {
    std::string data_path;                   ///< CSV; empty selects the synthetic generator
    std::optional<SyntheticConfig> synthetic;
    std::vector<std::string> sites;          ///< target first; empty = first column only
    std::size_t feature_length = 24;
    std::size_t lead = 1;
    double train_fraction = 0.8;

    missing::Mechanism mechanism = missing::Mechanism::MCAR;
    double missing_rate = 0.2;
    double aux_missing_rate = -1.0;          ///< negative: same as missing_rate
    std::vector<MarTermSpec> mar_terms;

    genmodel::ModelConfig model;             ///< data_dim and seed are filled in per run
    genmodel::TrainConfig train;
    forecast::ForecastConfig forecast;

    std::string imputer = "mean";            ///< "mean" or "iterative" for QR-IM and Gaussian-IM
    bench::QrConfig qr;
    bench::GaussConfig gauss;

    std::uint64_t seed = 0;
    std::vector<std::uint64_t> seeds;        ///< sweep: averaged over these; empty = {seed}
    std::string output = "out";
    bool write_forecasts = true;             ///< sweep cycles skip per-sample files

    void validate() const;
    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::filesystem::path& path);
    /// FNV-1a of the canonical JSON form, as 16 hex digits.
    std::string hash() const;
    /// Copy with the per-component seeds derived from `seed`.
    RunConfig seeded() const;
};

/// "gapcast <version>", "config_hash <hash>", "command <name>"
std::vector<std::string> header_lines(const RunConfig& cfg, const std::string& command);

struct Dataset {
    data::SeriesTable truth;
    data::SeriesTable observed;
    missing::MaskMatrix simulated; ///< cells masked by the simulation only
    std::vector<std::size_t> sites;
};

/// Loads or generates the series and applies simulated missingness to the site
/// columns. Masks are nested across rates for a fixed seed.
Dataset prepare_dataset(const RunConfig& cfg);

struct WindowSets {
    data::Split observed;
    data::Split truth;
};

WindowSets make_window_sets(const RunConfig& cfg, const Dataset& ds);

/// Truth target value in power space for each window; NaN where unknown.
std::vector<double> observations(const Dataset& ds, std::span<const data::Window> windows);

struct ModelForecasts {
    std::string model;
    std::vector<forecast::ForecastEnsemble> ensembles;
    std::size_t dropped = 0;
};

using Progress = std::function<void(const std::string&)>;

genmodel::GenerativeModel make_model(const RunConfig& cfg, const WindowSets& ws);
genmodel::ModelData training_data(const WindowSets& ws);

ModelForecasts forecast_proposed(const RunConfig& cfg, const genmodel::GenerativeModel& model,
                                 std::span<const data::Window> test);

/// Baseline names: climatology, qr_im, gauss_im, reference.
inline const std::vector<std::string> kBaselines{"climatology", "qr_im", "gauss_im", "reference"};
ModelForecasts run_baseline(const RunConfig& cfg, const std::string& name, const WindowSets& ws);

/// Scores the cases whose truth is known.
eval::ScoreReport score_forecasts(const ModelForecasts& f, std::span<const double> truth);

struct CycleResult {
    std::vector<ModelForecasts> forecasts;
    std::vector<eval::ScoreReport> reports;
    std::vector<double> trace;
};

/// Train, forecast and score the proposed model, then any requested baselines.
/// Uses cfg as given; call seeded() first to spread the master seed.
CycleResult run_cycle(const RunConfig& cfg, const std::vector<std::string>& baselines, const Progress& progress = {});

// Writers. Every file starts with the header block.
void write_trace_csv(std::ostream& out, std::span<const double> trace, std::span<const std::string> header);
void write_forecast_csv(std::ostream& out, const ModelForecasts& f, std::span<const std::string> header);
void write_quantile_csv(std::ostream& out, const ModelForecasts& f, std::span<const double> levels,
                        std::span<const std::string> header);
/// First `origins` ensembles: 5%, 50% and 95% quantiles and the observation.
void write_band_csv(std::ostream& out, const ModelForecasts& f, std::span<const double> truth, std::size_t origins,
                    std::span<const std::string> header);
/// score_<model>.json, reliability_<model>.csv, sharpness_<model>.csv
void write_report_files(const std::filesystem::path& dir, const eval::ScoreReport& r, const RunConfig& cfg,
                        const std::string& command);
void write_summary_csv(std::ostream& out, std::span<const eval::ScoreReport> reports,
                       std::span<const std::string> header);

/// Reads `origin_timestamp,lead,sample_index,value` rows back into ensembles.
ModelForecasts read_forecast_csv(std::istream& in, const std::string& model, const std::string& source = "<stream>");

enum class SweepAxis { MissingRate, K, Lead, AuxMissingRate };
SweepAxis parse_axis(const std::string& name);
std::string axis_name(SweepAxis a);

struct SweepTable {
    std::vector<std::string> columns;          ///< after the row label
    std::vector<std::string> row_labels;
    std::vector<std::vector<double>> crps;     ///< percent, seed-averaged
};

/// One cycle per (value, seed). The lead axis also runs every baseline and
/// lays out rows = leads, columns = models; other axes give one CRPS row for
/// the proposed model with one column per value.
SweepTable run_sweep(const RunConfig& cfg, SweepAxis axis, std::span<const double> values,
                     const Progress& progress = {});
void write_sweep_csv(std::ostream& out, const SweepTable& t, SweepAxis axis, std::span<const std::string> header);

/// Overwrites `path` with the bytes produced by `fill`.
void write_file(const std::filesystem::path& path, const std::function<void(std::ostream&)>& fill);

} // namespace gapcast::experiment
