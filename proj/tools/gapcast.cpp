// gapcast: simulate, train, forecast, evaluate, benchmark and sweep from one
// JSON run configuration. Flags override the file.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include "gapcast/errors.hpp"
#include "gapcast/experiment.hpp"
#include "gapcast/runtime.hpp"

namespace fs = std::filesystem;
using namespace gapcast;
using experiment::RunConfig;

namespace {

constexpr std::size_t kBandOrigins = 168;

struct Overrides {
    std::string config;
    std::optional<std::string> out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> K, epochs, L, M, lead, feature_length;
    std::optional<double> rate, aux_rate, lr;
    bool quiet = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("-c,--config", o.config, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("-o,--out", o.out, "output directory");
    cmd->add_option("--seed", o.seed, "master seed");
    cmd->add_option("--rate", o.rate, "missing rate at the target site");
    cmd->add_option("--aux-rate", o.aux_rate, "missing rate at auxiliary sites");
    cmd->add_option("--lead", o.lead, "lead time k in steps");
    cmd->add_option("--feature-length", o.feature_length, "lags per site h");
    cmd->add_option("-K,--K", o.K, "importance samples in the bound");
    cmd->add_option("--epochs", o.epochs, "training epochs");
    cmd->add_option("--lr", o.lr, "learning rate");
    cmd->add_option("-L,--L", o.L, "forecast proposals");
    cmd->add_option("-M,--M", o.M, "forecast scenarios");
    cmd->add_flag("-q,--quiet", o.quiet, "no progress output");
}

RunConfig load_config(const Overrides& o) {
    RunConfig c = RunConfig::load(o.config);
    if (o.out) c.output = *o.out;
    if (o.seed) c.seed = *o.seed;
    if (o.rate) c.missing_rate = *o.rate;
    if (o.aux_rate) c.aux_missing_rate = *o.aux_rate;
    if (o.lead) c.lead = *o.lead;
    if (o.feature_length) c.feature_length = *o.feature_length;
    if (o.K) c.train.K = *o.K;
    if (o.epochs) c.train.epochs = *o.epochs;
    if (o.lr) c.train.learning_rate = *o.lr;
    if (o.L) c.forecast.L = *o.L;
    if (o.M) c.forecast.M = *o.M;
    c.validate();
    return c.seeded();
}

experiment::Progress progress(const Overrides& o) {
    if (o.quiet) return {};
    return [](const std::string& s) { std::cerr << s << '\n'; };
}

nlohmann::json window_header(const RunConfig& c, const experiment::Dataset& ds) {
    std::vector<std::string> sites;
    for (auto s : ds.sites) sites.push_back(ds.truth.columns[s]);
    return {{"feature_length", c.feature_length}, {"lead", c.lead}, {"sites", sites}};
}

int cmd_simulate(const Overrides& o) {
    const RunConfig c = load_config(o);
    const auto ds = experiment::prepare_dataset(c);
    const fs::path dir = c.output;
    const auto header = experiment::header_lines(c, "simulate");
    if (c.data_path.empty()) {
        experiment::write_file(dir / "complete.csv", [&](std::ostream& out) { data::write_csv(out, ds.truth, header); });
    }
    experiment::write_file(dir / "masked.csv", [&](std::ostream& out) { data::write_csv(out, ds.observed, header); });
    experiment::write_file(dir / "mask.csv",
                           [&](std::ostream& out) { data::write_mask_csv(out, ds.observed, ds.observed.mask(), header); });
    std::size_t cells = 0, missing = 0;
    for (auto s : ds.sites) {
        for (std::size_t r = 0; r < ds.simulated.rows(); ++r) {
            ++cells;
            missing += ds.simulated(r, s);
        }
    }
    std::printf("realized missing rate %.4f (%zu of %zu site cells)\n",
                cells ? static_cast<double>(missing) / static_cast<double>(cells) : 0.0, missing, cells);
    return 0;
}

int cmd_train(const Overrides& o, const std::string& resume) {
    const RunConfig c = load_config(o);
    const auto say = progress(o);
    const auto ds = experiment::prepare_dataset(c);
    const auto ws = experiment::make_window_sets(c, ds);
    const auto train_data = experiment::training_data(ws);

    genmodel::GenerativeModel model;
    genmodel::TrainingState state;
    if (resume.empty()) {
        model = experiment::make_model(c, ws);
        state = genmodel::start_training(model, c.train);
    } else {
        std::tie(model, state) = genmodel::restore_training(nn::load_checkpoint(resume), c.train);
        if (model.data_dim() != train_data.cols()) {
            throw ValidationError("checkpoint model has " + std::to_string(model.data_dim()) +
                                  " coordinates, configuration gives " + std::to_string(train_data.cols()));
        }
    }
    const fs::path dir = c.output;
    auto save = [&](const fs::path& path) {
        auto ckpt = genmodel::training_checkpoint(model, state, c.train);
        ckpt.header["window"] = window_header(c, ds);
        ckpt.header["config_hash"] = c.hash();
        fs::create_directories(dir);
        nn::save_checkpoint(path, ckpt);
    };
    try {
        while (state.epoch < c.train.epochs) {
            const double bound = genmodel::train_epoch(model, state, train_data, c.train);
            if (say && (state.epoch % 10 == 0 || state.epoch == c.train.epochs)) {
                say("epoch " + std::to_string(state.epoch) + " bound " + std::to_string(bound));
            }
        }
    } catch (const NumericalError&) {
        save(dir / "model_last_finite.ckpt");
        throw;
    }
    save(dir / "model.ckpt");
    experiment::write_file(dir / "trace.csv", [&](std::ostream& out) {
        experiment::write_trace_csv(out, state.trace, experiment::header_lines(c, "train"));
    });
    std::printf("trained %zu epochs, final bound %.6f nats per window\n", state.epoch,
                state.trace.empty() ? 0.0 : state.trace.back());
    return 0;
}

int cmd_forecast(const Overrides& o, std::string checkpoint) {
    const RunConfig c = load_config(o);
    const fs::path dir = c.output;
    if (checkpoint.empty()) checkpoint = (dir / "model.ckpt").string();
    const auto ckpt = nn::load_checkpoint(checkpoint);
    const auto ds = experiment::prepare_dataset(c);
    if (ckpt.header.contains("window")) {
        const auto expected = window_header(c, ds);
        if (ckpt.header["window"] != expected) {
            throw ValidationError("checkpoint was trained with window " + ckpt.header["window"].dump() +
                                  ", configuration gives " + expected.dump());
        }
    }
    const auto model = genmodel::GenerativeModel::from_checkpoint(ckpt);
    const auto ws = experiment::make_window_sets(c, ds);
    if (model.data_dim() != ws.observed.test.front().dim()) {
        throw ValidationError("checkpoint model dimension does not match the configured windows");
    }
    const auto f = experiment::forecast_proposed(c, model, ws.observed.test);
    const auto truth = experiment::observations(ds, ws.observed.test);
    const auto header = experiment::header_lines(c, "forecast");
    const auto taus = eval::default_taus();
    experiment::write_file(dir / "forecasts_proposed.csv",
                           [&](std::ostream& out) { experiment::write_forecast_csv(out, f, header); });
    experiment::write_file(dir / "quantiles_proposed.csv",
                           [&](std::ostream& out) { experiment::write_quantile_csv(out, f, taus, header); });
    experiment::write_file(dir / "band_90.csv",
                           [&](std::ostream& out) { experiment::write_band_csv(out, f, truth, kBandOrigins, header); });
    if (f.dropped > 0) std::fprintf(stderr, "warning: %zu proposals dropped for non-finite weights\n", f.dropped);
    std::printf("forecast %zu origins x %zu scenarios\n", f.ensembles.size(), c.forecast.M);
    return 0;
}

std::string model_name_from(const fs::path& p) {
    std::string stem = p.stem().string();
    const std::string prefix = "forecasts_";
    return stem.rfind(prefix, 0) == 0 ? stem.substr(prefix.size()) : stem;
}

int cmd_evaluate(const std::vector<std::string>& files, const std::string& truth_path, std::string column,
                 const std::string& out_dir, const std::string& config) {
    RunConfig c;
    if (!config.empty()) c = RunConfig::load(config);
    const auto truth = data::load_csv(truth_path);
    const std::size_t col = column.empty() ? 0 : truth.column_index(column);
    std::map<std::int64_t, std::size_t> row_of;
    for (std::size_t r = 0; r < truth.rows(); ++r) row_of[truth.timestamps[r]] = r;

    std::vector<eval::ScoreReport> reports;
    for (const auto& file : files) {
        std::ifstream in(file);
        if (!in) throw ValidationError("cannot open " + file);
        const auto f = experiment::read_forecast_csv(in, model_name_from(file), file);
        std::vector<double> obs;
        std::vector<std::string> unmatched;
        for (const auto& e : f.ensembles) {
            const auto it = row_of.find(e.origin + static_cast<std::int64_t>(e.lead) * truth.step);
            if (it == row_of.end()) {
                if (unmatched.size() < 5) unmatched.push_back(data::format_timestamp(e.origin));
                obs.push_back(std::nan(""));
            } else {
                obs.push_back(truth.values[col][it->second]);
            }
        }
        if (!unmatched.empty()) {
            std::string list;
            for (const auto& u : unmatched) list += " " + u;
            throw ValidationError(file + ": no truth for the target time of origins" + list);
        }
        reports.push_back(experiment::score_forecasts(f, obs));
        experiment::write_report_files(out_dir, reports.back(), c, "evaluate");
        std::printf("%-12s CRPS %.4f (x100) over %zu cases\n", reports.back().model.c_str(),
                    reports.back().crps_percent(), reports.back().count);
    }
    experiment::write_file(fs::path(out_dir) / "summary.csv", [&](std::ostream& out) {
        experiment::write_summary_csv(out, reports, experiment::header_lines(c, "evaluate"));
    });
    return 0;
}

int cmd_benchmark(const Overrides& o, std::vector<std::string> models) {
    const RunConfig c = load_config(o);
    if (models.empty()) models = experiment::kBaselines;
    const auto say = progress(o);
    const auto ds = experiment::prepare_dataset(c);
    const auto ws = experiment::make_window_sets(c, ds);
    const auto truth = experiment::observations(ds, ws.observed.test);
    const fs::path dir = c.output;
    const auto header = experiment::header_lines(c, "benchmark");
    std::vector<eval::ScoreReport> reports;
    for (const auto& m : models) {
        if (say) say("baseline " + m);
        const auto f = experiment::run_baseline(c, m, ws);
        if (c.write_forecasts) {
            experiment::write_file(dir / ("forecasts_" + m + ".csv"),
                                   [&](std::ostream& out) { experiment::write_forecast_csv(out, f, header); });
        }
        reports.push_back(experiment::score_forecasts(f, truth));
        experiment::write_report_files(dir, reports.back(), c, "benchmark");
        std::printf("%-12s CRPS %.4f (x100)\n", m.c_str(), reports.back().crps_percent());
    }
    experiment::write_file(dir / "benchmark_summary.csv",
                           [&](std::ostream& out) { experiment::write_summary_csv(out, reports, header); });
    return 0;
}

int cmd_sweep(const Overrides& o, const std::string& axis_name, const std::vector<double>& values) {
    const RunConfig c = load_config(o);
    const auto axis = experiment::parse_axis(axis_name);
    const auto table = experiment::run_sweep(c, axis, values, progress(o));
    const fs::path path = fs::path(c.output) / ("sweep_" + axis_name + ".csv");
    experiment::write_file(path, [&](std::ostream& out) {
        experiment::write_sweep_csv(out, table, axis, experiment::header_lines(c, "sweep " + axis_name));
    });
    std::printf("wrote %s\n", path.string().c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    configure_allocator();
    CLI::App app{"Probabilistic forecasting under missing data with a flow-posterior VAE"};
    app.set_version_flag("--version", std::string("gapcast ") + experiment::kVersion);
    app.require_subcommand(1);

    Overrides o;
    std::string resume, checkpoint, truth, column, eval_out = "out", eval_config, axis;
    std::vector<std::string> files, models;
    std::vector<double> values;

    auto* simulate = app.add_subcommand("simulate", "apply simulated missingness and write masked data");
    add_common(simulate, o);
    auto* train = app.add_subcommand("train", "fit the generative model");
    add_common(train, o);
    train->add_option("--resume", resume, "continue from a training checkpoint")->check(CLI::ExistingFile);
    auto* fc = app.add_subcommand("forecast", "sample forecast ensembles for the test split");
    add_common(fc, o);
    fc->add_option("--checkpoint", checkpoint, "model checkpoint (default <out>/model.ckpt)");
    auto* evaluate = app.add_subcommand("evaluate", "score forecast files against observed data");
    evaluate->add_option("-f,--forecasts", files, "forecasts_<model>.csv files")->required();
    evaluate->add_option("-t,--truth", truth, "CSV with observed values")->required()->check(CLI::ExistingFile);
    evaluate->add_option("--column", column, "target column (default: first)");
    evaluate->add_option("-o,--out", eval_out, "output directory");
    evaluate->add_option("-c,--config", eval_config, "configuration used for the header hash");
    auto* benchmark = app.add_subcommand("benchmark", "run baseline forecasters");
    add_common(benchmark, o);
    benchmark->add_option("--models", models, "subset of: climatology qr_im gauss_im reference");
    auto* sweep = app.add_subcommand("sweep", "train/forecast/evaluate across one axis");
    add_common(sweep, o);
    sweep->add_option("--axis", axis, "missing_rate, K, lead or aux_missing_rate")->required();
    sweep->add_option("--values", values, "axis values")->required()->delimiter(',');

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*simulate) return cmd_simulate(o);
        if (*train) return cmd_train(o, resume);
        if (*fc) return cmd_forecast(o, checkpoint);
        if (*evaluate) return cmd_evaluate(files, truth, column, eval_out, eval_config);
        if (*benchmark) return cmd_benchmark(o, models);
        if (*sweep) return cmd_sweep(o, axis, values);
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
