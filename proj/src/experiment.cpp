#include "gapcast/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "gapcast/errors.hpp"

namespace gapcast::experiment {

namespace {

enum SeedTag : std::uint64_t {
    kSynthetic = 101,
    kMissing = 102,
    kModel = 103,
    kTrain = 104,
    kForecast = 105,
    kGauss = 106,
    kClimatology = 107,
    kGaussSample = 108,
};

std::string fmt(double v, const char* spec = "%.9g") {
    char buf[48];
    std::snprintf(buf, sizeof(buf), spec, v);
    return buf;
}

void write_header(std::ostream& out, std::span<const std::string> header) {
    for (const auto& h : header) out << "# " << h << '\n';
}

template <typename T>
void read_optional(const nlohmann::json& j, const char* key, T& target) {
    if (j.contains(key) && !j.at(key).is_null()) target = j.at(key).get<T>();
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw ValidationError("config: unknown key '" + key + "' in " + where);
    }
}

std::string scheme_name(forecast::Resampling s) {
    return s == forecast::Resampling::Multinomial ? "multinomial" : "systematic";
}

forecast::Resampling parse_scheme(const std::string& s) {
    if (s == "multinomial") return forecast::Resampling::Multinomial;
    if (s == "systematic") return forecast::Resampling::Systematic;
    throw ValidationError("config: unknown resampling scheme '" + s + "'");
}

bench::ImputerKind imputer_kind(const std::string& s) {
    if (s == "mean") return bench::ImputerKind::Mean;
    if (s == "iterative") return bench::ImputerKind::IterativeLinear;
    throw ValidationError("config: unknown imputer '" + s + "' (expected mean or iterative)");
}

std::vector<double> to_power(std::vector<double> v) {
    const dist::LogitTransform logit;
    for (double& x : v) x = logit.inverse(x);
    return v;
}

missing::MaskMatrix mcar_columns(const RunConfig& cfg, std::size_t rows, std::size_t cols, double rate) {
    missing::MissingnessConfig mc;
    mc.rate = rate;
    Rng rng = make_rng(cfg.seed, {kMissing});
    return missing::gen_mask_mcar(mc, rows, cols, rng);
}

} // namespace

nlohmann::json SyntheticConfig::to_json() const {
    return {{"rows", rows},   {"aux_sites", aux_sites}, {"phi1", phi1},         {"phi2", phi2},
            {"sigma", sigma}, {"mean", mean},           {"aux_corr", aux_corr}, {"start", start}};
}

SyntheticConfig SyntheticConfig::from_json(const nlohmann::json& j) {
    reject_unknown(j, {"rows", "aux_sites", "phi1", "phi2", "sigma", "mean", "aux_corr", "start"}, "synthetic");
    SyntheticConfig c;
    read_optional(j, "rows", c.rows);
    read_optional(j, "aux_sites", c.aux_sites);
    read_optional(j, "phi1", c.phi1);
    read_optional(j, "phi2", c.phi2);
    read_optional(j, "sigma", c.sigma);
    read_optional(j, "mean", c.mean);
    read_optional(j, "aux_corr", c.aux_corr);
    read_optional(j, "start", c.start);
    return c;
}

data::SeriesTable synthetic_ar2(const SyntheticConfig& cfg, std::uint64_t seed) {
    if (cfg.rows == 0) throw ValidationError("synthetic: rows must be positive");
    if (!(cfg.sigma > 0.0)) throw ValidationError("synthetic: sigma must be positive");
    if (!(std::abs(cfg.aux_corr) <= 1.0)) throw ValidationError("synthetic: aux_corr must lie in [-1, 1]");
    constexpr std::size_t kBurnIn = 500;
    const std::size_t sites = 1 + cfg.aux_sites;
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> prev1(sites, cfg.mean), prev2(sites, cfg.mean);

    data::SeriesTable t;
    t.step = 3600;
    t.columns.push_back("site0");
    for (std::size_t s = 1; s < sites; ++s) t.columns.push_back("aux" + std::to_string(s));
    t.values.assign(sites, {});
    const std::int64_t start = data::parse_timestamp(cfg.start);
    const double idio = std::sqrt(1.0 - cfg.aux_corr * cfg.aux_corr);
    for (std::size_t i = 0; i < kBurnIn + cfg.rows; ++i) {
        const double common = normal(rng);
        for (std::size_t s = 0; s < sites; ++s) {
            const double eps = s == 0 ? common : cfg.aux_corr * common + idio * normal(rng);
            const double x = cfg.mean + cfg.phi1 * (prev1[s] - cfg.mean) + cfg.phi2 * (prev2[s] - cfg.mean) +
                             cfg.sigma * eps;
            prev2[s] = prev1[s];
            prev1[s] = x;
            if (i >= kBurnIn) t.values[s].push_back(1.0 / (1.0 + std::exp(-x)));
        }
        if (i >= kBurnIn) t.timestamps.push_back(start + static_cast<std::int64_t>(i - kBurnIn) * t.step);
    }
    return t;
}

void RunConfig::validate() const {
    if (data_path.empty() && !synthetic) throw ValidationError("config: give either 'data' or 'synthetic'");
    if (feature_length == 0) throw ValidationError("config: feature_length must be at least 1");
    if (lead == 0) throw ValidationError("config: lead must be at least 1");
    if (!(missing_rate >= 0.0 && missing_rate <= 1.0)) throw ValidationError("config: missing rate must lie in [0, 1]");
    if (aux_missing_rate > 1.0) throw ValidationError("config: aux missing rate must lie in [0, 1]");
    if (forecast.L == 0 || forecast.M == 0) throw ValidationError("config: L and M must be at least 1");
    imputer_kind(imputer);
    train.validate();
}

nlohmann::json RunConfig::to_json() const {
    nlohmann::json j;
    if (!data_path.empty()) j["data"] = data_path;
    if (synthetic) j["synthetic"] = synthetic->to_json();
    j["sites"] = sites;
    j["feature_length"] = feature_length;
    j["lead"] = lead;
    j["train_fraction"] = train_fraction;
    nlohmann::json terms = nlohmann::json::array();
    for (const auto& t : mar_terms) terms.push_back({{"column", t.column}, {"coefficient", t.coefficient}});
    j["missing"] = {{"mechanism", std::string(missing::mechanism_name(mechanism))},
                    {"rate", missing_rate},
                    {"aux_rate", aux_missing_rate},
                    {"mar_terms", terms}};
    auto m = model.to_json();
    m.erase("data_dim");
    m.erase("seed");
    j["model"] = m;
    auto tr = train.to_json();
    tr.erase("seed");
    j["train"] = tr;
    j["forecast"] = {{"L", forecast.L}, {"M", forecast.M}, {"resampling", scheme_name(forecast.scheme)}};
    j["baselines"] = {{"imputer", imputer},
                      {"qr", {{"iterations", qr.iterations}, {"learning_rate", qr.learning_rate}}},
                      {"gauss",
                       {{"hidden", gauss.hidden},
                        {"epochs", gauss.epochs},
                        {"batch_size", gauss.batch_size},
                        {"learning_rate", gauss.learning_rate}}}};
    j["seed"] = seed;
    j["seeds"] = seeds;
    j["output"] = output;
    j["write_forecasts"] = write_forecasts;
    return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    RunConfig c;
    try {
        reject_unknown(j,
                       {"data", "synthetic", "sites", "feature_length", "lead", "train_fraction", "missing", "model",
                        "train", "forecast", "baselines", "seed", "seeds", "output", "write_forecasts"},
                       "top level");
        read_optional(j, "data", c.data_path);
        if (j.contains("synthetic")) c.synthetic = SyntheticConfig::from_json(j["synthetic"]);
        read_optional(j, "sites", c.sites);
        read_optional(j, "feature_length", c.feature_length);
        read_optional(j, "lead", c.lead);
        read_optional(j, "train_fraction", c.train_fraction);
        if (j.contains("missing")) {
            const auto& m = j["missing"];
            reject_unknown(m, {"mechanism", "rate", "aux_rate", "mar_terms"}, "missing");
            if (m.contains("mechanism")) c.mechanism = missing::parse_mechanism(m["mechanism"].get<std::string>());
            read_optional(m, "rate", c.missing_rate);
            read_optional(m, "aux_rate", c.aux_missing_rate);
            if (m.contains("mar_terms")) {
                for (const auto& t : m["mar_terms"]) {
                    c.mar_terms.push_back({t.at("column").get<std::string>(), t.at("coefficient").get<double>()});
                }
            }
        }
        if (j.contains("model")) {
            reject_unknown(j["model"], {"latent_dim", "hidden", "flow_count", "flow_hidden", "encoder_uses_mask"},
                           "model");
            c.model = genmodel::ModelConfig::from_json(j["model"]);
        }
        if (j.contains("train")) {
            reject_unknown(j["train"], {"K", "epochs", "batch_size", "learning_rate", "clip_norm"}, "train");
            c.train = genmodel::TrainConfig::from_json(j["train"]);
        }
        if (j.contains("forecast")) {
            const auto& f = j["forecast"];
            reject_unknown(f, {"L", "M", "resampling"}, "forecast");
            read_optional(f, "L", c.forecast.L);
            read_optional(f, "M", c.forecast.M);
            if (f.contains("resampling")) c.forecast.scheme = parse_scheme(f["resampling"].get<std::string>());
        }
        if (j.contains("baselines")) {
            const auto& b = j["baselines"];
            reject_unknown(b, {"imputer", "qr", "gauss"}, "baselines");
            read_optional(b, "imputer", c.imputer);
            if (b.contains("qr")) {
                reject_unknown(b["qr"], {"iterations", "learning_rate"}, "baselines.qr");
                read_optional(b["qr"], "iterations", c.qr.iterations);
                read_optional(b["qr"], "learning_rate", c.qr.learning_rate);
            }
            if (b.contains("gauss")) {
                reject_unknown(b["gauss"], {"hidden", "epochs", "batch_size", "learning_rate"}, "baselines.gauss");
                read_optional(b["gauss"], "hidden", c.gauss.hidden);
                read_optional(b["gauss"], "epochs", c.gauss.epochs);
                read_optional(b["gauss"], "batch_size", c.gauss.batch_size);
                read_optional(b["gauss"], "learning_rate", c.gauss.learning_rate);
            }
        }
        read_optional(j, "seed", c.seed);
        read_optional(j, "seeds", c.seeds);
        read_optional(j, "output", c.output);
        read_optional(j, "write_forecasts", c.write_forecasts);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in, nullptr, true, true);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError("config " + path.string() + ": " + e.what());
    }
    return from_json(j);
}

std::string RunConfig::hash() const {
    // The output location does not change results, so it is left out.
    auto j = to_json();
    j.erase("output");
    const std::string text = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

RunConfig RunConfig::seeded() const {
    RunConfig c = *this;
    c.model.seed = derive_seed(seed, {kModel});
    c.train.seed = derive_seed(seed, {kTrain});
    c.forecast.seed = derive_seed(seed, {kForecast});
    c.gauss.seed = derive_seed(seed, {kGauss});
    return c;
}

std::vector<std::string> header_lines(const RunConfig& cfg, const std::string& command) {
    return {std::string("gapcast ") + kVersion, "config_hash " + cfg.hash(), "command " + command};
}

Dataset prepare_dataset(const RunConfig& cfg) {
    cfg.validate();
    Dataset ds;
    ds.truth = cfg.data_path.empty() ? synthetic_ar2(*cfg.synthetic, derive_seed(cfg.seed, {kSynthetic}))
                                     : data::load_csv(cfg.data_path);
    if (cfg.sites.empty()) {
        ds.sites = {0};
    } else {
        for (const auto& s : cfg.sites) ds.sites.push_back(ds.truth.column_index(s));
    }
    const std::size_t rows = ds.truth.rows();
    const std::size_t cols = ds.truth.columns.size();
    const double aux_rate = cfg.aux_missing_rate < 0.0 ? cfg.missing_rate : cfg.aux_missing_rate;

    missing::MaskMatrix target_mask, aux_mask;
    if (cfg.mechanism == missing::Mechanism::MCAR) {
        target_mask = mcar_columns(cfg, rows, cols, cfg.missing_rate);
        aux_mask = mcar_columns(cfg, rows, cols, aux_rate);
    } else {
        missing::MissingnessConfig mc;
        mc.mechanism = missing::Mechanism::MAR;
        for (const auto& t : cfg.mar_terms) mc.mar_terms.push_back({ds.truth.column_index(t.column), t.coefficient});
        for (const auto& t : mc.mar_terms) {
            for (auto s : ds.sites) {
                if (s == t.column) throw ValidationError("MAR covariate '" + ds.truth.columns[s] + "' cannot be a site");
            }
        }
        mc.rate = cfg.missing_rate;
        Rng r1 = make_rng(cfg.seed, {kMissing});
        target_mask = missing::gen_mask_mar(mc, ds.truth.values, r1);
        mc.rate = aux_rate;
        Rng r2 = make_rng(cfg.seed, {kMissing});
        aux_mask = missing::gen_mask_mar(mc, ds.truth.values, r2);
    }
    ds.simulated = missing::MaskMatrix(rows, cols);
    for (std::size_t i = 0; i < ds.sites.size(); ++i) {
        const auto& src = i == 0 ? target_mask : aux_mask;
        for (std::size_t r = 0; r < rows; ++r) ds.simulated(r, ds.sites[i]) = src(r, ds.sites[i]);
    }
    ds.observed = data::apply_mask(ds.truth, ds.simulated);
    return ds;
}

WindowSets make_window_sets(const RunConfig& cfg, const Dataset& ds) {
    data::SplitSpec spec{cfg.train_fraction};
    WindowSets ws;
    ws.observed = data::chronological_split(data::make_windows(ds.observed, cfg.feature_length, cfg.lead, ds.sites), spec);
    ws.truth = data::chronological_split(data::make_windows(ds.truth, cfg.feature_length, cfg.lead, ds.sites), spec);
    return ws;
}

std::vector<double> observations(const Dataset& ds, std::span<const data::Window> windows) {
    std::vector<double> out;
    out.reserve(windows.size());
    for (const auto& w : windows) out.push_back(ds.truth.values[ds.sites[0]][w.origin_row + w.lead]);
    return out;
}

genmodel::GenerativeModel make_model(const RunConfig& cfg, const WindowSets& ws) {
    genmodel::ModelConfig m = cfg.model;
    m.data_dim = ws.observed.train.front().dim();
    return genmodel::GenerativeModel(m);
}

genmodel::ModelData training_data(const WindowSets& ws) { return genmodel::make_model_data(ws.observed.train); }

ModelForecasts forecast_proposed(const RunConfig& cfg, const genmodel::GenerativeModel& model,
                                 std::span<const data::Window> test) {
    ModelForecasts out;
    out.model = "proposed";
    out.ensembles.reserve(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) {
        auto f = forecast::forecast_window(model, test[i], cfg.forecast, i);
        out.dropped += f.dropped;
        out.ensembles.push_back(std::move(f.ensemble));
    }
    return out;
}

ModelForecasts run_baseline(const RunConfig& cfg, const std::string& name, const WindowSets& ws) {
    const auto& train = ws.observed.train;
    const auto& test = ws.observed.test;
    ModelForecasts out;
    out.model = name;
    const std::size_t M = cfg.forecast.M;
    auto emit = [&](std::size_t i, std::vector<double> samples) {
        out.ensembles.push_back({std::move(samples), test[i].origin, test[i].lead});
    };

    if (name == "climatology") {
        std::vector<double> history;
        for (const auto& w : train) {
            if (!w.target_missing()) history.push_back(dist::LogitTransform{}.inverse(w.values.back()));
        }
        Rng rng = make_rng(cfg.seed, {kClimatology});
        const auto ensemble = bench::climatology_ensemble(history, M, rng);
        for (std::size_t i = 0; i < test.size(); ++i) emit(i, ensemble);
        return out;
    }
    if (name == "reference") {
        auto qr = bench::reference_model(ws.truth.train, cfg.qr);
        auto rd = bench::regression_data(ws.truth.test, false);
        for (std::size_t i = 0; i < test.size(); ++i) {
            emit(i, to_power(bench::sample_from_quantiles(qr.taus(), qr.predict(rd.features.row_span(i)), M)));
        }
        return out;
    }
    if (name != "qr_im" && name != "gauss_im") throw ValidationError("unknown baseline '" + name + "'");

    auto rd_train = bench::regression_data(train, true);
    if (rd_train.targets.empty()) throw ValidationError(name + ": no training window has an observed target");
    bench::Imputer imputer(imputer_kind(cfg.imputer));
    const ad::Tensor x_train = imputer.fit_transform(rd_train.features);
    const ad::Tensor x_test = imputer.transform(bench::regression_data(test, false).features);
    if (name == "qr_im") {
        bench::QuantileRegressor qr;
        qr.fit(x_train, rd_train.targets, cfg.qr);
        for (std::size_t i = 0; i < test.size(); ++i) {
            emit(i, to_power(bench::sample_from_quantiles(qr.taus(), qr.predict(x_test.row_span(i)), M)));
        }
    } else {
        bench::GaussianRegressor g;
        g.fit(x_train, rd_train.targets, cfg.gauss);
        for (std::size_t i = 0; i < test.size(); ++i) {
            Rng rng = make_rng(cfg.seed, {kGaussSample, i});
            emit(i, to_power(g.sample(x_test.row_span(i), M, rng)));
        }
    }
    return out;
}

eval::ScoreReport score_forecasts(const ModelForecasts& f, std::span<const double> truth) {
    if (f.ensembles.size() != truth.size()) {
        throw ValidationError("score: " + std::to_string(f.ensembles.size()) + " forecasts vs " +
                              std::to_string(truth.size()) + " observations");
    }
    std::vector<std::vector<double>> ens;
    std::vector<double> obs;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (std::isfinite(truth[i])) {
            ens.push_back(f.ensembles[i].samples);
            obs.push_back(truth[i]);
        }
    }
    return eval::score(f.model, ens, obs);
}

CycleResult run_cycle(const RunConfig& cfg, const std::vector<std::string>& baselines, const Progress& progress) {
    auto say = [&](const std::string& s) {
        if (progress) progress(s);
    };
    const Dataset ds = prepare_dataset(cfg);
    const WindowSets ws = make_window_sets(cfg, ds);
    const auto truth = observations(ds, ws.observed.test);

    CycleResult res;
    auto model = make_model(cfg, ws);
    const auto train_data = training_data(ws);
    say("training on " + std::to_string(train_data.rows()) + " windows, d = " + std::to_string(model.data_dim()));
    res.trace = genmodel::train(model, train_data, cfg.train, [&](std::size_t epoch, double bound) {
        if ((epoch + 1) % 10 == 0 || epoch + 1 == cfg.train.epochs) {
            say("epoch " + std::to_string(epoch + 1) + " bound " + fmt(bound, "%.4f"));
        }
    });
    res.forecasts.push_back(forecast_proposed(cfg, model, ws.observed.test));
    for (const auto& b : baselines) {
        say("baseline " + b);
        res.forecasts.push_back(run_baseline(cfg, b, ws));
    }
    for (const auto& f : res.forecasts) res.reports.push_back(score_forecasts(f, truth));
    return res;
}

void write_trace_csv(std::ostream& out, std::span<const double> trace, std::span<const std::string> header) {
    write_header(out, header);
    out << "epoch,bound\n";
    for (std::size_t e = 0; e < trace.size(); ++e) out << e << ',' << fmt(trace[e], "%.10g") << '\n';
}

void write_forecast_csv(std::ostream& out, const ModelForecasts& f, std::span<const std::string> header) {
    write_header(out, header);
    out << "origin_timestamp,lead,sample_index,value\n";
    for (const auto& e : f.ensembles) {
        const std::string ts = data::format_timestamp(e.origin);
        for (std::size_t m = 0; m < e.samples.size(); ++m) {
            out << ts << ',' << e.lead << ',' << m << ',' << fmt(e.samples[m]) << '\n';
        }
    }
}

void write_quantile_csv(std::ostream& out, const ModelForecasts& f, std::span<const double> levels,
                        std::span<const std::string> header) {
    write_header(out, header);
    out << "origin_timestamp,lead,level,value\n";
    for (const auto& e : f.ensembles) {
        const std::string ts = data::format_timestamp(e.origin);
        const auto q = forecast::ensemble_to_quantiles(e.samples, levels);
        for (std::size_t l = 0; l < levels.size(); ++l) {
            out << ts << ',' << e.lead << ',' << fmt(levels[l], "%g") << ',' << fmt(q[l]) << '\n';
        }
    }
}

void write_band_csv(std::ostream& out, const ModelForecasts& f, std::span<const double> truth, std::size_t origins,
                    std::span<const std::string> header) {
    write_header(out, header);
    out << "origin_timestamp,lead,lower_05,median,upper_95,observed\n";
    const double levels[] = {0.05, 0.5, 0.95};
    for (std::size_t i = 0; i < std::min(origins, f.ensembles.size()); ++i) {
        const auto& e = f.ensembles[i];
        const auto q = forecast::ensemble_to_quantiles(e.samples, levels);
        out << data::format_timestamp(e.origin) << ',' << e.lead << ',' << fmt(q[0]) << ',' << fmt(q[1]) << ','
            << fmt(q[2]) << ',';
        if (i < truth.size() && std::isfinite(truth[i])) out << fmt(truth[i]);
        out << '\n';
    }
}

void write_report_files(const std::filesystem::path& dir, const eval::ScoreReport& r, const RunConfig& cfg,
                        const std::string& command) {
    const auto header = header_lines(cfg, command);
    nlohmann::json j = r.to_json();
    j["meta"] = {{"version", kVersion}, {"config_hash", cfg.hash()}, {"command", command}};
    write_file(dir / ("score_" + r.model + ".json"), [&](std::ostream& o) { o << j.dump(2) << '\n'; });
    write_file(dir / ("reliability_" + r.model + ".csv"),
               [&](std::ostream& o) { eval::write_reliability_csv(o, r, header); });
    write_file(dir / ("sharpness_" + r.model + ".csv"), [&](std::ostream& o) { eval::write_sharpness_csv(o, r, header); });
}

void write_summary_csv(std::ostream& out, std::span<const eval::ScoreReport> reports,
                       std::span<const std::string> header) {
    write_header(out, header);
    out << "model,count,crps,crps_percent\n";
    for (const auto& r : reports) {
        out << r.model << ',' << r.count << ',' << fmt(r.crps) << ',' << fmt(r.crps_percent(), "%.6f") << '\n';
    }
}

ModelForecasts read_forecast_csv(std::istream& in, const std::string& model, const std::string& source) {
    ModelForecasts f;
    f.model = model;
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        if (!header_seen) {
            if (line != "origin_timestamp,lead,sample_index,value") {
                throw ValidationError(source + ":" + std::to_string(line_no) + ": unexpected forecast header");
            }
            header_seen = true;
            continue;
        }
        std::stringstream ss(line);
        std::string ts, lead, idx, val;
        if (!std::getline(ss, ts, ',') || !std::getline(ss, lead, ',') || !std::getline(ss, idx, ',') ||
            !std::getline(ss, val)) {
            throw ValidationError(source + ":" + std::to_string(line_no) + ": expected 4 fields");
        }
        try {
            const std::int64_t origin = data::parse_timestamp(ts);
            const std::size_t k = std::stoul(lead);
            const std::size_t m = std::stoul(idx);
            const double v = std::stod(val);
            if (m == 0) f.ensembles.push_back({{}, origin, k});
            if (f.ensembles.empty() || f.ensembles.back().origin != origin || f.ensembles.back().lead != k ||
                f.ensembles.back().samples.size() != m) {
                throw ValidationError("sample_index out of sequence");
            }
            f.ensembles.back().samples.push_back(v);
        } catch (const std::exception& e) {
            throw ValidationError(source + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (f.ensembles.empty()) throw ValidationError(source + ": no forecasts");
    return f;
}

SweepAxis parse_axis(const std::string& name) {
    if (name == "missing_rate") return SweepAxis::MissingRate;
    if (name == "K") return SweepAxis::K;
    if (name == "lead") return SweepAxis::Lead;
    if (name == "aux_missing_rate") return SweepAxis::AuxMissingRate;
    throw ValidationError("unknown sweep axis '" + name + "' (missing_rate, K, lead, aux_missing_rate)");
}

std::string axis_name(SweepAxis a) {
    switch (a) {
    case SweepAxis::MissingRate: return "missing_rate";
    case SweepAxis::K: return "K";
    case SweepAxis::Lead: return "lead";
    case SweepAxis::AuxMissingRate: return "aux_missing_rate";
    }
    return "?";
}

SweepTable run_sweep(const RunConfig& cfg, SweepAxis axis, std::span<const double> values, const Progress& progress) {
    if (values.empty()) throw ValidationError("sweep: no axis values");
    const std::vector<std::uint64_t> seeds = cfg.seeds.empty() ? std::vector<std::uint64_t>{cfg.seed} : cfg.seeds;
    const bool lead_layout = axis == SweepAxis::Lead;
    const std::vector<std::string> baselines = lead_layout ? kBaselines : std::vector<std::string>{};

    SweepTable t;
    if (lead_layout) {
        t.columns = {"proposed"};
        t.columns.insert(t.columns.end(), baselines.begin(), baselines.end());
    } else {
        t.row_labels = {"proposed"};
        t.crps.assign(1, std::vector<double>(values.size(), 0.0));
    }
    for (std::size_t vi = 0; vi < values.size(); ++vi) {
        const double v = values[vi];
        RunConfig c = cfg;
        switch (axis) {
        case SweepAxis::MissingRate: c.missing_rate = v; break;
        case SweepAxis::AuxMissingRate: c.aux_missing_rate = v; break;
        case SweepAxis::K:
            if (v < 1.0 || v != std::floor(v)) throw ValidationError("sweep: K values must be positive integers");
            c.train.K = static_cast<std::size_t>(v);
            break;
        case SweepAxis::Lead:
            if (v < 1.0 || v != std::floor(v)) throw ValidationError("sweep: lead values must be positive integers");
            c.lead = static_cast<std::size_t>(v);
            break;
        }
        std::vector<double> sums(lead_layout ? t.columns.size() : 1, 0.0);
        for (auto s : seeds) {
            c.seed = s;
            if (progress) progress(axis_name(axis) + " = " + fmt(v, "%g") + ", seed " + std::to_string(s));
            const auto res = run_cycle(c.seeded(), baselines, progress);
            for (std::size_t m = 0; m < sums.size(); ++m) sums[m] += res.reports[m].crps_percent();
        }
        for (double& s : sums) s /= static_cast<double>(seeds.size());
        if (lead_layout) {
            t.row_labels.push_back(fmt(v, "%g"));
            t.crps.push_back(sums);
        } else {
            t.columns.push_back(fmt(v, "%g"));
            t.crps[0][vi] = sums[0];
        }
    }
    return t;
}

void write_sweep_csv(std::ostream& out, const SweepTable& t, SweepAxis axis, std::span<const std::string> header) {
    write_header(out, header);
    out << (axis == SweepAxis::Lead ? "lead" : "model");
    for (const auto& c : t.columns) out << ',' << c;
    out << '\n';
    for (std::size_t r = 0; r < t.row_labels.size(); ++r) {
        out << t.row_labels[r];
        for (double v : t.crps[r]) out << ',' << fmt(v, "%.6f");
        out << '\n';
    }
}

void write_file(const std::filesystem::path& path, const std::function<void(std::ostream&)>& fill) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path.string());
    fill(out);
    if (!out) throw ValidationError("write failed for " + path.string());
}

} // namespace gapcast::experiment
