#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "support.hpp"

#include "gapcast/bench.hpp"
#include "gapcast/errors.hpp"
#include "gapcast/eval.hpp"
#include "gapcast/experiment.hpp"

using namespace gapcast;
using namespace gapcast::bench;
using ad::Tensor;

namespace {

const double kNaN = std::nan("");

experiment::RunConfig tiny_run(double rate) {
    experiment::RunConfig c;
    c.synthetic = experiment::SyntheticConfig{};
    c.synthetic->rows = 400;
    c.feature_length = 4;
    c.missing_rate = rate;
    c.qr.iterations = 200;
    c.forecast.M = 50;
    c.seed = 3;
    return c.seeded();
}

} // namespace

TEST_CASE("mean imputer") {
    Imputer imp;
    CHECK_FALSE(imp.fitted());
    CHECK_THROWS_AS(imp.transform(Tensor(2, 2)), ValidationError);
    Tensor x(3, 2, {1.0, 5.0, kNaN, 6.0, 3.0, kNaN});
    auto out = imp.fit_transform(x);
    CHECK(out == Tensor(3, 2, {1.0, 5.0, 2.0, 6.0, 3.0, 5.5}));
    CHECK(imp.means() == std::vector<double>{2.0, 5.5});
    CHECK(imp.transform(Tensor(1, 2, {kNaN, 0.0})) == Tensor(1, 2, {2.0, 0.0}));
    CHECK_THROWS_AS(imp.transform(Tensor(1, 3)), ValidationError);
    CHECK_THROWS_AS(Imputer().fit(Tensor(2, 2, {kNaN, 1.0, kNaN, 2.0})), ValidationError);
}

TEST_CASE("iterative imputer") {
    Rng rng(1);
    std::uniform_real_distribution<double> u(-2, 2);
    const std::size_t n = 200;
    Tensor x(n, 3);
    for (std::size_t i = 0; i < n; ++i) {
        x(i, 0) = u(rng);
        x(i, 1) = 2.0 * x(i, 0);
        x(i, 2) = u(rng);
    }
    Tensor gaps = x;
    for (std::size_t i = 0; i < n; i += 4) gaps(i, 1) = kNaN;
    for (std::size_t i = 1; i < n; i += 7) gaps(i, 2) = kNaN;

    Imputer imp(ImputerKind::IterativeLinear);
    auto out = imp.fit_transform(gaps);
    for (std::size_t i = 0; i < n; i += 4) CHECK(std::abs(out(i, 1) - 2.0 * x(i, 0)) < 1e-3);
    for (std::size_t k = 0; k < gaps.size(); ++k)
        if (std::isfinite(gaps[k])) CHECK(out[k] == gaps[k]);
    CHECK(out.all_finite());

    // Idempotent, and complete input passes through.
    CHECK(imp.transform(out) == out);
    CHECK(imp.fit_transform(x) == x);
}

TEST_CASE("standardizer") {
    Tensor x(4, 2, {1, 7, 2, 7, 3, 7, 4, 7});
    auto s = Standardizer::fit(x);
    auto z = s.apply(x);
    double mean = 0.0;
    for (std::size_t i = 0; i < 4; ++i) mean += z(i, 0);
    CHECK(std::abs(mean) < 1e-12);
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::isfinite(z(i, 1)));
}

TEST_CASE("climatology") {
    Rng rng(2);
    std::vector<double> one{0.4};
    for (double v : climatology_ensemble(one, 20, rng)) CHECK(v == 0.4);
    std::vector<double> gappy{0.1, kNaN, 0.3};
    for (double v : climatology_ensemble(gappy, 200, rng)) CHECK((v == 0.1 || v == 0.3));
    std::vector<double> empty{kNaN};
    CHECK_THROWS_AS(climatology_ensemble(empty, 5, rng), ValidationError);
    CHECK_THROWS_AS(climatology_ensemble(one, 0, rng), ValidationError);

    // Uniform history scored on uniform targets: E|X - Y| - E|X - X'| / 2 = 1/3 - 1/6.
    std::uniform_real_distribution<double> u;
    std::vector<double> history(20000);
    for (auto& v : history) v = u(rng);
    auto ens = climatology_ensemble(history, 2000, rng);
    double total = 0.0;
    for (int i = 0; i < 2000; ++i) total += eval::crps_ensemble(ens, u(rng));
    CHECK(std::abs(total / 2000 - 1.0 / 6.0) < 0.01);
}

TEST_CASE("climatology forecasts are identical across origins") {
    auto cfg = tiny_run(0.2);
    auto ds = experiment::prepare_dataset(cfg);
    auto ws = experiment::make_window_sets(cfg, ds);
    auto f = experiment::run_baseline(cfg, "climatology", ws);
    REQUIRE(f.ensembles.size() == ws.observed.test.size());
    auto truth = experiment::observations(ds, ws.observed.test);
    const double first = eval::crps_ensemble(f.ensembles[0].samples, 0.5);
    for (const auto& e : f.ensembles) {
        CHECK(e.samples == f.ensembles[0].samples);
        CHECK(eval::crps_ensemble(e.samples, 0.5) == first);
    }
}

TEST_CASE("quantile regression") {
    SUBCASE("constant target") {
        Rng rng(3);
        Tensor x = testing::uniform_tensor(rng, 100, 2, -1, 1);
        std::vector<double> y(100, 0.7);
        QuantileRegressor qr;
        QrConfig cfg;
        cfg.taus = {0.1, 0.5, 0.9};
        qr.fit(x, y, cfg);
        for (double q : qr.predict(std::vector<double>{0.2, -0.3})) CHECK(std::abs(q - 0.7) < 0.01);
    }
    SUBCASE("median tracks the conditional mean under symmetric noise") {
        Rng rng(4);
        std::uniform_real_distribution<double> u(-1, 1);
        std::normal_distribution<double> noise(0.0, 0.2);
        const std::size_t n = 2000;
        Tensor x(n, 1);
        std::vector<double> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = u(rng);
            y[i] = 0.5 + 1.5 * x[i] + noise(rng);
        }
        QuantileRegressor qr;
        qr.fit(x, y);
        CHECK(qr.taus().size() == 19);
        CHECK(qr.coefficients().all_finite());
        for (double at : {-0.8, 0.0, 0.6}) {
            auto q = qr.predict(std::vector<double>{at});
            CHECK(std::abs(q[9] - (0.5 + 1.5 * at)) < 0.05);
            CHECK(std::is_sorted(q.begin(), q.end()));
        }
        // Far outside the data the lines may cross; output stays sorted.
        auto far = qr.predict(std::vector<double>{40.0});
        CHECK(std::is_sorted(far.begin(), far.end()));
    }
    QuantileRegressor qr;
    CHECK_THROWS_AS(qr.fit(Tensor(2, 1, {kNaN, 1.0}), std::vector<double>{0, 1}), ValidationError);
    CHECK_THROWS_AS(qr.fit(Tensor(2, 1), std::vector<double>{0}), ValidationError);
}

TEST_CASE("sampling from quantiles") {
    std::vector<double> taus{0.25, 0.5, 0.75};
    std::vector<double> q{1.0, 2.0, 3.0};
    auto s = sample_from_quantiles(taus, q, 4);
    // u = 0.125, 0.375, 0.625, 0.875 on the line q = 4 u
    CHECK(s == std::vector<double>{0.5, 1.5, 2.5, 3.5});
    auto many = sample_from_quantiles(taus, q, 1001);
    CHECK(std::is_sorted(many.begin(), many.end()));
    CHECK(many[500] == doctest::Approx(2.0));
    std::vector<double> one_tau{0.5}, one_q{0.3};
    for (double v : sample_from_quantiles(one_tau, one_q, 5)) CHECK(v == 0.3);
    CHECK_THROWS_AS(sample_from_quantiles(taus, one_q, 5), ValidationError);
    CHECK_THROWS_AS(sample_from_quantiles(taus, q, 0), ValidationError);
}

TEST_CASE("gaussian regression") {
    Rng rng(5);
    std::uniform_real_distribution<double> u(-1, 1);
    std::normal_distribution<double> noise(0.0, 0.1);
    const std::size_t n = 2000;
    Tensor x(n, 1);
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = u(rng);
        y[i] = -0.2 + 0.8 * x[i] + noise(rng);
    }
    GaussConfig cfg;
    cfg.hidden = {};
    cfg.epochs = 60;
    GaussianRegressor g;
    g.fit(x, y, cfg);
    const double slope = (g.predict(std::vector<double>{0.5}).first - g.predict(std::vector<double>{-0.5}).first);
    CHECK(std::abs(slope - 0.8) < 0.05);
    auto [mu, sigma] = g.predict(std::vector<double>{0.0});
    CHECK(std::abs(mu + 0.2) < 0.05);
    CHECK(std::abs(sigma - 0.1) < 0.02);

    GaussianRegressor h;
    h.fit(x, y, cfg);
    CHECK(h.network().weight(0).value == g.network().weight(0).value);
    Rng a(6), b(6);
    CHECK(g.sample(std::vector<double>{0.1}, 10, a) == h.sample(std::vector<double>{0.1}, 10, b));

    // Noiseless targets drive sigma toward its floor.
    std::vector<double> exact(n);
    for (std::size_t i = 0; i < n; ++i) exact[i] = 0.3 * x[i];
    GaussianRegressor z;
    cfg.epochs = 100;
    z.fit(x, exact, cfg);
    const double floor = z.predict(std::vector<double>{0.2}).second;
    CHECK(floor > 0.0);
    CHECK(floor < 0.02);

    CHECK_THROWS_AS(g.fit(Tensor(1, 1, kNaN), std::vector<double>{0.0}, cfg), ValidationError);
}

TEST_CASE("regression data") {
    data::Window a, b;
    a.values = {0.1, kNaN, 0.3};
    a.mask = {0, 1, 0};
    b.values = {0.4, 0.5, kNaN};
    b.mask = {0, 0, 1};
    std::vector<data::Window> w{a, b};
    auto kept = regression_data(w);
    CHECK(kept.targets == std::vector<double>{0.3});
    CHECK(kept.features.rows() == 1);
    CHECK(std::isnan(kept.features(0, 1)));
    CHECK(regression_data(w, false).features.rows() == 2);
    CHECK_THROWS_AS(reference_model(w), ValidationError);
}

TEST_CASE("reference equals qr-im without missing data") {
    auto cfg = tiny_run(0.0);
    auto ds = experiment::prepare_dataset(cfg);
    auto ws = experiment::make_window_sets(cfg, ds);
    auto ref = experiment::run_baseline(cfg, "reference", ws);
    auto qr = experiment::run_baseline(cfg, "qr_im", ws);
    REQUIRE(ref.ensembles.size() == qr.ensembles.size());
    for (std::size_t i = 0; i < ref.ensembles.size(); ++i) CHECK(ref.ensembles[i].samples == qr.ensembles[i].samples);

    auto again = experiment::run_baseline(cfg, "reference", ws);
    CHECK(again.ensembles[0].samples == ref.ensembles[0].samples);
}

TEST_CASE("reference beats qr-im at 20% missing") {
    auto cfg = tiny_run(0.2);
    cfg.synthetic->rows = 2000;
    auto ds = experiment::prepare_dataset(cfg);
    auto ws = experiment::make_window_sets(cfg, ds);
    auto truth = experiment::observations(ds, ws.observed.test);
    const double ref = experiment::score_forecasts(experiment::run_baseline(cfg, "reference", ws), truth).crps;
    const double qr = experiment::score_forecasts(experiment::run_baseline(cfg, "qr_im", ws), truth).crps;
    CHECK(ref <= qr);
}
