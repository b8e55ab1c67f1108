#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "oracle.hpp"

#include "gapcast/errors.hpp"
#include "gapcast/forecast.hpp"

using namespace gapcast;
using namespace gapcast::forecast;
using ad::Tensor;

namespace {

const genmodel::GenerativeModel& oracle() {
    static const genmodel::GenerativeModel model = [] {
        testing::OracleSetup o;
        o.draws = 10000;
        o.epochs = 40;
        return testing::oracle_model(o, 0);
    }();
    return model;
}

genmodel::GenerativeModel small_model(std::size_t d, std::uint64_t seed) {
    genmodel::ModelConfig c;
    c.data_dim = d;
    c.latent_dim = 2;
    c.hidden = {6};
    c.flow_count = 2;
    c.flow_hidden = 5;
    c.seed = seed;
    genmodel::GenerativeModel m(c);
    Rng rng(seed + 1);
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    for (auto* p : m.parameters())
        for (auto& v : p->value.data()) v += u(rng);
    return m;
}

ProposalSet fake_proposals(std::vector<double> weights) {
    ProposalSet p;
    const std::size_t L = weights.size();
    p.weights = std::move(weights);
    p.log_ratios.assign(L, 0.0);
    p.scenarios = Tensor(L, 2);
    for (std::size_t i = 0; i < L; ++i) {
        p.scenarios(i, 0) = -static_cast<double>(i);
        p.scenarios(i, 1) = static_cast<double>(i);
    }
    p.mask = {0, 1};
    return p;
}

// Integral of |F_n - Phi| for the normal N(mu, sd^2).
double wasserstein_to_normal(std::vector<double> v, double mu, double sd) {
    std::sort(v.begin(), v.end());
    const double lo = mu - 8 * sd, hi = mu + 8 * sd;
    const int n = 20000;
    const double dx = (hi - lo) / n;
    double acc = 0.0;
    std::size_t i = 0;
    for (int k = 0; k < n; ++k) {
        const double x = lo + (k + 0.5) * dx;
        while (i < v.size() && v[i] <= x) ++i;
        const double F = static_cast<double>(i) / static_cast<double>(v.size());
        const double P = 0.5 * std::erfc(-(x - mu) / (sd * std::sqrt(2.0)));
        acc += std::abs(F - P) * dx;
    }
    return acc;
}

} // namespace

TEST_CASE("normalize_weights") {
    for (double w : normalize_weights(std::vector<double>(4, -3.0))) CHECK(w == doctest::Approx(0.25).epsilon(1e-15));

    auto w = normalize_weights(std::vector<double>{std::log(2.0), 0.0, 0.0});
    CHECK(w[0] == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(w[1] == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(w[2] == doctest::Approx(0.25).epsilon(1e-14));

    Rng rng(1);
    std::normal_distribution<double> n(0.0, 30.0);
    std::vector<double> lr(500);
    for (auto& v : lr) v = n(rng);
    auto base = normalize_weights(lr);
    CHECK(std::abs(std::accumulate(base.begin(), base.end(), 0.0) - 1.0) < 1e-12);
    for (double c : {-1e4, 7.5, 1e4}) {
        auto shifted = lr;
        for (auto& v : shifted) v += c;
        auto ws = normalize_weights(shifted);
        for (std::size_t i = 0; i < lr.size(); ++i) CHECK(std::abs(ws[i] - base[i]) < 1e-12);
    }

    const double inf = std::numeric_limits<double>::infinity();
    auto dropped = normalize_weights(std::vector<double>{0.0, std::nan(""), -inf, inf, 0.0});
    CHECK(dropped == std::vector<double>{0.5, 0.0, 0.0, 0.0, 0.5});
    CHECK_THROWS_AS(normalize_weights(std::vector<double>{-inf, -inf}), NumericalError);
    CHECK_THROWS_AS(normalize_weights(std::vector<double>{}), NumericalError);
}

TEST_CASE("effective sample size") {
    CHECK(effective_sample_size(std::vector<double>(8, 0.125)) == doctest::Approx(8.0).epsilon(1e-14));
    CHECK(effective_sample_size(std::vector<double>{1.0, 0.0, 0.0}) == 1.0);
    Rng rng(2);
    std::normal_distribution<double> n(0.0, 3.0);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> lr(50);
        for (auto& v : lr) v = n(rng);
        const double ess = effective_sample_size(normalize_weights(lr));
        CHECK(ess >= 1.0 - 1e-12);
        CHECK(ess <= 50.0 + 1e-9);
    }
}

TEST_CASE("resampling") {
    Rng rng(3);
    SUBCASE("degenerate weights copy the first proposal") {
        for (auto scheme : {Resampling::Multinomial, Resampling::Systematic}) {
            auto s = resample(fake_proposals({1.0, 0.0, 0.0, 0.0}), 50, rng, scheme);
            for (std::size_t m = 0; m < 50; ++m) {
                CHECK(s.source[m] == 0);
                CHECK(s.scenarios(m, 1) == 0.0);
            }
        }
    }
    SUBCASE("uniform weights pass a chi-square test") {
        const std::size_t L = 10, M = 100000;
        auto s = resample(fake_proposals(std::vector<double>(L, 0.1)), M, rng);
        std::vector<double> counts(L, 0.0);
        for (auto i : s.source) counts[i] += 1.0;
        double chi2 = 0.0;
        const double expect = static_cast<double>(M) / L;
        for (double c : counts) chi2 += (c - expect) * (c - expect) / expect;
        // 99th percentile of chi-square with 9 degrees of freedom
        CHECK(chi2 < 21.666);
    }
    SUBCASE("systematic counts stay within one of M w") {
        std::vector<double> w{0.05, 0.3, 0.0, 0.15, 0.5};
        auto s = resample(fake_proposals(w), 40, rng, Resampling::Systematic);
        std::vector<double> counts(w.size(), 0.0);
        for (auto i : s.source) counts[i] += 1.0;
        for (std::size_t i = 0; i < w.size(); ++i) CHECK(std::abs(counts[i] - 40 * w[i]) < 1.0 + 1e-9);
    }
    SUBCASE("targets are the last coordinate") {
        auto s = resample(fake_proposals({0.0, 0.0, 1.0}), 3, rng);
        CHECK(target_samples(s) == std::vector<double>{2.0, 2.0, 2.0});
    }
    CHECK_THROWS_AS(resample(fake_proposals({1.0}), 0, rng), ValidationError);
}

TEST_CASE("propose") {
    auto model = small_model(4, 5);
    const double nan = std::nan("");
    std::vector<double> z{0.3, -0.2, 1.1, nan};
    missing::Mask s{0, 0, 0, 1};

    Rng a(7), b(7);
    auto p = propose(model, z, s, a, 64);
    auto q = propose(model, z, s, b, 64);
    CHECK(p.size() == 64);
    CHECK(p.latent == q.latent);
    CHECK(p.scenarios == q.scenarios);
    CHECK(p.log_ratios == q.log_ratios);
    CHECK(p.dropped == 0);
    CHECK(std::abs(std::accumulate(p.weights.begin(), p.weights.end(), 0.0) - 1.0) < 1e-12);
    CHECK(effective_sample_size(p.weights) <= 64.0 + 1e-9);

    CHECK_THROWS_AS(propose(model, z, s, a, 0), ValidationError);
    CHECK_THROWS_AS(propose(model, z, missing::Mask{0, 0, 0, 0}, a, 4), ValidationError);
    CHECK_THROWS_AS(propose(model, z, missing::Mask{0, 1, 1}, a, 4), ValidationError);
    std::vector<double> bad{nan, 0.0, 0.0, 0.0};
    CHECK_THROWS_AS(propose(model, bad, s, a, 4), ValidationError);
}

TEST_CASE("fully missing window: ratio is prior over proposal") {
    auto model = small_model(3, 8);
    std::vector<double> z(3, std::nan(""));
    missing::Mask s{1, 1, 1};
    Rng rng(9);
    auto p = propose(model, z, s, rng, 32);

    // Recompute log q(u | 0) and log p(u) for the drawn latents.
    ad::Tape tape;
    auto bound = model.bind(tape, false);
    genmodel::ModelData row{Tensor(1, 3), Tensor(1, 3, 1.0)};
    auto h = nn::mlp_forward(bound.encoder, genmodel::encoder_input(tape, model, row));
    const auto& out = h.output.value();
    const std::size_t du = model.latent_dim();
    Tensor mean(32, du), sd(32, du), ctx(32, h.last_hidden.value().cols());
    for (std::size_t i = 0; i < 32; ++i) {
        for (std::size_t j = 0; j < du; ++j) {
            mean(i, j) = out(0, j);
            sd(i, j) = std::log1p(std::exp(out(0, du + j))) + dist::kMinScale;
        }
        for (std::size_t j = 0; j < ctx.cols(); ++j) ctx(i, j) = h.last_hidden.value()(0, j);
    }
    auto logq = flow::posterior_logq(mean, sd, model.flow(), ctx, p.latent);
    for (std::size_t i = 0; i < 32; ++i) {
        double logp = 0.0;
        for (std::size_t j = 0; j < du; ++j) logp += -0.5 * std::log(2 * std::numbers::pi) - 0.5 * p.latent(i, j) * p.latent(i, j);
        CHECK(p.log_ratios[i] == doctest::Approx(logp - logq[i]).epsilon(1e-10));
    }
}

TEST_CASE("forecasts ignore values stored at missing inputs") {
    auto model = small_model(4, 11);
    data::Window w;
    w.values = {0.4, 1e6, -0.7, 0.1};
    w.mask = {0, 1, 0, 0};
    w.origin = 3600;
    w.lead = 2;
    ForecastConfig cfg;
    cfg.L = 50;
    cfg.M = 30;
    cfg.seed = 4;
    auto a = forecast_window(model, w, cfg, 17);
    w.values[1] = std::nan("");
    w.values[3] = -5.0;  // the target is always treated as missing
    auto b = forecast_window(model, w, cfg, 17);
    CHECK(a.ensemble.samples == b.ensemble.samples);
    CHECK(a.ensemble.origin == 3600);
    CHECK(a.ensemble.lead == 2);
    CHECK(a.ensemble.samples.size() == 30);
    for (double v : a.ensemble.samples) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    CHECK(a.ess >= 1.0);
    CHECK(a.ess <= 50.0 + 1e-9);

    // Streams depend on the window index.
    CHECK(forecast_window(model, w, cfg, 18).ensemble.samples != b.ensemble.samples);
}

TEST_CASE("missing feature imputations") {
    auto model = small_model(4, 12);
    Rng rng(13);
    std::vector<double> z{0.1, 0.2, 0.3, std::nan("")};
    auto none = missing_feature_imputations(propose(model, z, missing::Mask{0, 0, 0, 1}, rng, 20), 10, rng);
    CHECK(none.coordinates.empty());
    CHECK(none.values.cols() == 0);

    auto p = propose(model, z, missing::Mask{1, 0, 1, 1}, rng, 20);
    auto s = resample(p, 15, rng);
    auto imp = missing_feature_imputations(s);
    CHECK(imp.coordinates == std::vector<std::size_t>{0, 2});
    REQUIRE(imp.values.rows() == 15);
    for (std::size_t m = 0; m < 15; ++m) {
        CHECK(imp.values(m, 0) == s.scenarios(m, 0));
        CHECK(imp.values(m, 1) == s.scenarios(m, 2));
    }
}

TEST_CASE("quantiles") {
    std::vector<double> e{0.8, 0.2, 0.6, 0.4};
    std::vector<double> half{0.5};
    CHECK(ensemble_to_quantiles(e, half)[0] == doctest::Approx(0.5).epsilon(1e-15));
    std::vector<double> levels{0.1, 0.25, 0.9};
    auto q = ensemble_to_quantiles(e, levels);
    // type 7: h = 3 p
    CHECK(q[0] == doctest::Approx(0.26).epsilon(1e-14));
    CHECK(q[1] == doctest::Approx(0.35).epsilon(1e-14));
    CHECK(q[2] == doctest::Approx(0.74).epsilon(1e-14));

    std::vector<double> constant(9, 0.37);
    for (double v : ensemble_to_quantiles(constant, levels)) CHECK(v == 0.37);

    Rng rng(14);
    std::uniform_real_distribution<double> u;
    std::vector<double> big(5000);
    for (auto& v : big) v = u(rng);
    std::vector<double> band{0.05, 0.95};
    auto b = ensemble_to_quantiles(big, band);
    const auto inside = std::count_if(big.begin(), big.end(), [&](double v) { return v >= b[0] && v <= b[1]; });
    CHECK(inside >= 4500);
    std::vector<double> grid;
    for (int i = 1; i < 100; ++i) grid.push_back(i / 100.0);
    auto qs = ensemble_to_quantiles(big, grid);
    CHECK(std::is_sorted(qs.begin(), qs.end()));

    std::vector<double> empty;
    CHECK_THROWS_AS(ensemble_to_quantiles(empty, half), ValidationError);
    std::vector<double> unordered{0.5, 0.4};
    CHECK_THROWS_AS(ensemble_to_quantiles(e, unordered), ValidationError);
    std::vector<double> outside{0.0, 0.5};
    CHECK_THROWS_AS(ensemble_to_quantiles(e, outside), ValidationError);
}

TEST_CASE("gaussian oracle conditional") {
    const auto& model = oracle();
    auto [mu, sd] = testing::mean_std(testing::oracle_forecast(model, 1.0, 5000, 5000, 1));
    CHECK(std::abs(mu - 0.8) < 0.1);
    CHECK(std::abs(sd - 0.6) < 0.15);

    // With x missing too, the imputed x follows the N(0, 1) marginal.
    Rng rng(2);
    const double values[] = {std::nan(""), std::nan("")};
    const std::uint8_t mask[] = {1, 1};
    auto imp = missing_feature_imputations(propose(model, values, mask, rng, 5000), 5000, rng);
    REQUIRE(imp.coordinates == std::vector<std::size_t>{0});
    auto [mx, sx] = testing::mean_std(imp.values.data());
    CHECK(std::abs(mx) < 0.1);
    CHECK(std::abs(sx - 1.0) < 0.15);
}

TEST_CASE("ensemble approaches the conditional as L grows") {
    const auto& model = oracle();
    std::vector<double> dist;
    for (std::size_t L : {100u, 1000u, 10000u}) {
        double total = 0.0;
        for (std::uint64_t s = 0; s < 10; ++s)
            total += wasserstein_to_normal(testing::oracle_forecast(model, 1.0, L, 2000, 50 + s), 0.8, 0.6);
        dist.push_back(total / 10.0);
    }
    INFO("W1: " << dist[0] << ", " << dist[1] << ", " << dist[2]);
    CHECK(dist[0] > dist[1]);
    CHECK(dist[1] > dist[2]);
}
