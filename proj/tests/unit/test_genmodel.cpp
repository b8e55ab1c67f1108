#include <cmath>
#include <numeric>

#include "doctest.h"
#include "conjugate.hpp"
#include "support.hpp"

#include "gapcast/errors.hpp"
#include "gapcast/experiment.hpp"
#include "gapcast/genmodel.hpp"

using namespace gapcast;
using namespace gapcast::genmodel;
using ad::Tape;
using ad::Tensor;
using testing::Conjugate;

namespace {

double softplus(double x) { return std::log1p(std::exp(x)); }

ModelConfig small_config(std::size_t d, std::size_t du, std::size_t flows, std::uint64_t seed) {
    ModelConfig c;
    c.data_dim = d;
    c.latent_dim = du;
    c.hidden = {6};
    c.flow_count = flows;
    c.flow_hidden = 5;
    c.seed = seed;
    return c;
}

ModelData random_batch(std::size_t T, std::size_t d, std::uint64_t seed, double missing_rate) {
    Rng rng(seed);
    std::normal_distribution<double> n;
    std::uniform_real_distribution<double> u;
    Tensor x(T, d);
    for (auto& v : x.data()) v = u(rng) < missing_rate ? std::nan("") : n(rng);
    return make_model_data(x);
}

// Randomizes every parameter so the flow output layers are not at zero.
void perturb(GenerativeModel& m, std::uint64_t seed, double spread = 0.3) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(-spread, spread);
    for (auto* p : m.parameters())
        for (auto& v : p->value.data()) v += u(rng);
}

double bound_value(const GenerativeModel& m, const ModelData& batch, std::size_t K, std::uint64_t seed) {
    Tape tape;
    auto b = m.bind(tape, false);
    Rng rng(seed);
    return elbo(tape, b, m, batch, rng, K).value;
}


} // namespace

TEST_CASE("decoder heads") {
    SUBCASE("zero weights give a constant distribution") {
        GenerativeModel m(small_config(3, 2, 0, 1));
        for (std::size_t l = 0; l < m.decoder().layer_count(); ++l) {
            m.decoder().weight(l).value = Tensor(m.decoder().weight(l).value.rows(), m.decoder().weight(l).value.cols());
        }
        m.decoder().bias(1).value = Tensor(1, 9, {0.1, 0.2, 0.3, 0, 0, 0, 1, 1, 1});
        Tape tape;
        auto b = m.bind(tape);
        auto d = decode(b, 3, tape.constant(Tensor(2, 2, {1, 2, -3, 0.5})));
        for (std::size_t c = 0; c < 3; ++c) {
            CHECK(d.loc.value()(0, c) == d.loc.value()(1, c));
            CHECK(d.scale.value()(0, c) == doctest::Approx(std::log(2.0) + 1e-3));
            CHECK(d.dof.value()(1, c) == doctest::Approx(softplus(1.0) + 2.0));
        }
    }
    SUBCASE("distinct latents give distinct locations") {
        GenerativeModel m(small_config(3, 2, 0, 1));
        Tape tape;
        auto b = m.bind(tape);
        auto d = decode(b, 3, tape.constant(Tensor(2, 2, {1, 0, 0, 1})));
        CHECK(d.loc.value().row_span(0)[0] != d.loc.value().row_span(1)[0]);
    }
    SUBCASE("seed 7 snapshot") {
        GenerativeModel m(small_config(2, 3, 0, 7));
        Tape tape;
        auto b = m.bind(tape);
        auto d = decode(b, 2, tape.constant(Tensor::row({1.0, 0.0, 0.0})));
        // Hand forward: h = tanh(e1 W0 + b0), out = h W1 + b1
        const auto& w0 = m.decoder().weight(0).value;
        const auto& w1 = m.decoder().weight(1).value;
        std::vector<double> h(w0.cols());
        for (std::size_t j = 0; j < h.size(); ++j) h[j] = std::tanh(w0(0, j));
        std::vector<double> out(6, 0.0);
        for (std::size_t j = 0; j < 6; ++j)
            for (std::size_t i = 0; i < h.size(); ++i) out[j] += h[i] * w1(i, j);
        for (std::size_t c = 0; c < 2; ++c) {
            CHECK(d.loc.value()[c] == doctest::Approx(out[c]).epsilon(1e-13));
            CHECK(d.scale.value()[c] == doctest::Approx(softplus(out[2 + c]) + 1e-3).epsilon(1e-13));
            CHECK(d.dof.value()[c] == doctest::Approx(softplus(out[4 + c]) + 2.0).epsilon(1e-13));
        }
        const double golden[] = {-0.33462684150057581, -0.60756184930714963, 1.0679801027304894,
                                 0.53243075947742513,  2.5809098675355564,  2.5817474285699111};
        for (std::size_t c = 0; c < 2; ++c) {
            CHECK(d.loc.value()[c] == doctest::Approx(golden[c]).epsilon(1e-12));
            CHECK(d.scale.value()[c] == doctest::Approx(golden[2 + c]).epsilon(1e-12));
            CHECK(d.dof.value()[c] == doctest::Approx(golden[4 + c]).epsilon(1e-12));
        }
    }
}

TEST_CASE("encoder sampling") {
    SUBCASE("without a flow log q is the base density") {
        GenerativeModel m(small_config(3, 2, 0, 2));
        perturb(m, 3);
        Tape tape;
        auto b = m.bind(tape);
        auto in = tape.constant(Tensor(1, 3, {0.2, -0.4, 1.0}));
        Rng rng(4);
        auto s = encode_sample(b, m, in, rng, 4);
        auto enc = nn::mlp_forward(b.encoder, in).output.value();
        std::vector<double> mu{enc[0], enc[1]}, sd{softplus(enc[2]) + 1e-3, softplus(enc[3]) + 1e-3};
        for (std::size_t k = 0; k < 4; ++k) {
            auto u = s.u.value().row_span(k);
            CHECK(u[0] == doctest::Approx(mu[0] + sd[0] * s.noise(k, 0)).epsilon(1e-13));
            CHECK(s.log_q.value()[k] == doctest::Approx(dist::gaussian_logpdf(u, mu, sd)).epsilon(1e-12));
        }
    }
    SUBCASE("first draw does not depend on K") {
        GenerativeModel m(small_config(3, 2, 2, 2));
        perturb(m, 5);
        Tape tape;
        auto b = m.bind(tape);
        auto in = tape.constant(Tensor(1, 3, {0.2, -0.4, 1.0}));
        Rng r1(9), r3(9);
        auto a = encode_sample(b, m, in, r1, 1);
        auto c = encode_sample(b, m, in, r3, 3);
        CHECK(a.u.value()[0] == c.u.value()[0]);
        CHECK(a.u.value()[1] == c.u.value()[1]);
        CHECK(a.log_q.value()[0] == c.log_q.value()[0]);
    }
    SUBCASE("log q agrees with the inverse-flow density") {
        GenerativeModel m(small_config(3, 3, 3, 2));
        perturb(m, 6);
        Tape tape;
        auto b = m.bind(tape);
        Tensor x(1, 3, {0.2, -0.4, 1.0});
        auto in = tape.constant(x);
        Rng rng(1);
        auto s = encode_sample(b, m, in, rng, 5);
        auto enc = nn::mlp_forward(b.encoder, in);
        Tensor mu(5, 3), sd(5, 3), ctx(5, enc.last_hidden.cols());
        for (std::size_t k = 0; k < 5; ++k) {
            for (std::size_t j = 0; j < 3; ++j) {
                mu(k, j) = enc.output.value()[j];
                sd(k, j) = softplus(enc.output.value()[3 + j]) + 1e-3;
            }
            for (std::size_t j = 0; j < ctx.cols(); ++j) ctx(k, j) = enc.last_hidden.value()[j];
        }
        auto lq = flow::posterior_logq(mu, sd, m.flow(), ctx, s.u.value());
        for (std::size_t k = 0; k < 5; ++k) CHECK(s.log_q.value()[k] == doctest::Approx(lq[k]).epsilon(1e-9));
    }
    SUBCASE("mean log q is minus the entropy") {
        GenerativeModel m(small_config(2, 1, 0, 2));
        perturb(m, 7);
        Tape tape;
        auto b = m.bind(tape);
        auto in = tape.constant(Tensor(1, 2, {0.5, -0.5}));
        Rng rng(2);
        auto s = encode_sample(b, m, in, rng, 10000);
        const double sd = softplus(nn::mlp_forward(b.encoder, in).output.value()[1]) + 1e-3;
        double mean = 0;
        for (double v : s.log_q.value().data()) mean += v;
        mean /= 10000;
        // standard error of log q is 1 / sqrt(2 * 10000)
        CHECK(std::abs(mean + 0.5 * std::log(2 * std::numbers::pi * std::exp(1.0) * sd * sd)) < 0.03);
    }
}

TEST_CASE("observed log-likelihood") {
    Rng rng(3);
    Tensor loc = testing::uniform_tensor(rng, 2, 4, -1, 1);
    Tensor scale = testing::uniform_tensor(rng, 2, 4, 0.5, 1.5);
    Tensor dof = testing::uniform_tensor(rng, 2, 4, 2, 6);
    Tensor z = testing::uniform_tensor(rng, 2, 4, -2, 2);
    Tape tape;
    dist::DiagStudentT d{tape.constant(loc), tape.constant(scale), tape.constant(dof)};
    auto zv = tape.constant(z);
    auto term = [&](std::size_t r, std::size_t c) {
        return dist::student_t_logpdf(z(r, c), loc(r, c), scale(r, c), dof(r, c));
    };

    CHECK(observed_loglik(d, zv, tape.constant(Tensor(2, 4, 1.0))).value() == Tensor(2, 1, 0.0));
    auto full = observed_loglik(d, zv, tape.constant(Tensor(2, 4, 0.0))).value();
    auto ref = dist::student_t_logpdf(d, zv).value();
    CHECK(full[0] == doctest::Approx(ref[0]).epsilon(1e-14));

    Tensor half(2, 4, {0, 1, 0, 1, 1, 1, 0, 0});
    auto part = observed_loglik(d, zv, tape.constant(half)).value();
    for (std::size_t r = 0; r < 2; ++r) {
        double missing_sum = 0;
        for (std::size_t c = 0; c < 4; ++c)
            if (half(r, c) == 1.0) missing_sum += term(r, c);
        CHECK(part[r] == doctest::Approx(full[r] - missing_sum).epsilon(1e-12));
    }
    // Masking one more coordinate removes exactly its term.
    Tensor more = half;
    more(0, 0) = 1.0;
    auto less = observed_loglik(d, zv, tape.constant(more)).value();
    CHECK(part[0] - less[0] == doctest::Approx(term(0, 0)).epsilon(1e-12));
    CHECK(less[1] == part[1]);
}

TEST_CASE("bound assembly") {
    GenerativeModel m(small_config(4, 2, 2, 3));
    perturb(m, 8);
    auto batch = random_batch(5, 4, 1, 0.3);
    for (std::size_t K : {1u, 7u}) {
        Tape tape;
        auto b = m.bind(tape);
        Rng rng(4);
        auto e = elbo(tape, b, m, batch, rng, K);
        REQUIRE(e.log_ratios.rows() == 5);
        REQUIRE(e.log_ratios.cols() == K);
        double expect = 0;
        for (std::size_t t = 0; t < 5; ++t) {
            double mx = -INFINITY;
            for (double v : e.log_ratios.row_span(t)) mx = std::max(mx, v);
            double s = 0;
            for (double v : e.log_ratios.row_span(t)) s += std::exp(v - mx);
            expect += mx + std::log(s) - std::log(static_cast<double>(K));
        }
        CHECK(e.value == doctest::Approx(expect).epsilon(1e-12));
    }
    // Equal ratios: logsumexp_k(r) - log K = r.
    Tape tape;
    auto r = tape.constant(Tensor(3, 4, 1.5));
    CHECK(ad::sum(ad::add_scalar(ad::logsumexp_rows(r), -std::log(4.0))).value().item() ==
          doctest::Approx(4.5).epsilon(1e-14));

    Tape t2;
    auto b2 = m.bind(t2);
    Rng rng(1);
    CHECK_THROWS_AS(elbo(t2, b2, m, batch, rng, 0), ValidationError);
}

TEST_CASE("a non-finite term names the window and sample") {
    GenerativeModel m(small_config(3, 2, 1, 3));
    auto batch = random_batch(4, 3, 2, 0.0);
    batch.values(2, 1) = 1e300;
    Tape tape;
    auto b = m.bind(tape);
    Rng rng(1);
    try {
        elbo(tape, b, m, batch, rng, 3);
        FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("window 2, sample 0") != std::string::npos);
    }
}

TEST_CASE("full bound gradient matches central differences") {
    GenerativeModel m(small_config(5, 2, 2, 0));
    perturb(m, 1);
    auto batch = random_batch(4, 5, 3, 0.25);
    Tape tape;
    auto b = m.bind(tape);
    Rng rng(11);
    auto est = elbo(tape, b, m, batch, rng, 3);
    auto grads = tape.backward(est.bound);
    std::vector<ad::Var> vars;
    for (std::size_t l = 0; l < b.decoder.weights.size(); ++l) vars.insert(vars.end(), {b.decoder.weights[l], b.decoder.biases[l]});
    for (std::size_t l = 0; l < b.encoder.weights.size(); ++l) vars.insert(vars.end(), {b.encoder.weights[l], b.encoder.biases[l]});
    for (const auto& t : b.flow.transforms) vars.insert(vars.end(), {t.w_in, t.b_in, t.w_shift, t.b_shift, t.w_scale, t.b_scale, t.w_ctx});
    auto params = m.parameters();
    REQUIRE(vars.size() == params.size());

    double worst = 0;
    const double h = 1e-5;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto analytic = grads.wrt(vars[i]);
        for (std::size_t j = 0; j < params[i]->value.size(); ++j) {
            double& w = params[i]->value[j];
            const double w0 = w;
            w = w0 + h;
            const double up = bound_value(m, batch, 3, 11);
            w = w0 - h;
            const double dn = bound_value(m, batch, 3, 11);
            w = w0;
            const double numeric = (up - dn) / (2 * h);
            const double denom = std::max({std::abs(analytic[j]), std::abs(numeric), 1e-2});
            worst = std::max(worst, std::abs(analytic[j] - numeric) / denom);
        }
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("conjugate gaussian oracle") {
    for (double s : {0.5, 1.0}) {
        Conjugate c(s);
        for (double z : {-2.5, -1.0, 0.0, 0.7, 2.0}) {
            Tensor x(1, 1, z);
            auto data = make_model_data(x);
            for (std::size_t K : {1u, 10u, 50u}) {
                Rng rng(static_cast<std::uint64_t>(K * 100 + 7));
                double mean = 0;
                const int reps = 100;
                for (int rep = 0; rep < reps; ++rep) mean += estimate_elbo(c.model, data, rng, K);
                mean /= reps;
                CAPTURE(s);
                CAPTURE(z);
                CAPTURE(K);
                CHECK(std::abs(mean - c.log_marginal(z)) < 1e-3);
                CHECK(mean <= c.log_marginal(z) + 1e-6);
            }
        }
    }
}

TEST_CASE("model checkpoints round trip") {
    auto cfg = small_config(4, 3, 2, 5);
    cfg.encoder_uses_mask = true;
    GenerativeModel m(cfg);
    perturb(m, 2);
    auto back = GenerativeModel::from_checkpoint(nn::checkpoint_from_string(nn::checkpoint_to_string(m.to_checkpoint())));
    CHECK(back.config().to_json() == m.config().to_json());
    CHECK(back.encoder_input_dim() == 8);
    auto pa = m.parameters();
    auto pb = back.parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value == pb[i]->value);

    auto ckpt = m.to_checkpoint();
    ckpt.tensors.pop_back();
    CHECK_THROWS_AS(GenerativeModel::from_checkpoint(ckpt), ValidationError);
    ckpt = m.to_checkpoint();
    ckpt.tensors[0].value = Tensor(1, 1);
    CHECK_THROWS_AS(GenerativeModel::from_checkpoint(ckpt), ValidationError);
}

TEST_CASE("config validation") {
    ModelConfig c;
    CHECK_THROWS_AS(GenerativeModel{c}, ValidationError);
    c.data_dim = 3;
    c.latent_dim = 0;
    CHECK_THROWS_AS(GenerativeModel{c}, ValidationError);
    TrainConfig t;
    t.K = 0;
    CHECK_THROWS_AS(t.validate(), ValidationError);
    t = TrainConfig::from_json({{"K", 7}, {"epochs", 3}});
    CHECK(t.K == 7);
    CHECK(t.batch_size == 128);
    CHECK_THROWS_AS(TrainConfig::from_json({{"K", "many"}}), ValidationError);
}

namespace {

ModelData ar2_windows(std::size_t rows, std::uint64_t seed, double missing_rate = 0.0) {
    experiment::SyntheticConfig sc;
    sc.rows = rows;
    auto table = experiment::synthetic_ar2(sc, seed);
    if (missing_rate > 0) {
        missing::MissingnessConfig mc;
        mc.rate = missing_rate;
        Rng rng(seed + 1);
        table = data::apply_mask(table, missing::gen_mask_mcar(mc, table.rows(), 1, rng));
    }
    std::size_t site[] = {0};
    return make_model_data(data::make_windows(table, 4, 1, site));
}

} // namespace

TEST_CASE("training") {
    auto data = ar2_windows(200, 3, 0.2);
    TrainConfig tc;
    tc.K = 5;
    tc.epochs = 3;
    tc.batch_size = 32;
    tc.learning_rate = 0.0;
    tc.seed = 4;

    SUBCASE("zero learning rate leaves parameters unchanged") {
        GenerativeModel m(small_config(5, 2, 2, 1));
        auto before = m.to_checkpoint();
        auto trace = train(m, data, tc);
        auto after = m.to_checkpoint();
        for (std::size_t i = 0; i < before.tensors.size(); ++i) CHECK(before.tensors[i].value == after.tensors[i].value);
        REQUIRE(trace.size() == 3);
        // Only the Monte Carlo noise moves the trace.
        for (double v : trace) CHECK(std::abs(v - trace[0]) < 0.05 * std::abs(trace[0]));
    }
    SUBCASE("same seed, same trace") {
        tc.learning_rate = 3e-3;
        GenerativeModel a(small_config(5, 2, 2, 1)), b(small_config(5, 2, 2, 1));
        CHECK(train(a, data, tc) == train(b, data, tc));
    }
    SUBCASE("resuming continues identically") {
        tc.learning_rate = 3e-3;
        GenerativeModel straight(small_config(5, 2, 2, 1));
        auto full = train(straight, data, tc);

        GenerativeModel m(small_config(5, 2, 2, 1));
        auto state = start_training(m, tc);
        train_epoch(m, state, data, tc);
        auto text = nn::checkpoint_to_string(training_checkpoint(m, state, tc));
        auto [m2, s2] = restore_training(nn::checkpoint_from_string(text), tc);
        CHECK(s2.epoch == 1);
        while (s2.epoch < tc.epochs) train_epoch(m2, s2, data, tc);
        CHECK(s2.trace == full);
        auto pa = straight.parameters();
        auto pb = m2.parameters();
        for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value == pb[i]->value);
    }
}

TEST_CASE("training raises the bound on AR(2) windows") {
    auto data = ar2_windows(504, 5);
    REQUIRE(data.rows() == 500);
    TrainConfig tc;
    tc.K = 5;
    tc.epochs = 200;
    tc.batch_size = 64;
    tc.learning_rate = 3e-3;
    double gain = 0;
    for (std::uint64_t seed : {1u, 2u}) {
        auto cfg = small_config(5, 2, 2, seed);
        cfg.hidden = {16};
        GenerativeModel m(cfg);
        tc.seed = seed;
        Rng r0(seed);
        const double initial = estimate_elbo(m, data, r0, tc.K);
        train(m, data, tc);
        Rng r1(seed);
        gain += estimate_elbo(m, data, r1, tc.K) - initial;
    }
    CHECK(gain / 2 > 0.5);
}

TEST_CASE("larger K tightens the bound") {
    auto data = ar2_windows(300, 8, 0.2);
    auto cfg = small_config(5, 2, 2, 3);
    GenerativeModel m(cfg);
    TrainConfig tc;
    tc.K = 5;
    tc.epochs = 20;
    tc.batch_size = 32;
    tc.learning_rate = 3e-3;
    tc.seed = 3;
    train(m, data, tc);
    auto sub = data.select(std::vector<std::size_t>{0, 10, 20, 30, 40, 50, 60, 70});
    auto stats = [&](std::size_t K) {
        Rng rng(K);
        std::vector<double> v(200);
        for (auto& x : v) x = estimate_elbo(m, sub, rng, K);
        const double mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
        double var = 0;
        for (double x : v) var += (x - mean) * (x - mean);
        return std::pair{mean, std::sqrt(var / (v.size() - 1) / v.size())};
    };
    auto [m1, se1] = stats(1);
    auto [m10, se10] = stats(10);
    CHECK(m10 >= m1 - se1);
    CHECK(m10 >= m1 - se10);
}
