#include <cmath>

#include "doctest.h"
#include "support.hpp"

#include "gapcast/errors.hpp"
#include "gapcast/nn.hpp"

using namespace gapcast;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

Tensor forward(const nn::Mlp& net, const Tensor& x) {
    Tape tape;
    auto b = net.bind(tape, false);
    return nn::mlp_forward(b, tape.constant(x)).output.value();
}

// Plain loops: tanh(x W0 + b0) W1 + b1.
std::vector<double> two_layer_by_hand(const nn::Mlp& net, const std::vector<double>& x) {
    const auto& w0 = net.weight(0).value;
    const auto& b0 = net.bias(0).value;
    const auto& w1 = net.weight(1).value;
    const auto& b1 = net.bias(1).value;
    std::vector<double> h(w0.cols());
    for (std::size_t j = 0; j < w0.cols(); ++j) {
        double s = b0[j];
        for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * w0(i, j);
        h[j] = std::tanh(s);
    }
    std::vector<double> y(w1.cols());
    for (std::size_t j = 0; j < w1.cols(); ++j) {
        double s = b1[j];
        for (std::size_t i = 0; i < h.size(); ++i) s += h[i] * w1(i, j);
        y[j] = s;
    }
    return y;
}

struct ScalarParam {
    nn::Parameter p{"p", Tensor::scalar(0.0)};
    std::vector<nn::Parameter*> ptrs{&p};
};

} // namespace

TEST_CASE("zero weights return the bias") {
    nn::Mlp net("z", {3, 2});
    net.bias(0).value = Tensor::row({0.25, -1.5});
    auto y = forward(net, Tensor(4, 3, {1, 2, 3, -1, 0, 5, 7, 7, 7, 0, 0, 0}));
    for (std::size_t r = 0; r < 4; ++r) {
        CHECK(y(r, 0) == 0.25);
        CHECK(y(r, 1) == -1.5);
    }
}

TEST_CASE("identity layer") {
    nn::Mlp net("id", {3, 3});
    net.weight(0).value = Tensor::identity(3);
    Tensor x(2, 3, {1, -2, 3, 0.5, 0.25, -4});
    CHECK(forward(net, x) == x);
}

TEST_CASE("two-layer net with seed 7") {
    auto net = nn::Mlp::init_params(7, {2, 3, 2});
    auto y = forward(net, Tensor::row({1.0, 0.0}));
    auto expect = two_layer_by_hand(net, {1.0, 0.0});
    REQUIRE(y.size() == 2);
    for (std::size_t j = 0; j < 2; ++j) CHECK(y[j] == doctest::Approx(expect[j]).epsilon(1e-14));
    // Snapshot of the hand computation above (libstdc++ uniform_real_distribution).
    CHECK(y[0] == doctest::Approx(-0.41676822569541783).epsilon(1e-12));
    CHECK(y[1] == doctest::Approx(0.66031185837953033).epsilon(1e-12));
}

TEST_CASE("init_params") {
    auto a = nn::Mlp::init_params(3, {4, 8, 2});
    auto b = nn::Mlp::init_params(3, {4, 8, 2});
    auto c = nn::Mlp::init_params(4, {4, 8, 2});
    CHECK(a.parameter_count() == 58);
    CHECK(a.weight(0).value == b.weight(0).value);
    CHECK(a.weight(1).value == b.weight(1).value);
    CHECK_FALSE(a.weight(0).value == c.weight(0).value);
    const double limit = std::sqrt(6.0 / 12.0);
    for (double w : a.weight(0).value.data()) CHECK(std::abs(w) <= limit);
    CHECK(a.bias(0).value == Tensor(1, 8, 0.0));
    CHECK_THROWS_AS(nn::Mlp::init_params(1, {}), ValidationError);
    CHECK_THROWS_AS(nn::Mlp::init_params(1, {3, 0, 2}), ValidationError);
}

TEST_CASE("parameter count formula") {
    std::vector<std::size_t> widths{5, 7, 3, 4};
    std::size_t expect = 0;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) expect += widths[i] * widths[i + 1] + widths[i + 1];
    CHECK(nn::Mlp::init_params(0, widths).parameter_count() == expect);
}

TEST_CASE("width mismatch") {
    auto net = nn::Mlp::init_params(0, {3, 2});
    Tape tape;
    auto b = net.bind(tape);
    CHECK_THROWS_AS(nn::mlp_forward(b, tape.constant(Tensor(1, 4))), ValidationError);
}

TEST_CASE("batch equivariance") {
    auto net = nn::Mlp::init_params(11, {3, 5, 5, 2});
    Rng rng(1);
    Tensor x = testing::uniform_tensor(rng, 6, 3, -2, 2);
    Tensor batch = forward(net, x);
    for (std::size_t r = 0; r < 6; ++r) {
        Tensor row = forward(net, Tensor::row(x.row_span(r)));
        for (std::size_t c = 0; c < 2; ++c) CHECK(batch(r, c) == doctest::Approx(row[c]).epsilon(1e-14));
    }
}

TEST_CASE("mlp gradients match finite differences") {
    auto net = nn::Mlp::init_params(12, {3, 4, 2});
    Rng rng(2);
    Tensor x = testing::uniform_tensor(rng, 5, 3, -2, 2);
    std::vector<Tensor> inputs;
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        inputs.push_back(net.weight(l).value);
        inputs.push_back(rng() % 2 ? testing::uniform_tensor(rng, 1, net.widths()[l + 1], -1, 1)
                                   : net.bias(l).value);
    }
    auto f = [&](Tape& tape, const std::vector<Var>& v) {
        nn::Mlp::Bound b{{v[0], v[2]}, {v[1], v[3]}};
        return ad::sum(nn::mlp_forward(b, tape.constant(x)).output);
    };
    CHECK(testing::max_gradient_error(f, inputs) < 1e-4);
}

TEST_CASE("adam") {
    SUBCASE("zero gradient leaves parameters unchanged") {
        ScalarParam s;
        s.p.value = Tensor::scalar(0.7);
        nn::AdamState adam({}, s.ptrs);
        std::vector<Tensor> g{Tensor::scalar(0.0)};
        adam.step(s.ptrs, g);
        adam.step(s.ptrs, g);
        CHECK(s.p.value.item() == 0.7);
        CHECK(adam.step_count() == 2);
    }
    SUBCASE("first step") {
        ScalarParam s;
        nn::AdamState adam({}, s.ptrs);
        std::vector<Tensor> g{Tensor::scalar(0.5)};
        adam.step(s.ptrs, g);
        // m_hat = g, v_hat = g^2
        CHECK(s.p.value.item() == doctest::Approx(-1e-3 * 0.5 / (0.5 + 1e-8)).epsilon(1e-12));
        CHECK(s.p.value.item() == doctest::Approx(-9.99998e-4).epsilon(1e-5));
    }
    SUBCASE("two unit steps") {
        ScalarParam s;
        nn::AdamState adam({}, s.ptrs);
        std::vector<Tensor> g{Tensor::scalar(1.0)};
        adam.step(s.ptrs, g);
        adam.step(s.ptrs, g);
        CHECK(std::abs(s.p.value.item() + 2e-3) < 1e-6);
    }
    SUBCASE("zero learning rate is a no-op") {
        auto net = nn::Mlp::init_params(5, {3, 4, 2});
        auto before = net;
        std::vector<nn::Parameter*> ptrs;
        net.collect(ptrs);
        nn::AdamConfig cfg;
        cfg.learning_rate = 0.0;
        nn::AdamState adam(cfg, ptrs);
        Rng rng(3);
        for (int step = 0; step < 3; ++step) {
            std::vector<Tensor> grads;
            for (auto* p : ptrs) grads.push_back(testing::uniform_tensor(rng, p->value.rows(), p->value.cols(), -5, 5));
            adam.step(ptrs, grads);
        }
        for (std::size_t l = 0; l < net.layer_count(); ++l) {
            CHECK(net.weight(l).value == before.weight(l).value);
            CHECK(net.bias(l).value == before.bias(l).value);
        }
        for (std::size_t i = 0; i < ptrs.size(); ++i) {
            CHECK(adam.first_moments()[i].same_shape(ptrs[i]->value));
            CHECK(adam.second_moments()[i].same_shape(ptrs[i]->value));
        }
    }
    SUBCASE("non-finite gradient names the parameter and step") {
        ScalarParam s;
        s.p.name = "decoder.W0";
        nn::AdamState adam({}, s.ptrs);
        std::vector<Tensor> g{Tensor::scalar(std::nan(""))};
        try {
            adam.step(s.ptrs, g);
            FAIL("expected NumericalError");
        } catch (const NumericalError& e) {
            std::string what = e.what();
            CHECK(what.find("decoder.W0") != std::string::npos);
            CHECK(what.find("step 1") != std::string::npos);
        }
        CHECK(s.p.value.item() == 0.0);
        CHECK(adam.step_count() == 0);
    }
    SUBCASE("gradient clipping bounds the applied gradient") {
        ScalarParam s;
        nn::AdamConfig cfg;
        cfg.clip_norm = 1.0;
        nn::AdamState adam(cfg, s.ptrs);
        std::vector<Tensor> g{Tensor::scalar(40.0)};
        adam.step(s.ptrs, g);
        CHECK(adam.last_grad_norm() == 40.0);
        // clipped g = 1: m = 0.1, v = 0.001
        CHECK(adam.first_moments()[0].item() == doctest::Approx(0.1).epsilon(1e-12));
        CHECK(adam.second_moments()[0].item() == doctest::Approx(0.001).epsilon(1e-12));
    }
}

TEST_CASE("checkpoint round trip is exact") {
    nn::Checkpoint ckpt;
    ckpt.header["note"] = "x";
    auto net = nn::Mlp::init_params(9, {3, 4, 2});
    std::vector<const nn::Parameter*> ptrs;
    net.collect(ptrs);
    for (auto* p : ptrs) ckpt.tensors.push_back(*p);
    ckpt.tensors.push_back({"tiny", Tensor::row({1e-300, -0.0, 0.1, 1.0 / 3.0})});

    auto back = nn::checkpoint_from_string(nn::checkpoint_to_string(ckpt));
    CHECK(back.header == ckpt.header);
    REQUIRE(back.tensors.size() == ckpt.tensors.size());
    for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
        CHECK(back.tensors[i].name == ckpt.tensors[i].name);
        CHECK(back.tensors[i].value == ckpt.tensors[i].value);
    }
    CHECK(back.find("tiny") != nullptr);
    CHECK(back.find("absent") == nullptr);

    CHECK_THROWS_AS(nn::checkpoint_from_string("garbage\n"), ValidationError);
    auto text = nn::checkpoint_to_string(ckpt);
    CHECK_THROWS_AS(nn::checkpoint_from_string(text.substr(0, text.size() / 2)), ValidationError);
}
