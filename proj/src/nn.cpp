#include "gapcast/nn.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "gapcast/errors.hpp"

namespace gapcast::nn {

ad::Var linear(ad::Var x, ad::Var weight, ad::Var bias) {
    return ad::add(ad::matmul(x, weight), ad::broadcast(bias, x.rows()));
}

Mlp::Mlp(std::string name, std::vector<std::size_t> widths) : name_(std::move(name)), widths_(std::move(widths)) {
    if (widths_.size() < 2) {
        throw ValidationError("Mlp '" + name_ + "': need at least input and output widths");
    }
    for (auto w : widths_) {
        if (w == 0) {
            throw ValidationError("Mlp '" + name_ + "': layer width must be positive");
        }
    }
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
        params_.push_back({name_ + ".W" + std::to_string(l), ad::Tensor(widths_[l], widths_[l + 1])});
        params_.push_back({name_ + ".b" + std::to_string(l), ad::Tensor(1, widths_[l + 1])});
    }
}

ad::Tensor glorot_uniform(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> uniform(-limit, limit);
    ad::Tensor w(fan_in, fan_out);
    for (double& v : w.data()) {
        v = uniform(rng);
    }
    return w;
}

Mlp Mlp::init_params(std::uint64_t seed, std::vector<std::size_t> widths, std::string name) {
    if (widths.empty()) {
        throw ValidationError("init_params: widths must be non-empty");
    }
    Mlp net(std::move(name), std::move(widths));
    Rng rng(seed);
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        net.weight(l).value = glorot_uniform(rng, net.widths_[l], net.widths_[l + 1]);
    }
    return net;
}

std::size_t Mlp::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) {
        n += p.value.size();
    }
    return n;
}

void Mlp::collect(std::vector<Parameter*>& out) {
    for (auto& p : params_) {
        out.push_back(&p);
    }
}

void Mlp::collect(std::vector<const Parameter*>& out) const {
    for (const auto& p : params_) {
        out.push_back(&p);
    }
}

Mlp::Bound Mlp::bind(ad::Tape& tape, bool requires_grad) const {
    Bound b;
    for (std::size_t l = 0; l < layer_count(); ++l) {
        b.weights.push_back(tape.leaf(weight(l).value, requires_grad));
        b.biases.push_back(tape.leaf(bias(l).value, requires_grad));
    }
    return b;
}

Mlp::Output mlp_forward(const Mlp::Bound& net, ad::Var x) {
    if (net.weights.empty()) {
        throw ValidationError("mlp_forward: network has no layers");
    }
    if (x.cols() != net.weights.front().rows()) {
        throw ValidationError("mlp_forward: input width " + std::to_string(x.cols()) + " does not match first layer " +
                              std::to_string(net.weights.front().rows()));
    }
    ad::Var h = x;
    const std::size_t layers = net.weights.size();
    for (std::size_t l = 0; l + 1 < layers; ++l) {
        h = ad::tanh(linear(h, net.weights[l], net.biases[l]));
    }
    return {linear(h, net.weights.back(), net.biases.back()), h};
}

AdamState::AdamState(AdamConfig config, std::span<Parameter* const> params) : config_(config) {
    for (const Parameter* p : params) {
        m_.emplace_back(p->value.rows(), p->value.cols());
        v_.emplace_back(p->value.rows(), p->value.cols());
    }
}

void AdamState::step(std::span<Parameter* const> params, std::span<const ad::Tensor> grads) {
    if (params.size() != grads.size() || params.size() != m_.size()) {
        throw ValidationError("adam_step: parameter/gradient count mismatch");
    }
    double sq = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!grads[i].same_shape(params[i]->value) || !m_[i].same_shape(params[i]->value)) {
            throw ValidationError("adam_step: shape mismatch for parameter '" + params[i]->name + "'");
        }
        for (double g : grads[i].data()) {
            if (!std::isfinite(g)) {
                std::ostringstream os;
                os << "adam_step: non-finite gradient for parameter '" << params[i]->name << "' at step "
                   << step_ + 1;
                throw NumericalError(os.str());
            }
            sq += g * g;
        }
    }
    last_norm_ = std::sqrt(sq);
    const double clip =
        (config_.clip_norm > 0.0 && last_norm_ > config_.clip_norm) ? config_.clip_norm / last_norm_ : 1.0;

    ++step_;
    const double t = static_cast<double>(step_);
    const double bc1 = 1.0 - std::pow(config_.beta1, t);
    const double bc2 = 1.0 - std::pow(config_.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto w = params[i]->value.data();
        const auto g = grads[i].data();
        auto m = m_[i].data();
        auto v = v_[i].data();
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double gj = g[j] * clip;
            m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * gj;
            v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * gj * gj;
            const double m_hat = m[j] / bc1;
            const double v_hat = v[j] / bc2;
            w[j] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
        }
    }
}

const Parameter* Checkpoint::find(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) {
            return &t;
        }
    }
    return nullptr;
}

std::string checkpoint_to_string(const Checkpoint& ckpt) {
    std::ostringstream os;
    os << "GAPCAST-CHECKPOINT " << Checkpoint::kVersion << '\n';
    os << "HEADER " << ckpt.header.dump() << '\n';
    char buf[64];
    for (const auto& t : ckpt.tensors) {
        if (t.name.find_first_of(" \t\n") != std::string::npos) {
            throw ValidationError("checkpoint tensor name contains whitespace: '" + t.name + "'");
        }
        os << "TENSOR " << t.name << ' ' << t.value.rows() << ' ' << t.value.cols() << '\n';
        for (std::size_t r = 0; r < t.value.rows(); ++r) {
            const auto row = t.value.row_span(r);
            for (std::size_t c = 0; c < row.size(); ++c) {
                std::snprintf(buf, sizeof(buf), "%a", row[c]);
                os << (c ? " " : "") << buf;
            }
            os << '\n';
        }
    }
    os << "END\n";
    return os.str();
}

Checkpoint checkpoint_from_string(const std::string& text) {
    std::istringstream is(text);
    std::string tag;
    int version = 0;
    if (!(is >> tag >> version) || tag != "GAPCAST-CHECKPOINT") {
        throw ValidationError("checkpoint: missing GAPCAST-CHECKPOINT magic line");
    }
    if (version != Checkpoint::kVersion) {
        throw ValidationError("checkpoint: unsupported version " + std::to_string(version));
    }
    Checkpoint ckpt;
    std::string line;
    std::getline(is, line);
    if (!std::getline(is, line) || line.rfind("HEADER ", 0) != 0) {
        throw ValidationError("checkpoint: missing HEADER line");
    }
    try {
        ckpt.header = nlohmann::json::parse(line.substr(7));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("checkpoint: malformed header: ") + e.what());
    }
    while (is >> tag) {
        if (tag == "END") {
            return ckpt;
        }
        if (tag != "TENSOR") {
            throw ValidationError("checkpoint: unexpected token '" + tag + "'");
        }
        Parameter p;
        std::size_t rows = 0;
        std::size_t cols = 0;
        if (!(is >> p.name >> rows >> cols)) {
            throw ValidationError("checkpoint: malformed TENSOR line");
        }
        std::vector<double> values(rows * cols);
        std::string tok;
        for (auto& v : values) {
            if (!(is >> tok)) {
                throw ValidationError("checkpoint: truncated tensor '" + p.name + "'");
            }
            char* end = nullptr;
            v = std::strtod(tok.c_str(), &end);
            if (end == tok.c_str() || *end != '\0') {
                throw ValidationError("checkpoint: bad number '" + tok + "' in tensor '" + p.name + "'");
            }
        }
        p.value = ad::Tensor(rows, cols, std::move(values));
        ckpt.tensors.push_back(std::move(p));
    }
    throw ValidationError("checkpoint: missing END marker");
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ValidationError("cannot write checkpoint " + path.string());
    }
    out << checkpoint_to_string(ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError("cannot read checkpoint " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return checkpoint_from_string(ss.str());
}

} // namespace gapcast::nn
