#include "gapcast/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "gapcast/errors.hpp"
#include "gapcast/special.hpp"

namespace gapcast::ad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

ConstMatrixMap as_matrix(const Tensor& t) {
    return ConstMatrixMap(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

MatrixMap as_matrix(Tensor& t) {
    return MatrixMap(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

[[noreturn]] void shape_error(OpKind op, const Tensor& a, const Tensor& b) {
    throw ValidationError(std::string(op_name(op)) + ": shape mismatch " + a.shape_string() + " vs " +
                          b.shape_string());
}

Tape& tape_of(Var a) {
    if (a.tape() == nullptr) {
        throw ValidationError("variable is not attached to a tape");
    }
    return *a.tape();
}

Tape& common_tape(Var a, Var b) {
    if (a.tape() != b.tape()) {
        throw ValidationError("operands recorded on different tapes");
    }
    return tape_of(a);
}

double stable_softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double stable_sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

template <typename F>
Tensor map_values(const Tensor& a, F&& f) {
    Tensor out(a.rows(), a.cols());
    const auto in = a.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < in.size(); ++i) {
        dst[i] = f(in[i]);
    }
    return out;
}

template <typename F>
Tensor zip_values(const Tensor& a, const Tensor& b, F&& f) {
    Tensor out(a.rows(), a.cols());
    const auto x = a.data();
    const auto y = b.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
        dst[i] = f(x[i], y[i]);
    }
    return out;
}

Var unary(OpKind op, Var a, Tensor value) {
    Tape::Node node;
    node.op = op;
    node.parents = {a.id()};
    node.value = std::move(value);
    return tape_of(a).record(std::move(node));
}

Var binary_elementwise(OpKind op, Var a, Var b, Tensor (*compute)(const Tensor&, const Tensor&)) {
    Tape& tape = common_tape(a, b);
    if (!a.value().same_shape(b.value())) {
        shape_error(op, a.value(), b.value());
    }
    Tape::Node node;
    node.op = op;
    node.parents = {a.id(), b.id()};
    node.value = compute(a.value(), b.value());
    return tape.record(std::move(node));
}

} // namespace

std::string_view op_name(OpKind kind) {
    switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::MatMul: return "matmul";
    case OpKind::Sum: return "sum";
    case OpKind::SumRows: return "sum_rows";
    case OpKind::Mean: return "mean";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Tanh: return "tanh";
    case OpKind::Softplus: return "softplus";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Neg: return "neg";
    case OpKind::Square: return "square";
    case OpKind::Lgamma: return "lgamma";
    case OpKind::Broadcast: return "broadcast";
    case OpKind::Slice: return "slice";
    case OpKind::Concat: return "concat";
    case OpKind::Scale: return "scale";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::Reshape: return "reshape";
    case OpKind::LogSumExpRows: return "logsumexp_rows";
    }
    return "unknown";
}

const Tensor& Var::value() const { return tape_->node(id_).value; }

bool Var::requires_grad() const { return tape_->node(id_).requires_grad; }

Tensor Gradients::wrt(Var v) const {
    if (v.id() < adjoints_.size() && !adjoints_[v.id()].empty()) {
        return adjoints_[v.id()];
    }
    return Tensor(v.value().rows(), v.value().cols());
}

Var Tape::leaf(Tensor value, bool requires_grad) {
    Node node;
    node.op = OpKind::Leaf;
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    if (!node.value.all_finite()) {
        throw NumericalError("leaf tensor contains non-finite values");
    }
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(Node node) {
    for (auto p : node.parents) {
        if (p >= nodes_.size()) {
            throw ValidationError("record: parent id out of range");
        }
        node.requires_grad = node.requires_grad || nodes_[p].requires_grad;
    }
    if (!node.value.all_finite()) {
        const auto& v = node.value;
        std::size_t bad = 0;
        while (bad < v.size() && std::isfinite(v[bad])) ++bad;
        const std::size_t r = bad / v.cols();
        const std::size_t c = bad % v.cols();
        std::ostringstream os;
        os << op_name(node.op) << ": non-finite output (node " << nodes_.size() << ", shape "
           << v.shape_string() << ", first at [" << r << ", " << c << "])";
        throw NonFiniteError(os.str(), r, c, v.rows());
    }
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(std::vector<Tensor>& adj, std::size_t id, const Tensor& g) const {
    if (!nodes_[id].requires_grad) {
        return;
    }
    Tensor& slot = adj[id];
    if (slot.empty()) {
        slot = g;
        return;
    }
    auto dst = slot.data();
    const auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i] += src[i];
    }
}

Gradients Tape::backward(Var output) const {
    if (output.tape() != this) {
        throw ValidationError("backward: output belongs to another tape");
    }
    const Tensor& out = nodes_[output.id()].value;
    if (out.rows() != 1 || out.cols() != 1) {
        throw ValidationError("backward: output must be a 1 x 1 scalar, got " + out.shape_string());
    }
    std::vector<Tensor> adj(output.id() + 1);
    adj[output.id()] = Tensor::scalar(1.0);
    for (std::size_t i = output.id() + 1; i-- > 0;) {
        if (adj[i].empty() || !nodes_[i].requires_grad || nodes_[i].op == OpKind::Leaf) {
            continue;
        }
        backprop_node(i, adj);
    }
    return Gradients(std::move(adj), this);
}

void Tape::backprop_node(std::size_t id, std::vector<Tensor>& adj) const {
    const Node& n = nodes_[id];
    const Tensor& g = adj[id];
    const Tensor& y = n.value;
    auto parent = [&](std::size_t k) -> const Tensor& { return nodes_[n.parents[k]].value; };
    auto wants = [&](std::size_t k) { return nodes_[n.parents[k]].requires_grad; };
    auto push = [&](std::size_t k, const Tensor& t) { accumulate(adj, n.parents[k], t); };

    switch (n.op) {
    case OpKind::Leaf:
        break;
    case OpKind::Add:
        push(0, g);
        push(1, g);
        break;
    case OpKind::Sub:
        push(0, g);
        if (wants(1)) push(1, map_values(g, [](double v) { return -v; }));
        break;
    case OpKind::Mul:
        if (wants(0)) push(0, zip_values(g, parent(1), [](double a, double b) { return a * b; }));
        if (wants(1)) push(1, zip_values(g, parent(0), [](double a, double b) { return a * b; }));
        break;
    case OpKind::Div:
        if (wants(0)) push(0, zip_values(g, parent(1), [](double a, double b) { return a / b; }));
        if (wants(1)) {
            Tensor d = zip_values(g, y, [](double a, double b) { return -a * b; });
            push(1, zip_values(d, parent(1), [](double a, double b) { return a / b; }));
        }
        break;
    case OpKind::MatMul: {
        const Tensor& a = parent(0);
        const Tensor& b = parent(1);
        if (wants(0)) {
            Tensor da(a.rows(), a.cols());
            as_matrix(da).noalias() = as_matrix(g) * as_matrix(b).transpose();
            push(0, da);
        }
        if (wants(1)) {
            Tensor db(b.rows(), b.cols());
            as_matrix(db).noalias() = as_matrix(a).transpose() * as_matrix(g);
            push(1, db);
        }
        break;
    }
    case OpKind::Sum:
        push(0, Tensor(parent(0).rows(), parent(0).cols(), g.item()));
        break;
    case OpKind::Mean: {
        const Tensor& a = parent(0);
        push(0, Tensor(a.rows(), a.cols(), g.item() / static_cast<double>(a.size())));
        break;
    }
    case OpKind::SumRows: {
        const Tensor& a = parent(0);
        Tensor d(a.rows(), a.cols());
        for (std::size_t r = 0; r < a.rows(); ++r) {
            std::fill(d.row_span(r).begin(), d.row_span(r).end(), g[r]);
        }
        push(0, d);
        break;
    }
    case OpKind::Exp:
        push(0, zip_values(g, y, [](double a, double b) { return a * b; }));
        break;
    case OpKind::Log:
        push(0, zip_values(g, parent(0), [](double a, double b) { return a / b; }));
        break;
    case OpKind::Tanh:
        push(0, zip_values(g, y, [](double a, double b) { return a * (1.0 - b * b); }));
        break;
    case OpKind::Softplus:
        push(0, zip_values(g, parent(0), [](double a, double b) { return a * stable_sigmoid(b); }));
        break;
    case OpKind::Sigmoid:
        push(0, zip_values(g, y, [](double a, double b) { return a * b * (1.0 - b); }));
        break;
    case OpKind::Neg:
        push(0, map_values(g, [](double v) { return -v; }));
        break;
    case OpKind::Square:
        push(0, zip_values(g, parent(0), [](double a, double b) { return 2.0 * a * b; }));
        break;
    case OpKind::Lgamma:
        push(0, zip_values(g, parent(0), [](double a, double b) { return a * special::digamma(b); }));
        break;
    case OpKind::Broadcast: {
        const Tensor& a = parent(0);
        const std::size_t times = n.begin;
        Tensor d(a.rows(), a.cols());
        for (std::size_t r = 0; r < a.rows(); ++r) {
            auto dst = d.row_span(r);
            for (std::size_t j = 0; j < times; ++j) {
                const auto src = g.row_span(r * times + j);
                for (std::size_t c = 0; c < dst.size(); ++c) {
                    dst[c] += src[c];
                }
            }
        }
        push(0, d);
        break;
    }
    case OpKind::Slice: {
        const Tensor& a = parent(0);
        Tensor d(a.rows(), a.cols());
        for (std::size_t r = 0; r < g.rows(); ++r) {
            for (std::size_t c = 0; c < g.cols(); ++c) {
                if (n.axis == 0) {
                    d(n.begin + r, c) = g(r, c);
                } else {
                    d(r, n.begin + c) = g(r, c);
                }
            }
        }
        push(0, d);
        break;
    }
    case OpKind::Concat: {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < n.parents.size(); ++k) {
            const Tensor& a = parent(k);
            if (wants(k)) {
                Tensor d(a.rows(), a.cols());
                for (std::size_t r = 0; r < a.rows(); ++r) {
                    for (std::size_t c = 0; c < a.cols(); ++c) {
                        d(r, c) = n.axis == 0 ? g(offset + r, c) : g(r, offset + c);
                    }
                }
                push(k, d);
            }
            offset += n.axis == 0 ? a.rows() : a.cols();
        }
        break;
    }
    case OpKind::Scale:
        push(0, map_values(g, [s = n.scalar](double v) { return v * s; }));
        break;
    case OpKind::AddScalar:
        push(0, g);
        break;
    case OpKind::Reshape: {
        const Tensor& a = parent(0);
        push(0, Tensor(a.rows(), a.cols(), g.values()));
        break;
    }
    case OpKind::LogSumExpRows: {
        const Tensor& a = parent(0);
        Tensor d(a.rows(), a.cols());
        for (std::size_t r = 0; r < a.rows(); ++r) {
            const auto src = a.row_span(r);
            auto dst = d.row_span(r);
            for (std::size_t c = 0; c < src.size(); ++c) {
                dst[c] = g[r] * std::exp(src[c] - y[r]);
            }
        }
        push(0, d);
        break;
    }
    }
}

Var add(Var a, Var b) {
    return binary_elementwise(OpKind::Add, a, b, [](const Tensor& x, const Tensor& y) {
        return zip_values(x, y, [](double p, double q) { return p + q; });
    });
}

Var sub(Var a, Var b) {
    return binary_elementwise(OpKind::Sub, a, b, [](const Tensor& x, const Tensor& y) {
        return zip_values(x, y, [](double p, double q) { return p - q; });
    });
}

Var mul(Var a, Var b) {
    return binary_elementwise(OpKind::Mul, a, b, [](const Tensor& x, const Tensor& y) {
        return zip_values(x, y, [](double p, double q) { return p * q; });
    });
}

Var div(Var a, Var b) {
    return binary_elementwise(OpKind::Div, a, b, [](const Tensor& x, const Tensor& y) {
        return zip_values(x, y, [](double p, double q) { return p / q; });
    });
}

Var matmul(Var a, Var b) {
    Tape& tape = common_tape(a, b);
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    if (x.cols() != y.rows()) {
        shape_error(OpKind::MatMul, x, y);
    }
    Tape::Node node;
    node.op = OpKind::MatMul;
    node.parents = {a.id(), b.id()};
    node.value = Tensor(x.rows(), y.cols());
    as_matrix(node.value).noalias() = as_matrix(x) * as_matrix(y);
    return tape.record(std::move(node));
}

Var sum(Var a) {
    double s = 0.0;
    for (double v : a.value().data()) {
        s += v;
    }
    return unary(OpKind::Sum, a, Tensor::scalar(s));
}

Var sum_rows(Var a) {
    const Tensor& x = a.value();
    Tensor out(x.rows(), 1);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        double s = 0.0;
        for (double v : x.row_span(r)) {
            s += v;
        }
        out[r] = s;
    }
    return unary(OpKind::SumRows, a, std::move(out));
}

Var mean(Var a) {
    const Tensor& x = a.value();
    if (x.empty()) {
        throw ValidationError("mean: empty tensor");
    }
    double s = 0.0;
    for (double v : x.data()) {
        s += v;
    }
    return unary(OpKind::Mean, a, Tensor::scalar(s / static_cast<double>(x.size())));
}

Var exp(Var a) { return unary(OpKind::Exp, a, map_values(a.value(), [](double v) { return std::exp(v); })); }
Var log(Var a) { return unary(OpKind::Log, a, map_values(a.value(), [](double v) { return std::log(v); })); }
Var tanh(Var a) { return unary(OpKind::Tanh, a, map_values(a.value(), [](double v) { return std::tanh(v); })); }
Var softplus(Var a) { return unary(OpKind::Softplus, a, map_values(a.value(), stable_softplus)); }
Var sigmoid(Var a) { return unary(OpKind::Sigmoid, a, map_values(a.value(), stable_sigmoid)); }
Var neg(Var a) { return unary(OpKind::Neg, a, map_values(a.value(), [](double v) { return -v; })); }
Var square(Var a) { return unary(OpKind::Square, a, map_values(a.value(), [](double v) { return v * v; })); }

Var lgamma(Var a) {
    for (double v : a.value().data()) {
        if (!(v > 0.0)) {
            throw ValidationError("lgamma: argument must be positive");
        }
    }
    return unary(OpKind::Lgamma, a, map_values(a.value(), [](double v) { return special::lgamma(v); }));
}

Var broadcast(Var a, std::size_t times) {
    if (times == 0) {
        throw ValidationError("broadcast: repeat count must be positive");
    }
    const Tensor& x = a.value();
    Tensor out(x.rows() * times, x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto src = x.row_span(r);
        for (std::size_t j = 0; j < times; ++j) {
            std::copy(src.begin(), src.end(), out.row_span(r * times + j).begin());
        }
    }
    Tape::Node node;
    node.op = OpKind::Broadcast;
    node.parents = {a.id()};
    node.value = std::move(out);
    node.begin = times;
    return tape_of(a).record(std::move(node));
}

Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
    const Tensor& x = a.value();
    const std::size_t extent = axis == 0 ? x.rows() : x.cols();
    if (axis > 1 || begin >= end || end > extent) {
        std::ostringstream os;
        os << "slice: invalid range [" << begin << ", " << end << ") on axis " << axis << " of " << x.shape_string();
        throw ValidationError(os.str());
    }
    Tensor out = axis == 0 ? Tensor(end - begin, x.cols()) : Tensor(x.rows(), end - begin);
    for (std::size_t r = 0; r < out.rows(); ++r) {
        for (std::size_t c = 0; c < out.cols(); ++c) {
            out(r, c) = axis == 0 ? x(begin + r, c) : x(r, begin + c);
        }
    }
    Tape::Node node;
    node.op = OpKind::Slice;
    node.parents = {a.id()};
    node.value = std::move(out);
    node.axis = axis;
    node.begin = begin;
    node.end = end;
    return tape_of(a).record(std::move(node));
}

Var concat(std::span<const Var> parts, std::size_t axis) {
    if (parts.empty() || axis > 1) {
        throw ValidationError("concat: need at least one part and axis 0 or 1");
    }
    Tape& tape = tape_of(parts.front());
    const Tensor& first = parts.front().value();
    std::size_t rows = 0;
    std::size_t cols = 0;
    for (const Var& p : parts) {
        if (p.tape() != &tape) {
            throw ValidationError("concat: parts recorded on different tapes");
        }
        const Tensor& t = p.value();
        if (axis == 0) {
            if (t.cols() != first.cols()) shape_error(OpKind::Concat, first, t);
            rows += t.rows();
            cols = t.cols();
        } else {
            if (t.rows() != first.rows()) shape_error(OpKind::Concat, first, t);
            cols += t.cols();
            rows = t.rows();
        }
    }
    Tensor out(rows, cols);
    std::size_t offset = 0;
    Tape::Node node;
    node.op = OpKind::Concat;
    node.axis = axis;
    for (const Var& p : parts) {
        const Tensor& t = p.value();
        for (std::size_t r = 0; r < t.rows(); ++r) {
            for (std::size_t c = 0; c < t.cols(); ++c) {
                if (axis == 0) {
                    out(offset + r, c) = t(r, c);
                } else {
                    out(r, offset + c) = t(r, c);
                }
            }
        }
        offset += axis == 0 ? t.rows() : t.cols();
        node.parents.push_back(p.id());
    }
    node.value = std::move(out);
    return tape.record(std::move(node));
}

Var scale(Var a, double factor) {
    Tape::Node node;
    node.op = OpKind::Scale;
    node.parents = {a.id()};
    node.value = map_values(a.value(), [factor](double v) { return v * factor; });
    node.scalar = factor;
    return tape_of(a).record(std::move(node));
}

Var add_scalar(Var a, double offset) {
    Tape::Node node;
    node.op = OpKind::AddScalar;
    node.parents = {a.id()};
    node.value = map_values(a.value(), [offset](double v) { return v + offset; });
    node.scalar = offset;
    return tape_of(a).record(std::move(node));
}

Var reshape(Var a, std::size_t rows, std::size_t cols) {
    const Tensor& x = a.value();
    if (rows * cols != x.size()) {
        throw ValidationError("reshape: cannot view " + x.shape_string() + " as [" + std::to_string(rows) + ", " +
                              std::to_string(cols) + "]");
    }
    return unary(OpKind::Reshape, a, Tensor(rows, cols, x.values()));
}

Var logsumexp_rows(Var a) {
    const Tensor& x = a.value();
    Tensor out(x.rows(), 1);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto row = x.row_span(r);
        const double m = *std::max_element(row.begin(), row.end());
        double s = 0.0;
        for (double v : row) {
            s += std::exp(v - m);
        }
        out[r] = m + std::log(s);
    }
    return unary(OpKind::LogSumExpRows, a, std::move(out));
}

} // namespace gapcast::ad
