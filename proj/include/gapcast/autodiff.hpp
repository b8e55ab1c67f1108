#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "gapcast/tensor.hpp"

// Reverse-mode automatic differentiation over rank-2 tensors.
//
// A Tape records every operation in execution order, so parents always
// precede children and the backward sweep is a single reverse pass. Tapes are
// single-threaded; run independent tapes for parallel work.
//
// Broadcasting is limited to leading-dimension row expansion (`broadcast`).

namespace gapcast::ad {

enum class OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    MatMul,
    Sum,
    SumRows,
    Mean,
    Exp,
    Log,
    Tanh,
    Softplus,
    Sigmoid,
    Neg,
    Square,
    Lgamma,
    Broadcast,
    Slice,
    Concat,
    Scale,
    AddScalar,
    Reshape,
    LogSumExpRows,
};

std::string_view op_name(OpKind kind);

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid as long as the tape lives.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    const Tensor& value() const;
    std::size_t id() const { return id_; }
    Tape* tape() const { return tape_; }
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    bool requires_grad() const;

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Adjoints from one backward sweep, indexed by node id.
class Gradients {
public:
    Gradients() = default;
    explicit Gradients(std::vector<Tensor> adjoints, const Tape* tape)
        : adjoints_(std::move(adjoints)), tape_(tape) {}

    /// Adjoint of `v`; a zero tensor of v's shape when v is unreachable.
    Tensor wrt(Var v) const;

private:
    std::vector<Tensor> adjoints_;
    const Tape* tape_ = nullptr;
};

class Tape {
public:
    struct Node {
        OpKind op = OpKind::Leaf;
        std::vector<std::size_t> parents;
        Tensor value;
        bool requires_grad = false;
        double scalar = 0.0;       // Scale / AddScalar constant
        std::size_t axis = 0;      // Slice / Concat axis
        std::size_t begin = 0;     // Slice start, Broadcast repeat count
        std::size_t end = 0;       // Slice end
    };

    Tape() { nodes_.reserve(256); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Input tensor. Parameters pass requires_grad = true.
    Var leaf(Tensor value, bool requires_grad = true);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    /// Appends a node and validates its forward value.
    Var record(Node node);

    /// Runs the reverse sweep from a 1 x 1 output. Does not mutate the tape,
    /// so repeated calls return identical adjoints.
    Gradients backward(Var output) const;

    const Node& node(std::size_t id) const { return nodes_[id]; }
    std::size_t size() const { return nodes_.size(); }

private:
    void accumulate(std::vector<Tensor>& adj, std::size_t id, const Tensor& g) const;
    void backprop_node(std::size_t id, std::vector<Tensor>& adj) const;

    std::vector<Node> nodes_;
};

// Elementwise binary ops require identical shapes.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var matmul(Var a, Var b);

Var sum(Var a);       ///< all entries -> 1 x 1
Var sum_rows(Var a);  ///< r x c -> r x 1
Var mean(Var a);      ///< all entries -> 1 x 1

Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
Var softplus(Var a);
Var sigmoid(Var a);
Var neg(Var a);
Var square(Var a);
Var lgamma(Var a);

/// Repeats each row `times` times consecutively: row i*times + j = a[i].
Var broadcast(Var a, std::size_t times);
/// Half-open range [begin, end) along axis 0 (rows) or 1 (columns).
Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end);
Var concat(std::span<const Var> parts, std::size_t axis);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
Var reshape(Var a, std::size_t rows, std::size_t cols);
/// Row-wise log(sum(exp(.))) with max-shift: r x c -> r x 1.
Var logsumexp_rows(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator*(double s, Var a) { return scale(a, s); }
inline Var operator+(Var a, double s) { return add_scalar(a, s); }

} // namespace gapcast::ad
