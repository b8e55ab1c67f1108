#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace gapcast::ad {

/// Dense row-major real matrix. Rank is fixed at two; vectors are 1 x n rows
/// and scalars are 1 x 1.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
    Tensor(std::size_t rows, std::size_t cols, std::vector<double> values);

    static Tensor scalar(double v) { return Tensor(1, 1, v); }
    static Tensor row(std::initializer_list<double> values);
    static Tensor row(std::span<const double> values);
    static Tensor column(std::span<const double> values);
    static Tensor identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return values_.size(); }
    bool empty() const { return values_.empty(); }
    bool same_shape(const Tensor& other) const { return rows_ == other.rows_ && cols_ == other.cols_; }
    std::string shape_string() const;

    double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }
    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    /// Value of a 1 x 1 tensor.
    double item() const;

    std::span<double> data() { return values_; }
    std::span<const double> data() const { return values_; }
    std::span<const double> row_span(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }
    std::span<double> row_span(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
    const std::vector<double>& values() const { return values_; }

    bool all_finite() const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> values_;
};

} // namespace gapcast::ad
