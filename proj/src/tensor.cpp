#include "gapcast/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <sstream>

#include "gapcast/errors.hpp"

namespace gapcast::ad {

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows_ * cols_) {
        std::ostringstream os;
        os << "tensor value count " << values_.size() << " does not match shape [" << rows_ << ", " << cols_ << "]";
        throw ValidationError(os.str());
    }
}

Tensor Tensor::row(std::initializer_list<double> values) {
    return Tensor(1, values.size(), std::vector<double>(values));
}

Tensor Tensor::row(std::span<const double> values) {
    return Tensor(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

Tensor Tensor::column(std::span<const double> values) {
    return Tensor(values.size(), 1, std::vector<double>(values.begin(), values.end()));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        t(i, i) = 1.0;
    }
    return t;
}

std::string Tensor::shape_string() const {
    std::ostringstream os;
    os << '[' << rows_ << ", " << cols_ << ']';
    return os.str();
}

double Tensor::item() const {
    if (rows_ != 1 || cols_ != 1) {
        throw ValidationError("item() requires a 1 x 1 tensor, got " + shape_string());
    }
    return values_[0];
}

bool Tensor::all_finite() const {
    // Branch-free exponent test so the loop vectorizes.
    constexpr std::uint64_t kExp = 0x7ff0000000000000ULL;
    std::uint64_t bad = 0;
    for (double v : values_) {
        bad |= static_cast<std::uint64_t>((std::bit_cast<std::uint64_t>(v) & kExp) == kExp);
    }
    return bad == 0;
}

} // namespace gapcast::ad
