#include "tep/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>

#include "tep/error.hpp"

namespace tep {

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size()) {
        throw InvalidArgument("tensor: shape " + shape_to_string(shape_) + " does not match " +
                              std::to_string(data_.size()) + " values");
    }
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, double fill) { return Tensor(Shape{rows, cols}, fill); }

Tensor Tensor::row(std::vector<double> values) {
    const auto n = values.size();
    return Tensor(Shape{1, n}, std::move(values));
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw InvalidArgument("tensor: ragged rows");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor(Shape{r, c}, std::move(data));
}

std::size_t Tensor::bad_rank(const char* what) const {
    throw InvalidArgument(std::string("tensor: ") + what + " on rank " + std::to_string(shape_.size()));
}

double Tensor::item() const {
    if (data_.size() != 1) throw InvalidArgument("tensor: item() on " + shape_to_string(shape_));
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
    Tensor out(std::move(shape), data_);
    out.requires_grad_ = requires_grad_;
    return out;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const noexcept {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Tensor::ensure_finite(std::string_view where) const {
    if (!all_finite()) throw NumericError("non-finite value produced by " + std::string(where));
}

std::uint64_t tensor_hash(const Tensor& t) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
    };
    for (auto d : t.shape()) {
        const std::uint64_t v = d;
        mix(&v, sizeof v);
    }
    mix(t.data().data(), t.size() * sizeof(double));
    return h;
}

Tensor round_to_fp32(const Tensor& t) {
    Tensor out = t;
    for (double& v : out.storage()) v = static_cast<double>(static_cast<float>(v));
    return out;
}

}  // namespace tep
