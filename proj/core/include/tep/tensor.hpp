#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tep {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense row-major fp64 array. Value semantics; copies are deep.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v);
    static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    static Tensor row(std::vector<double> values);
    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    // Rank-2 accessors. A rank-1 tensor is viewed as a single row.
    std::size_t rows() const {
        if (shape_.size() == 2) return shape_[0];
        return shape_.size() < 2 ? 1 : bad_rank("rows()");
    }
    std::size_t cols() const {
        if (shape_.size() == 2) return shape_[1];
        if (shape_.size() == 1) return shape_[0];
        return shape_.empty() ? 1 : bad_rank("cols()");
    }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    const double& operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
    double& operator[](std::size_t i) { return data_[i]; }
    const double& operator[](std::size_t i) const { return data_[i]; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::vector<double>& storage() noexcept { return data_; }
    const std::vector<double>& storage() const noexcept { return data_; }

    bool requires_grad() const noexcept { return requires_grad_; }
    void set_requires_grad(bool on) noexcept { requires_grad_ = on; }

    double item() const;
    Tensor reshaped(Shape shape) const;
    void fill(double v);

    bool all_finite() const noexcept;
    /// Throws NumericError naming `where` if any entry is NaN or infinite.
    void ensure_finite(std::string_view where) const;

    friend bool operator==(const Tensor& a, const Tensor& b) noexcept {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    [[noreturn]] std::size_t bad_rank(const char* what) const;
    Shape shape_;
    std::vector<double> data_;
    bool requires_grad_ = false;
};

/// 64-bit FNV-1a over shape and raw bytes; used for freeze audits.
std::uint64_t tensor_hash(const Tensor& t);

/// Round every entry to the nearest fp32 value (checkpoint precision).
Tensor round_to_fp32(const Tensor& t);

}  // namespace tep
