#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "bcglm/error.hpp"

namespace bcglm {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

/// Dense row-major array of doubles.
///
/// Rank-0 tensors are not supported; a scalar is a shape-[1] tensor. All
/// extents are strictly positive, so `size()` is never zero.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
        validate_shape(shape_);
        data_.assign(shape_size(shape_), fill);
    }

    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape(shape_);
        if (data_.size() != shape_size(shape_))
            throw Error(Errc::ShapeMismatch, "Tensor",
                        "data length " + std::to_string(data_.size()) + " does not match shape " +
                            shape_string(shape_));
    }

    static Tensor vector(std::vector<double> values) {
        const std::size_t n = values.size();
        return Tensor({n}, std::move(values));
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
        return Tensor({rows, cols}, std::move(values));
    }

    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r ? rows.begin()->size() : 0;
        std::vector<double> values;
        values.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c) throw Error(Errc::ShapeMismatch, "Tensor::matrix", "ragged rows");
            values.insert(values.end(), row.begin(), row.end());
        }
        return Tensor({r, c}, std::move(values));
    }

    static Tensor identity(std::size_t n) {
        Tensor t({n, n});
        for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
        return t;
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::size_t rows() const { return shape_.at(0); }
    std::size_t cols() const { return rank() >= 2 ? shape_[1] : 1; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    const double& operator[](std::size_t i) const { return data_[i]; }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    const double& operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    double& operator()(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    const double& operator()(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    /// Elements per leading-axis slice.
    std::size_t row_stride() const { return shape_.empty() ? 0 : data_.size() / shape_[0]; }

    std::span<const double> row(std::size_t i) const {
        const std::size_t s = row_stride();
        return std::span<const double>(data_).subspan(i * s, s);
    }
    std::span<double> row(std::size_t i) {
        const std::size_t s = row_stride();
        return std::span<double>(data_).subspan(i * s, s);
    }

    Tensor reshaped(Shape shape) const {
        if (shape_size(shape) != size())
            throw Error(Errc::ShapeMismatch, "Tensor::reshaped",
                        shape_string(shape_) + " -> " + shape_string(shape));
        return Tensor(std::move(shape), data_);
    }

    /// Rows [begin, end) along the leading axis.
    Tensor slice_rows(std::size_t begin, std::size_t end) const {
        if (begin >= end || end > rows())
            throw Error(Errc::ShapeMismatch, "Tensor::slice_rows", "invalid row range");
        Shape s = shape_;
        s[0] = end - begin;
        const std::size_t stride = row_stride();
        return Tensor(std::move(s), std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                                                        data_.begin() + static_cast<std::ptrdiff_t>(end * stride)));
    }

    Tensor gather_rows(std::span<const std::size_t> indices) const {
        if (indices.empty()) throw Error(Errc::ShapeMismatch, "Tensor::gather_rows", "no rows selected");
        Shape s = shape_;
        s[0] = indices.size();
        const std::size_t stride = row_stride();
        std::vector<double> out;
        out.reserve(indices.size() * stride);
        for (std::size_t idx : indices) {
            auto r = row(idx);
            out.insert(out.end(), r.begin(), r.end());
        }
        return Tensor(std::move(s), std::move(out));
    }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    static void validate_shape(const Shape& shape) {
        if (shape.empty()) throw Error(Errc::ShapeMismatch, "Tensor", "rank-0 shape");
        for (std::size_t e : shape)
            if (e == 0) throw Error(Errc::ShapeMismatch, "Tensor", "zero extent in " + shape_string(shape));
    }

    Shape shape_;
    std::vector<double> data_;
};

} // namespace bcglm
