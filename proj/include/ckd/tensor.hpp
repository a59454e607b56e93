#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace ckd {

/// Dense row-major tensor of 64-bit floats. Shapes are small (desk scale);
/// all layers and losses in this project operate on these values.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape)
        : shape_(std::move(shape)), data_(checked_volume(shape_), 0.0) {}

    Tensor(std::vector<int> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<std::size_t>(checked_volume(shape_)) != data_.size()) {
            throw std::invalid_argument("Tensor: data length " + std::to_string(data_.size()) +
                                        " does not match shape volume " +
                                        std::to_string(checked_volume(shape_)));
        }
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

    static Tensor full(std::vector<int> shape, double v) {
        Tensor t(std::move(shape));
        for (auto& x : t.data_) x = v;
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    /// Rank-3 (C,H,W) accessors used throughout the layer kernels.
    double& at(int c, int y, int x) {
        return data_[static_cast<std::size_t>((c * shape_[1] + y) * shape_[2] + x)];
    }
    double at(int c, int y, int x) const {
        return data_[static_cast<std::size_t>((c * shape_[1] + y) * shape_[2] + x)];
    }

    /// Rank-4 accessor (kernels: C_a, C_b, kh, kw).
    double& at4(int a, int b, int y, int x) {
        return data_[static_cast<std::size_t>(((a * shape_[1] + b) * shape_[2] + y) * shape_[3] + x)];
    }
    double at4(int a, int b, int y, int x) const {
        return data_[static_cast<std::size_t>(((a * shape_[1] + b) * shape_[2] + y) * shape_[3] + x)];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const;

    /// Throws std::domain_error when any entry is NaN/Inf.
    void require_finite(const std::string& context) const;

    Tensor reshaped(std::vector<int> new_shape) const {
        Tensor t(std::move(new_shape), data_);
        return t;
    }

    void fill(double v) {
        for (auto& x : data_) x = v;
    }

    double sum() const;
    double dot(const Tensor& o) const;
    double norm() const;
    double max_abs() const;

    Tensor& operator+=(const Tensor& o);
    Tensor& operator*=(double s);

    std::string shape_str() const;

    static std::int64_t volume(const std::vector<int>& shape);

private:
    static std::int64_t checked_volume(const std::vector<int>& shape);

    std::vector<int> shape_;
    std::vector<double> data_;
};

std::string shape_to_string(const std::vector<int>& shape);

} // namespace ckd
