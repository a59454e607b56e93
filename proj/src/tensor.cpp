#include "ckd/tensor.hpp"

#include <cmath>
#include <sstream>

namespace ckd {

std::int64_t Tensor::volume(const std::vector<int>& shape) {
    std::int64_t v = 1;
    for (int d : shape) v *= d;
    return v;
}

std::int64_t Tensor::checked_volume(const std::vector<int>& shape) {
    std::int64_t v = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("Tensor: non-positive dimension in shape " + shape_to_string(shape));
        v *= d;
    }
    return v;
}

bool Tensor::all_finite() const {
    for (double x : data_) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

void Tensor::require_finite(const std::string& context) const {
    if (!all_finite()) {
        throw std::domain_error(context + ": tensor contains a non-finite value");
    }
}

double Tensor::sum() const {
    double s = 0.0;
    for (double x : data_) s += x;
    return s;
}

double Tensor::dot(const Tensor& o) const {
    if (data_.size() != o.data_.size()) {
        throw std::invalid_argument("Tensor::dot: size mismatch " + shape_str() + " vs " + o.shape_str());
    }
    double s = 0.0;
    for (std::size_t i = 0; i < data_.size(); ++i) s += data_[i] * o.data_[i];
    return s;
}

double Tensor::norm() const { return std::sqrt(dot(*this)); }

double Tensor::max_abs() const {
    double m = 0.0;
    for (double x : data_) m = std::max(m, std::fabs(x));
    return m;
}

Tensor& Tensor::operator+=(const Tensor& o) {
    if (!same_shape(o)) {
        throw std::invalid_argument("Tensor::operator+=: shape mismatch " + shape_str() + " vs " + o.shape_str());
    }
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
}

Tensor& Tensor::operator*=(double s) {
    for (auto& x : data_) x *= s;
    return *this;
}

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

std::string shape_to_string(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

} // namespace ckd
