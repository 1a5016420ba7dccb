#include "omnisal/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace omnisal {

std::string shape_str(const Shape& shape) {
    std::string s = "(";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (auto d : shape) {
        if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(static_cast<size_t>(shape_numel(shape_)), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != static_cast<int64_t>(data_.size())) {
        throw ShapeError("tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                         shape_str(shape_));
    }
}

Tensor Tensor::from(std::initializer_list<double> values, Shape shape) {
    return Tensor(std::move(shape), std::vector<double>(values));
}

int64_t Tensor::dim(int64_t axis) const {
    if (axis < 0) axis += rank();
    if (axis < 0 || axis >= rank()) throw ShapeError("axis out of range for shape " + shape_str(shape_));
    return shape_[static_cast<size_t>(axis)];
}

int64_t Tensor::offset(std::initializer_list<int64_t> index) const {
    if (static_cast<int64_t>(index.size()) != rank()) {
        throw ShapeError("index rank mismatch for shape " + shape_str(shape_));
    }
    int64_t off = 0;
    size_t axis = 0;
    for (auto i : index) {
        if (i < 0 || i >= shape_[axis]) throw ShapeError("index out of range for shape " + shape_str(shape_));
        off = off * shape_[axis] + i;
        ++axis;
    }
    return off;
}

double& Tensor::at(std::initializer_list<int64_t> index) { return data_[static_cast<size_t>(offset(index))]; }
double Tensor::at(std::initializer_list<int64_t> index) const { return data_[static_cast<size_t>(offset(index))]; }

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != numel()) {
        throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::add_(const Tensor& other) {
    if (other.numel() != numel()) {
        throw ShapeError("add_: " + shape_str(shape_) + " vs " + shape_str(other.shape_));
    }
    for (size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw ShapeError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace omnisal
