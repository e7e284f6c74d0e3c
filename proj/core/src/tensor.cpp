#include "trusttune/tensor.hpp"

#include <cmath>
#include <sstream>

#include "trusttune/errors.hpp"

namespace trusttune {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

Tensor::Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
    for (std::size_t d : shape) {
        if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
    }
    if (shape_numel(shape) != values.size()) {
        throw ShapeError("tensor shape " + shape_str(shape) + " does not match value count " +
                         std::to_string(values.size()));
    }
}

Tensor Tensor::zeros(const Shape& shape) {
    return Tensor(shape, std::vector<double>(shape_numel(shape), 0.0));
}

Tensor Tensor::full(const Shape& shape, double value) {
    return Tensor(shape, std::vector<double>(shape_numel(shape), value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

std::size_t Tensor::rows() const {
    if (shape.size() != 2) throw ShapeError("rows() requires a matrix, got " + shape_str(shape));
    return shape[0];
}

std::size_t Tensor::cols() const {
    if (shape.size() != 2) throw ShapeError("cols() requires a matrix, got " + shape_str(shape));
    return shape[1];
}

double& Tensor::at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
double Tensor::at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }

void Tensor::ensure_grad() {
    if (!grad) grad.emplace(values.size(), 0.0);
}

void Tensor::zero_grad() {
    if (grad) std::fill(grad->begin(), grad->end(), 0.0);
}

bool Tensor::all_finite() const {
    for (double v : values) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

}  // namespace trusttune
