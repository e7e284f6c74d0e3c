#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace trusttune {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense fp64 tensor, row-major. `grad`, when present, matches `values` in
// length; leaves with gradient tracking enabled accumulate into it.
struct Tensor {
    Shape shape;
    std::vector<double> values;
    std::optional<std::vector<double>> grad;

    Tensor() = default;
    Tensor(Shape s, std::vector<double> v);

    static Tensor zeros(const Shape& shape);
    static Tensor full(const Shape& shape, double value);
    static Tensor scalar(double value);

    std::size_t size() const { return values.size(); }
    std::size_t rows() const;
    std::size_t cols() const;
    bool is_scalar() const { return values.size() == 1; }
    bool is_matrix() const { return shape.size() == 2; }

    double& at(std::size_t r, std::size_t c);
    double at(std::size_t r, std::size_t c) const;

    void ensure_grad();
    void zero_grad();
    bool all_finite() const;
};

bool same_shape(const Tensor& a, const Tensor& b);

}  // namespace trusttune
