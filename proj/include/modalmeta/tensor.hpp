#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace modalmeta {

// Shape of a dense row-major tensor. An empty shape is a 0-d scalar
// (one element).
using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense multi-dimensional array of doubles, row-major.
class Tensor {
public:
    Tensor() : values_(1, 0.0) {}
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor scalar(double v);
    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double v);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return values_.size(); }

    double* data() { return values_.data(); }
    const double* data() const { return values_.data(); }
    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }

    double operator[](std::size_t i) const { return values_[i]; }
    double& operator[](std::size_t i) { return values_[i]; }

    // rank-2 accessor
    double at(std::size_t row, std::size_t col) const;

    // requires size() == 1
    double item() const;

    bool all_finite() const;

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.values_ == b.values_;
    }

private:
    Shape shape_;
    std::vector<double> values_;
};

// Broadcast semantics: shapes align on trailing axes; each pair of axes
// must match or one of them must be 1; missing leading axes count as 1.
bool broadcast_compatible(const Shape& a, const Shape& b);

// Result shape of broadcasting a with b; throws std::invalid_argument
// naming `op` on incompatible shapes.
Shape broadcast_shape(const Shape& a, const Shape& b, const char* op);

}  // namespace modalmeta
