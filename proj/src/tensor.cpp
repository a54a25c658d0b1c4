#include "modalmeta/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace modalmeta {

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), values_(shape_size(shape_), 0.0) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
    if (shape_size(shape_) != values_.size()) {
        throw std::invalid_argument("tensor: shape " + shape_to_string(shape_) + " wants " +
                                    std::to_string(shape_size(shape_)) + " values, got " +
                                    std::to_string(values_.size()));
    }
}

Tensor Tensor::scalar(double v) {
    Tensor t;
    t.values_[0] = v;
    return t;
}

Tensor Tensor::zeros(Shape shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(Shape shape, double v) {
    Tensor t(std::move(shape));
    for (double& x : t.values_) x = v;
    return t;
}

double Tensor::at(std::size_t row, std::size_t col) const {
    if (rank() != 2) {
        throw std::invalid_argument("tensor.at: rank-2 accessor on shape " +
                                    shape_to_string(shape_));
    }
    return values_[row * shape_[1] + col];
}

double Tensor::item() const {
    if (values_.size() != 1) {
        throw std::invalid_argument("tensor.item: shape " + shape_to_string(shape_) +
                                    " is not a scalar");
    }
    return values_[0];
}

bool Tensor::all_finite() const {
    for (double v : values_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

bool broadcast_compatible(const Shape& a, const Shape& b) {
    std::size_t ra = a.size(), rb = b.size();
    std::size_t r = ra > rb ? ra : rb;
    for (std::size_t i = 0; i < r; ++i) {
        std::size_t da = i < ra ? a[ra - 1 - i] : 1;
        std::size_t db = i < rb ? b[rb - 1 - i] : 1;
        if (da != db && da != 1 && db != 1) return false;
    }
    return true;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    if (!broadcast_compatible(a, b)) {
        throw std::invalid_argument(std::string(op) + ": shapes " + shape_to_string(a) + " and " +
                                    shape_to_string(b) + " do not broadcast");
    }
    std::size_t ra = a.size(), rb = b.size();
    std::size_t r = ra > rb ? ra : rb;
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) {
        std::size_t da = i < ra ? a[ra - 1 - i] : 1;
        std::size_t db = i < rb ? b[rb - 1 - i] : 1;
        out[r - 1 - i] = da > db ? da : db;
    }
    return out;
}

}  // namespace modalmeta
