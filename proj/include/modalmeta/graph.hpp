#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "modalmeta/tensor.hpp"

namespace modalmeta {

enum class Op : std::uint8_t {
    Leaf,
    Add,
    Sub,
    Mul,      // elementwise, broadcasting
    MatMul,   // rank-2 x rank-2
    Transpose,
    Broadcast,
    Concat,
    Slice,
    Pad,      // zero-embed into a larger shape; adjoint of Slice
    SumAll,
    SumAxis,
    Reshape,
    Square,
    Relu,
    ReluMask,  // 1 where input > 0 else 0; gradient defined as zero
    Tanh,
    Sigmoid,
    Softmax,
    Scale,    // multiply by a compile-time double
    Detach,
};

class Node;

/// Handle to an immutable computation-graph node. Graphs are DAGs; a node's
/// value is computed once at construction and never changes, so expressions
/// are safe to share across threads for reading.
using Expr = std::shared_ptr<const Node>;

class Node {
public:
    Op op = Op::Leaf;
    std::vector<Expr> inputs;
    Tensor value;

    // per-op attributes; only the relevant ones are meaningful
    double factor = 0.0;               // Scale
    std::size_t axis = 0;              // Concat, SumAxis, Softmax
    bool keepdims = false;             // SumAxis
    std::vector<std::size_t> starts;   // Slice, Pad (placement offsets)
    std::vector<std::size_t> stops;    // Slice
    std::string name;                  // Leaf

    // Monotone per-process id. Inputs always have smaller ids than their
    // consumers, so ascending id is a topological order.
    std::uint64_t id = 0;
};

// ---- graph construction -------------------------------------------------
// Each factory validates shapes (throwing std::invalid_argument with the
// operation name and offending shapes) and computes the result eagerly.

Expr leaf(Tensor value, std::string name = {});
Expr scalar_expr(double v);

Expr add(const Expr& a, const Expr& b);
Expr sub(const Expr& a, const Expr& b);
Expr mul(const Expr& a, const Expr& b);
Expr matmul(const Expr& a, const Expr& b);
Expr transpose(const Expr& a);
Expr broadcast_to(const Expr& a, Shape shape);
Expr concat(std::vector<Expr> parts, std::size_t axis);
Expr slice(const Expr& a, std::vector<std::size_t> starts, std::vector<std::size_t> stops);
Expr pad_to(const Expr& a, Shape shape, std::vector<std::size_t> starts);
Expr sum_all(const Expr& a);
Expr sum_axis(const Expr& a, std::size_t axis, bool keepdims);
Expr mean_all(const Expr& a);
Expr reshape(const Expr& a, Shape shape);
Expr square(const Expr& a);
Expr relu(const Expr& a);
Expr relu_mask(const Expr& a);
Expr tanh(const Expr& a);
Expr sigmoid(const Expr& a);
Expr softmax(const Expr& a, std::size_t axis);
Expr scale(const Expr& a, double factor);
Expr detach(const Expr& a);

inline Expr operator+(const Expr& a, const Expr& b) { return add(a, b); }
inline Expr operator-(const Expr& a, const Expr& b) { return sub(a, b); }
inline Expr operator*(const Expr& a, const Expr& b) { return mul(a, b); }
inline Expr operator*(const Expr& a, double c) { return scale(a, c); }
inline Expr operator*(double c, const Expr& a) { return scale(a, c); }
inline Expr operator-(const Expr& a) { return scale(a, -1.0); }

/// Value of an expression. Values are computed at construction, so this is a
/// cheap cached read; repeated calls return bit-identical tensors.
const Tensor& evaluate(const Expr& e);

// ---- named parameter collections ----------------------------------------

/// Ordered name -> expression collection. Parameter sets hold leaves; the
/// same container carries gradient results and adapted (non-leaf) parameters.
class ParamSet {
public:
    void add(std::string name, Expr e);
    bool contains(const std::string& name) const;
    const Expr& at(const std::string& name) const;

    std::size_t size() const { return items_.size(); }
    bool empty() const { return items_.empty(); }
    std::size_t total_entries() const;

    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }
    const std::pair<std::string, Expr>& item(std::size_t i) const { return items_[i]; }

    // Copy with one entry rebound to a fresh leaf holding `v`.
    ParamSet with_value(const std::string& name, Tensor v) const;

private:
    std::vector<std::pair<std::string, Expr>> items_;
};

// ---- differentiation -----------------------------------------------------

/// Reverse-mode gradient of a scalar expression with respect to `targets`.
/// The returned expressions are ordinary graph nodes, so they can be fed
/// back into `gradient` for higher-order derivatives. Targets that the
/// scalar does not depend on get zero tensors. relu' at exactly 0 is 0.
std::vector<Expr> gradient(const Expr& scalar, const std::vector<Expr>& targets);

/// ParamSet-shaped convenience overload; result preserves names and order.
ParamSet gradient(const Expr& scalar, const ParamSet& wrt);

}  // namespace modalmeta
