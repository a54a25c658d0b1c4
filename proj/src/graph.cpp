#include "modalmeta/graph.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace modalmeta {

namespace {

std::atomic<std::uint64_t> g_next_id{1};

std::shared_ptr<Node> make_node(Op op, std::vector<Expr> inputs, Tensor value) {
    auto n = std::make_shared<Node>();
    n->op = op;
    n->inputs = std::move(inputs);
    n->value = std::move(value);
    n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    return n;
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
    throw std::invalid_argument(std::string(op) + ": shapes " + shape_to_string(a) + " and " +
                                shape_to_string(b) + " are incompatible");
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const std::string& detail) {
    throw std::invalid_argument(std::string(op) + ": shape " + shape_to_string(a) + " " + detail);
}

void require(const Expr& e, const char* op) {
    if (!e) throw std::invalid_argument(std::string(op) + ": null expression");
}

// strides of `shape` aligned right into a rank-r frame, 0 where the axis is
// broadcast (missing or size 1)
std::vector<std::size_t> broadcast_strides(const Shape& shape, const Shape& out) {
    std::size_t r = out.size();
    std::vector<std::size_t> strides(r, 0);
    std::size_t stride = 1;
    std::size_t ra = shape.size();
    for (std::size_t i = 0; i < ra; ++i) {
        std::size_t ax = ra - 1 - i;          // axis in shape
        std::size_t outax = r - 1 - i;        // corresponding axis in out
        strides[outax] = (shape[ax] == 1 && out[outax] != 1) ? 0 : stride;
        stride *= shape[ax];
    }
    return strides;
}

// shape with leading 1s stripped
Shape strip_leading_ones(const Shape& s) {
    std::size_t i = 0;
    while (i < s.size() && s[i] == 1) ++i;
    return Shape(s.begin() + static_cast<std::ptrdiff_t>(i), s.end());
}

bool is_trailing_block(const Shape& small, const Shape& big) {
    Shape s = strip_leading_ones(small);
    if (s.size() > big.size()) return false;
    return std::equal(s.begin(), s.end(), big.end() - static_cast<std::ptrdiff_t>(s.size()));
}

template <class F>
Tensor elementwise(const Tensor& A, const Tensor& B, const char* name, F f) {
    Shape out_shape = broadcast_shape(A.shape(), B.shape(), name);
    Tensor out(std::move(out_shape));
    const Shape& os = out.shape();
    const std::size_t n = out.size();
    const double* a = A.data();
    const double* b = B.data();
    double* o = out.data();

    if (A.shape() == B.shape()) {
        for (std::size_t i = 0; i < n; ++i) o[i] = f(a[i], b[i]);
    } else if (B.size() == 1) {
        const double bv = b[0];
        for (std::size_t i = 0; i < n; ++i) o[i] = f(a[i], bv);
    } else if (A.size() == 1) {
        const double av = a[0];
        for (std::size_t i = 0; i < n; ++i) o[i] = f(av, b[i]);
    } else if (n == A.size() && is_trailing_block(B.shape(), A.shape())) {
        const std::size_t m = B.size();
        for (std::size_t i = 0; i < n; ++i) o[i] = f(a[i], b[i % m]);
    } else if (n == B.size() && is_trailing_block(A.shape(), B.shape())) {
        const std::size_t m = A.size();
        for (std::size_t i = 0; i < n; ++i) o[i] = f(a[i % m], b[i]);
    } else {
        const std::size_t r = os.size();
        std::vector<std::size_t> sa = broadcast_strides(A.shape(), os);
        std::vector<std::size_t> sb = broadcast_strides(B.shape(), os);
        std::vector<std::size_t> idx(r, 0);
        std::size_t offa = 0, offb = 0;
        for (std::size_t i = 0; i < n; ++i) {
            o[i] = f(a[offa], b[offb]);
            for (std::size_t ax = r; ax-- > 0;) {
                ++idx[ax];
                offa += sa[ax];
                offb += sb[ax];
                if (idx[ax] < os[ax]) break;
                offa -= sa[ax] * os[ax];
                offb -= sb[ax] * os[ax];
                idx[ax] = 0;
            }
        }
    }
    return out;
}

template <class F>
Tensor unary(const Tensor& A, F f) {
    Tensor out(A.shape());
    const double* a = A.data();
    double* o = out.data();
    const std::size_t n = A.size();
    for (std::size_t i = 0; i < n; ++i) o[i] = f(a[i]);
    return out;
}

// outer x m x inner decomposition around `axis`
void axis_split(const Shape& s, std::size_t axis, std::size_t& outer, std::size_t& m,
                std::size_t& inner) {
    outer = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    m = s[axis];
    inner = 1;
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}

}  // namespace

Expr leaf(Tensor value, std::string name) {
    auto n = make_node(Op::Leaf, {}, std::move(value));
    n->name = std::move(name);
    return n;
}

Expr scalar_expr(double v) { return leaf(Tensor::scalar(v)); }

Expr add(const Expr& a, const Expr& b) {
    require(a, "add");
    require(b, "add");
    return make_node(Op::Add, {a, b},
                     elementwise(a->value, b->value, "add", [](double x, double y) { return x + y; }));
}

Expr sub(const Expr& a, const Expr& b) {
    require(a, "subtract");
    require(b, "subtract");
    return make_node(Op::Sub, {a, b}, elementwise(a->value, b->value, "subtract",
                                                  [](double x, double y) { return x - y; }));
}

Expr mul(const Expr& a, const Expr& b) {
    require(a, "multiply");
    require(b, "multiply");
    return make_node(Op::Mul, {a, b}, elementwise(a->value, b->value, "multiply",
                                                  [](double x, double y) { return x * y; }));
}

Expr matmul(const Expr& a, const Expr& b) {
    require(a, "matmul");
    require(b, "matmul");
    const Tensor& A = a->value;
    const Tensor& B = b->value;
    if (A.rank() != 2 || B.rank() != 2) shape_fail("matmul", A.shape(), B.shape());
    std::size_t m = A.shape()[0], k = A.shape()[1];
    if (B.shape()[0] != k) shape_fail("matmul", A.shape(), B.shape());
    std::size_t n = B.shape()[1];
    Tensor out(Shape{m, n});
    const double* pa = A.data();
    const double* pb = B.data();
    double* po = out.data();
    for (std::size_t i = 0; i < m; ++i) {
        double* orow = po + i * n;
        const double* arow = pa + i * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            if (av == 0.0) continue;
            const double* brow = pb + kk * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return make_node(Op::MatMul, {a, b}, std::move(out));
}

Expr transpose(const Expr& a) {
    require(a, "transpose");
    const Tensor& A = a->value;
    if (A.rank() != 2) shape_fail("transpose", A.shape(), "is not rank-2");
    std::size_t m = A.shape()[0], n = A.shape()[1];
    Tensor out(Shape{n, m});
    const double* pa = A.data();
    double* po = out.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) po[j * m + i] = pa[i * n + j];
    return make_node(Op::Transpose, {a}, std::move(out));
}

Expr broadcast_to(const Expr& a, Shape shape) {
    require(a, "broadcast");
    const Tensor& A = a->value;
    if (broadcast_shape(A.shape(), shape, "broadcast") != shape) {
        shape_fail("broadcast", A.shape(), shape);
    }
    Tensor out(shape);
    const std::size_t n = out.size();
    const double* pa = A.data();
    double* po = out.data();
    if (A.size() == 1) {
        const double v = pa[0];
        for (std::size_t i = 0; i < n; ++i) po[i] = v;
    } else if (is_trailing_block(A.shape(), shape)) {
        const std::size_t m = A.size();
        for (std::size_t i = 0; i < n; ++i) po[i] = pa[i % m];
    } else {
        const std::size_t r = shape.size();
        std::vector<std::size_t> sa = broadcast_strides(A.shape(), shape);
        std::vector<std::size_t> idx(r, 0);
        std::size_t offa = 0;
        for (std::size_t i = 0; i < n; ++i) {
            po[i] = pa[offa];
            for (std::size_t ax = r; ax-- > 0;) {
                ++idx[ax];
                offa += sa[ax];
                if (idx[ax] < shape[ax]) break;
                offa -= sa[ax] * shape[ax];
                idx[ax] = 0;
            }
        }
    }
    return make_node(Op::Broadcast, {a}, std::move(out));
}

Expr concat(std::vector<Expr> parts, std::size_t axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no operands");
    for (const Expr& p : parts) require(p, "concat");
    const Shape& first = parts[0]->value.shape();
    if (axis >= first.size()) shape_fail("concat", first, "has no axis " + std::to_string(axis));
    Shape out_shape = first;
    std::size_t total = first[axis];
    for (std::size_t p = 1; p < parts.size(); ++p) {
        const Shape& s = parts[p]->value.shape();
        if (s.size() != first.size()) shape_fail("concat", first, s);
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i != axis && s[i] != first[i]) shape_fail("concat", first, s);
        }
        total += s[axis];
    }
    out_shape[axis] = total;
    std::size_t outer, m, inner;
    axis_split(out_shape, axis, outer, m, inner);
    Tensor out(out_shape);
    double* po = out.data();
    std::size_t off = 0;
    for (const Expr& p : parts) {
        const Tensor& P = p->value;
        const std::size_t dp = P.shape()[axis];
        const double* pp = P.data();
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy(pp + o * dp * inner, pp + (o + 1) * dp * inner,
                      po + (o * m + off) * inner);
        }
        off += dp;
    }
    auto n = make_node(Op::Concat, std::move(parts), std::move(out));
    n->axis = axis;
    return n;
}

Expr slice(const Expr& a, std::vector<std::size_t> starts, std::vector<std::size_t> stops) {
    require(a, "slice");
    const Tensor& A = a->value;
    const Shape& s = A.shape();
    if (starts.size() != s.size() || stops.size() != s.size()) {
        shape_fail("slice", s, "wants " + std::to_string(s.size()) + "-axis bounds");
    }
    Shape out_shape(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (starts[i] > stops[i] || stops[i] > s[i]) {
            shape_fail("slice", s,
                       "bounds [" + std::to_string(starts[i]) + "," + std::to_string(stops[i]) +
                           ") invalid on axis " + std::to_string(i));
        }
        out_shape[i] = stops[i] - starts[i];
    }
    Tensor out(out_shape);
    const std::size_t n = out.size();
    if (n > 0) {
        const std::size_t r = s.size();
        std::vector<std::size_t> in_strides(r, 1);
        for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * s[i];
        std::size_t base = 0;
        for (std::size_t i = 0; i < r; ++i) base += starts[i] * in_strides[i];
        std::vector<std::size_t> idx(r, 0);
        std::size_t offa = base;
        const double* pa = A.data();
        double* po = out.data();
        for (std::size_t i = 0; i < n; ++i) {
            po[i] = pa[offa];
            for (std::size_t ax = r; ax-- > 0;) {
                ++idx[ax];
                offa += in_strides[ax];
                if (idx[ax] < out_shape[ax]) break;
                offa -= in_strides[ax] * out_shape[ax];
                idx[ax] = 0;
            }
        }
    }
    auto n2 = make_node(Op::Slice, {a}, std::move(out));
    Node* mut = n2.get();
    mut->starts = std::move(starts);
    mut->stops = std::move(stops);
    return n2;
}

Expr pad_to(const Expr& a, Shape shape, std::vector<std::size_t> starts) {
    require(a, "pad");
    const Tensor& A = a->value;
    const Shape& s = A.shape();
    if (starts.size() != s.size() || shape.size() != s.size()) {
        shape_fail("pad", s, "rank mismatch with target " + shape_to_string(shape));
    }
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (starts[i] + s[i] > shape[i]) {
            shape_fail("pad", s, "does not fit in " + shape_to_string(shape) + " at offset " +
                                     std::to_string(starts[i]) + " (axis " + std::to_string(i) +
                                     ")");
        }
    }
    Tensor out(shape);  // zeros
    const std::size_t n = A.size();
    if (n > 0) {
        const std::size_t r = shape.size();
        std::vector<std::size_t> out_strides(r, 1);
        for (std::size_t i = r; i-- > 1;) out_strides[i - 1] = out_strides[i] * shape[i];
        std::size_t base = 0;
        for (std::size_t i = 0; i < r; ++i) base += starts[i] * out_strides[i];
        std::vector<std::size_t> idx(r, 0);
        std::size_t offo = base;
        const double* pa = A.data();
        double* po = out.data();
        for (std::size_t i = 0; i < n; ++i) {
            po[offo] = pa[i];
            for (std::size_t ax = r; ax-- > 0;) {
                ++idx[ax];
                offo += out_strides[ax];
                if (idx[ax] < s[ax]) break;
                offo -= out_strides[ax] * s[ax];
                idx[ax] = 0;
            }
        }
    }
    auto n2 = make_node(Op::Pad, {a}, std::move(out));
    Node* mut = n2.get();
    mut->starts = std::move(starts);
    return n2;
}

Expr sum_all(const Expr& a) {
    require(a, "sum");
    const double* pa = a->value.data();
    double acc = 0.0;
    const std::size_t n = a->value.size();
    for (std::size_t i = 0; i < n; ++i) acc += pa[i];
    return make_node(Op::SumAll, {a}, Tensor::scalar(acc));
}

Expr sum_axis(const Expr& a, std::size_t axis, bool keepdims) {
    require(a, "sum_axis");
    const Tensor& A = a->value;
    const Shape& s = A.shape();
    if (axis >= s.size()) shape_fail("sum_axis", s, "has no axis " + std::to_string(axis));
    std::size_t outer, m, inner;
    axis_split(s, axis, outer, m, inner);
    Shape out_shape;
    out_shape.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i == axis) {
            if (keepdims) out_shape.push_back(1);
        } else {
            out_shape.push_back(s[i]);
        }
    }
    Tensor out(out_shape);
    const double* pa = A.data();
    double* po = out.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            double acc = 0.0;
            const double* base = pa + o * m * inner + i;
            for (std::size_t k = 0; k < m; ++k) acc += base[k * inner];
            po[o * inner + i] = acc;
        }
    }
    auto n = make_node(Op::SumAxis, {a}, std::move(out));
    Node* mut = n.get();
    mut->axis = axis;
    mut->keepdims = keepdims;
    return n;
}

Expr mean_all(const Expr& a) {
    require(a, "mean");
    if (a->value.size() == 0) throw std::invalid_argument("mean: empty tensor");
    return scale(sum_all(a), 1.0 / static_cast<double>(a->value.size()));
}

Expr reshape(const Expr& a, Shape shape) {
    require(a, "reshape");
    if (shape_size(shape) != a->value.size()) {
        shape_fail("reshape", a->value.shape(), shape);
    }
    Tensor out(std::move(shape), a->value.values());
    return make_node(Op::Reshape, {a}, std::move(out));
}

Expr square(const Expr& a) {
    require(a, "square");
    return make_node(Op::Square, {a}, unary(a->value, [](double x) { return x * x; }));
}

Expr relu(const Expr& a) {
    require(a, "relu");
    return make_node(Op::Relu, {a}, unary(a->value, [](double x) { return x > 0.0 ? x : 0.0; }));
}

Expr relu_mask(const Expr& a) {
    require(a, "relu_mask");
    return make_node(Op::ReluMask, {a},
                     unary(a->value, [](double x) { return x > 0.0 ? 1.0 : 0.0; }));
}

Expr tanh(const Expr& a) {
    require(a, "tanh");
    return make_node(Op::Tanh, {a}, unary(a->value, [](double x) { return std::tanh(x); }));
}

Expr sigmoid(const Expr& a) {
    require(a, "sigmoid");
    return make_node(Op::Sigmoid, {a},
                     unary(a->value, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }));
}

Expr softmax(const Expr& a, std::size_t axis) {
    require(a, "softmax");
    const Tensor& A = a->value;
    const Shape& s = A.shape();
    if (axis >= s.size()) shape_fail("softmax", s, "has no axis " + std::to_string(axis));
    std::size_t outer, m, inner;
    axis_split(s, axis, outer, m, inner);
    Tensor out(s);
    const double* pa = A.data();
    double* po = out.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * m * inner + i;
            double mx = pa[base];
            for (std::size_t k = 1; k < m; ++k) mx = std::max(mx, pa[base + k * inner]);
            double denom = 0.0;
            for (std::size_t k = 0; k < m; ++k) {
                double e = std::exp(pa[base + k * inner] - mx);
                po[base + k * inner] = e;
                denom += e;
            }
            const double inv = 1.0 / denom;
            for (std::size_t k = 0; k < m; ++k) po[base + k * inner] *= inv;
        }
    }
    auto n = make_node(Op::Softmax, {a}, std::move(out));
    n->axis = axis;
    return n;
}

Expr scale(const Expr& a, double factor) {
    require(a, "scale");
    auto n = make_node(Op::Scale, {a}, unary(a->value, [factor](double x) { return factor * x; }));
    n->factor = factor;
    return n;
}

Expr detach(const Expr& a) {
    require(a, "detach");
    return make_node(Op::Detach, {a}, a->value);
}

const Tensor& evaluate(const Expr& e) {
    require(e, "evaluate");
    return e->value;
}

// ---- ParamSet -------------------------------------------------------------

void ParamSet::add(std::string name, Expr e) {
    if (!e) throw std::invalid_argument("ParamSet.add: null expression for " + name);
    if (contains(name)) throw std::invalid_argument("ParamSet.add: duplicate name " + name);
    items_.emplace_back(std::move(name), std::move(e));
}

bool ParamSet::contains(const std::string& name) const {
    for (const auto& [n, e] : items_) {
        if (n == name) return true;
    }
    return false;
}

const Expr& ParamSet::at(const std::string& name) const {
    for (const auto& [n, e] : items_) {
        if (n == name) return e;
    }
    throw std::invalid_argument("ParamSet.at: no parameter named " + name);
}

std::size_t ParamSet::total_entries() const {
    std::size_t n = 0;
    for (const auto& [name, e] : items_) n += e->value.size();
    return n;
}

ParamSet ParamSet::with_value(const std::string& name, Tensor v) const {
    ParamSet out;
    bool found = false;
    for (const auto& [n, e] : items_) {
        if (n == name) {
            if (v.shape() != e->value.shape()) {
                throw std::invalid_argument("ParamSet.with_value: shape mismatch for " + name);
            }
            out.add(n, leaf(std::move(v), n));
            found = true;
        } else {
            out.add(n, e);
        }
    }
    if (!found) throw std::invalid_argument("ParamSet.with_value: no parameter named " + name);
    return out;
}

// ---- gradient --------------------------------------------------------------

namespace {

struct NodeInfo {
    Expr expr;
    bool reaches = false;  // some differentiation target lies beneath
};

// adjoint shaped like `g` reduced to `target` by summing broadcast axes
Expr reduce_to(Expr g, const Shape& target) {
    if (g->value.shape() == target) return g;
    while (g->value.rank() > target.size()) g = sum_axis(g, 0, false);
    for (std::size_t i = 0; i < target.size(); ++i) {
        if (target[i] == 1 && g->value.shape()[i] != 1) g = sum_axis(g, i, true);
    }
    if (g->value.shape() != target) {
        shape_fail("gradient", g->value.shape(), target);
    }
    return g;
}

}  // namespace

std::vector<Expr> gradient(const Expr& root, const std::vector<Expr>& targets) {
    require(root, "gradient");
    if (root->value.size() != 1) {
        throw std::invalid_argument("gradient: expression with shape " +
                                    shape_to_string(root->value.shape()) + " is not a scalar");
    }
    for (const Expr& t : targets) require(t, "gradient");

    std::unordered_set<const Node*> target_set;
    for (const Expr& t : targets) target_set.insert(t.get());

    // Collect the reachable subgraph. Ascending id is a topological order,
    // so one sorted sweep computes reachability bottom-up.
    std::unordered_map<const Node*, NodeInfo> info;
    info.reserve(256);
    {
        std::vector<const Node*> stack{root.get()};
        info[root.get()].expr = root;
        while (!stack.empty()) {
            const Node* n = stack.back();
            stack.pop_back();
            for (const Expr& in : n->inputs) {
                auto [it, inserted] = info.try_emplace(in.get());
                if (inserted) {
                    it->second.expr = in;
                    stack.push_back(in.get());
                }
            }
        }
    }
    std::vector<const Node*> order;
    order.reserve(info.size());
    for (const auto& [n, inf] : info) order.push_back(n);
    std::sort(order.begin(), order.end(),
              [](const Node* a, const Node* b) { return a->id < b->id; });

    for (const Node* n : order) {
        NodeInfo& inf = info[n];
        if (target_set.count(n)) {
            inf.reaches = true;
            continue;
        }
        if (n->op == Op::Detach || n->op == Op::ReluMask) continue;  // gradient barrier
        for (const Expr& in : n->inputs) {
            if (info[in.get()].reaches) {
                inf.reaches = true;
                break;
            }
        }
    }

    std::unordered_map<const Node*, Expr> adjoint;
    auto accumulate = [&adjoint](const Node* n, Expr contribution) {
        auto it = adjoint.find(n);
        if (it == adjoint.end()) {
            adjoint.emplace(n, std::move(contribution));
        } else {
            it->second = add(it->second, contribution);
        }
    };

    if (info[root.get()].reaches) {
        adjoint[root.get()] = leaf(Tensor::full(root->value.shape(), 1.0));

        // reverse topological sweep
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            const Node* n = *it;
            if (!info[n].reaches) continue;
            auto adj_it = adjoint.find(n);
            if (adj_it == adjoint.end()) continue;
            const Expr a = adj_it->second;
            const Expr& self = info[n].expr;
            auto reaches_input = [&](std::size_t i) {
                return info[n->inputs[i].get()].reaches;
            };

            switch (n->op) {
                case Op::Leaf:
                case Op::Detach:
                case Op::ReluMask:
                    break;
                case Op::Add: {
                    if (reaches_input(0))
                        accumulate(n->inputs[0].get(), reduce_to(a, n->inputs[0]->value.shape()));
                    if (reaches_input(1))
                        accumulate(n->inputs[1].get(), reduce_to(a, n->inputs[1]->value.shape()));
                    break;
                }
                case Op::Sub: {
                    if (reaches_input(0))
                        accumulate(n->inputs[0].get(), reduce_to(a, n->inputs[0]->value.shape()));
                    if (reaches_input(1))
                        accumulate(n->inputs[1].get(),
                                   reduce_to(scale(a, -1.0), n->inputs[1]->value.shape()));
                    break;
                }
                case Op::Mul: {
                    if (reaches_input(0))
                        accumulate(n->inputs[0].get(),
                                   reduce_to(mul(a, n->inputs[1]), n->inputs[0]->value.shape()));
                    if (reaches_input(1))
                        accumulate(n->inputs[1].get(),
                                   reduce_to(mul(a, n->inputs[0]), n->inputs[1]->value.shape()));
                    break;
                }
                case Op::MatMul: {
                    if (reaches_input(0))
                        accumulate(n->inputs[0].get(), matmul(a, transpose(n->inputs[1])));
                    if (reaches_input(1))
                        accumulate(n->inputs[1].get(), matmul(transpose(n->inputs[0]), a));
                    break;
                }
                case Op::Transpose: {
                    if (reaches_input(0)) accumulate(n->inputs[0].get(), transpose(a));
                    break;
                }
                case Op::Broadcast: {
                    if (reaches_input(0))
                        accumulate(n->inputs[0].get(), reduce_to(a, n->inputs[0]->value.shape()));
                    break;
                }
                case Op::Concat: {
                    const Shape& os = n->value.shape();
                    std::size_t off = 0;
                    for (std::size_t p = 0; p < n->inputs.size(); ++p) {
                        const Shape& ps = n->inputs[p]->value.shape();
                        const std::size_t dp = ps[n->axis];
                        if (reaches_input(p)) {
                            std::vector<std::size_t> starts(os.size(), 0), stops(os.begin(),
                                                                                 os.end());
                            starts[n->axis] = off;
                            stops[n->axis] = off + dp;
                            accumulate(n->inputs[p].get(), slice(a, starts, stops));
                        }
                        off += dp;
                    }
                    break;
                }
                case Op::Slice: {
                    if (reaches_input(0))
                        accumulate(n->inputs[0].get(),
                                   pad_to(a, n->inputs[0]->value.shape(), n->starts));
                    break;
                }
                case Op::Pad: {
                    if (reaches_input(0)) {
                        const Shape& is = n->inputs[0]->value.shape();
                        std::vector<std::size_t> stops(n->starts);
                        for (std::size_t i = 0; i < stops.size(); ++i) stops[i] += is[i];
                        accumulate(n->inputs[0].get(), slice(a, n->starts, stops));
                    }
                    break;
                }
                case Op::SumAll: {
                    if (reaches_input(0))
                        accumulate(n->inputs[0].get(),
                                   broadcast_to(a, n->inputs[0]->value.shape()));
                    break;
                }
                case Op::SumAxis: {
                    if (reaches_input(0)) {
                        const Shape& is = n->inputs[0]->value.shape();
                        Expr g = a;
                        if (!n->keepdims) {
                            Shape kept = is;
                            kept[n->axis] = 1;
                            g = reshape(g, kept);
                        }
                        accumulate(n->inputs[0].get(), broadcast_to(g, is));
                    }
                    break;
                }
                case Op::Reshape: {
                    if (reaches_input(0))
                        accumulate(n->inputs[0].get(), reshape(a, n->inputs[0]->value.shape()));
                    break;
                }
                case Op::Square: {
                    if (reaches_input(0))
                        accumulate(n->inputs[0].get(), scale(mul(a, n->inputs[0]), 2.0));
                    break;
                }
                case Op::Relu: {
                    if (reaches_input(0))
                        accumulate(n->inputs[0].get(), mul(a, relu_mask(n->inputs[0])));
                    break;
                }
                case Op::Tanh: {
                    if (reaches_input(0))
                        accumulate(n->inputs[0].get(),
                                   mul(a, sub(scalar_expr(1.0), square(self))));
                    break;
                }
                case Op::Sigmoid: {
                    if (reaches_input(0))
                        accumulate(n->inputs[0].get(), mul(a, sub(self, square(self))));
                    break;
                }
                case Op::Softmax: {
                    if (reaches_input(0)) {
                        Expr w = sum_axis(mul(a, self), n->axis, true);
                        accumulate(n->inputs[0].get(), mul(self, sub(a, w)));
                    }
                    break;
                }
                case Op::Scale: {
                    if (reaches_input(0)) accumulate(n->inputs[0].get(), scale(a, n->factor));
                    break;
                }
            }
        }
    }

    std::vector<Expr> out;
    out.reserve(targets.size());
    for (const Expr& t : targets) {
        auto it = adjoint.find(t.get());
        if (it != adjoint.end()) {
            out.push_back(it->second);
        } else {
            out.push_back(leaf(Tensor::zeros(t->value.shape())));
        }
    }
    return out;
}

ParamSet gradient(const Expr& scalar, const ParamSet& wrt) {
    std::vector<Expr> targets;
    targets.reserve(wrt.size());
    for (const auto& [name, e] : wrt) targets.push_back(e);
    std::vector<Expr> grads = gradient(scalar, targets);
    ParamSet out;
    std::size_t i = 0;
    for (const auto& [name, e] : wrt) out.add(name, grads[i++]);
    return out;
}

}  // namespace modalmeta
