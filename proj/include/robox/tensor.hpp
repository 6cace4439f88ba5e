#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "robox/common.hpp"

namespace robox::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream o;
    o << "[";
    for (std::size_t i = 0; i < s.size(); ++i) o << (i ? "x" : "") << s[i];
    o << "]";
    return o.str();
}

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // allocated on demand; same length as data when present
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;  // reads this->grad, accumulates into parents' grad

    std::size_t numel() const { return data.size(); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

}  // namespace detail

/// Dense row-major float64 tensor with optional gradient tracking.
///
/// Tensors are cheap handles onto shared nodes of the computation graph.
/// They are immutable after construction except for gradient accumulation;
/// ops build new nodes and record the backward rule for reverse mode.
class Tensor {
public:
    Tensor() = default;

    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false) {
        if (shape_numel(shape) != data.size())
            throw ShapeError("Tensor: shape " + shape_str(shape) + " does not match buffer length " +
                             std::to_string(data.size()));
        for (auto d : shape)
            if (d == 0) throw ShapeError("Tensor: zero dimension in shape " + shape_str(shape));
        for (double x : data)
            if (!std::isfinite(x)) throw ParamError("Tensor: non-finite value in input buffer");
        auto n = std::make_shared<detail::Node>();
        n->shape = std::move(shape);
        n->data = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return from(std::move(shape), std::vector<double>(shape_numel(shape), 0.0), requires_grad);
    }

    static Tensor full(Shape shape, double v, bool requires_grad = false) {
        return from(std::move(shape), std::vector<double>(shape_numel(shape), v), requires_grad);
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return from(Shape{1}, std::vector<double>{v}, requires_grad);
    }

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    std::size_t rank() const { return n_->shape.size(); }
    std::size_t dim(std::size_t i) const { return n_->shape[i]; }
    std::size_t numel() const { return n_->data.size(); }
    bool requires_grad() const { return n_->requires_grad; }
    bool is_leaf() const { return n_->is_leaf; }

    const std::vector<double>& data() const { return n_->data; }
    double operator[](std::size_t i) const { return n_->data[i]; }
    double item() const {
        if (numel() != 1) throw ShapeError("item(): tensor has " + std::to_string(numel()) + " elements");
        return n_->data[0];
    }

    /// Gradient buffer; empty until a backward pass has touched this leaf.
    const std::vector<double>& grad() const { return n_->grad; }

    void zero_grad() {
        if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), 0.0);
    }

    /// Direct mutation is only allowed on leaves (parameter updates).
    std::vector<double>& leaf_data() {
        if (!n_->is_leaf) throw Error("leaf_data(): not a leaf tensor");
        return n_->data;
    }

    detail::Node* node() const { return n_.get(); }
    const std::shared_ptr<detail::Node>& node_ptr() const { return n_; }

private:
    explicit Tensor(std::shared_ptr<detail::Node> n) : n_(std::move(n)) {}
    std::shared_ptr<detail::Node> n_;

    friend Tensor make_op(Shape, std::vector<Tensor>, std::vector<double>,
                          std::function<void(detail::Node&)>);
};

/// Create an op node: output data plus the rule that pulls its gradient
/// back into the parents. The backward function is dropped when no parent
/// tracks gradients.
inline Tensor make_op(Shape shape, std::vector<Tensor> parents, std::vector<double> data,
                      std::function<void(detail::Node&)> backward_fn) {
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->is_leaf = false;
    for (const auto& p : parents) {
        n->parents.push_back(p.node_ptr());
        if (p.requires_grad()) n->requires_grad = true;
    }
    if (n->requires_grad) n->backward_fn = std::move(backward_fn);
    return Tensor(std::move(n));
}

// ---------------------------------------------------------------------------
// ComputationTape: topologically ordered record of the executed ops that are
// reachable from a loss node. Parents always precede their consumers.
// ---------------------------------------------------------------------------

class Tape {
public:
    static Tape from(const Tensor& loss) {
        Tape t;
        t.root_ = loss.node_ptr();
        std::unordered_set<detail::Node*> seen;
        std::unordered_set<detail::Node*> done;
        // Iterative post-order DFS; parents are visited before the node is
        // appended, so nodes_ is a topological order.
        std::vector<std::pair<detail::Node*, std::size_t>> stack;
        stack.emplace_back(loss.node(), 0);
        seen.insert(loss.node());
        while (!stack.empty()) {
            auto& [node, next_child] = stack.back();
            if (next_child < node->parents.size()) {
                detail::Node* p = node->parents[next_child].get();
                ++next_child;
                if (!seen.count(p)) {
                    seen.insert(p);
                    stack.emplace_back(p, 0);
                }
            } else {
                if (!done.count(node)) {
                    done.insert(node);
                    t.index_.emplace(node, t.nodes_.size());
                    t.nodes_.push_back(node);
                }
                stack.pop_back();
            }
        }
        t.parent_idx_.resize(t.nodes_.size());
        for (std::size_t i = 0; i < t.nodes_.size(); ++i)
            for (const auto& p : t.nodes_[i]->parents) t.parent_idx_[i].push_back(t.index_.at(p.get()));
        return t;
    }

    std::size_t size() const { return nodes_.size(); }
    const std::vector<std::size_t>& parents_of(std::size_t i) const { return parent_idx_[i]; }
    const detail::Node& node_at(std::size_t i) const { return *nodes_[i]; }

    /// Reverse pass. Seeds d(loss)/d(loss)=1, then visits every recorded
    /// node exactly once in reverse topological order. Returns the number
    /// of nodes visited.
    std::size_t backward() {
        if (root_->numel() != 1) throw Error("backward: loss must be a scalar tensor");
        for (detail::Node* n : nodes_) {
            if (!n->requires_grad) continue;
            if (n->is_leaf) {
                n->ensure_grad();  // keeps accumulated leaf gradients
            } else {
                n->grad.assign(n->data.size(), 0.0);
            }
        }
        if (root_->requires_grad) {
            root_->grad[0] += 1.0;
        }
        std::size_t visited = 0;
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            detail::Node* n = nodes_[i];
            ++visited;
            if (n->requires_grad && n->backward_fn) n->backward_fn(*n);
        }
        return visited;
    }

private:
    std::shared_ptr<detail::Node> root_;
    std::vector<detail::Node*> nodes_;
    std::vector<std::vector<std::size_t>> parent_idx_;
    std::unordered_map<detail::Node*, std::size_t> index_;
};

/// Populate gradients of every requires_grad leaf reachable from `loss`.
inline void backward(const Tensor& loss) { Tape::from(loss).backward(); }

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

inline void accum(Node* p, const std::vector<double>& g) {
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i];
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return make_op(a.shape(), {a, b}, std::move(out), [](detail::Node& n) {
        detail::accum(n.parents[0].get(), n.grad);
        detail::accum(n.parents[1].get(), n.grad);
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return make_op(a.shape(), {a, b}, std::move(out), [](detail::Node& n) {
        detail::accum(n.parents[0].get(), n.grad);
        detail::Node* pb = n.parents[1].get();
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] -= n.grad[i];
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return make_op(a.shape(), {a, b}, std::move(out), [](detail::Node& n) {
        detail::Node* pa = n.parents[0].get();
        detail::Node* pb = n.parents[1].get();
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] * pb->data[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] += n.grad[i] * pa->data[i];
        }
    });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "div");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] / b[i];
    return make_op(a.shape(), {a, b}, std::move(out), [](detail::Node& n) {
        detail::Node* pa = n.parents[0].get();
        detail::Node* pb = n.parents[1].get();
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] / pb->data[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i)
                pb->grad[i] -= n.grad[i] * n.data[i] / pb->data[i];
        }
    });
}

inline Tensor add_scalar(const Tensor& a, double s) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + s;
    return make_op(a.shape(), {a}, std::move(out),
                   [](detail::Node& n) { detail::accum(n.parents[0].get(), n.grad); });
}

inline Tensor mul_scalar(const Tensor& a, double s) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
    return make_op(a.shape(), {a}, std::move(out), [s](detail::Node& n) {
        detail::Node* p = n.parents[0].get();
        if (p->requires_grad) {
            p->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += n.grad[i] * s;
        }
    });
}

namespace detail {

template <typename Fwd, typename Dfn>
Tensor unary_op(const Tensor& a, Fwd f, Dfn dfdx) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i]);
    return make_op(a.shape(), {a}, std::move(out), [dfdx](detail::Node& n) {
        detail::Node* p = n.parents[0].get();
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            p->grad[i] += n.grad[i] * dfdx(p->data[i], n.data[i]);
    });
}

}  // namespace detail

inline Tensor relu(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

/// GELU, tanh approximation.
inline Tensor gelu(const Tensor& a) {
    constexpr double kC = 0.7978845608028653558798921198687;  // sqrt(2/pi)
    constexpr double kA = 0.044715;
    return detail::unary_op(
        a,
        [](double x) {
            double u = kC * (x + kA * x * x * x);
            return 0.5 * x * (1.0 + std::tanh(u));
        },
        [](double x, double) {
            double u = kC * (x + kA * x * x * x);
            double t = std::tanh(u);
            double sech2 = 1.0 - t * t;
            return 0.5 * (1.0 + t) + 0.5 * x * sech2 * kC * (1.0 + 3.0 * kA * x * x);
        });
}

inline Tensor tanh_t(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor sigmoid(const Tensor& a) {
    return detail::unary_op(
        a,
        [](double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
        [](double, double y) { return y * (1.0 - y); });
}

inline Tensor sin_t(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}

inline Tensor cos_t(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return std::cos(x); }, [](double x, double) { return -std::sin(x); });
}

inline Tensor abs_t(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return std::fabs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

/// sqrt with subgradient 0 at x == 0 (exact zeros stay exact).
inline Tensor sqrt_t(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return std::sqrt(x); },
        [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

/// Elementwise min; ties route the gradient to the first argument.
inline Tensor minimum(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "minimum");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] <= b[i] ? a[i] : b[i];
    return make_op(a.shape(), {a, b}, std::move(out), [](detail::Node& n) {
        detail::Node* pa = n.parents[0].get();
        detail::Node* pb = n.parents[1].get();
        if (pa->requires_grad) pa->ensure_grad();
        if (pb->requires_grad) pb->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            if (pa->data[i] <= pb->data[i]) {
                if (pa->requires_grad) pa->grad[i] += n.grad[i];
            } else if (pb->requires_grad) {
                pb->grad[i] += n.grad[i];
            }
        }
    });
}

/// Elementwise max; ties route the gradient to the first argument.
inline Tensor maximum(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "maximum");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] >= b[i] ? a[i] : b[i];
    return make_op(a.shape(), {a, b}, std::move(out), [](detail::Node& n) {
        detail::Node* pa = n.parents[0].get();
        detail::Node* pb = n.parents[1].get();
        if (pa->requires_grad) pa->ensure_grad();
        if (pb->requires_grad) pb->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            if (pa->data[i] >= pb->data[i]) {
                if (pa->requires_grad) pa->grad[i] += n.grad[i];
            } else if (pb->requires_grad) {
                pb->grad[i] += n.grad[i];
            }
        }
    });
}

/// Clamp to [lo, hi]; gradient passes where lo <= x <= hi.
inline Tensor clamp(const Tensor& a, double lo, double hi) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(hi, std::max(lo, a[i]));
    return make_op(a.shape(), {a}, std::move(out), [lo, hi](detail::Node& n) {
        detail::Node* p = n.parents[0].get();
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            if (p->data[i] >= lo && p->data[i] <= hi) p->grad[i] += n.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a[i];
    return make_op(Shape{1}, {a}, {s}, [](detail::Node& n) {
        detail::Node* p = n.parents[0].get();
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (double& g : p->grad) g += n.grad[0];
    });
}

inline Tensor mean(const Tensor& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a[i];
    const double inv = 1.0 / static_cast<double>(a.numel());
    return make_op(Shape{1}, {a}, {s * inv}, [inv](detail::Node& n) {
        detail::Node* p = n.parents[0].get();
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (double& g : p->grad) g += n.grad[0] * inv;
    });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    std::vector<double> out(a.data());
    return make_op(std::move(shape), {a}, std::move(out),
                   [](detail::Node& n) { detail::accum(n.parents[0].get(), n.grad); });
}

/// 2-D transpose.
inline Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("transpose: expected rank-2 tensor, got " + shape_str(a.shape()));
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
    return make_op(Shape{n, m}, {a}, std::move(out), [m, n](detail::Node& nd) {
        detail::Node* p = nd.parents[0].get();
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) p->grad[i * n + j] += nd.grad[j * m + i];
    });
}

/// Concatenate along `axis`. All inputs must agree on the other dims.
inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const std::size_t rank = parts[0].rank();
    if (axis >= rank) throw ShapeError("concat: axis out of range");
    Shape out_shape = parts[0].shape();
    for (std::size_t p = 1; p < parts.size(); ++p) {
        if (parts[p].rank() != rank) throw ShapeError("concat: rank mismatch");
        for (std::size_t d = 0; d < rank; ++d) {
            if (d == axis) continue;
            if (parts[p].dim(d) != out_shape[d]) throw ShapeError("concat: dim mismatch off-axis");
        }
        out_shape[axis] += parts[p].dim(axis);
    }
    // outer = product of dims before axis, inner = product after.
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= out_shape[d];
    for (std::size_t d = axis + 1; d < rank; ++d) inner *= out_shape[d];

    std::vector<double> out(shape_numel(out_shape));
    std::vector<std::size_t> piece_axis(parts.size());
    for (std::size_t p = 0; p < parts.size(); ++p) piece_axis[p] = parts[p].dim(axis);

    std::size_t axis_off = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const auto& src = parts[p].data();
        const std::size_t pa = piece_axis[p];
        for (std::size_t o = 0; o < outer; ++o)
            std::copy(src.begin() + static_cast<std::ptrdiff_t>(o * pa * inner),
                      src.begin() + static_cast<std::ptrdiff_t>((o + 1) * pa * inner),
                      out.begin() + static_cast<std::ptrdiff_t>((o * out_shape[axis] + axis_off) * inner));
        axis_off += pa;
    }
    const std::size_t out_axis = out_shape[axis];
    return make_op(out_shape, parts, std::move(out),
                   [outer, inner, out_axis, piece_axis](detail::Node& n) {
                       std::size_t axis_off = 0;
                       for (std::size_t p = 0; p < n.parents.size(); ++p) {
                           detail::Node* pp = n.parents[p].get();
                           const std::size_t pa = piece_axis[p];
                           if (pp->requires_grad) {
                               pp->ensure_grad();
                               for (std::size_t o = 0; o < outer; ++o) {
                                   const double* g = &n.grad[(o * out_axis + axis_off) * inner];
                                   double* dst = &pp->grad[o * pa * inner];
                                   for (std::size_t i = 0; i < pa * inner; ++i) dst[i] += g[i];
                               }
                           }
                           axis_off += pa;
                       }
                   });
}

/// Rows [r0, r1) of a 2-D tensor.
inline Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1) {
    if (a.rank() != 2) throw ShapeError("slice_rows: expected rank-2 tensor");
    if (r0 >= r1 || r1 > a.dim(0)) throw ShapeError("slice_rows: bad range");
    const std::size_t n = a.dim(1);
    std::vector<double> out(a.data().begin() + static_cast<std::ptrdiff_t>(r0 * n),
                            a.data().begin() + static_cast<std::ptrdiff_t>(r1 * n));
    return make_op(Shape{r1 - r0, n}, {a}, std::move(out), [r0, n](detail::Node& nd) {
        detail::Node* p = nd.parents[0].get();
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (std::size_t i = 0; i < nd.grad.size(); ++i) p->grad[r0 * n + i] += nd.grad[i];
    });
}

/// Columns [c0, c1) of a 2-D tensor.
inline Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1) {
    if (a.rank() != 2) throw ShapeError("slice_cols: expected rank-2 tensor");
    if (c0 >= c1 || c1 > a.dim(1)) throw ShapeError("slice_cols: bad range");
    const std::size_t m = a.dim(0), n = a.dim(1), w = c1 - c0;
    std::vector<double> out(m * w);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) out[i * w + j] = a[i * n + c0 + j];
    return make_op(Shape{m, w}, {a}, std::move(out), [m, n, c0, w](detail::Node& nd) {
        detail::Node* p = nd.parents[0].get();
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) p->grad[i * n + c0 + j] += nd.grad[i * w + j];
    });
}

/// mat[m,n] + vec[n] broadcast over rows.
inline Tensor add_rowvec(const Tensor& a, const Tensor& v) {
    if (a.rank() != 2 || v.rank() != 1 || v.dim(0) != a.dim(1))
        throw ShapeError("add_rowvec: need [m,n] and [n], got " + shape_str(a.shape()) + " and " +
                         shape_str(v.shape()));
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a[i * n + j] + v[j];
    return make_op(a.shape(), {a, v}, std::move(out), [m, n](detail::Node& nd) {
        detail::accum(nd.parents[0].get(), nd.grad);
        detail::Node* pv = nd.parents[1].get();
        if (pv->requires_grad) {
            pv->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) pv->grad[j] += nd.grad[i * n + j];
        }
    });
}

// ---------------------------------------------------------------------------
// matmul / softmax / layer_norm
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(m * n, 0.0);
    {
        const double* A = a.data().data();
        const double* B = b.data().data();
        double* C = out.data();
        for (std::size_t i = 0; i < m; ++i) {
            const double* arow = A + i * k;
            double* crow = C + i * n;
            for (std::size_t l = 0; l < k; ++l) {
                const double av = arow[l];
                const double* brow = B + l * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    }
    return make_op(Shape{m, n}, {a, b}, std::move(out), [m, k, n](detail::Node& nd) {
        detail::Node* pa = nd.parents[0].get();
        detail::Node* pb = nd.parents[1].get();
        const double* A = pa->data.data();
        const double* B = pb->data.data();
        const double* G = nd.grad.data();
        if (pa->requires_grad) {
            pa->ensure_grad();
            double* dA = pa->grad.data();
            // dA = G * B^T
            for (std::size_t i = 0; i < m; ++i) {
                const double* grow = G + i * n;
                double* darow = dA + i * k;
                for (std::size_t l = 0; l < k; ++l) {
                    const double* brow = B + l * n;
                    double s = 0.0;
                    for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
                    darow[l] += s;
                }
            }
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            double* dB = pb->grad.data();
            // dB = A^T * G
            for (std::size_t i = 0; i < m; ++i) {
                const double* arow = A + i * k;
                const double* grow = G + i * n;
                for (std::size_t l = 0; l < k; ++l) {
                    const double av = arow[l];
                    double* dbrow = dB + l * n;
                    for (std::size_t j = 0; j < n; ++j) dbrow[j] += av * grow[j];
                }
            }
        }
    });
}

/// Softmax over the last axis, with max-subtraction. Rank 1 or 2.
inline Tensor softmax_lastdim(const Tensor& a) {
    if (a.rank() < 1 || a.rank() > 2) throw ShapeError("softmax_lastdim: rank must be 1 or 2");
    const std::size_t n = a.dim(a.rank() - 1);
    const std::size_t rows = a.numel() / n;
    if (n < 1) throw ShapeError("softmax_lastdim: empty axis");
    std::vector<double> out(a.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = a.data().data() + r * n;
        double* y = out.data() + r * n;
        double mx = x[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            y[j] = std::exp(x[j] - mx);
            s += y[j];
        }
        const double inv = 1.0 / s;
        for (std::size_t j = 0; j < n; ++j) y[j] *= inv;
    }
    return make_op(a.shape(), {a}, std::move(out), [rows, n](detail::Node& nd) {
        detail::Node* p = nd.parents[0].get();
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = nd.data.data() + r * n;
            const double* g = nd.grad.data() + r * n;
            double* dx = p->grad.data() + r * n;
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
            for (std::size_t j = 0; j < n; ++j) dx[j] += y[j] * (g[j] - dot);
        }
    });
}

/// Layer normalization over the last axis with affine parameters.
/// y = (x - mu) / sqrt(var + eps) * gamma + beta
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-5) {
    if (x.rank() < 1 || x.rank() > 2) throw ShapeError("layer_norm: rank must be 1 or 2");
    const std::size_t n = x.dim(x.rank() - 1);
    if (gamma.rank() != 1 || gamma.dim(0) != n || beta.rank() != 1 || beta.dim(0) != n)
        throw ShapeError("layer_norm: affine params must be [n]");
    const std::size_t rows = x.numel() / n;
    std::vector<double> out(x.numel());
    std::vector<double> inv_std(rows);
    std::vector<double> xhat(x.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xi = x.data().data() + r * n;
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += xi[j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double d = xi[j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(n);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t j = 0; j < n; ++j) {
            const double h = (xi[j] - mu) * is;
            xhat[r * n + j] = h;
            out[r * n + j] = h * gamma[j] + beta[j];
        }
    }
    return make_op(x.shape(), {x, gamma, beta}, std::move(out),
                   [rows, n, inv_std = std::move(inv_std), xhat = std::move(xhat)](detail::Node& nd) {
                       detail::Node* px = nd.parents[0].get();
                       detail::Node* pg = nd.parents[1].get();
                       detail::Node* pb = nd.parents[2].get();
                       if (pg->requires_grad) pg->ensure_grad();
                       if (pb->requires_grad) pb->ensure_grad();
                       if (px->requires_grad) px->ensure_grad();
                       for (std::size_t r = 0; r < rows; ++r) {
                           const double* g = nd.grad.data() + r * n;
                           const double* h = xhat.data() + r * n;
                           if (pg->requires_grad || pb->requires_grad) {
                               for (std::size_t j = 0; j < n; ++j) {
                                   if (pg->requires_grad) pg->grad[j] += g[j] * h[j];
                                   if (pb->requires_grad) pb->grad[j] += g[j];
                               }
                           }
                           if (px->requires_grad) {
                               // dL/dxhat = g * gamma; then the standard LN backward.
                               double mean_gh = 0.0, mean_gh_h = 0.0;
                               for (std::size_t j = 0; j < n; ++j) {
                                   const double gh = g[j] * pg->data[j];
                                   mean_gh += gh;
                                   mean_gh_h += gh * h[j];
                               }
                               mean_gh /= static_cast<double>(n);
                               mean_gh_h /= static_cast<double>(n);
                               double* dx = px->grad.data() + r * n;
                               for (std::size_t j = 0; j < n; ++j) {
                                   const double gh = g[j] * pg->data[j];
                                   dx[j] += inv_std[r] * (gh - mean_gh - h[j] * mean_gh_h);
                               }
                           }
                       }
                   });
}

// ---------------------------------------------------------------------------
// Convolution and resampling
// ---------------------------------------------------------------------------

/// Direct 2-D convolution (cross-correlation), zero padding.
/// x: [C,H,W]; w: [O,C,kh,kw]; optional bias [O]; square stride/padding.
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
                     std::size_t padding) {
    if (x.rank() != 3 || w.rank() != 4) throw ShapeError("conv2d: need x[C,H,W], w[O,C,kh,kw]");
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const std::size_t O = w.dim(0), KH = w.dim(2), KW = w.dim(3);
    if (w.dim(1) != C)
        throw ShapeError("conv2d: channel mismatch " + shape_str(x.shape()) + " vs " + shape_str(w.shape()));
    if (stride == 0) throw ParamError("conv2d: stride must be positive");
    if (KH > H + 2 * padding || KW > W + 2 * padding)
        throw ParamError("conv2d: kernel larger than padded input");
    const bool has_bias = bias.defined();
    if (has_bias && (bias.rank() != 1 || bias.dim(0) != O)) throw ShapeError("conv2d: bias must be [O]");
    const std::size_t Ho = (H + 2 * padding - KH) / stride + 1;
    const std::size_t Wo = (W + 2 * padding - KW) / stride + 1;

    std::vector<double> out(O * Ho * Wo, 0.0);
    const double* X = x.data().data();
    const double* Wt = w.data().data();
    const long p = static_cast<long>(padding), s = static_cast<long>(stride);
    for (std::size_t o = 0; o < O; ++o) {
        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t ky = 0; ky < KH; ++ky) {
                for (std::size_t kx = 0; kx < KW; ++kx) {
                    const double wv = Wt[((o * C + c) * KH + ky) * KW + kx];
                    if (wv == 0.0) continue;
                    for (std::size_t y = 0; y < Ho; ++y) {
                        const long iy = static_cast<long>(y) * s + static_cast<long>(ky) - p;
                        if (iy < 0 || iy >= static_cast<long>(H)) continue;
                        const double* xrow = X + (c * H + static_cast<std::size_t>(iy)) * W;
                        double* orow = out.data() + (o * Ho + y) * Wo;
                        // valid x range: 0 <= x*s + kx - p < W
                        long x0 = (p - static_cast<long>(kx) + s - 1) / s;
                        if (x0 < 0) x0 = 0;
                        long x1 = (static_cast<long>(W) - 1 - static_cast<long>(kx) + p) / s;
                        if (x1 >= static_cast<long>(Wo)) x1 = static_cast<long>(Wo) - 1;
                        for (long xx = x0; xx <= x1; ++xx)
                            orow[xx] += wv * xrow[xx * s + static_cast<long>(kx) - p];
                    }
                }
            }
        }
        if (has_bias) {
            const double bv = bias[o];
            double* oplane = out.data() + o * Ho * Wo;
            for (std::size_t i = 0; i < Ho * Wo; ++i) oplane[i] += bv;
        }
    }

    std::vector<Tensor> parents = {x, w};
    if (has_bias) parents.push_back(bias);
    return make_op(Shape{O, Ho, Wo}, std::move(parents), std::move(out),
                   [C, H, W, O, KH, KW, Ho, Wo, s, p, has_bias](detail::Node& nd) {
                       detail::Node* px = nd.parents[0].get();
                       detail::Node* pw = nd.parents[1].get();
                       detail::Node* pbias = has_bias ? nd.parents[2].get() : nullptr;
                       const double* G = nd.grad.data();
                       if (pbias && pbias->requires_grad) {
                           pbias->ensure_grad();
                           for (std::size_t o = 0; o < O; ++o) {
                               double sgrad = 0.0;
                               const double* gplane = G + o * Ho * Wo;
                               for (std::size_t i = 0; i < Ho * Wo; ++i) sgrad += gplane[i];
                               pbias->grad[o] += sgrad;
                           }
                       }
                       const bool need_dx = px->requires_grad;
                       const bool need_dw = pw->requires_grad;
                       if (!need_dx && !need_dw) return;
                       if (need_dx) px->ensure_grad();
                       if (need_dw) pw->ensure_grad();
                       const double* X = px->data.data();
                       const double* Wt = pw->data.data();
                       for (std::size_t o = 0; o < O; ++o) {
                           for (std::size_t c = 0; c < C; ++c) {
                               for (std::size_t ky = 0; ky < KH; ++ky) {
                                   for (std::size_t kx = 0; kx < KW; ++kx) {
                                       const std::size_t widx = ((o * C + c) * KH + ky) * KW + kx;
                                       const double wv = Wt[widx];
                                       double wacc = 0.0;
                                       for (std::size_t y = 0; y < Ho; ++y) {
                                           const long iy =
                                               static_cast<long>(y) * s + static_cast<long>(ky) - p;
                                           if (iy < 0 || iy >= static_cast<long>(H)) continue;
                                           const std::size_t xbase =
                                               (c * H + static_cast<std::size_t>(iy)) * W;
                                           const double* grow = G + (o * Ho + y) * Wo;
                                           long x0 = (p - static_cast<long>(kx) + s - 1) / s;
                                           if (x0 < 0) x0 = 0;
                                           long x1 = (static_cast<long>(W) - 1 - static_cast<long>(kx) + p) / s;
                                           if (x1 >= static_cast<long>(Wo)) x1 = static_cast<long>(Wo) - 1;
                                           for (long xx = x0; xx <= x1; ++xx) {
                                               const std::size_t ix = static_cast<std::size_t>(
                                                   xx * s + static_cast<long>(kx) - p);
                                               if (need_dw) wacc += X[xbase + ix] * grow[xx];
                                               if (need_dx) px->grad[xbase + ix] += wv * grow[xx];
                                           }
                                       }
                                       if (need_dw) pw->grad[widx] += wacc;
                                   }
                               }
                           }
                       }
                   });
}

inline Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t padding) {
    return conv2d(x, w, Tensor(), stride, padding);
}

/// Nearest-neighbor 2x upsampling of [C,H,W].
inline Tensor upsample2x_nearest(const Tensor& x) {
    if (x.rank() != 3) throw ShapeError("upsample2x_nearest: need [C,H,W]");
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    std::vector<double> out(C * 4 * H * W);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < 2 * H; ++y) {
            const double* xrow = x.data().data() + (c * H + y / 2) * W;
            double* orow = out.data() + (c * 2 * H + y) * 2 * W;
            for (std::size_t xx = 0; xx < 2 * W; ++xx) orow[xx] = xrow[xx / 2];
        }
    return make_op(Shape{C, 2 * H, 2 * W}, {x}, std::move(out), [C, H, W](detail::Node& nd) {
        detail::Node* px = nd.parents[0].get();
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t y = 0; y < 2 * H; ++y) {
                const double* grow = nd.grad.data() + (c * 2 * H + y) * 2 * W;
                double* dxrow = px->grad.data() + (c * H + y / 2) * W;
                for (std::size_t xx = 0; xx < 2 * W; ++xx) dxrow[xx / 2] += grow[xx];
            }
    });
}

/// Bilinear 2x upsampling of [C,H,W] (half-pixel centers, clamped edges).
inline Tensor upsample2x_bilinear(const Tensor& x) {
    if (x.rank() != 3) throw ShapeError("upsample2x_bilinear: need [C,H,W]");
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const std::size_t H2 = 2 * H, W2 = 2 * W;
    // Per output index: source coordinate (i + 0.5)/2 - 0.5.
    auto taps = [](std::size_t n, std::vector<std::size_t>& i0, std::vector<std::size_t>& i1,
                   std::vector<double>& w1) {
        i0.resize(2 * n);
        i1.resize(2 * n);
        w1.resize(2 * n);
        for (std::size_t i = 0; i < 2 * n; ++i) {
            double src = (static_cast<double>(i) + 0.5) / 2.0 - 0.5;
            double f = std::floor(src);
            double frac = src - f;
            long a = static_cast<long>(f);
            long b = a + 1;
            a = std::min<long>(std::max<long>(a, 0), static_cast<long>(n) - 1);
            b = std::min<long>(std::max<long>(b, 0), static_cast<long>(n) - 1);
            i0[i] = static_cast<std::size_t>(a);
            i1[i] = static_cast<std::size_t>(b);
            w1[i] = frac;
        }
    };
    std::vector<std::size_t> y0, y1, x0, x1;
    std::vector<double> wy, wx;
    taps(H, y0, y1, wy);
    taps(W, x0, x1, wx);
    std::vector<double> out(C * H2 * W2);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H2; ++y) {
            const double* r0 = x.data().data() + (c * H + y0[y]) * W;
            const double* r1 = x.data().data() + (c * H + y1[y]) * W;
            double* orow = out.data() + (c * H2 + y) * W2;
            const double fy = wy[y];
            for (std::size_t xx = 0; xx < W2; ++xx) {
                const double fx = wx[xx];
                const double top = r0[x0[xx]] * (1 - fx) + r0[x1[xx]] * fx;
                const double bot = r1[x0[xx]] * (1 - fx) + r1[x1[xx]] * fx;
                orow[xx] = top * (1 - fy) + bot * fy;
            }
        }
    return make_op(Shape{C, H2, W2}, {x}, std::move(out),
                   [C, H, W, H2, W2, y0, y1, x0, x1, wy, wx](detail::Node& nd) {
                       detail::Node* px = nd.parents[0].get();
                       if (!px->requires_grad) return;
                       px->ensure_grad();
                       for (std::size_t c = 0; c < C; ++c)
                           for (std::size_t y = 0; y < H2; ++y) {
                               double* d0 = px->grad.data() + (c * H + y0[y]) * W;
                               double* d1 = px->grad.data() + (c * H + y1[y]) * W;
                               const double* grow = nd.grad.data() + (c * H2 + y) * W2;
                               const double fy = wy[y];
                               for (std::size_t xx = 0; xx < W2; ++xx) {
                                   const double fx = wx[xx];
                                   const double g = grow[xx];
                                   d0[x0[xx]] += g * (1 - fx) * (1 - fy);
                                   d0[x1[xx]] += g * fx * (1 - fy);
                                   d1[x0[xx]] += g * (1 - fx) * fy;
                                   d1[x1[xx]] += g * fx * fy;
                               }
                           }
                   });
}

// ---------------------------------------------------------------------------
// Fused losses
// ---------------------------------------------------------------------------

/// Mean binary cross-entropy on sigmoid(logits) against {0,1} targets,
/// computed in the numerically stable form. Gradients flow to logits only.
inline Tensor bce_with_logits_mean(const Tensor& logits, const Tensor& targets) {
    detail::check_same_shape(logits, targets, "bce_with_logits_mean");
    const std::size_t N = logits.numel();
    double s = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        const double z = logits[i], y = targets[i];
        s += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::fabs(z)));
    }
    const double inv = 1.0 / static_cast<double>(N);
    return make_op(Shape{1}, {logits, targets}, {s * inv}, [inv](detail::Node& nd) {
        detail::Node* pl = nd.parents[0].get();
        detail::Node* pt = nd.parents[1].get();
        if (!pl->requires_grad) return;
        pl->ensure_grad();
        const double g = nd.grad[0] * inv;
        for (std::size_t i = 0; i < pl->data.size(); ++i) {
            const double z = pl->data[i];
            const double sig = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
            pl->grad[i] += g * (sig - pt->data[i]);
        }
    });
}

// Operator sugar.
inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return mul_scalar(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return add_scalar(a, -s); }

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

/// Max over coordinates of |analytic - central difference| / max(1, |central|)
/// for a scalar-valued function of one tensor.
inline double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         double h = 1e-5) {
    Tensor xg = Tensor::from(x.shape(), x.data(), /*requires_grad=*/true);
    Tensor loss = f(xg);
    if (loss.numel() != 1) throw Error("grad_check: function must be scalar-valued");
    backward(loss);
    const std::vector<double> analytic =
        xg.grad().empty() ? std::vector<double>(x.numel(), 0.0) : xg.grad();

    double worst = 0.0;
    std::vector<double> buf = x.data();
    for (std::size_t i = 0; i < buf.size(); ++i) {
        const double orig = buf[i];
        buf[i] = orig + h;
        const double fp = f(Tensor::from(x.shape(), buf)).item();
        buf[i] = orig - h;
        const double fm = f(Tensor::from(x.shape(), buf)).item();
        buf[i] = orig;
        const double numeric = (fp - fm) / (2.0 * h);
        const double rel = std::fabs(analytic[i] - numeric) / std::max(1.0, std::fabs(numeric));
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace robox::nn
