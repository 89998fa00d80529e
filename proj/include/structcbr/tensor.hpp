#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include "structcbr/util.hpp"

namespace structcbr {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

using Shape = std::vector<size_t>;

inline size_t shape_size(const Shape& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return n;
}

// Dense 64-bit tensor with reverse-mode autodiff. Rank 0 (scalar), 1 and 2
// are supported; the graph is built eagerly and freed when the last Tensor
// handle drops. Nodes whose inputs carry no gradient skip closure capture,
// so inference builds throwaway value-only nodes.
struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

    static Tensor zeros(Shape shape) {
        auto n = std::make_shared<TensorNode>();
        n->data.assign(shape_size(shape), 0.0);
        n->shape = std::move(shape);
        return Tensor(n);
    }
    static Tensor constant(Shape shape, std::vector<double> data) {
        if (shape_size(shape) != data.size()) throw dimension_error("constant: size mismatch");
        auto n = std::make_shared<TensorNode>();
        n->shape = std::move(shape);
        n->data = std::move(data);
        return Tensor(n);
    }
    static Tensor scalar(double v) { return constant({}, {v}); }
    static Tensor param(Shape shape, std::vector<double> data) {
        Tensor t = constant(std::move(shape), std::move(data));
        t.node_->requires_grad = true;
        return t;
    }
    static Tensor randn(Shape shape, Rng& rng, double stddev) {
        std::normal_distribution<double> dist(0.0, stddev);
        std::vector<double> d(shape_size(shape));
        for (auto& x : d) x = dist(rng);
        return param(std::move(shape), std::move(d));
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    size_t rank() const { return node_->shape.size(); }
    size_t size() const { return node_->data.size(); }
    size_t rows() const { return node_->shape.at(0); }
    size_t cols() const { return node_->shape.at(1); }
    const std::vector<double>& data() const { return node_->data; }
    std::vector<double>& data() { return node_->data; }
    const std::vector<double>& grad() const {
        node_->ensure_grad();
        return node_->grad;
    }
    double item() const {
        if (node_->data.size() != 1) throw dimension_error("item(): tensor is not a scalar");
        return node_->data[0];
    }
    bool requires_grad() const { return node_->requires_grad; }
    void zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }
    std::shared_ptr<TensorNode> node() const { return node_; }

    // A value copy that does not participate in any graph.
    Tensor detach() const { return constant(node_->shape, node_->data); }

  private:
    std::shared_ptr<TensorNode> node_;
};

namespace detail {

inline Tensor make_result(Shape shape, std::vector<double> data,
                          std::vector<Tensor> inputs,
                          std::function<void(TensorNode&)> backward) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    for (const auto& in : inputs) {
        if (in.requires_grad()) {
            n->requires_grad = true;
            break;
        }
    }
    if (n->requires_grad) {
        for (const auto& in : inputs) n->parents.push_back(in.node());
        n->backward_fn = std::move(backward);
    }
    return Tensor(n);
}

inline void accumulate(const std::shared_ptr<TensorNode>& p, size_t i, double g) {
    if (p->requires_grad || !p->parents.empty()) {
        p->ensure_grad();
        p->grad[i] += g;
    }
}

// Whether gradients need to flow into this parent at all.
inline bool wants_grad(const std::shared_ptr<TensorNode>& p) {
    return p->requires_grad || p->backward_fn != nullptr;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Backward pass: reverse topological order from a scalar loss.

inline void backward(const Tensor& loss) {
    if (loss.size() != 1) throw dimension_error("backward: loss must be a scalar");
    auto root = loss.node();
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    std::vector<std::pair<TensorNode*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode* p = node->parents[next++].get();
            if (!seen.count(p) && (p->backward_fn || p->requires_grad)) {
                if (p->backward_fn) stack.emplace_back(p, 0);
                seen.insert(p);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
}

// ---------------------------------------------------------------------------
// Elementwise and shape ops.

inline Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw dimension_error("add: shape mismatch");
    std::vector<double> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    auto pa = a.node(), pb = b.node();
    return detail::make_result(a.shape(), std::move(out), {a, b}, [pa, pb](TensorNode& self) {
        for (size_t i = 0; i < self.grad.size(); ++i) {
            detail::accumulate(pa, i, self.grad[i]);
            detail::accumulate(pb, i, self.grad[i]);
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw dimension_error("sub: shape mismatch");
    std::vector<double> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    auto pa = a.node(), pb = b.node();
    return detail::make_result(a.shape(), std::move(out), {a, b}, [pa, pb](TensorNode& self) {
        for (size_t i = 0; i < self.grad.size(); ++i) {
            detail::accumulate(pa, i, self.grad[i]);
            detail::accumulate(pb, i, -self.grad[i]);
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw dimension_error("mul: shape mismatch");
    std::vector<double> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    auto pa = a.node(), pb = b.node();
    return detail::make_result(a.shape(), std::move(out), {a, b}, [pa, pb](TensorNode& self) {
        for (size_t i = 0; i < self.grad.size(); ++i) {
            detail::accumulate(pa, i, self.grad[i] * pb->data[i]);
            detail::accumulate(pb, i, self.grad[i] * pa->data[i]);
        }
    });
}

inline Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
    auto pa = a.node();
    return detail::make_result(a.shape(), std::move(out), {a}, [pa, c](TensorNode& self) {
        for (size_t i = 0; i < self.grad.size(); ++i) detail::accumulate(pa, i, self.grad[i] * c);
    });
}

inline Tensor add_const(const Tensor& a, double c) {
    std::vector<double> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + c;
    auto pa = a.node();
    return detail::make_result(a.shape(), std::move(out), {a}, [pa](TensorNode& self) {
        for (size_t i = 0; i < self.grad.size(); ++i) detail::accumulate(pa, i, self.grad[i]);
    });
}

inline Tensor relu(const Tensor& a) {
    std::vector<double> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] > 0 ? a.data()[i] : 0.0;
    auto pa = a.node();
    return detail::make_result(a.shape(), std::move(out), {a}, [pa](TensorNode& self) {
        for (size_t i = 0; i < self.grad.size(); ++i) {
            if (pa->data[i] > 0) detail::accumulate(pa, i, self.grad[i]);
        }
    });
}

inline Tensor log_el(const Tensor& a) {
    std::vector<double> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::log(a.data()[i]);
    auto pa = a.node();
    return detail::make_result(a.shape(), std::move(out), {a}, [pa](TensorNode& self) {
        for (size_t i = 0; i < self.grad.size(); ++i)
            detail::accumulate(pa, i, self.grad[i] / pa->data[i]);
    });
}

inline Tensor rsqrt_el(const Tensor& a) {
    std::vector<double> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / std::sqrt(a.data()[i]);
    auto pa = a.node();
    auto vals = std::make_shared<std::vector<double>>(out);
    return detail::make_result(a.shape(), std::move(out), {a}, [pa, vals](TensorNode& self) {
        for (size_t i = 0; i < self.grad.size(); ++i) {
            double r = (*vals)[i];
            detail::accumulate(pa, i, self.grad[i] * (-0.5) * r * r * r);
        }
    });
}

inline Tensor sum_all(const Tensor& a) {
    double s = std::accumulate(a.data().begin(), a.data().end(), 0.0);
    auto pa = a.node();
    return detail::make_result({}, {s}, {a}, [pa](TensorNode& self) {
        for (size_t i = 0; i < pa->data.size(); ++i) detail::accumulate(pa, i, self.grad[0]);
    });
}

inline Tensor dot(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw dimension_error("dot: shape mismatch");
    double s = 0;
    for (size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
    auto pa = a.node(), pb = b.node();
    return detail::make_result({}, {s}, {a, b}, [pa, pb](TensorNode& self) {
        double g = self.grad[0];
        for (size_t i = 0; i < pa->data.size(); ++i) {
            detail::accumulate(pa, i, g * pb->data[i]);
            detail::accumulate(pb, i, g * pa->data[i]);
        }
    });
}

// ---------------------------------------------------------------------------
// Matrix ops.

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
        throw dimension_error("matmul: incompatible shapes");
    size_t n = a.rows(), m = a.cols(), k = b.cols();
    std::vector<double> out(n * k, 0.0);
    const double* A = a.data().data();
    const double* B = b.data().data();
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j < m; ++j) {
            double av = A[i * m + j];
            if (av == 0.0) continue;
            const double* brow = B + j * k;
            double* orow = out.data() + i * k;
            for (size_t c = 0; c < k; ++c) orow[c] += av * brow[c];
        }
    }
    auto pa = a.node(), pb = b.node();
    return detail::make_result({n, k}, std::move(out), {a, b},
                               [pa, pb, n, m, k](TensorNode& self) {
        if (detail::wants_grad(pa)) {
            pa->ensure_grad();
            // dA = dOut * B^T
            for (size_t i = 0; i < n; ++i)
                for (size_t j = 0; j < m; ++j) {
                    double s = 0;
                    const double* grow = self.grad.data() + i * k;
                    const double* brow = pb->data.data() + j * k;
                    for (size_t c = 0; c < k; ++c) s += grow[c] * brow[c];
                    pa->grad[i * m + j] += s;
                }
        }
        if (detail::wants_grad(pb)) {
            pb->ensure_grad();
            // dB = A^T * dOut
            for (size_t j = 0; j < m; ++j)
                for (size_t i = 0; i < n; ++i) {
                    double av = pa->data[i * m + j];
                    if (av == 0.0) continue;
                    const double* grow = self.grad.data() + i * k;
                    double* brow = pb->grad.data() + j * k;
                    for (size_t c = 0; c < k; ++c) brow[c] += av * grow[c];
                }
        }
    });
}

inline Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw dimension_error("transpose: rank-2 only");
    size_t n = a.rows(), m = a.cols();
    std::vector<double> out(n * m);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < m; ++j) out[j * n + i] = a.data()[i * m + j];
    auto pa = a.node();
    return detail::make_result({m, n}, std::move(out), {a}, [pa, n, m](TensorNode& self) {
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < m; ++j)
                detail::accumulate(pa, i * m + j, self.grad[j * n + i]);
    });
}

inline Tensor stack_rows(const std::vector<Tensor>& rows) {
    if (rows.empty()) throw dimension_error("stack_rows: empty input");
    size_t d = rows[0].size();
    std::vector<double> out;
    out.reserve(rows.size() * d);
    for (const auto& r : rows) {
        if (r.size() != d || r.rank() > 1) throw dimension_error("stack_rows: need equal vectors");
        out.insert(out.end(), r.data().begin(), r.data().end());
    }
    std::vector<std::shared_ptr<TensorNode>> ps;
    for (const auto& r : rows) ps.push_back(r.node());
    return detail::make_result({rows.size(), d}, std::move(out), rows, [ps, d](TensorNode& self) {
        for (size_t r = 0; r < ps.size(); ++r)
            for (size_t j = 0; j < d; ++j) detail::accumulate(ps[r], j, self.grad[r * d + j]);
    });
}

inline Tensor concat_vecs(const std::vector<Tensor>& parts) {
    std::vector<double> out;
    std::vector<size_t> offsets;
    for (const auto& p : parts) {
        if (p.rank() != 1) throw dimension_error("concat_vecs: rank-1 only");
        offsets.push_back(out.size());
        out.insert(out.end(), p.data().begin(), p.data().end());
    }
    std::vector<std::shared_ptr<TensorNode>> ps;
    for (const auto& p : parts) ps.push_back(p.node());
    size_t total = out.size();
    return detail::make_result({total}, std::move(out), parts, [ps, offsets](TensorNode& self) {
        for (size_t k = 0; k < ps.size(); ++k)
            for (size_t j = 0; j < ps[k]->data.size(); ++j)
                detail::accumulate(ps[k], j, self.grad[offsets[k] + j]);
    });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw dimension_error("concat_cols: empty input");
    size_t n = parts[0].rows();
    size_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.rows() != n) throw dimension_error("concat_cols: row mismatch");
        total += p.cols();
    }
    std::vector<double> out(n * total);
    size_t off = 0;
    for (const auto& p : parts) {
        size_t c = p.cols();
        for (size_t i = 0; i < n; ++i)
            std::copy_n(p.data().data() + i * c, c, out.data() + i * total + off);
        off += c;
    }
    std::vector<std::shared_ptr<TensorNode>> ps;
    std::vector<size_t> widths;
    for (const auto& p : parts) {
        ps.push_back(p.node());
        widths.push_back(p.cols());
    }
    return detail::make_result({n, total}, std::move(out), parts,
                               [ps, widths, n, total](TensorNode& self) {
        size_t off = 0;
        for (size_t k = 0; k < ps.size(); ++k) {
            size_t c = widths[k];
            for (size_t i = 0; i < n; ++i)
                for (size_t j = 0; j < c; ++j)
                    detail::accumulate(ps[k], i * c + j, self.grad[i * total + off + j]);
            off += c;
        }
    });
}

inline Tensor col_slice(const Tensor& a, size_t from, size_t width) {
    if (a.rank() != 2 || from + width > a.cols()) throw dimension_error("col_slice: out of range");
    size_t n = a.rows(), m = a.cols();
    std::vector<double> out(n * width);
    for (size_t i = 0; i < n; ++i)
        std::copy_n(a.data().data() + i * m + from, width, out.data() + i * width);
    auto pa = a.node();
    return detail::make_result({n, width}, std::move(out), {a},
                               [pa, from, width, n, m](TensorNode& self) {
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < width; ++j)
                detail::accumulate(pa, i * m + from + j, self.grad[i * width + j]);
    });
}

inline Tensor select_row(const Tensor& a, size_t row) {
    if (a.rank() != 2 || row >= a.rows()) throw dimension_error("select_row: out of range");
    size_t m = a.cols();
    std::vector<double> out(a.data().begin() + row * m, a.data().begin() + (row + 1) * m);
    auto pa = a.node();
    return detail::make_result({m}, std::move(out), {a}, [pa, row, m](TensorNode& self) {
        for (size_t j = 0; j < m; ++j) detail::accumulate(pa, row * m + j, self.grad[j]);
    });
}

inline Tensor gather_rows(const Tensor& a, std::vector<size_t> idx) {
    if (a.rank() != 2) throw dimension_error("gather_rows: rank-2 only");
    size_t m = a.cols();
    std::vector<double> out(idx.size() * m);
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= a.rows()) throw dimension_error("gather_rows: index out of range");
        std::copy_n(a.data().data() + idx[i] * m, m, out.data() + i * m);
    }
    auto pa = a.node();
    return detail::make_result({idx.size(), m}, std::move(out), {a},
                               [pa, idx = std::move(idx), m](TensorNode& self) {
        for (size_t i = 0; i < idx.size(); ++i)
            for (size_t j = 0; j < m; ++j)
                detail::accumulate(pa, idx[i] * m + j, self.grad[i * m + j]);
    });
}

inline Tensor gather_elems(const Tensor& a, std::vector<size_t> idx) {
    if (a.rank() != 1) throw dimension_error("gather_elems: rank-1 only");
    std::vector<double> out(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) out[i] = a.data().at(idx[i]);
    auto pa = a.node();
    return detail::make_result({idx.size()}, std::move(out), {a},
                               [pa, idx = std::move(idx)](TensorNode& self) {
        for (size_t i = 0; i < idx.size(); ++i)
            detail::accumulate(pa, idx[i], self.grad[i]);
    });
}

inline Tensor row_dot(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || a.shape() != b.shape()) throw dimension_error("row_dot: shape mismatch");
    size_t n = a.rows(), m = a.cols();
    std::vector<double> out(n, 0.0);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < m; ++j) out[i] += a.data()[i * m + j] * b.data()[i * m + j];
    auto pa = a.node(), pb = b.node();
    return detail::make_result({n}, std::move(out), {a, b}, [pa, pb, n, m](TensorNode& self) {
        for (size_t i = 0; i < n; ++i) {
            double g = self.grad[i];
            for (size_t j = 0; j < m; ++j) {
                detail::accumulate(pa, i * m + j, g * pb->data[i * m + j]);
                detail::accumulate(pb, i * m + j, g * pa->data[i * m + j]);
            }
        }
    });
}

inline Tensor add_rowvec(const Tensor& a, const Tensor& v) {
    if (a.rank() != 2 || v.rank() != 1 || v.size() != a.cols())
        throw dimension_error("add_rowvec: shape mismatch");
    size_t n = a.rows(), m = a.cols();
    std::vector<double> out(a.data());
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < m; ++j) out[i * m + j] += v.data()[j];
    auto pa = a.node(), pv = v.node();
    return detail::make_result({n, m}, std::move(out), {a, v}, [pa, pv, n, m](TensorNode& self) {
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < m; ++j) {
                detail::accumulate(pa, i * m + j, self.grad[i * m + j]);
                detail::accumulate(pv, j, self.grad[i * m + j]);
            }
    });
}

inline Tensor mean_rows(const Tensor& a) {
    if (a.rank() != 2) throw dimension_error("mean_rows: rank-2 only");
    size_t n = a.rows(), m = a.cols();
    std::vector<double> out(m, 0.0);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < m; ++j) out[j] += a.data()[i * m + j];
    for (auto& x : out) x /= static_cast<double>(n);
    auto pa = a.node();
    return detail::make_result({m}, std::move(out), {a}, [pa, n, m](TensorNode& self) {
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < m; ++j)
                detail::accumulate(pa, i * m + j, self.grad[j] / static_cast<double>(n));
    });
}

// ---------------------------------------------------------------------------
// Normalization and softmax-family ops.

inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
    if (x.rank() != 2 || gain.size() != x.cols() || bias.size() != x.cols())
        throw dimension_error("layer_norm: shape mismatch");
    size_t n = x.rows(), m = x.cols();
    std::vector<double> out(n * m);
    auto mu = std::make_shared<std::vector<double>>(n);
    auto sigma = std::make_shared<std::vector<double>>(n);
    for (size_t i = 0; i < n; ++i) {
        double s = 0;
        for (size_t j = 0; j < m; ++j) s += x.data()[i * m + j];
        double mean = s / m;
        double var = 0;
        for (size_t j = 0; j < m; ++j) {
            double d = x.data()[i * m + j] - mean;
            var += d * d;
        }
        var /= m;
        double sd = std::sqrt(var + eps);
        (*mu)[i] = mean;
        (*sigma)[i] = sd;
        for (size_t j = 0; j < m; ++j) {
            double xn = (x.data()[i * m + j] - mean) / sd;
            out[i * m + j] = xn * gain.data()[j] + bias.data()[j];
        }
    }
    auto px = x.node(), pg = gain.node(), pb = bias.node();
    return detail::make_result({n, m}, std::move(out), {x, gain, bias},
                               [px, pg, pb, mu, sigma, n, m](TensorNode& self) {
        for (size_t i = 0; i < n; ++i) {
            double mean = (*mu)[i], sd = (*sigma)[i];
            double gsum = 0, gxsum = 0;
            std::vector<double> xn(m), gl(m);
            for (size_t j = 0; j < m; ++j) {
                xn[j] = (px->data[i * m + j] - mean) / sd;
                gl[j] = self.grad[i * m + j] * pg->data[j];  // dL/dxn
                gsum += gl[j];
                gxsum += gl[j] * xn[j];
                detail::accumulate(pg, j, self.grad[i * m + j] * xn[j]);
                detail::accumulate(pb, j, self.grad[i * m + j]);
            }
            if (detail::wants_grad(px)) {
                for (size_t j = 0; j < m; ++j) {
                    double g = (gl[j] - gsum / m - xn[j] * gxsum / m) / sd;
                    detail::accumulate(px, i * m + j, g);
                }
            }
        }
    });
}

// Row-wise softmax; -inf entries get probability exactly 0.
inline Tensor softmax_rows(const Tensor& a) {
    if (a.rank() != 2) throw dimension_error("softmax_rows: rank-2 only");
    size_t n = a.rows(), m = a.cols();
    std::vector<double> out(n * m, 0.0);
    for (size_t i = 0; i < n; ++i) {
        double mx = kNegInf;
        for (size_t j = 0; j < m; ++j) mx = std::max(mx, a.data()[i * m + j]);
        if (mx == kNegInf) throw dimension_error("softmax_rows: all entries masked");
        double z = 0;
        for (size_t j = 0; j < m; ++j) {
            double v = a.data()[i * m + j];
            out[i * m + j] = v == kNegInf ? 0.0 : std::exp(v - mx);
            z += out[i * m + j];
        }
        for (size_t j = 0; j < m; ++j) out[i * m + j] /= z;
    }
    auto pa = a.node();
    auto probs = std::make_shared<std::vector<double>>(out);
    return detail::make_result({n, m}, std::move(out), {a}, [pa, probs, n, m](TensorNode& self) {
        for (size_t i = 0; i < n; ++i) {
            double dotp = 0;
            for (size_t j = 0; j < m; ++j) dotp += self.grad[i * m + j] * (*probs)[i * m + j];
            for (size_t j = 0; j < m; ++j) {
                double p = (*probs)[i * m + j];
                if (p != 0.0) detail::accumulate(pa, i * m + j, p * (self.grad[i * m + j] - dotp));
            }
        }
    });
}

inline Tensor softmax_vec(const Tensor& a) {
    if (a.rank() != 1) throw dimension_error("softmax_vec: rank-1 only");
    size_t m = a.size();
    std::vector<double> out(m, 0.0);
    double mx = kNegInf;
    for (size_t j = 0; j < m; ++j) mx = std::max(mx, a.data()[j]);
    if (mx == kNegInf) throw dimension_error("softmax_vec: all entries masked");
    double z = 0;
    for (size_t j = 0; j < m; ++j) {
        out[j] = a.data()[j] == kNegInf ? 0.0 : std::exp(a.data()[j] - mx);
        z += out[j];
    }
    for (size_t j = 0; j < m; ++j) out[j] /= z;
    auto pa = a.node();
    auto probs = std::make_shared<std::vector<double>>(out);
    return detail::make_result({m}, std::move(out), {a}, [pa, probs, m](TensorNode& self) {
        double dotp = 0;
        for (size_t j = 0; j < m; ++j) dotp += self.grad[j] * (*probs)[j];
        for (size_t j = 0; j < m; ++j) {
            double p = (*probs)[j];
            if (p != 0.0) detail::accumulate(pa, j, p * (self.grad[j] - dotp));
        }
    });
}

inline double logsumexp_raw(const double* v, size_t m) {
    double mx = kNegInf;
    for (size_t j = 0; j < m; ++j) mx = std::max(mx, v[j]);
    if (mx == kNegInf) return kNegInf;
    double z = 0;
    for (size_t j = 0; j < m; ++j)
        if (v[j] != kNegInf) z += std::exp(v[j] - mx);
    return mx + std::log(z);
}

inline Tensor logsumexp_vec(const Tensor& a) {
    if (a.rank() != 1) throw dimension_error("logsumexp_vec: rank-1 only");
    double lse = logsumexp_raw(a.data().data(), a.size());
    auto pa = a.node();
    return detail::make_result({}, {lse}, {a}, [pa, lse](TensorNode& self) {
        for (size_t j = 0; j < pa->data.size(); ++j) {
            if (pa->data[j] != kNegInf)
                detail::accumulate(pa, j, self.grad[0] * std::exp(pa->data[j] - lse));
        }
    });
}

inline Tensor logsumexp_rows(const Tensor& a) {
    if (a.rank() != 2) throw dimension_error("logsumexp_rows: rank-2 only");
    size_t n = a.rows(), m = a.cols();
    std::vector<double> out(n);
    for (size_t i = 0; i < n; ++i) out[i] = logsumexp_raw(a.data().data() + i * m, m);
    auto pa = a.node();
    auto lses = std::make_shared<std::vector<double>>(out);
    return detail::make_result({n}, std::move(out), {a}, [pa, lses, n, m](TensorNode& self) {
        for (size_t i = 0; i < n; ++i) {
            if ((*lses)[i] == kNegInf) continue;
            for (size_t j = 0; j < m; ++j) {
                double v = pa->data[i * m + j];
                if (v != kNegInf)
                    detail::accumulate(pa, i * m + j, self.grad[i] * std::exp(v - (*lses)[i]));
            }
        }
    });
}

inline Tensor log_softmax_vec(const Tensor& a) {
    if (a.rank() != 1) throw dimension_error("log_softmax_vec: rank-1 only");
    size_t m = a.size();
    double lse = logsumexp_raw(a.data().data(), m);
    if (lse == kNegInf) throw dimension_error("log_softmax_vec: all entries masked");
    std::vector<double> out(m);
    for (size_t j = 0; j < m; ++j) out[j] = a.data()[j] - lse;
    auto pa = a.node();
    auto probs = std::make_shared<std::vector<double>>(m);
    for (size_t j = 0; j < m; ++j) (*probs)[j] = std::exp(out[j]);
    return detail::make_result({m}, std::move(out), {a}, [pa, probs, m](TensorNode& self) {
        double gsum = 0;
        for (size_t j = 0; j < m; ++j) gsum += self.grad[j];
        for (size_t j = 0; j < m; ++j) {
            if (pa->data[j] == kNegInf) continue;
            detail::accumulate(pa, j, self.grad[j] - gsum * (*probs)[j]);
        }
    });
}

// ---------------------------------------------------------------------------
// Distances.

inline Tensor l2_distance(const Tensor& u, const Tensor& v) {
    if (u.shape() != v.shape()) throw dimension_error("l2_distance: shape mismatch");
    double ss = 0;
    for (size_t i = 0; i < u.size(); ++i) {
        double d = u.data()[i] - v.data()[i];
        ss += d * d;
    }
    double dist = std::sqrt(ss);
    auto pu = u.node(), pv = v.node();
    return detail::make_result({}, {dist}, {u, v}, [pu, pv, dist](TensorNode& self) {
        if (dist == 0.0) return;  // subgradient 0 at the apex
        double g = self.grad[0] / dist;
        for (size_t i = 0; i < pu->data.size(); ++i) {
            double d = pu->data[i] - pv->data[i];
            detail::accumulate(pu, i, g * d);
            detail::accumulate(pv, i, -g * d);
        }
    });
}

// Pairwise l2 distances between rows: (n,d) x (m,d) -> (n,m).
inline Tensor pdist(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols())
        throw dimension_error("pdist: shape mismatch");
    size_t n = a.rows(), m = b.rows(), d = a.cols();
    std::vector<double> out(n * m);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < m; ++j) {
            double ss = 0;
            for (size_t c = 0; c < d; ++c) {
                double diff = a.data()[i * d + c] - b.data()[j * d + c];
                ss += diff * diff;
            }
            out[i * m + j] = std::sqrt(ss);
        }
    auto pa = a.node(), pb = b.node();
    auto dists = std::make_shared<std::vector<double>>(out);
    return detail::make_result({n, m}, std::move(out), {a, b},
                               [pa, pb, dists, n, m, d](TensorNode& self) {
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < m; ++j) {
                double dist = (*dists)[i * m + j];
                if (dist == 0.0) continue;
                double g = self.grad[i * m + j] / dist;
                if (g == 0.0) continue;
                for (size_t c = 0; c < d; ++c) {
                    double diff = pa->data[i * d + c] - pb->data[j * d + c];
                    detail::accumulate(pa, i * d + c, g * diff);
                    detail::accumulate(pb, j * d + c, -g * diff);
                }
            }
    });
}

// Outer sum over rows: out[i*m+j, :] = a[i, :] + b[j, :].
inline Tensor outer_rowsum(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols())
        throw dimension_error("outer_rowsum: shape mismatch");
    size_t n = a.rows(), m = b.rows(), e = a.cols();
    std::vector<double> out(n * m * e);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < m; ++j)
            for (size_t c = 0; c < e; ++c)
                out[(i * m + j) * e + c] = a.data()[i * e + c] + b.data()[j * e + c];
    auto pa = a.node(), pb = b.node();
    return detail::make_result({n * m, e}, std::move(out), {a, b},
                               [pa, pb, n, m, e](TensorNode& self) {
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < m; ++j)
                for (size_t c = 0; c < e; ++c) {
                    double g = self.grad[(i * m + j) * e + c];
                    if (g == 0.0) continue;
                    detail::accumulate(pa, i * e + c, g);
                    detail::accumulate(pb, j * e + c, g);
                }
    });
}

// Replaces masked entries with -inf; gradient flows only through kept slots.
inline Tensor apply_mask(const Tensor& a, const std::vector<bool>& keep) {
    if (a.rank() != 1 || keep.size() != a.size()) throw dimension_error("apply_mask: size mismatch");
    std::vector<double> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = keep[i] ? a.data()[i] : kNegInf;
    auto pa = a.node();
    return detail::make_result(a.shape(), std::move(out), {a}, [pa, keep](TensorNode& self) {
        for (size_t i = 0; i < self.grad.size(); ++i)
            if (keep[i]) detail::accumulate(pa, i, self.grad[i]);
    });
}

}  // namespace structcbr
