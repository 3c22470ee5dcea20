#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "jtc/rng.hpp"

namespace jtc {

// Dense fp64 tensor (rank 1 or 2) participating in a dynamically built
// reverse-mode tape. Values are immutable once an op has produced them;
// only grad buffers accumulate.

class Tensor;

namespace detail {

struct Node {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;                 // leaf flag
    bool in_graph = false;                      // reachable from a leaf that requires grad
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    std::size_t numel() const { return data.size(); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

// Tape construction can be switched off (inference / benchmarking path).
inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

}  // namespace detail

struct NoGradGuard {
    NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

class Tensor {
public:
    Tensor() : node_(std::make_shared<detail::Node>()) {}

    Tensor(std::vector<std::size_t> shape, std::vector<double> data,
           bool requires_grad = false)
        : node_(std::make_shared<detail::Node>()) {
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        if (shape.empty() || shape.size() > 2)
            throw std::invalid_argument("Tensor: rank must be 1 or 2");
        if (n != data.size())
            throw std::invalid_argument("Tensor: shape/data size mismatch");
        node_->shape = std::move(shape);
        node_->data = std::move(data);
        node_->requires_grad = requires_grad;
        node_->in_graph = requires_grad;
    }

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false) {
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }

    static Tensor full(std::vector<std::size_t> shape, double v, bool requires_grad = false) {
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        return Tensor(std::move(shape), std::vector<double>(n, v), requires_grad);
    }

    static Tensor uniform(std::vector<std::size_t> shape, double lo, double hi, Rng& rng,
                          bool requires_grad = false) {
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        std::vector<double> v(n);
        for (auto& x : v) x = rng.uniform(lo, hi);
        return Tensor(std::move(shape), std::move(v), requires_grad);
    }

    const std::vector<std::size_t>& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->numel(); }
    std::size_t rows() const { return rank() == 2 ? node_->shape[0] : 1; }
    std::size_t cols() const { return rank() == 2 ? node_->shape[1] : node_->shape[0]; }

    const std::vector<double>& data() const { return node_->data; }
    std::vector<double>& mutable_data() { return node_->data; }
    const std::vector<double>& grad() const { return node_->grad; }

    bool requires_grad() const { return node_->requires_grad; }
    bool in_graph() const { return node_->in_graph; }

    double item() const {
        if (numel() != 1) throw std::invalid_argument("item(): tensor is not scalar");
        return node_->data[0];
    }

    double at(std::size_t i) const { return node_->data[i]; }
    double at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }

    void zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }

    // Reverse sweep from a scalar loss. Grads accumulate additively into every
    // reachable tensor whose leaf flag is set (and every interior node).
    void backward() const {
        if (numel() != 1)
            throw std::invalid_argument("backward(): loss must be scalar");
        std::vector<detail::Node*> order;
        std::unordered_set<detail::Node*> seen;
        topo(node_.get(), seen, order);
        for (auto* n : order) n->ensure_grad();
        node_->grad[0] += 1.0;
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            if ((*it)->backward_fn) (*it)->backward_fn(**it);
        }
    }

    std::shared_ptr<detail::Node> node() const { return node_; }

    static Tensor wrap(std::shared_ptr<detail::Node> n) {
        Tensor t;
        t.node_ = std::move(n);
        return t;
    }

private:
    static void topo(detail::Node* n, std::unordered_set<detail::Node*>& seen,
                     std::vector<detail::Node*>& order) {
        if (!n->in_graph || seen.count(n)) return;
        seen.insert(n);
        for (auto& p : n->parents) topo(p.get(), seen, order);
        order.push_back(n);
    }

    std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline Tensor make_op(std::vector<std::size_t> shape, std::vector<double> data,
                      std::vector<Tensor> parents,
                      std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    if (grad_mode_flag()) {
        bool any = false;
        for (auto& p : parents)
            if (p.in_graph()) any = true;
        if (any) {
            n->in_graph = true;
            for (auto& p : parents) n->parents.push_back(p.node());
            for (auto& p : n->parents) p->ensure_grad();
            n->backward_fn = std::move(backward_fn);
        }
    }
    return Tensor::wrap(std::move(n));
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace detail

// ---- arithmetic ----

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
    auto pa = a.node();
    auto pb = b.node();
    return detail::make_op(a.shape(), std::move(out), {a, b}, [pa, pb](detail::Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            pa->grad[i] += n.grad[i];
            pb->grad[i] += n.grad[i];
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
    auto pa = a.node();
    auto pb = b.node();
    return detail::make_op(a.shape(), std::move(out), {a, b}, [pa, pb](detail::Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            pa->grad[i] += n.grad[i];
            pb->grad[i] -= n.grad[i];
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
    auto pa = a.node();
    auto pb = b.node();
    return detail::make_op(a.shape(), std::move(out), {a, b}, [pa, pb](detail::Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            pa->grad[i] += n.grad[i] * pb->data[i];
            pb->grad[i] += n.grad[i] * pa->data[i];
        }
    });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "div");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (b.at(i) == 0.0) throw std::domain_error("div: division by zero");
        out[i] = a.at(i) / b.at(i);
    }
    auto pa = a.node();
    auto pb = b.node();
    return detail::make_op(a.shape(), std::move(out), {a, b}, [pa, pb](detail::Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            const double bi = pb->data[i];
            pa->grad[i] += n.grad[i] / bi;
            pb->grad[i] -= n.grad[i] * pa->data[i] / (bi * bi);
        }
    });
}

inline Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * c;
    auto pa = a.node();
    return detail::make_op(a.shape(), std::move(out), {a}, [pa, c](detail::Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] * c;
    });
}

inline Tensor add_scalar(const Tensor& a, double c) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + c;
    auto pa = a.node();
    return detail::make_op(a.shape(), std::move(out), {a}, [pa](detail::Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
    });
}

// ---- elementwise transcendental ----

inline Tensor exp(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.at(i));
    auto pa = a.node();
    auto shape = a.shape();
    return detail::make_op(std::move(shape), std::move(out), {a}, [pa](detail::Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            pa->grad[i] += n.grad[i] * n.data[i];
    });
}

inline Tensor log(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (a.at(i) <= 0.0) throw std::domain_error("log: non-positive input");
        out[i] = std::log(a.at(i));
    }
    auto pa = a.node();
    return detail::make_op(a.shape(), std::move(out), {a}, [pa](detail::Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            pa->grad[i] += n.grad[i] / pa->data[i];
    });
}

inline Tensor silu(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = a.at(i);
        out[i] = x / (1.0 + std::exp(-x));
    }
    auto pa = a.node();
    return detail::make_op(a.shape(), std::move(out), {a}, [pa](detail::Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            const double x = pa->data[i];
            const double s = 1.0 / (1.0 + std::exp(-x));
            pa->grad[i] += n.grad[i] * (s + x * s * (1.0 - s));
        }
    });
}

// ---- reductions / row ops ----

inline Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a.at(i);
    auto pa = a.node();
    return detail::make_op({1}, {s}, {a}, [pa](detail::Node& n) {
        for (auto& g : pa->grad) g += n.grad[0];
    });
}

inline Tensor mean(const Tensor& a) {
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

// Rows sum to 1, strictly positive; max-subtraction guards overflow.
inline Tensor softmax_rows(const Tensor& a) {
    const std::size_t m = a.rows(), k = a.cols();
    std::vector<double> out(a.numel());
    for (std::size_t r = 0; r < m; ++r) {
        double mx = a.at(r * k);
        for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, a.at(r * k + c));
        double z = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            out[r * k + c] = std::exp(a.at(r * k + c) - mx);
            z += out[r * k + c];
        }
        for (std::size_t c = 0; c < k; ++c) out[r * k + c] /= z;
    }
    auto pa = a.node();
    return detail::make_op(a.shape(), std::move(out), {a}, [pa, m, k](detail::Node& n) {
        for (std::size_t r = 0; r < m; ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < k; ++c)
                dot += n.grad[r * k + c] * n.data[r * k + c];
            for (std::size_t c = 0; c < k; ++c)
                pa->grad[r * k + c] +=
                    n.data[r * k + c] * (n.grad[r * k + c] - dot);
        }
    });
}

// Per-row log(sum(exp(row))), output shape [m].
inline Tensor logsumexp_rows(const Tensor& a) {
    const std::size_t m = a.rows(), k = a.cols();
    std::vector<double> out(m);
    for (std::size_t r = 0; r < m; ++r) {
        double mx = a.at(r * k);
        for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, a.at(r * k + c));
        double z = 0.0;
        for (std::size_t c = 0; c < k; ++c) z += std::exp(a.at(r * k + c) - mx);
        out[r] = mx + std::log(z);
    }
    auto pa = a.node();
    return detail::make_op({m}, std::move(out), {a}, [pa, m, k](detail::Node& n) {
        for (std::size_t r = 0; r < m; ++r) {
            for (std::size_t c = 0; c < k; ++c)
                pa->grad[r * k + c] +=
                    n.grad[r] * std::exp(pa->data[r * k + c] - n.data[r]);
        }
    });
}

inline constexpr double kL2NormEps = 1e-12;

// Row-wise L2 normalization; rows with norm below kL2NormEps are rejected.
inline Tensor l2_normalize(const Tensor& a) {
    const std::size_t m = a.rows(), k = a.cols();
    std::vector<double> out(a.numel());
    std::vector<double> norms(m);
    for (std::size_t r = 0; r < m; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < k; ++c) s += a.at(r * k + c) * a.at(r * k + c);
        norms[r] = std::sqrt(s);
        if (norms[r] < kL2NormEps)
            throw std::domain_error("l2_normalize: degenerate (near-zero) row");
        for (std::size_t c = 0; c < k; ++c) out[r * k + c] = a.at(r * k + c) / norms[r];
    }
    auto pa = a.node();
    return detail::make_op(a.shape(), std::move(out), {a},
                           [pa, m, k, norms](detail::Node& n) {
        for (std::size_t r = 0; r < m; ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < k; ++c)
                dot += n.grad[r * k + c] * pa->data[r * k + c];
            const double nn = norms[r];
            for (std::size_t c = 0; c < k; ++c)
                pa->grad[r * k + c] += n.grad[r * k + c] / nn -
                                       pa->data[r * k + c] * dot / (nn * nn * nn);
        }
    });
}

// Row-wise RMS normalization (no gain; compose with mul_rowvec for a gain).
inline Tensor rms_norm_rows(const Tensor& a, double eps = 1e-6) {
    const std::size_t m = a.rows(), k = a.cols();
    std::vector<double> out(a.numel());
    std::vector<double> rms(m);
    for (std::size_t r = 0; r < m; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < k; ++c) s += a.at(r * k + c) * a.at(r * k + c);
        rms[r] = std::sqrt(s / static_cast<double>(k) + eps);
        for (std::size_t c = 0; c < k; ++c) out[r * k + c] = a.at(r * k + c) / rms[r];
    }
    auto pa = a.node();
    return detail::make_op(a.shape(), std::move(out), {a},
                           [pa, m, k, rms](detail::Node& n) {
        for (std::size_t r = 0; r < m; ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < k; ++c)
                dot += n.grad[r * k + c] * pa->data[r * k + c];
            const double rr = rms[r];
            for (std::size_t c = 0; c < k; ++c)
                pa->grad[r * k + c] +=
                    n.grad[r * k + c] / rr -
                    pa->data[r * k + c] * dot / (static_cast<double>(k) * rr * rr * rr);
        }
    });
}

// ---- matrix ops ----

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw std::invalid_argument("matmul: operands must be rank 2");
    const std::size_t m = a.rows(), k = a.cols(), n2 = b.cols();
    if (b.rows() != k) throw std::invalid_argument("matmul: inner dimension mismatch");
    std::vector<double> out(m * n2, 0.0);
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ad[i * k + p];
            for (std::size_t j = 0; j < n2; ++j) out[i * n2 + j] += av * bd[p * n2 + j];
        }
    auto pa = a.node();
    auto pb = b.node();
    return detail::make_op({m, n2}, std::move(out), {a, b},
                           [pa, pb, m, k, n2](detail::Node& n) {
        // dA += G B^T
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
                double s = 0.0;
                for (std::size_t j = 0; j < n2; ++j)
                    s += n.grad[i * n2 + j] * pb->data[p * n2 + j];
                pa->grad[i * k + p] += s;
            }
        // dB += A^T G
        for (std::size_t p = 0; p < k; ++p)
            for (std::size_t j = 0; j < n2; ++j) {
                double s = 0.0;
                for (std::size_t i = 0; i < m; ++i)
                    s += pa->data[i * k + p] * n.grad[i * n2 + j];
                pb->grad[p * n2 + j] += s;
            }
    });
}

inline Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw std::invalid_argument("transpose: rank-2 only");
    const std::size_t m = a.rows(), k = a.cols();
    std::vector<double> out(m * k);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < k; ++j) out[j * m + i] = a.at(i, j);
    auto pa = a.node();
    return detail::make_op({k, m}, std::move(out), {a}, [pa, m, k](detail::Node& n) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < k; ++j)
                pa->grad[i * k + j] += n.grad[j * m + i];
    });
}

// ---- structural ops ----

inline Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t len) {
    const std::size_t m = a.rows(), k = a.cols();
    if (start + len > k) throw std::invalid_argument("slice_cols: out of range");
    std::vector<double> out(m * len);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < len; ++j) out[i * len + j] = a.at(i, start + j);
    auto pa = a.node();
    return detail::make_op({m, len}, std::move(out), {a},
                           [pa, m, k, start, len](detail::Node& n) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < len; ++j)
                pa->grad[i * k + start + j] += n.grad[i * len + j];
    });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    const std::size_t m = parts[0].rows();
    std::size_t total = 0;
    for (auto& p : parts) {
        if (p.rows() != m) throw std::invalid_argument("concat_cols: row mismatch");
        total += p.cols();
    }
    std::vector<double> out(m * total);
    std::size_t off = 0;
    for (auto& p : parts) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < p.cols(); ++j)
                out[i * total + off + j] = p.at(i, j);
        off += p.cols();
    }
    std::vector<std::size_t> widths;
    std::vector<std::shared_ptr<detail::Node>> nodes;
    for (auto& p : parts) {
        widths.push_back(p.cols());
        nodes.push_back(p.node());
    }
    return detail::make_op({m, total}, std::move(out), parts,
                           [nodes, widths, m, total](detail::Node& n) {
        std::size_t off = 0;
        for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
            const std::size_t w = widths[pi];
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < w; ++j)
                    nodes[pi]->grad[i * w + j] += n.grad[i * total + off + j];
            off += w;
        }
    });
}

// Stack rank-1 tensors (or 1×d rows) into an [N×d] matrix.
inline Tensor stack_rows(const std::vector<Tensor>& rows) {
    if (rows.empty()) throw std::invalid_argument("stack_rows: empty");
    const std::size_t d = rows[0].numel();
    std::vector<double> out;
    out.reserve(rows.size() * d);
    for (auto& r : rows) {
        if (r.numel() != d) throw std::invalid_argument("stack_rows: width mismatch");
        out.insert(out.end(), r.data().begin(), r.data().end());
    }
    std::vector<std::shared_ptr<detail::Node>> nodes;
    for (auto& r : rows) nodes.push_back(r.node());
    return detail::make_op({rows.size(), d}, std::move(out), rows,
                           [nodes, d](detail::Node& n) {
        for (std::size_t i = 0; i < nodes.size(); ++i)
            for (std::size_t j = 0; j < d; ++j)
                nodes[i]->grad[j] += n.grad[i * d + j];
    });
}

// Select one entry per row: out[i] = a[i, idx[i]].
inline Tensor pick_cols(const Tensor& a, const std::vector<std::size_t>& idx) {
    const std::size_t m = a.rows(), k = a.cols();
    if (idx.size() != m) throw std::invalid_argument("pick_cols: index count mismatch");
    std::vector<double> out(m);
    for (std::size_t i = 0; i < m; ++i) {
        if (idx[i] >= k) throw std::invalid_argument("pick_cols: index out of range");
        out[i] = a.at(i, idx[i]);
    }
    auto pa = a.node();
    auto ix = idx;
    return detail::make_op({m}, std::move(out), {a}, [pa, ix, k](detail::Node& n) {
        for (std::size_t i = 0; i < ix.size(); ++i)
            pa->grad[i * k + ix[i]] += n.grad[i];
    });
}

// Gather rows of an embedding table by id; gradient scatter-adds into the table.
inline Tensor embedding_lookup(const Tensor& table, const std::vector<std::size_t>& ids) {
    const std::size_t v = table.rows(), d = table.cols();
    std::vector<double> out(ids.size() * d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= v) throw std::invalid_argument("embedding_lookup: id out of range");
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] = table.at(ids[i], j);
    }
    auto pt = table.node();
    auto idc = ids;
    return detail::make_op({ids.size(), d}, std::move(out), {table},
                           [pt, idc, d](detail::Node& n) {
        for (std::size_t i = 0; i < idc.size(); ++i)
            for (std::size_t j = 0; j < d; ++j)
                pt->grad[idc[i] * d + j] += n.grad[i * d + j];
    });
}

// Broadcast a rank-1 vector across rows of a matrix, elementwise product.
inline Tensor mul_rowvec(const Tensor& a, const Tensor& v) {
    const std::size_t m = a.rows(), k = a.cols();
    if (v.numel() != k) throw std::invalid_argument("mul_rowvec: width mismatch");
    std::vector<double> out(m * k);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < k; ++j) out[i * k + j] = a.at(i, j) * v.at(j);
    auto pa = a.node();
    auto pv = v.node();
    return detail::make_op(a.shape(), std::move(out), {a, v}, [pa, pv, m, k](detail::Node& n) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < k; ++j) {
                pa->grad[i * k + j] += n.grad[i * k + j] * pv->data[j];
                pv->grad[j] += n.grad[i * k + j] * pa->data[i * k + j];
            }
    });
}

// Subtract v[i] from every entry of row i; v is rank-1 of length rows(a).
inline Tensor sub_colvec(const Tensor& a, const Tensor& v) {
    const std::size_t m = a.rows(), k = a.cols();
    if (v.numel() != m) throw std::invalid_argument("sub_colvec: length mismatch");
    std::vector<double> out(m * k);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < k; ++j) out[i * k + j] = a.at(i * k + j) - v.at(i);
    auto pa = a.node();
    auto pv = v.node();
    return detail::make_op(a.shape(), std::move(out), {a, v}, [pa, pv, m, k](detail::Node& n) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < k; ++j) {
                pa->grad[i * k + j] += n.grad[i * k + j];
                pv->grad[i] -= n.grad[i * k + j];
            }
    });
}

// Mean over the first valid_len rows; output rank-1 [d].
inline Tensor mean_rows(const Tensor& a, std::size_t valid_len) {
    const std::size_t m = a.rows(), k = a.cols();
    if (valid_len == 0 || valid_len > m)
        throw std::invalid_argument("mean_rows: valid_len out of range");
    std::vector<double> out(k, 0.0);
    for (std::size_t i = 0; i < valid_len; ++i)
        for (std::size_t j = 0; j < k; ++j) out[j] += a.at(i, j);
    for (auto& x : out) x /= static_cast<double>(valid_len);
    auto pa = a.node();
    return detail::make_op({k}, std::move(out), {a}, [pa, valid_len, k](detail::Node& n) {
        const double inv = 1.0 / static_cast<double>(valid_len);
        for (std::size_t i = 0; i < valid_len; ++i)
            for (std::size_t j = 0; j < k; ++j)
                pa->grad[i * k + j] += n.grad[j] * inv;
    });
}

// Rotary position encoding over rows: row p has its (2j, 2j+1) pairs rotated
// by angle p * base^(-2j/d). Orthogonal per row, so grad rotates back.
inline Tensor rope_rows(const Tensor& a, double base = 10000.0) {
    const std::size_t m = a.rows(), k = a.cols();
    if (k % 2 != 0) throw std::invalid_argument("rope_rows: width must be even");
    std::vector<double> out(m * k);
    for (std::size_t p = 0; p < m; ++p)
        for (std::size_t j = 0; j < k / 2; ++j) {
            const double theta =
                std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(k));
            const double ang = static_cast<double>(p) * theta;
            const double c = std::cos(ang), s = std::sin(ang);
            const double x0 = a.at(p, 2 * j), x1 = a.at(p, 2 * j + 1);
            out[p * k + 2 * j] = x0 * c - x1 * s;
            out[p * k + 2 * j + 1] = x0 * s + x1 * c;
        }
    auto pa = a.node();
    return detail::make_op(a.shape(), std::move(out), {a}, [pa, m, k, base](detail::Node& n) {
        for (std::size_t p = 0; p < m; ++p)
            for (std::size_t j = 0; j < k / 2; ++j) {
                const double theta =
                    std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(k));
                const double ang = static_cast<double>(p) * theta;
                const double c = std::cos(ang), s = std::sin(ang);
                const double g0 = n.grad[p * k + 2 * j], g1 = n.grad[p * k + 2 * j + 1];
                pa->grad[p * k + 2 * j] += g0 * c + g1 * s;
                pa->grad[p * k + 2 * j + 1] += -g0 * s + g1 * c;
            }
    });
}

}  // namespace jtc
