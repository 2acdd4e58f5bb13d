#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "l2s/common.hpp"

namespace l2s::nn {

// Reverse-mode autodiff over dense row-major 2-D tensors. Nodes hold parent
// pointers; a backward call topologically sorts the reachable graph and
// visits each node exactly once. No global tape object: the graph is the
// tape, and it lives as long as someone holds the output tensors.

inline thread_local bool g_grad_enabled = true;

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
    ~NoGradGuard() { g_grad_enabled = prev; }
};

template <typename T>
struct Node;
template <typename T>
using Tensor = std::shared_ptr<Node<T>>;

template <typename T>
struct Node {
    std::size_t rows = 0, cols = 0;
    std::vector<T> val;
    std::vector<T> grad;
    bool requires_grad = false;
    std::vector<Tensor<T>> parents;
    // Propagates this node's grad into its parents. Takes the node itself so
    // the closure never owns a shared_ptr to it.
    std::function<void(Node<T>&)> backward_fn;

    std::size_t size() const { return val.size(); }
    T& at(std::size_t r, std::size_t c) { return val[r * cols + c]; }
    const T& at(std::size_t r, std::size_t c) const { return val[r * cols + c]; }
    void ensure_grad() {
        if (grad.size() != val.size()) grad.assign(val.size(), T(0));
    }
    Matrix<T> matrix() const {
        Matrix<T> m(rows, cols);
        m.data = val;
        return m;
    }
};

template <typename T>
Tensor<T> make_tensor(std::size_t rows, std::size_t cols, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->rows = rows;
    n->cols = cols;
    n->val.assign(rows * cols, T(0));
    n->requires_grad = requires_grad;
    return n;
}

template <typename T>
Tensor<T> from_matrix(const Matrix<T>& m, bool requires_grad = false) {
    auto n = make_tensor<T>(m.rows, m.cols, requires_grad);
    n->val = m.data;
    return n;
}

namespace detail {

template <typename T>
Tensor<T> result_of(std::size_t rows, std::size_t cols, std::initializer_list<Tensor<T>> parents) {
    auto out = make_tensor<T>(rows, cols);
    if (g_grad_enabled) {
        for (const auto& p : parents)
            if (p->requires_grad) out->requires_grad = true;
        if (out->requires_grad) out->parents.assign(parents.begin(), parents.end());
    }
    return out;
}

template <typename T>
inline void shape_guard(bool ok, const char* op, const Node<T>& a, const Node<T>& b) {
    if (!ok) throw ShapeError(op, a.rows, a.cols, b.rows, b.cols);
}

}  // namespace detail

// ---- graph traversal ----

// Seeds must already carry their upstream gradients in node->grad.
template <typename T>
void backward_multi(const std::vector<Tensor<T>>& seeds) {
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    // Iterative DFS; post-order gives a topological order of the DAG.
    struct Frame {
        Node<T>* n;
        std::size_t next = 0;
    };
    std::vector<Frame> stack;
    for (const auto& s : seeds) {
        if (!s || seen.count(s.get())) continue;
        stack.push_back({s.get()});
        seen.insert(s.get());
        while (!stack.empty()) {
            Frame& f = stack.back();
            if (f.next < f.n->parents.size()) {
                Node<T>* p = f.n->parents[f.next++].get();
                if (p->requires_grad && !seen.count(p)) {
                    seen.insert(p);
                    stack.push_back({p});
                }
            } else {
                order.push_back(f.n);
                stack.pop_back();
            }
        }
    }
    for (auto* n : order) n->ensure_grad();
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

template <typename T>
void backward(const Tensor<T>& scalar) {
    if (scalar->size() != 1) throw ShapeError("backward root", scalar->rows, scalar->cols, 1, 1);
    scalar->ensure_grad();
    scalar->grad[0] += T(1);
    backward_multi<T>({scalar});
}

// ---- ops ----

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::shape_guard(a->cols == b->rows, "matmul", *a, *b);
    auto out = detail::result_of<T>(a->rows, b->cols, {a, b});
    const std::size_t M = a->rows, K = a->cols, N = b->cols;
    const bool big = M * K * N >= (1u << 16);
#pragma omp parallel for schedule(static) if (big)
    for (long long r = 0; r < (long long)M; ++r) {
        T* orow = out->val.data() + r * N;
        const T* arow = a->val.data() + r * K;
        for (std::size_t k = 0; k < K; ++k) {
            const T av = arow[k];
            const T* brow = b->val.data() + k * N;
            for (std::size_t c = 0; c < N; ++c) orow[c] += av * brow[c];
        }
    }
    if (out->requires_grad)
        out->backward_fn = [a, b, M, K, N, big](Node<T>& o) {
            if (a->requires_grad) {
                a->ensure_grad();
#pragma omp parallel for schedule(static) if (big)
                for (long long r = 0; r < (long long)M; ++r) {
                    T* garow = a->grad.data() + r * K;
                    const T* gorow = o.grad.data() + r * N;
                    for (std::size_t k = 0; k < K; ++k) {
                        const T* brow = b->val.data() + k * N;
                        T s = 0;
                        for (std::size_t c = 0; c < N; ++c) s += gorow[c] * brow[c];
                        garow[k] += s;
                    }
                }
            }
            if (b->requires_grad) {
                b->ensure_grad();
#pragma omp parallel for schedule(static) if (big)
                for (long long k = 0; k < (long long)K; ++k) {
                    T* gbrow = b->grad.data() + k * N;
                    for (std::size_t r = 0; r < M; ++r) {
                        const T av = a->val[r * K + k];
                        const T* gorow = o.grad.data() + r * N;
                        for (std::size_t c = 0; c < N; ++c) gbrow[c] += av * gorow[c];
                    }
                }
            }
        };
    return out;
}

// b is either the same shape or a 1 x C row vector broadcast over rows.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    const bool rowvec = (b->rows == 1 && a->cols == b->cols && a->rows != 1);
    detail::shape_guard(rowvec || (a->rows == b->rows && a->cols == b->cols), "add", *a, *b);
    auto out = detail::result_of<T>(a->rows, a->cols, {a, b});
    for (std::size_t r = 0; r < a->rows; ++r)
        for (std::size_t c = 0; c < a->cols; ++c)
            out->val[r * a->cols + c] = a->val[r * a->cols + c] + b->val[(rowvec ? 0 : r) * a->cols + c];
    if (out->requires_grad)
        out->backward_fn = [a, b, rowvec](Node<T>& o) {
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t i = 0; i < o.size(); ++i) a->grad[i] += o.grad[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t r = 0; r < o.rows; ++r)
                    for (std::size_t c = 0; c < o.cols; ++c)
                        b->grad[(rowvec ? 0 : r) * o.cols + c] += o.grad[r * o.cols + c];
            }
        };
    return out;
}

// Elementwise product; b may be a 1 x C row vector broadcast over rows.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    const bool rowvec = (b->rows == 1 && a->cols == b->cols && a->rows != 1);
    detail::shape_guard(rowvec || (a->rows == b->rows && a->cols == b->cols), "mul", *a, *b);
    auto out = detail::result_of<T>(a->rows, a->cols, {a, b});
    for (std::size_t r = 0; r < a->rows; ++r)
        for (std::size_t c = 0; c < a->cols; ++c)
            out->val[r * a->cols + c] = a->val[r * a->cols + c] * b->val[(rowvec ? 0 : r) * a->cols + c];
    if (out->requires_grad)
        out->backward_fn = [a, b, rowvec](Node<T>& o) {
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t r = 0; r < o.rows; ++r)
                    for (std::size_t c = 0; c < o.cols; ++c)
                        a->grad[r * o.cols + c] +=
                            o.grad[r * o.cols + c] * b->val[(rowvec ? 0 : r) * o.cols + c];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t r = 0; r < o.rows; ++r)
                    for (std::size_t c = 0; c < o.cols; ++c)
                        b->grad[(rowvec ? 0 : r) * o.cols + c] +=
                            o.grad[r * o.cols + c] * a->val[r * o.cols + c];
            }
        };
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    auto out = detail::result_of<T>(a->rows, a->cols, {a});
    for (std::size_t i = 0; i < a->size(); ++i) out->val[i] = a->val[i] * s;
    if (out->requires_grad)
        out->backward_fn = [a, s](Node<T>& o) {
            a->ensure_grad();
            for (std::size_t i = 0; i < o.size(); ++i) a->grad[i] += o.grad[i] * s;
        };
    return out;
}

template <typename T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
    detail::shape_guard(a->rows == b->rows, "concat_cols", *a, *b);
    auto out = detail::result_of<T>(a->rows, a->cols + b->cols, {a, b});
    for (std::size_t r = 0; r < a->rows; ++r) {
        T* orow = out->val.data() + r * out->cols;
        for (std::size_t c = 0; c < a->cols; ++c) orow[c] = a->val[r * a->cols + c];
        for (std::size_t c = 0; c < b->cols; ++c) orow[a->cols + c] = b->val[r * b->cols + c];
    }
    if (out->requires_grad)
        out->backward_fn = [a, b](Node<T>& o) {
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t r = 0; r < o.rows; ++r)
                    for (std::size_t c = 0; c < a->cols; ++c)
                        a->grad[r * a->cols + c] += o.grad[r * o.cols + c];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t r = 0; r < o.rows; ++r)
                    for (std::size_t c = 0; c < b->cols; ++c)
                        b->grad[r * b->cols + c] += o.grad[r * o.cols + a->cols + c];
            }
        };
    return out;
}

// Columns [c0, c1).
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t c0, std::size_t c1) {
    if (c0 >= c1 || c1 > a->cols) throw ShapeError("slice_cols", a->rows, a->cols, c0, c1);
    auto out = detail::result_of<T>(a->rows, c1 - c0, {a});
    for (std::size_t r = 0; r < a->rows; ++r)
        for (std::size_t c = c0; c < c1; ++c) out->val[r * out->cols + (c - c0)] = a->val[r * a->cols + c];
    if (out->requires_grad)
        out->backward_fn = [a, c0](Node<T>& o) {
            a->ensure_grad();
            for (std::size_t r = 0; r < o.rows; ++r)
                for (std::size_t c = 0; c < o.cols; ++c)
                    a->grad[r * a->cols + c0 + c] += o.grad[r * o.cols + c];
        };
    return out;
}

// Row-wise (x - mean) / sqrt(var + eps); affine gain/bias live outside.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& a, T eps = T(1e-5)) {
    auto out = detail::result_of<T>(a->rows, a->cols, {a});
    const std::size_t C = a->cols;
    std::vector<T> inv_std(a->rows);
    for (std::size_t r = 0; r < a->rows; ++r) {
        const T* x = a->val.data() + r * C;
        T m = 0;
        for (std::size_t c = 0; c < C; ++c) m += x[c];
        m /= T(C);
        T v = 0;
        for (std::size_t c = 0; c < C; ++c) v += (x[c] - m) * (x[c] - m);
        v /= T(C);
        const T is = T(1) / std::sqrt(v + eps);
        inv_std[r] = is;
        T* y = out->val.data() + r * C;
        for (std::size_t c = 0; c < C; ++c) y[c] = (x[c] - m) * is;
    }
    if (out->requires_grad)
        out->backward_fn = [a, inv_std = std::move(inv_std)](Node<T>& o) {
            a->ensure_grad();
            const std::size_t C = o.cols;
            for (std::size_t r = 0; r < o.rows; ++r) {
                const T* y = o.val.data() + r * C;
                const T* dy = o.grad.data() + r * C;
                T mean_dy = 0, mean_dyy = 0;
                for (std::size_t c = 0; c < C; ++c) {
                    mean_dy += dy[c];
                    mean_dyy += dy[c] * y[c];
                }
                mean_dy /= T(C);
                mean_dyy /= T(C);
                T* dx = a->grad.data() + r * C;
                for (std::size_t c = 0; c < C; ++c)
                    dx[c] += inv_std[r] * (dy[c] - mean_dy - y[c] * mean_dyy);
            }
        };
    return out;
}

// Exact GeLU, 0.5 x (1 + erf(x / sqrt(2))).
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
    auto out = detail::result_of<T>(a->rows, a->cols, {a});
    for (std::size_t i = 0; i < a->size(); ++i) {
        const T x = a->val[i];
        out->val[i] = T(0.5) * x * (T(1) + std::erf(x * T(M_SQRT1_2)));
    }
    if (out->requires_grad)
        out->backward_fn = [a](Node<T>& o) {
            a->ensure_grad();
            const T inv_sqrt2pi = T(0.3989422804014327);
            for (std::size_t i = 0; i < o.size(); ++i) {
                const T x = a->val[i];
                const T cdf = T(0.5) * (T(1) + std::erf(x * T(M_SQRT1_2)));
                const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x * x);
                a->grad[i] += o.grad[i] * (cdf + x * pdf);
            }
        };
    return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    auto out = detail::result_of<T>(a->rows, a->cols, {a});
    for (std::size_t i = 0; i < a->size(); ++i) out->val[i] = a->val[i] > T(0) ? a->val[i] : T(0);
    if (out->requires_grad)
        out->backward_fn = [a](Node<T>& o) {
            a->ensure_grad();
            for (std::size_t i = 0; i < o.size(); ++i)
                if (a->val[i] > T(0)) a->grad[i] += o.grad[i];
        };
    return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    auto out = detail::result_of<T>(a->rows, a->cols, {a});
    for (std::size_t i = 0; i < a->size(); ++i) out->val[i] = T(1) / (T(1) + std::exp(-a->val[i]));
    if (out->requires_grad)
        out->backward_fn = [a](Node<T>& o) {
            a->ensure_grad();
            for (std::size_t i = 0; i < o.size(); ++i) {
                const T s = o.val[i];
                a->grad[i] += o.grad[i] * s * (T(1) - s);
            }
        };
    return out;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
    auto out = detail::result_of<T>(a->rows, a->cols, {a});
    const std::size_t C = a->cols;
    for (std::size_t r = 0; r < a->rows; ++r) {
        const T* x = a->val.data() + r * C;
        T* y = out->val.data() + r * C;
        T mx = x[0];
        for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, x[c]);
        T sum = 0;
        for (std::size_t c = 0; c < C; ++c) {
            y[c] = std::exp(x[c] - mx);
            sum += y[c];
        }
        for (std::size_t c = 0; c < C; ++c) y[c] /= sum;
    }
    if (out->requires_grad)
        out->backward_fn = [a](Node<T>& o) {
            a->ensure_grad();
            const std::size_t C = o.cols;
            for (std::size_t r = 0; r < o.rows; ++r) {
                const T* y = o.val.data() + r * C;
                const T* dy = o.grad.data() + r * C;
                T dot = 0;
                for (std::size_t c = 0; c < C; ++c) dot += dy[c] * y[c];
                T* dx = a->grad.data() + r * C;
                for (std::size_t c = 0; c < C; ++c) dx[c] += y[c] * (dy[c] - dot);
            }
        };
    return out;
}

// Scales row r of a by s[r]; s is an N x 1 tensor.
template <typename T>
Tensor<T> scale_rows(const Tensor<T>& a, const Tensor<T>& s) {
    detail::shape_guard(s->rows == a->rows && s->cols == 1, "scale_rows", *a, *s);
    auto out = detail::result_of<T>(a->rows, a->cols, {a, s});
    for (std::size_t r = 0; r < a->rows; ++r)
        for (std::size_t c = 0; c < a->cols; ++c)
            out->val[r * a->cols + c] = a->val[r * a->cols + c] * s->val[r];
    if (out->requires_grad)
        out->backward_fn = [a, s](Node<T>& o) {
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t r = 0; r < o.rows; ++r)
                    for (std::size_t c = 0; c < o.cols; ++c)
                        a->grad[r * o.cols + c] += o.grad[r * o.cols + c] * s->val[r];
            }
            if (s->requires_grad) {
                s->ensure_grad();
                for (std::size_t r = 0; r < o.rows; ++r) {
                    T acc = 0;
                    for (std::size_t c = 0; c < o.cols; ++c)
                        acc += o.grad[r * o.cols + c] * a->val[r * o.cols + c];
                    s->grad[r] += acc;
                }
            }
        };
    return out;
}

// Rows scaled to unit L2 norm; rows with norm < 1e-12 become zero rows and
// pass no gradient.
template <typename T>
Tensor<T> unit_normalize_rows(const Tensor<T>& a) {
    auto out = detail::result_of<T>(a->rows, a->cols, {a});
    std::vector<T> norms(a->rows, T(0));
    for (std::size_t r = 0; r < a->rows; ++r) {
        const T* x = a->val.data() + r * a->cols;
        T n2 = 0;
        for (std::size_t c = 0; c < a->cols; ++c) n2 += x[c] * x[c];
        const T n = std::sqrt(n2);
        norms[r] = n;
        T* y = out->val.data() + r * a->cols;
        if (n < T(1e-12)) {
            for (std::size_t c = 0; c < a->cols; ++c) y[c] = T(0);
        } else {
            for (std::size_t c = 0; c < a->cols; ++c) y[c] = x[c] / n;
        }
    }
    if (out->requires_grad)
        out->backward_fn = [a, norms = std::move(norms)](Node<T>& o) {
            a->ensure_grad();
            for (std::size_t r = 0; r < o.rows; ++r) {
                if (norms[r] < T(1e-12)) continue;
                const T* y = o.val.data() + r * o.cols;
                const T* dy = o.grad.data() + r * o.cols;
                T dot = 0;
                for (std::size_t c = 0; c < o.cols; ++c) dot += dy[c] * y[c];
                T* dx = a->grad.data() + r * o.cols;
                for (std::size_t c = 0; c < o.cols; ++c) dx[c] += (dy[c] - y[c] * dot) / norms[r];
            }
        };
    return out;
}

// Detached copy: same values, no history, never requires grad.
template <typename T>
Tensor<T> stop_gradient(const Tensor<T>& a) {
    auto out = make_tensor<T>(a->rows, a->cols, false);
    out->val = a->val;
    return out;
}

// out row i = a row idx[i]; duplicate indices accumulate on backward.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, const std::vector<int>& idx) {
    for (int i : idx)
        if (i < 0 || (std::size_t)i >= a->rows) throw ShapeError("gather_rows", a->rows, a->cols, (std::size_t)i, 0);
    auto out = detail::result_of<T>(idx.size(), a->cols, {a});
    for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t c = 0; c < a->cols; ++c)
            out->val[r * a->cols + c] = a->val[(std::size_t)idx[r] * a->cols + c];
    if (out->requires_grad)
        out->backward_fn = [a, idx](Node<T>& o) {
            a->ensure_grad();
            for (std::size_t r = 0; r < idx.size(); ++r)
                for (std::size_t c = 0; c < o.cols; ++c)
                    a->grad[(std::size_t)idx[r] * o.cols + c] += o.grad[r * o.cols + c];
        };
    return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, std::size_t rows, std::size_t cols) {
    if (rows * cols != a->size()) throw ShapeError("reshape", a->rows, a->cols, rows, cols);
    auto out = detail::result_of<T>(rows, cols, {a});
    out->val = a->val;
    if (out->requires_grad)
        out->backward_fn = [a](Node<T>& o) {
            a->ensure_grad();
            for (std::size_t i = 0; i < o.size(); ++i) a->grad[i] += o.grad[i];
        };
    return out;
}

// N x 1 row sums.
template <typename T>
Tensor<T> row_sum(const Tensor<T>& a) {
    auto out = detail::result_of<T>(a->rows, 1, {a});
    for (std::size_t r = 0; r < a->rows; ++r) {
        T s = 0;
        for (std::size_t c = 0; c < a->cols; ++c) s += a->val[r * a->cols + c];
        out->val[r] = s;
    }
    if (out->requires_grad)
        out->backward_fn = [a](Node<T>& o) {
            a->ensure_grad();
            for (std::size_t r = 0; r < o.rows; ++r)
                for (std::size_t c = 0; c < a->cols; ++c) a->grad[r * a->cols + c] += o.grad[r];
        };
    return out;
}

// Sums each group of `block` consecutive rows. rows % block must be 0.
template <typename T>
Tensor<T> sum_row_blocks(const Tensor<T>& a, std::size_t block) {
    if (block == 0 || a->rows % block != 0) throw ShapeError("sum_row_blocks", a->rows, a->cols, block, 0);
    auto out = detail::result_of<T>(a->rows / block, a->cols, {a});
    for (std::size_t r = 0; r < out->rows; ++r)
        for (std::size_t b = 0; b < block; ++b)
            for (std::size_t c = 0; c < a->cols; ++c)
                out->val[r * a->cols + c] += a->val[(r * block + b) * a->cols + c];
    if (out->requires_grad)
        out->backward_fn = [a, block](Node<T>& o) {
            a->ensure_grad();
            for (std::size_t r = 0; r < o.rows; ++r)
                for (std::size_t b = 0; b < block; ++b)
                    for (std::size_t c = 0; c < o.cols; ++c)
                        a->grad[(r * block + b) * o.cols + c] += o.grad[r * o.cols + c];
        };
    return out;
}

template <typename T>
Tensor<T> abs_t(const Tensor<T>& a) {
    auto out = detail::result_of<T>(a->rows, a->cols, {a});
    for (std::size_t i = 0; i < a->size(); ++i) out->val[i] = std::fabs(a->val[i]);
    if (out->requires_grad)
        out->backward_fn = [a](Node<T>& o) {
            a->ensure_grad();
            for (std::size_t i = 0; i < o.size(); ++i) {
                const T x = a->val[i];
                a->grad[i] += o.grad[i] * (x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)));
            }
        };
    return out;
}

// 1 x 1 sum of all entries.
template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
    auto out = detail::result_of<T>(1, 1, {a});
    T s = 0;
    for (std::size_t i = 0; i < a->size(); ++i) s += a->val[i];
    out->val[0] = s;
    if (out->requires_grad)
        out->backward_fn = [a](Node<T>& o) {
            a->ensure_grad();
            for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += o.grad[0];
        };
    return out;
}

}  // namespace l2s::nn
