#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "gled/core.hpp"

namespace gled::nn {

template <class T>
struct Tensor {
    Shape shape;
    std::vector<T> v;  // values
    std::vector<T> g;  // gradient, same size when needs_grad
    bool needs_grad = false;

    long numel() const { return static_cast<long>(v.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int extent(int a) const { return shape.at(static_cast<size_t>(a)); }
    void alloc_grad() {
        if (needs_grad && g.size() != v.size()) g.assign(v.size(), T{0});
    }
    void zero_grad() { std::fill(g.begin(), g.end(), T{0}); }
};

template <class T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

template <class T>
TensorPtr<T> make_tensor(Shape shape, bool needs_grad = false) {
    auto t = std::make_shared<Tensor<T>>();
    t->shape = std::move(shape);
    t->v.assign(shape_numel(t->shape), T{0});
    t->needs_grad = needs_grad;
    t->alloc_grad();
    return t;
}

// ---------------------------------------------------------------------------
// Shared numeric kernels. Training ops and cached inference call the same
// routines, so both paths produce bit-identical values. Summations run in a
// fixed ascending order per output element.
// ---------------------------------------------------------------------------
namespace kern {

/// C[m,n] = A[m,k] * B[k,n]  (+= when accumulate)
template <class T>
void matmul(const T* a, const T* b, T* c, long m, long k, long n, bool accumulate = false) {
    parallel_for(m, [&](long i) {
        T* crow = c + i * n;
        if (!accumulate)
            for (long j = 0; j < n; ++j) crow[j] = T{0};
        const T* arow = a + i * k;
        for (long p = 0; p < k; ++p) {
            T av = arow[p];
            const T* brow = b + p * n;
            for (long j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }, 8);
}

/// C[m,n] = A[m,k] * B[n,k]^T
template <class T>
void matmul_nt(const T* a, const T* b, T* c, long m, long k, long n, bool accumulate = false) {
    parallel_for(m, [&](long i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (long j = 0; j < n; ++j) {
            const T* brow = b + j * k;
            T acc{0};
            for (long p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] = accumulate ? crow[j] + acc : acc;
        }
    }, 8);
}

/// C[m,n] = A[k,m]^T * B[k,n]
template <class T>
void matmul_tn(const T* a, const T* b, T* c, long m, long k, long n, bool accumulate = false) {
    if (!accumulate)
        for (long i = 0; i < m * n; ++i) c[i] = T{0};
    for (long p = 0; p < k; ++p) {
        const T* arow = a + p * m;
        const T* brow = b + p * n;
        for (long i = 0; i < m; ++i) {
            T av = arow[i];
            T* crow = c + i * n;
            for (long j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

/// Softmax over one contiguous row; max-shifted.
template <class T>
void softmax_row(const T* x, T* y, long n) {
    T mx = x[0];
    for (long i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    T sum{0};
    for (long i = 0; i < n; ++i) {
        y[i] = std::exp(x[i] - mx);
        sum += y[i];
    }
    T inv = T{1} / sum;
    for (long i = 0; i < n; ++i) y[i] *= inv;
}

/// Plain (no affine) layer norm over one contiguous row.
template <class T>
void layer_norm_row(const T* x, T* y, long n, T eps) {
    T mu{0};
    for (long i = 0; i < n; ++i) mu += x[i];
    mu /= static_cast<T>(n);
    T var{0};
    for (long i = 0; i < n; ++i) var += (x[i] - mu) * (x[i] - mu);
    var /= static_cast<T>(n);
    T inv = T{1} / std::sqrt(var + eps);
    for (long i = 0; i < n; ++i) y[i] = (x[i] - mu) * inv;
}

}  // namespace kern

/// Time-embedding vector for an integer index (sin/cos pairs over a
/// geometric frequency ladder).
template <class T>
std::vector<T> sinusoidal_embed(int index, int width) {
    require(width >= 2 && width % 2 == 0, "sinusoidal_embed width must be even and >= 2");
    std::vector<T> e(width);
    int half = width / 2;
    for (int j = 0; j < half; ++j) {
        double freq = std::exp(-std::log(10000.0) * j / half);
        e[2 * j] = static_cast<T>(std::sin(index * freq));
        e[2 * j + 1] = static_cast<T>(std::cos(index * freq));
    }
    return e;
}

/// Reverse-mode tape over dense tensors. Build a fresh Graph per forward
/// pass; backward() runs the recorded closures once, in reverse. Leaf
/// gradients accumulate, so parameters shared across graphs sum their
/// contributions until the optimizer consumes them.
template <class T>
class Graph {
public:
    explicit Graph(bool recording = true) : recording_(recording) {}

    bool recording() const { return recording_; }

    TensorPtr<T> leaf(Shape shape, std::vector<T> values, bool needs_grad = false) {
        auto t = std::make_shared<Tensor<T>>();
        t->shape = std::move(shape);
        require(static_cast<long>(values.size()) == shape_numel(t->shape),
                "leaf values do not match shape");
        t->v = std::move(values);
        t->needs_grad = needs_grad && recording_;
        t->alloc_grad();
        return t;
    }

    TensorPtr<T> constant(Shape shape, std::vector<T> values) {
        return leaf(std::move(shape), std::move(values), false);
    }

    // -- linear algebra ------------------------------------------------------

    TensorPtr<T> matmul(TensorPtr<T> a, TensorPtr<T> b) {
        check2(a, b);
        require(a->rank() == 2 && b->rank() == 2 && a->shape[1] == b->shape[0],
                "matmul shape mismatch " + shape_str(a->shape) + " x " + shape_str(b->shape));
        long m = a->shape[0], k = a->shape[1], n = b->shape[1];
        auto out = result({static_cast<int>(m), static_cast<int>(n)}, {a, b});
        kern::matmul(a->v.data(), b->v.data(), out->v.data(), m, k, n);
        if (out->needs_grad) tape_.push_back([a, b, out, m, k, n] {
            if (a->needs_grad) kern::matmul_nt(out->g.data(), b->v.data(), a->g.data(), m, n, k, true);
            if (b->needs_grad) kern::matmul_tn(a->v.data(), out->g.data(), b->g.data(), k, m, n, true);
        });
        return guarded(out);
    }

    /// a[m,k] * b[n,k]^T
    TensorPtr<T> matmul_nt(TensorPtr<T> a, TensorPtr<T> b) {
        check2(a, b);
        require(a->rank() == 2 && b->rank() == 2 && a->shape[1] == b->shape[1],
                "matmul_nt shape mismatch");
        long m = a->shape[0], k = a->shape[1], n = b->shape[0];
        auto out = result({static_cast<int>(m), static_cast<int>(n)}, {a, b});
        kern::matmul_nt(a->v.data(), b->v.data(), out->v.data(), m, k, n);
        if (out->needs_grad) tape_.push_back([a, b, out, m, k, n] {
            if (a->needs_grad) kern::matmul(out->g.data(), b->v.data(), a->g.data(), m, n, k, true);
            if (b->needs_grad) kern::matmul_tn(out->g.data(), a->v.data(), b->g.data(), n, m, k, true);
        });
        return guarded(out);
    }

    // -- elementwise ---------------------------------------------------------

    TensorPtr<T> add(TensorPtr<T> a, TensorPtr<T> b) { return binary(a, b, +1); }
    TensorPtr<T> sub(TensorPtr<T> a, TensorPtr<T> b) { return binary(a, b, -1); }

    TensorPtr<T> mul(TensorPtr<T> a, TensorPtr<T> b) {
        check2(a, b);
        require(a->shape == b->shape, "mul shape mismatch");
        auto out = result(a->shape, {a, b});
        for (long i = 0; i < out->numel(); ++i) out->v[i] = a->v[i] * b->v[i];
        if (out->needs_grad) tape_.push_back([a, b, out] {
            if (a->needs_grad)
                for (long i = 0; i < out->numel(); ++i) a->g[i] += out->g[i] * b->v[i];
            if (b->needs_grad)
                for (long i = 0; i < out->numel(); ++i) b->g[i] += out->g[i] * a->v[i];
        });
        return guarded(out);
    }

    TensorPtr<T> scale(TensorPtr<T> a, T c) {
        auto out = result(a->shape, {a});
        for (long i = 0; i < out->numel(); ++i) out->v[i] = a->v[i] * c;
        if (out->needs_grad) tape_.push_back([a, out, c] {
            for (long i = 0; i < out->numel(); ++i) a->g[i] += out->g[i] * c;
        });
        return guarded(out);
    }

    TensorPtr<T> relu(TensorPtr<T> a) {
        auto out = result(a->shape, {a});
        for (long i = 0; i < out->numel(); ++i) out->v[i] = a->v[i] > T{0} ? a->v[i] : T{0};
        if (out->needs_grad) tape_.push_back([a, out] {
            for (long i = 0; i < out->numel(); ++i)
                if (a->v[i] > T{0}) a->g[i] += out->g[i];
        });
        return guarded(out);
    }

    /// x[..., n] + b[n]
    TensorPtr<T> add_bias(TensorPtr<T> x, TensorPtr<T> b) {
        check2(x, b);
        long n = last_dim(x);
        require(b->rank() == 1 && b->shape[0] == n, "add_bias width mismatch");
        long rows = x->numel() / n;
        auto out = result(x->shape, {x, b});
        for (long r = 0; r < rows; ++r)
            for (long j = 0; j < n; ++j) out->v[r * n + j] = x->v[r * n + j] + b->v[j];
        if (out->needs_grad) tape_.push_back([x, b, out, rows, n] {
            if (x->needs_grad)
                for (long i = 0; i < out->numel(); ++i) x->g[i] += out->g[i];
            if (b->needs_grad)
                for (long r = 0; r < rows; ++r)
                    for (long j = 0; j < n; ++j) b->g[j] += out->g[r * n + j];
        });
        return guarded(out);
    }

    /// x[..., n] * g[n] + b[n] (the learnable affine after layer norm)
    TensorPtr<T> colwise_affine(TensorPtr<T> x, TensorPtr<T> gamma, TensorPtr<T> beta) {
        check2(x, gamma);
        check2(x, beta);
        long n = last_dim(x);
        require(gamma->rank() == 1 && gamma->shape[0] == n && beta->shape == gamma->shape,
                "colwise_affine width mismatch");
        long rows = x->numel() / n;
        auto out = result(x->shape, {x, gamma, beta});
        for (long r = 0; r < rows; ++r)
            for (long j = 0; j < n; ++j)
                out->v[r * n + j] = x->v[r * n + j] * gamma->v[j] + beta->v[j];
        if (out->needs_grad) tape_.push_back([x, gamma, beta, out, rows, n] {
            for (long r = 0; r < rows; ++r)
                for (long j = 0; j < n; ++j) {
                    T go = out->g[r * n + j];
                    if (x->needs_grad) x->g[r * n + j] += go * gamma->v[j];
                    if (gamma->needs_grad) gamma->g[j] += go * x->v[r * n + j];
                    if (beta->needs_grad) beta->g[j] += go;
                }
        });
        return guarded(out);
    }

    /// Broadcast a scalar node: y = x - s
    TensorPtr<T> sub_scalar(TensorPtr<T> x, TensorPtr<T> s) {
        check2(x, s);
        require(s->numel() == 1, "sub_scalar needs a scalar node");
        auto out = result(x->shape, {x, s});
        for (long i = 0; i < out->numel(); ++i) out->v[i] = x->v[i] - s->v[0];
        if (out->needs_grad) tape_.push_back([x, s, out] {
            if (x->needs_grad)
                for (long i = 0; i < out->numel(); ++i) x->g[i] += out->g[i];
            if (s->needs_grad)
                for (long i = 0; i < out->numel(); ++i) s->g[0] -= out->g[i];
        });
        return guarded(out);
    }

    // -- normalizations ------------------------------------------------------

    TensorPtr<T> softmax_rows(TensorPtr<T> x) {
        long n = last_dim(x);
        require(n >= 1, "softmax over empty axis");
        long rows = x->numel() / n;
        auto out = result(x->shape, {x});
        for (long r = 0; r < rows; ++r) kern::softmax_row(x->v.data() + r * n, out->v.data() + r * n, n);
        if (out->needs_grad) tape_.push_back([x, out, rows, n] {
            for (long r = 0; r < rows; ++r) {
                const T* y = out->v.data() + r * n;
                const T* gy = out->g.data() + r * n;
                T dot{0};
                for (long j = 0; j < n; ++j) dot += y[j] * gy[j];
                T* gx = x->g.data() + r * n;
                for (long j = 0; j < n; ++j) gx[j] += y[j] * (gy[j] - dot);
            }
        });
        return guarded(out);
    }

    TensorPtr<T> layer_norm_rows(TensorPtr<T> x, T eps) {
        long n = last_dim(x);
        require(n >= 1, "layer_norm over empty axis");
        long rows = x->numel() / n;
        auto out = result(x->shape, {x});
        for (long r = 0; r < rows; ++r)
            kern::layer_norm_row(x->v.data() + r * n, out->v.data() + r * n, n, eps);
        if (out->needs_grad) tape_.push_back([x, out, rows, n, eps] {
            for (long r = 0; r < rows; ++r) {
                const T* xv = x->v.data() + r * n;
                const T* y = out->v.data() + r * n;
                const T* gy = out->g.data() + r * n;
                T mu{0};
                for (long j = 0; j < n; ++j) mu += xv[j];
                mu /= static_cast<T>(n);
                T var{0};
                for (long j = 0; j < n; ++j) var += (xv[j] - mu) * (xv[j] - mu);
                var /= static_cast<T>(n);
                T inv = T{1} / std::sqrt(var + eps);
                T mean_gy{0}, mean_gyy{0};
                for (long j = 0; j < n; ++j) {
                    mean_gy += gy[j];
                    mean_gyy += gy[j] * y[j];
                }
                mean_gy /= static_cast<T>(n);
                mean_gyy /= static_cast<T>(n);
                T* gx = x->g.data() + r * n;
                for (long j = 0; j < n; ++j)
                    gx[j] += inv * (gy[j] - mean_gy - y[j] * mean_gyy);
            }
        });
        return guarded(out);
    }

    // -- convolutions and resampling ------------------------------------------

    /// x[B,C,L] (*) w[O,C,K] + b[O], indices wrapped modulo L.
    TensorPtr<T> conv1d_periodic(TensorPtr<T> x, TensorPtr<T> w, TensorPtr<T> b) {
        check2(x, w);
        require(x->rank() == 3 && w->rank() == 3, "conv1d_periodic wants [B,C,L] and [O,C,K]");
        long B = x->shape[0], C = x->shape[1], L = x->shape[2];
        long O = w->shape[0], K = w->shape[2];
        require(w->shape[1] == C, "conv1d_periodic channel mismatch");
        require(b->rank() == 1 && b->shape[0] == O, "conv1d_periodic bias mismatch");
        require(K % 2 == 1 && K <= L, "kernel must be odd and fit the signal");
        auto out = result({static_cast<int>(B), static_cast<int>(O), static_cast<int>(L)}, {x, w, b});
        long half = K / 2;
        parallel_for(B * O, [&](long bo) {
            long bi = bo / O, o = bo % O;
            T* yrow = out->v.data() + (bi * O + o) * L;
            for (long l = 0; l < L; ++l) yrow[l] = b->v[o];
            for (long c = 0; c < C; ++c) {
                const T* xrow = x->v.data() + (bi * C + c) * L;
                const T* wrow = w->v.data() + (o * C + c) * K;
                for (long l = 0; l < L; ++l) {
                    T acc{0};
                    for (long t = 0; t < K; ++t) {
                        long idx = l + t - half;
                        if (idx < 0) idx += L;
                        if (idx >= L) idx -= L;
                        acc += wrow[t] * xrow[idx];
                    }
                    yrow[l] += acc;
                }
            }
        }, 4);
        if (out->needs_grad) tape_.push_back([x, w, b, out, B, C, L, O, K, half] {
            for (long bi = 0; bi < B; ++bi)
                for (long o = 0; o < O; ++o) {
                    const T* gy = out->g.data() + (bi * O + o) * L;
                    if (b->needs_grad)
                        for (long l = 0; l < L; ++l) b->g[o] += gy[l];
                    for (long c = 0; c < C; ++c) {
                        const T* xrow = x->v.data() + (bi * C + c) * L;
                        const T* wrow = w->v.data() + (o * C + c) * K;
                        T* gx = x->needs_grad ? x->g.data() + (bi * C + c) * L : nullptr;
                        T* gw = w->needs_grad ? w->g.data() + (o * C + c) * K : nullptr;
                        for (long l = 0; l < L; ++l) {
                            for (long t = 0; t < K; ++t) {
                                long idx = l + t - half;
                                if (idx < 0) idx += L;
                                if (idx >= L) idx -= L;
                                if (gx) gx[idx] += gy[l] * wrow[t];
                                if (gw) gw[t] += gy[l] * xrow[idx];
                            }
                        }
                    }
                }
        });
        return guarded(out);
    }

    /// Average pooling by 2: [B,C,L] -> [B,C,L/2].
    TensorPtr<T> avg_pool1d2(TensorPtr<T> x) {
        require(x->rank() == 3 && x->shape[2] % 2 == 0, "avg_pool1d2 wants even length [B,C,L]");
        long BC = static_cast<long>(x->shape[0]) * x->shape[1], L = x->shape[2], H = L / 2;
        auto out = result({x->shape[0], x->shape[1], static_cast<int>(H)}, {x});
        for (long r = 0; r < BC; ++r)
            for (long j = 0; j < H; ++j)
                out->v[r * H + j] =
                    (x->v[r * L + 2 * j] + x->v[r * L + 2 * j + 1]) * T{0.5};
        if (out->needs_grad) tape_.push_back([x, out, BC, L, H] {
            for (long r = 0; r < BC; ++r)
                for (long j = 0; j < H; ++j) {
                    T half = out->g[r * H + j] * T{0.5};
                    x->g[r * L + 2 * j] += half;
                    x->g[r * L + 2 * j + 1] += half;
                }
        });
        return guarded(out);
    }

    /// Periodic linear upsampling by 2: [B,C,L] -> [B,C,2L].
    TensorPtr<T> upsample_linear1d2(TensorPtr<T> x) {
        require(x->rank() == 3, "upsample_linear1d2 wants [B,C,L]");
        long BC = static_cast<long>(x->shape[0]) * x->shape[1], L = x->shape[2], U = 2 * L;
        auto out = result({x->shape[0], x->shape[1], static_cast<int>(U)}, {x});
        for (long r = 0; r < BC; ++r)
            for (long j = 0; j < L; ++j) {
                T a = x->v[r * L + j];
                T b = x->v[r * L + (j + 1) % L];
                out->v[r * U + 2 * j] = a;
                out->v[r * U + 2 * j + 1] = (a + b) * T{0.5};
            }
        if (out->needs_grad) tape_.push_back([x, out, BC, L, U] {
            for (long r = 0; r < BC; ++r)
                for (long j = 0; j < L; ++j) {
                    x->g[r * L + j] += out->g[r * U + 2 * j];
                    T half = out->g[r * U + 2 * j + 1] * T{0.5};
                    x->g[r * L + j] += half;
                    x->g[r * L + (j + 1) % L] += half;
                }
        });
        return guarded(out);
    }

    /// Per-channel scale and shift: y[b,c,l] = x[b,c,l]*(1+s[b,c]) + t[b,c].
    /// Identity when s,t are zero, which keeps zero-initialized conditioning
    /// paths neutral.
    TensorPtr<T> affine_channels(TensorPtr<T> x, TensorPtr<T> s, TensorPtr<T> t) {
        require(x->rank() == 3 && s->rank() == 2 && t->rank() == 2, "affine_channels ranks");
        long B = x->shape[0], C = x->shape[1], L = x->shape[2];
        require(s->shape[0] == B && s->shape[1] == C && t->shape == s->shape,
                "affine_channels shape mismatch");
        auto out = result(x->shape, {x, s, t});
        for (long b = 0; b < B; ++b)
            for (long c = 0; c < C; ++c) {
                T sc = T{1} + s->v[b * C + c];
                T sh = t->v[b * C + c];
                const T* xr = x->v.data() + (b * C + c) * L;
                T* yr = out->v.data() + (b * C + c) * L;
                for (long l = 0; l < L; ++l) yr[l] = xr[l] * sc + sh;
            }
        if (out->needs_grad) tape_.push_back([x, s, t, out, B, C, L] {
            for (long b = 0; b < B; ++b)
                for (long c = 0; c < C; ++c) {
                    T sc = T{1} + s->v[b * C + c];
                    const T* xr = x->v.data() + (b * C + c) * L;
                    const T* gy = out->g.data() + (b * C + c) * L;
                    if (x->needs_grad) {
                        T* gx = x->g.data() + (b * C + c) * L;
                        for (long l = 0; l < L; ++l) gx[l] += gy[l] * sc;
                    }
                    if (s->needs_grad) {
                        T acc{0};
                        for (long l = 0; l < L; ++l) acc += gy[l] * xr[l];
                        s->g[b * C + c] += acc;
                    }
                    if (t->needs_grad) {
                        T acc{0};
                        for (long l = 0; l < L; ++l) acc += gy[l];
                        t->g[b * C + c] += acc;
                    }
                }
        });
        return guarded(out);
    }

    // -- shape surgery ---------------------------------------------------------

    TensorPtr<T> concat(TensorPtr<T> a, TensorPtr<T> b, int axis) {
        check2(a, b);
        require(a->rank() == b->rank() && axis >= 0 && axis < a->rank(), "concat axis/rank");
        for (int d = 0; d < a->rank(); ++d)
            require(d == axis || a->shape[d] == b->shape[d], "concat extent mismatch");
        Shape os = a->shape;
        os[axis] += b->shape[axis];
        auto out = result(os, {a, b});
        long outer = 1;
        for (int d = 0; d < axis; ++d) outer *= a->shape[d];
        long inner = 1;
        for (int d = axis + 1; d < a->rank(); ++d) inner *= a->shape[d];
        long ea = a->shape[axis], eb = b->shape[axis];
        for (long o = 0; o < outer; ++o) {
            std::copy_n(a->v.data() + o * ea * inner, ea * inner,
                        out->v.data() + o * (ea + eb) * inner);
            std::copy_n(b->v.data() + o * eb * inner, eb * inner,
                        out->v.data() + o * (ea + eb) * inner + ea * inner);
        }
        if (out->needs_grad) tape_.push_back([a, b, out, outer, inner, ea, eb] {
            for (long o = 0; o < outer; ++o) {
                const T* go = out->g.data() + o * (ea + eb) * inner;
                if (a->needs_grad) {
                    T* ga = a->g.data() + o * ea * inner;
                    for (long i = 0; i < ea * inner; ++i) ga[i] += go[i];
                }
                if (b->needs_grad) {
                    T* gb = b->g.data() + o * eb * inner;
                    for (long i = 0; i < eb * inner; ++i) gb[i] += go[ea * inner + i];
                }
            }
        });
        return guarded(out);
    }

    TensorPtr<T> slice(TensorPtr<T> x, int axis, int start, int len) {
        require(axis >= 0 && axis < x->rank(), "slice axis out of range");
        require(start >= 0 && len >= 1 && start + len <= x->shape[axis], "slice out of range");
        Shape os = x->shape;
        os[axis] = len;
        auto out = result(os, {x});
        long outer = 1;
        for (int d = 0; d < axis; ++d) outer *= x->shape[d];
        long inner = 1;
        for (int d = axis + 1; d < x->rank(); ++d) inner *= x->shape[d];
        long e = x->shape[axis];
        for (long o = 0; o < outer; ++o)
            std::copy_n(x->v.data() + (o * e + start) * inner, static_cast<long>(len) * inner,
                        out->v.data() + o * len * inner);
        if (out->needs_grad) tape_.push_back([x, out, outer, inner, e, start, len] {
            for (long o = 0; o < outer; ++o) {
                const T* go = out->g.data() + o * len * inner;
                T* gx = x->g.data() + (o * e + start) * inner;
                for (long i = 0; i < static_cast<long>(len) * inner; ++i) gx[i] += go[i];
            }
        });
        return guarded(out);
    }

    /// Same data, new shape (element count preserved).
    TensorPtr<T> reshape(TensorPtr<T> x, Shape s) {
        require(shape_numel(s) == x->numel(), "reshape must preserve element count");
        auto out = result(std::move(s), {x});
        out->v = x->v;
        if (out->needs_grad) tape_.push_back([x, out] {
            for (long i = 0; i < out->numel(); ++i) x->g[i] += out->g[i];
        });
        return guarded(out);
    }

    /// y[i] = flat(x)[idx[i]]
    TensorPtr<T> gather(TensorPtr<T> x, std::vector<int> idx) {
        for (int i : idx) require(i >= 0 && i < x->numel(), "gather index out of range");
        auto out = result({static_cast<int>(idx.size())}, {x});
        for (size_t i = 0; i < idx.size(); ++i) out->v[i] = x->v[idx[i]];
        if (out->needs_grad) tape_.push_back([x, out, idx = std::move(idx)] {
            for (size_t i = 0; i < idx.size(); ++i) x->g[idx[i]] += out->g[i];
        });
        return guarded(out);
    }

    /// Adds a learned bias over query-key distance to causal score rows:
    /// y[i,j] = x[i,j] + bias[i-j] for 0 <= i-j < window, untouched otherwise.
    TensorPtr<T> band_bias(TensorPtr<T> x, TensorPtr<T> bias) {
        check2(x, bias);
        require(x->rank() == 2 && bias->rank() == 1, "band_bias wants [N,M] scores and [W] bias");
        long N = x->shape[0], M = x->shape[1], W = bias->shape[0];
        auto out = result(x->shape, {x, bias});
        out->v = x->v;
        for (long i = 0; i < N; ++i)
            for (long j = std::max<long>(0, i - W + 1); j <= std::min(i, M - 1); ++j)
                out->v[i * M + j] += bias->v[i - j];
        if (out->needs_grad) tape_.push_back([x, bias, out, N, M, W] {
            if (x->needs_grad)
                for (long i = 0; i < out->numel(); ++i) x->g[i] += out->g[i];
            if (bias->needs_grad)
                for (long i = 0; i < N; ++i)
                    for (long j = std::max<long>(0, i - W + 1); j <= std::min(i, M - 1); ++j)
                        bias->g[i - j] += out->g[i * M + j];
        });
        return guarded(out);
    }

    // -- reductions -------------------------------------------------------------

    TensorPtr<T> sum_all(TensorPtr<T> x) {
        auto out = result({1}, {x});
        T acc{0};
        for (long i = 0; i < x->numel(); ++i) acc += x->v[i];
        out->v[0] = acc;
        if (out->needs_grad) tape_.push_back([x, out] {
            for (long i = 0; i < x->numel(); ++i) x->g[i] += out->g[0];
        });
        return guarded(out);
    }

    TensorPtr<T> mean_all(TensorPtr<T> x) {
        auto out = result({1}, {x});
        T acc{0};
        for (long i = 0; i < x->numel(); ++i) acc += x->v[i];
        T inv = T{1} / static_cast<T>(x->numel());
        out->v[0] = acc * inv;
        if (out->needs_grad) tape_.push_back([x, out, inv] {
            for (long i = 0; i < x->numel(); ++i) x->g[i] += out->g[0] * inv;
        });
        return guarded(out);
    }

    TensorPtr<T> l2norm_all(TensorPtr<T> x) {
        auto out = result({1}, {x});
        T acc{0};
        for (long i = 0; i < x->numel(); ++i) acc += x->v[i] * x->v[i];
        out->v[0] = std::sqrt(acc);
        if (out->needs_grad) tape_.push_back([x, out] {
            T nrm = out->v[0];
            if (nrm <= T{0}) return;  // subgradient 0 at the kink
            T s = out->g[0] / nrm;
            for (long i = 0; i < x->numel(); ++i) x->g[i] += s * x->v[i];
        });
        return guarded(out);
    }

    /// Row-wise L2 norm over trailing dims: [R, ...] -> [R].
    TensorPtr<T> l2norm_rows(TensorPtr<T> x) {
        require(x->rank() >= 2, "l2norm_rows wants rank >= 2");
        long R = x->shape[0], n = x->numel() / x->shape[0];
        auto out = result({static_cast<int>(R)}, {x});
        for (long r = 0; r < R; ++r) {
            T acc{0};
            const T* row = x->v.data() + r * n;
            for (long i = 0; i < n; ++i) acc += row[i] * row[i];
            out->v[r] = std::sqrt(acc);
        }
        if (out->needs_grad) tape_.push_back([x, out, R, n] {
            for (long r = 0; r < R; ++r) {
                if (out->v[r] <= T{0}) continue;
                T s = out->g[r] / out->v[r];
                const T* row = x->v.data() + r * n;
                T* grow = x->g.data() + r * n;
                for (long i = 0; i < n; ++i) grow[i] += s * row[i];
            }
        });
        return guarded(out);
    }

    // -- driver -------------------------------------------------------------------

    void backward(TensorPtr<T> loss) {
        require(loss && loss->numel() == 1, "backward requires a scalar loss");
        require(recording_, "backward on a non-recording graph");
        require(loss->needs_grad, "loss does not depend on any gradient-tracked input");
        loss->g[0] = T{1};
        for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
    }

    void reset() { tape_.clear(); }
    size_t tape_size() const { return tape_.size(); }

private:
    static long last_dim(const TensorPtr<T>& x) {
        require(x->rank() >= 1, "rank must be >= 1");
        return x->shape.back();
    }
    static void check2(const TensorPtr<T>& a, const TensorPtr<T>& b) {
        require(a && b, "null tensor");
    }

    TensorPtr<T> result(Shape shape, std::initializer_list<TensorPtr<T>> inputs) {
        bool ng = false;
        if (recording_)
            for (const auto& in : inputs) ng = ng || (in && in->needs_grad);
        return make_tensor<T>(std::move(shape), ng);
    }

    /// Debug builds assert that every forward pass produced finite values.
    static TensorPtr<T> guarded(TensorPtr<T> out) {
#ifndef NDEBUG
        for (T v : out->v)
            if (!std::isfinite(v)) throw NumericalError("non-finite value in forward pass");
#endif
        return out;
    }

    TensorPtr<T> binary(TensorPtr<T> a, TensorPtr<T> b, int sign) {
        check2(a, b);
        require(a->shape == b->shape, "elementwise shape mismatch " + shape_str(a->shape) +
                                          " vs " + shape_str(b->shape));
        auto out = result(a->shape, {a, b});
        if (sign > 0)
            for (long i = 0; i < out->numel(); ++i) out->v[i] = a->v[i] + b->v[i];
        else
            for (long i = 0; i < out->numel(); ++i) out->v[i] = a->v[i] - b->v[i];
        if (out->needs_grad) tape_.push_back([a, b, out, sign] {
            if (a->needs_grad)
                for (long i = 0; i < out->numel(); ++i) a->g[i] += out->g[i];
            if (b->needs_grad) {
                if (sign > 0)
                    for (long i = 0; i < out->numel(); ++i) b->g[i] += out->g[i];
                else
                    for (long i = 0; i < out->numel(); ++i) b->g[i] -= out->g[i];
            }
        });
        return guarded(out);
    }

    bool recording_;
    std::vector<std::function<void()>> tape_;
};

}  // namespace gled::nn
