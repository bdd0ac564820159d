#pragma once

// Differentiable ops over Tensor<S>. Conventions:
//   4-D tensors are [N, C, T, F] row-major (F fastest).
//   2-D tensors are [T, D] row-major.
// Statistics and loss reductions accumulate in double regardless of S.

#include "amt/common.hpp"
#include "amt/nn/tensor.hpp"

#include <cmath>
#include <vector>

namespace amt::nn {

namespace detail {

// Arguments never alias in this codebase; restrict lets the elementwise
// loops vectorize without runtime overlap checks.
template <class S>
inline void axpy(S a, const S* __restrict__ x, S* __restrict__ y, int n) {
    for (int i = 0; i < n; ++i) y[i] += a * x[i];
}

// Eight independent accumulators so the compiler can vectorize the reduction
// without reassociating a single serial chain.
template <class S>
inline S dot(const S* __restrict__ a, const S* __restrict__ b, int n) {
    S acc[8] = {S(0), S(0), S(0), S(0), S(0), S(0), S(0), S(0)};
    int i = 0;
    for (; i + 8 <= n; i += 8)
        for (int l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
    S tail = S(0);
    for (; i < n; ++i) tail += a[i] * b[i];
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) +
           ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

// C[m,n] += A[m,k] * B[k,n]
template <class S>
void mm_nn(const S* a, const S* b, S* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const S* arow = a + static_cast<size_t>(i) * k;
        S* crow = c + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) axpy(arow[p], b + static_cast<size_t>(p) * n, crow, n);
    }
}

// C[m,n] += A[m,k] * B[n,k]^T
template <class S>
void mm_nt(const S* a, const S* b, S* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const S* arow = a + static_cast<size_t>(i) * k;
        S* crow = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) crow[j] += dot(arow, b + static_cast<size_t>(j) * k, k);
    }
}

// C[m,n] += A[k,m]^T * B[k,n]
template <class S>
void mm_tn(const S* a, const S* b, S* c, int m, int k, int n) {
    for (int p = 0; p < k; ++p) {
        const S* arow = a + static_cast<size_t>(p) * m;
        const S* brow = b + static_cast<size_t>(p) * n;
        for (int i = 0; i < m; ++i) axpy(arow[i], brow, c + static_cast<size_t>(i) * n, n);
    }
}

} // namespace detail

// ---------------------------------------------------------------- elementwise

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    require(a.shape() == b.shape(), "op.shape_mismatch", "add: shapes differ");
    Tensor<S> out = op_result<S>(a.shape(), {a, b});
    for (size_t i = 0; i < out.numel(); ++i) out.values()[i] = a.values()[i] + b.values()[i];
    if (out.requires_grad()) {
        out.node()->backward = [o = out.raw(), an = a.raw(), bn = b.raw()] {
            if (an->requires_grad)
                for (size_t i = 0; i < o->grad.size(); ++i) an->grad[i] += o->grad[i];
            if (bn->requires_grad)
                for (size_t i = 0; i < o->grad.size(); ++i) bn->grad[i] += o->grad[i];
        };
    }
    detail::check_finite_values(out.raw(), "add");
    return out;
}

template <class S>
Tensor<S> add_n(const std::vector<Tensor<S>>& xs) {
    require(!xs.empty(), "op.empty", "add_n of nothing");
    for (const auto& x : xs)
        require(x.shape() == xs[0].shape(), "op.shape_mismatch", "add_n: shapes differ");
    Tensor<S> out = op_result<S>(xs[0].shape(), xs);
    for (const auto& x : xs)
        for (size_t i = 0; i < out.numel(); ++i) out.values()[i] += x.values()[i];
    if (out.requires_grad()) {
        out.node()->backward = [o = out.raw()] {
            for (auto& p : o->parents)
                if (p->requires_grad)
                    for (size_t i = 0; i < o->grad.size(); ++i) p->grad[i] += o->grad[i];
        };
    }
    detail::check_finite_values(out.raw(), "add_n");
    return out;
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    require(a.shape() == b.shape(), "op.shape_mismatch", "mul: shapes differ");
    Tensor<S> out = op_result<S>(a.shape(), {a, b});
    for (size_t i = 0; i < out.numel(); ++i) out.values()[i] = a.values()[i] * b.values()[i];
    if (out.requires_grad()) {
        out.node()->backward = [o = out.raw(), an = a.raw(), bn = b.raw()] {
            if (an->requires_grad)
                for (size_t i = 0; i < o->grad.size(); ++i)
                    an->grad[i] += o->grad[i] * bn->value[i];
            if (bn->requires_grad)
                for (size_t i = 0; i < o->grad.size(); ++i)
                    bn->grad[i] += o->grad[i] * an->value[i];
        };
    }
    detail::check_finite_values(out.raw(), "mul");
    return out;
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, double c) {
    Tensor<S> out = op_result<S>(a.shape(), {a});
    for (size_t i = 0; i < out.numel(); ++i) out.values()[i] = static_cast<S>(a.values()[i] * c);
    if (out.requires_grad()) {
        out.node()->backward = [o = out.raw(), an = a.raw(), c] {
            for (size_t i = 0; i < o->grad.size(); ++i)
                an->grad[i] += static_cast<S>(o->grad[i] * c);
        };
    }
    detail::check_finite_values(out.raw(), "scale");
    return out;
}

template <class S>
Tensor<S> relu(const Tensor<S>& a) {
    Tensor<S> out = op_result<S>(a.shape(), {a});
    for (size_t i = 0; i < out.numel(); ++i)
        out.values()[i] = a.values()[i] > S(0) ? a.values()[i] : S(0);
    if (out.requires_grad()) {
        out.node()->backward = [o = out.raw(), an = a.raw()] {
            for (size_t i = 0; i < o->grad.size(); ++i)
                if (an->value[i] > S(0)) an->grad[i] += o->grad[i];
        };
    }
    return out;
}

template <class S>
Tensor<S> sigmoid(const Tensor<S>& a) {
    Tensor<S> out = op_result<S>(a.shape(), {a});
    for (size_t i = 0; i < out.numel(); ++i) {
        const double x = static_cast<double>(a.values()[i]);
        out.values()[i] = static_cast<S>(1.0 / (1.0 + std::exp(-x)));
    }
    if (out.requires_grad()) {
        out.node()->backward = [o = out.raw(), an = a.raw()] {
            for (size_t i = 0; i < o->grad.size(); ++i) {
                const S y = o->value[i];
                an->grad[i] += o->grad[i] * y * (S(1) - y);
            }
        };
    }
    detail::check_finite_values(out.raw(), "sigmoid");
    return out;
}

template <class S>
Tensor<S> tanh_op(const Tensor<S>& a) {
    Tensor<S> out = op_result<S>(a.shape(), {a});
    for (size_t i = 0; i < out.numel(); ++i)
        out.values()[i] = static_cast<S>(std::tanh(static_cast<double>(a.values()[i])));
    if (out.requires_grad()) {
        out.node()->backward = [o = out.raw(), an = a.raw()] {
            for (size_t i = 0; i < o->grad.size(); ++i) {
                const S y = o->value[i];
                an->grad[i] += o->grad[i] * (S(1) - y * y);
            }
        };
    }
    detail::check_finite_values(out.raw(), "tanh");
    return out;
}

// Value copy with the graph cut: conditioning planes enter downstream heads
// through detach so each loss trains only its own stack.
template <class S>
Tensor<S> detach(const Tensor<S>& a) {
    return Tensor<S>::from(a.shape(), a.values(), false);
}

template <class S>
Tensor<S> sum(const Tensor<S>& a) {
    Tensor<S> out = op_result<S>({1}, {a});
    double acc = 0.0;
    for (const S& x : a.values()) acc += static_cast<double>(x);
    out.values()[0] = static_cast<S>(acc);
    if (out.requires_grad()) {
        out.node()->backward = [o = out.raw(), an = a.raw()] {
            const S g = o->grad[0];
            for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g;
        };
    }
    detail::check_finite_values(out.raw(), "sum");
    return out;
}

// ------------------------------------------------------------ shape plumbing

template <class S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& xs) {
    require(!xs.empty(), "op.empty", "concat of nothing");
    const int t = xs[0].dim(0);
    int total = 0;
    for (const auto& x : xs) {
        require(x.rank() == 2 && x.dim(0) == t, "op.shape_mismatch",
                "concat_cols: row counts differ");
        total += x.dim(1);
    }
    Tensor<S> out = op_result<S>({t, total}, xs);
    int col = 0;
    for (const auto& x : xs) {
        const int d = x.dim(1);
        for (int r = 0; r < t; ++r)
            std::copy_n(x.values().data() + static_cast<size_t>(r) * d, d,
                        out.values().data() + static_cast<size_t>(r) * total + col);
        col += d;
    }
    if (out.requires_grad()) {
        out.node()->backward = [o = out.raw(), t, total] {
            int col = 0;
            for (auto& p : o->parents) {
                const int d = p->shape[1];
                if (p->requires_grad)
                    for (int r = 0; r < t; ++r) {
                        const S* g = o->grad.data() + static_cast<size_t>(r) * total + col;
                        S* pg = p->grad.data() + static_cast<size_t>(r) * d;
                        for (int j = 0; j < d; ++j) pg[j] += g[j];
                    }
                col += d;
            }
        };
    }
    return out;
}

template <class S>
Tensor<S> slice_cols(const Tensor<S>& a, int c0, int c1) {
    require(a.rank() == 2 && 0 <= c0 && c0 < c1 && c1 <= a.dim(1), "op.bad_slice",
            "slice_cols out of range");
    const int t = a.dim(0), d = a.dim(1), w = c1 - c0;
    Tensor<S> out = op_result<S>({t, w}, {a});
    for (int r = 0; r < t; ++r)
        std::copy_n(a.values().data() + static_cast<size_t>(r) * d + c0, w,
                    out.values().data() + static_cast<size_t>(r) * w);
    if (out.requires_grad()) {
        out.node()->backward = [o = out.raw(), an = a.raw(), c0, t, d, w] {
            for (int r = 0; r < t; ++r) {
                const S* g = o->grad.data() + static_cast<size_t>(r) * w;
                S* pg = an->grad.data() + static_cast<size_t>(r) * d + c0;
                for (int j = 0; j < w; ++j) pg[j] += g[j];
            }
        };
    }
    return out;
}

template <class S>
Tensor<S> slice_rows(const Tensor<S>& a, int r0, int r1) {
    require(a.rank() == 2 && 0 <= r0 && r0 < r1 && r1 <= a.dim(0), "op.bad_slice",
            "slice_rows out of range");
    const int d = a.dim(1), h = r1 - r0;
    Tensor<S> out = op_result<S>({h, d}, {a});
    std::copy_n(a.values().data() + static_cast<size_t>(r0) * d, static_cast<size_t>(h) * d,
                out.values().data());
    if (out.requires_grad()) {
        out.node()->backward = [o = out.raw(), an = a.raw(), r0, d, h] {
            for (size_t i = 0; i < static_cast<size_t>(h) * d; ++i)
                an->grad[static_cast<size_t>(r0) * d + i] += o->grad[i];
        };
    }
    return out;
}

// [1,C,T,F] -> [T, C*F]; per-frame feature vector for recurrent layers.
template <class S>
Tensor<S> flatten_ctf(const Tensor<S>& a) {
    require(a.rank() == 4 && a.dim(0) == 1, "op.shape_mismatch", "flatten_ctf wants [1,C,T,F]");
    const int c = a.dim(1), t = a.dim(2), f = a.dim(3);
    Tensor<S> out = op_result<S>({t, c * f}, {a});
    for (int ci = 0; ci < c; ++ci)
        for (int ti = 0; ti < t; ++ti)
            std::copy_n(a.values().data() + (static_cast<size_t>(ci) * t + ti) * f, f,
                        out.values().data() + static_cast<size_t>(ti) * (c * f) +
                            static_cast<size_t>(ci) * f);
    if (out.requires_grad()) {
        out.node()->backward = [o = out.raw(), an = a.raw(), c, t, f] {
            for (int ci = 0; ci < c; ++ci)
                for (int ti = 0; ti < t; ++ti) {
                    const S* g = o->grad.data() + static_cast<size_t>(ti) * (c * f) +
                                 static_cast<size_t>(ci) * f;
                    S* pg = an->grad.data() + (static_cast<size_t>(ci) * t + ti) * f;
                    for (int j = 0; j < f; ++j) pg[j] += g[j];
                }
        };
    }
    return out;
}

// --------------------------------------------------------------- dense layers

// x [T,D] * w[O,D]^T + b[O] -> [T,O]
template <class S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
    require(x.rank() == 2 && w.rank() == 2 && x.dim(1) == w.dim(1), "op.shape_mismatch",
            "linear: input width " + std::to_string(x.dim(1)) + " vs weight " +
                shape_str(w.shape()));
    const int t = x.dim(0), d = x.dim(1), o = w.dim(0);
    require(b.numel() == static_cast<size_t>(o), "op.shape_mismatch", "linear: bias size");
    Tensor<S> out = op_result<S>({t, o}, {x, w, b});
    for (int r = 0; r < t; ++r)
        std::copy_n(b.values().data(), o, out.values().data() + static_cast<size_t>(r) * o);
    detail::mm_nt(x.values().data(), w.values().data(), out.values().data(), t, d, o);
    if (out.requires_grad()) {
        out.node()->backward = [on = out.raw(), xn = x.raw(), wn = w.raw(), bn = b.raw(), t, d,
                                o] {
            if (xn->requires_grad) // dX = dY * W
                detail::mm_nn(on->grad.data(), wn->value.data(), xn->grad.data(), t, o, d);
            if (wn->requires_grad) // dW = dY^T * X
                detail::mm_tn(on->grad.data(), xn->value.data(), wn->grad.data(), o, t, d);
            if (bn->requires_grad)
                for (int r = 0; r < t; ++r)
                    for (int j = 0; j < o; ++j)
                        bn->grad[j] += on->grad[static_cast<size_t>(r) * o + j];
        };
    }
    detail::check_finite_values(out.raw(), "linear");
    return out;
}

template <class S>
Tensor<S> softmax_rows(const Tensor<S>& x) {
    require(x.rank() == 2, "op.shape_mismatch", "softmax_rows wants [T,D]");
    const int t = x.dim(0), d = x.dim(1);
    Tensor<S> out = op_result<S>({t, d}, {x});
    for (int r = 0; r < t; ++r) {
        const S* in = x.values().data() + static_cast<size_t>(r) * d;
        S* y = out.values().data() + static_cast<size_t>(r) * d;
        double mx = -1e300;
        for (int j = 0; j < d; ++j) mx = std::max(mx, static_cast<double>(in[j]));
        double z = 0.0;
        for (int j = 0; j < d; ++j) z += std::exp(static_cast<double>(in[j]) - mx);
        for (int j = 0; j < d; ++j)
            y[j] = static_cast<S>(std::exp(static_cast<double>(in[j]) - mx) / z);
    }
    if (out.requires_grad()) {
        out.node()->backward = [o = out.raw(), xn = x.raw(), t, d] {
            for (int r = 0; r < t; ++r) {
                const S* y = o->value.data() + static_cast<size_t>(r) * d;
                const S* g = o->grad.data() + static_cast<size_t>(r) * d;
                S* xg = xn->grad.data() + static_cast<size_t>(r) * d;
                double inner = 0.0;
                for (int j = 0; j < d; ++j) inner += static_cast<double>(g[j]) * y[j];
                for (int j = 0; j < d; ++j)
                    xg[j] += y[j] * (g[j] - static_cast<S>(inner));
            }
        };
    }
    detail::check_finite_values(out.raw(), "softmax");
    return out;
}

// ---------------------------------------------------------------- convolution

// Cross-correlation with "same" zero padding and per-axis dilation.
// x [N,C,T,F], w [O,C,kT,kF] (odd kernel sides), b [O] -> [N,O,T,F].
template <class S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, int dil_t,
                 int dil_f) {
    require(x.rank() == 4 && w.rank() == 4, "op.shape_mismatch", "conv2d wants 4-D x and w");
    require(dil_t >= 1 && dil_f >= 1, "op.bad_dilation", "dilation must be >= 1");
    const int n = x.dim(0), c = x.dim(1), t = x.dim(2), f = x.dim(3);
    const int o = w.dim(0), kt = w.dim(2), kf = w.dim(3);
    require(w.dim(1) == c, "op.shape_mismatch", "conv2d: channel mismatch");
    require(kt % 2 == 1 && kf % 2 == 1, "op.bad_kernel", "conv2d: kernel sides must be odd");
    require(b.numel() == static_cast<size_t>(o), "op.shape_mismatch", "conv2d: bias size");

    const int ct = kt / 2, cf = kf / 2;
    Tensor<S> out = op_result<S>({n, o, t, f}, {x, w, b});

    // One pass over output rows; every tap works on rows that stay cache-hot.
    std::vector<S> acc(f);
    for (int ni = 0; ni < n; ++ni)
        for (int oi = 0; oi < o; ++oi)
            for (int ti = 0; ti < t; ++ti) {
                std::fill(acc.begin(), acc.end(), b.values()[oi]);
                for (int ci = 0; ci < c; ++ci) {
                    const S* xplane =
                        x.values().data() + (static_cast<size_t>(ni) * c + ci) * t * f;
                    const S* wk =
                        w.values().data() + (static_cast<size_t>(oi) * c + ci) * kt * kf;
                    for (int ki = 0; ki < kt; ++ki) {
                        const int tsrc = ti + (ki - ct) * dil_t;
                        if (tsrc < 0 || tsrc >= t) continue;
                        const S* row = xplane + static_cast<size_t>(tsrc) * f;
                        for (int kj = 0; kj < kf; ++kj) {
                            const int df = (kj - cf) * dil_f;
                            const int f0 = std::max(0, -df), f1 = std::min(f, f - df);
                            detail::axpy(wk[ki * kf + kj], row + f0 + df, acc.data() + f0,
                                         f1 - f0);
                        }
                    }
                }
                std::copy_n(acc.data(), f,
                            out.values().data() +
                                (static_cast<size_t>(ni) * o + oi) * t * f +
                                static_cast<size_t>(ti) * f);
            }

    if (out.requires_grad()) {
        out.node()->backward = [on = out.raw(), xn = x.raw(), wn = w.raw(), bn = b.raw(), n, c,
                                t, f, o, kt, kf, ct, cf, dil_t, dil_f] {
            const bool need_x = xn->requires_grad;
            const bool need_w = wn->requires_grad;
            std::vector<double> dw(need_w ? wn->grad.size() : 0, 0.0);
            for (int ni = 0; ni < n; ++ni)
                for (int oi = 0; oi < o; ++oi) {
                    const S* gyplane =
                        on->grad.data() + (static_cast<size_t>(ni) * o + oi) * t * f;
                    if (bn->requires_grad) {
                        double acc = 0.0;
                        for (int i = 0; i < t * f; ++i)
                            acc += static_cast<double>(gyplane[i]);
                        bn->grad[oi] += static_cast<S>(acc);
                    }
                    for (int ti = 0; ti < t; ++ti) {
                        const S* gy = gyplane + static_cast<size_t>(ti) * f;
                        for (int ci = 0; ci < c; ++ci) {
                            const size_t plane_off = (static_cast<size_t>(ni) * c + ci) *
                                                     static_cast<size_t>(t) * f;
                            const size_t wbase =
                                (static_cast<size_t>(oi) * c + ci) * kt * kf;
                            for (int ki = 0; ki < kt; ++ki) {
                                const int tsrc = ti + (ki - ct) * dil_t;
                                if (tsrc < 0 || tsrc >= t) continue;
                                const S* xrow = xn->value.data() + plane_off +
                                                static_cast<size_t>(tsrc) * f;
                                S* gxrow = need_x ? xn->grad.data() + plane_off +
                                                        static_cast<size_t>(tsrc) * f
                                                  : nullptr;
                                for (int kj = 0; kj < kf; ++kj) {
                                    const int df = (kj - cf) * dil_f;
                                    const int f0 = std::max(0, -df),
                                              f1 = std::min(f, f - df);
                                    if (need_w)
                                        dw[wbase + ki * kf + kj] += static_cast<double>(
                                            detail::dot(gy + f0, xrow + f0 + df, f1 - f0));
                                    if (gxrow)
                                        detail::axpy(wn->value[wbase + ki * kf + kj], gy + f0,
                                                     gxrow + f0 + df, f1 - f0);
                                }
                            }
                        }
                    }
                }
            if (need_w)
                for (size_t i = 0; i < dw.size(); ++i) wn->grad[i] += static_cast<S>(dw[i]);
        };
    }
    detail::check_finite_values(out.raw(), "conv2d");
    return out;
}

// ------------------------------------------------------------- normalization

// Per-(n,c) standardization over the T*F plane. Zero-variance planes come out
// as beta: the centered numerator is zero and eps guards the division.
template <class S>
Tensor<S> instance_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                        double eps = 1e-5) {
    require(x.rank() == 4, "op.shape_mismatch", "instance_norm wants [N,C,T,F]");
    const int n = x.dim(0), c = x.dim(1), t = x.dim(2), f = x.dim(3);
    const int plane = t * f;
    require(plane > 1, "op.degenerate_plane", "instance_norm needs T*F > 1");
    require(gamma.numel() == static_cast<size_t>(c) && beta.numel() == static_cast<size_t>(c),
            "op.shape_mismatch", "instance_norm: affine size");

    Tensor<S> out = op_result<S>({n, c, t, f}, {x, gamma, beta});
    std::vector<double> inv_std(static_cast<size_t>(n) * c), means(static_cast<size_t>(n) * c);
    for (int i = 0; i < n * c; ++i) {
        const S* src = x.values().data() + static_cast<size_t>(i) * plane;
        double mean = 0.0;
        for (int j = 0; j < plane; ++j) mean += static_cast<double>(src[j]);
        mean /= plane;
        double var = 0.0;
        for (int j = 0; j < plane; ++j) {
            const double d = static_cast<double>(src[j]) - mean;
            var += d * d;
        }
        var /= plane;
        means[i] = mean;
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        const double g = static_cast<double>(gamma.values()[i % c]);
        const double b = static_cast<double>(beta.values()[i % c]);
        S* dst = out.values().data() + static_cast<size_t>(i) * plane;
        for (int j = 0; j < plane; ++j)
            dst[j] = static_cast<S>((static_cast<double>(src[j]) - mean) * inv_std[i] * g + b);
    }

    if (out.requires_grad()) {
        out.node()->backward = [o = out.raw(), xn = x.raw(), gn = gamma.raw(), bn = beta.raw(),
                                n, c, plane, means, inv_std] {
            for (int i = 0; i < n * c; ++i) {
                const S* xv = xn->value.data() + static_cast<size_t>(i) * plane;
                const S* gy = o->grad.data() + static_cast<size_t>(i) * plane;
                const double g = static_cast<double>(gn->value[i % c]);
                const double inv = inv_std[i];
                const double mean = means[i];
                double sum_gy = 0.0, sum_gy_xhat = 0.0;
                for (int j = 0; j < plane; ++j) {
                    const double xh = (static_cast<double>(xv[j]) - mean) * inv;
                    sum_gy += static_cast<double>(gy[j]);
                    sum_gy_xhat += static_cast<double>(gy[j]) * xh;
                }
                if (gn->requires_grad) gn->grad[i % c] += static_cast<S>(sum_gy_xhat);
                if (bn->requires_grad) bn->grad[i % c] += static_cast<S>(sum_gy);
                if (xn->requires_grad) {
                    S* gx = xn->grad.data() + static_cast<size_t>(i) * plane;
                    const double m_gy = sum_gy / plane;
                    const double m_gyx = sum_gy_xhat / plane;
                    for (int j = 0; j < plane; ++j) {
                        const double xh = (static_cast<double>(xv[j]) - mean) * inv;
                        gx[j] += static_cast<S>(g * inv *
                                                (static_cast<double>(gy[j]) - m_gy - xh * m_gyx));
                    }
                }
            }
        };
    }
    detail::check_finite_values(out.raw(), "instance_norm");
    return out;
}

// Row-wise standardization of [T,D] over the feature axis.
template <class S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     double eps = 1e-5) {
    require(x.rank() == 2, "op.shape_mismatch", "layer_norm wants [T,D]");
    const int t = x.dim(0), d = x.dim(1);
    require(gamma.numel() == static_cast<size_t>(d) && beta.numel() == static_cast<size_t>(d),
            "op.shape_mismatch", "layer_norm: affine size");
    Tensor<S> out = op_result<S>({t, d}, {x, gamma, beta});
    std::vector<double> inv_std(t), means(t);
    for (int r = 0; r < t; ++r) {
        const S* src = x.values().data() + static_cast<size_t>(r) * d;
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += static_cast<double>(src[j]);
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            const double dd = static_cast<double>(src[j]) - mean;
            var += dd * dd;
        }
        var /= d;
        means[r] = mean;
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        S* dst = out.values().data() + static_cast<size_t>(r) * d;
        for (int j = 0; j < d; ++j)
            dst[j] = static_cast<S>((static_cast<double>(src[j]) - mean) * inv_std[r] *
                                        static_cast<double>(gamma.values()[j]) +
                                    static_cast<double>(beta.values()[j]));
    }
    if (out.requires_grad()) {
        out.node()->backward = [o = out.raw(), xn = x.raw(), gn = gamma.raw(), bn = beta.raw(),
                                t, d, means, inv_std] {
            for (int r = 0; r < t; ++r) {
                const S* xv = xn->value.data() + static_cast<size_t>(r) * d;
                const S* gy = o->grad.data() + static_cast<size_t>(r) * d;
                const double inv = inv_std[r], mean = means[r];
                double sum_gyg = 0.0, sum_gyg_xhat = 0.0;
                for (int j = 0; j < d; ++j) {
                    const double xh = (static_cast<double>(xv[j]) - mean) * inv;
                    const double gg =
                        static_cast<double>(gy[j]) * static_cast<double>(gn->value[j]);
                    sum_gyg += gg;
                    sum_gyg_xhat += gg * xh;
                    if (gn->requires_grad) gn->grad[j] += static_cast<S>(gy[j] * xh);
                    if (bn->requires_grad) bn->grad[j] += gy[j];
                }
                if (xn->requires_grad) {
                    S* gx = xn->grad.data() + static_cast<size_t>(r) * d;
                    for (int j = 0; j < d; ++j) {
                        const double xh = (static_cast<double>(xv[j]) - mean) * inv;
                        const double gg =
                            static_cast<double>(gy[j]) * static_cast<double>(gn->value[j]);
                        gx[j] += static_cast<S>(inv * (gg - sum_gyg / d - xh * sum_gyg_xhat / d));
                    }
                }
            }
        };
    }
    detail::check_finite_values(out.raw(), "layer_norm");
    return out;
}

// -------------------------------------------------------------------- pooling

// Max over non-overlapping windows along the last axis: [N,C,T,F] -> [N,C,T,F/size].
template <class S>
Tensor<S> maxpool_freq(const Tensor<S>& x, int size) {
    require(x.rank() == 4, "op.shape_mismatch", "maxpool_freq wants [N,C,T,F]");
    const int f = x.dim(3);
    require(size >= 1 && f % size == 0, "op.indivisible", "frequency axis not divisible by pool size");
    const int n = x.dim(0), c = x.dim(1), t = x.dim(2), fo = f / size;
    Tensor<S> out = op_result<S>({n, c, t, fo}, {x});
    std::vector<int32_t> arg(out.numel());
    const size_t rows = static_cast<size_t>(n) * c * t;
    for (size_t r = 0; r < rows; ++r) {
        const S* src = x.values().data() + r * f;
        S* dst = out.values().data() + r * fo;
        int32_t* am = arg.data() + r * fo;
        for (int j = 0; j < fo; ++j) {
            int best = j * size;
            for (int u = 1; u < size; ++u)
                if (src[j * size + u] > src[best]) best = j * size + u;
            dst[j] = src[best];
            am[j] = best;
        }
    }
    if (out.requires_grad()) {
        out.node()->backward = [o = out.raw(), xn = x.raw(), arg = std::move(arg), f, fo, rows] {
            for (size_t r = 0; r < rows; ++r) {
                const S* gy = o->grad.data() + r * fo;
                S* gx = xn->grad.data() + r * f;
                const int32_t* am = arg.data() + r * fo;
                for (int j = 0; j < fo; ++j) gx[am[j]] += gy[j];
            }
        };
    }
    return out;
}

} // namespace amt::nn
