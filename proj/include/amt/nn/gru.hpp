#pragma once

// Bidirectional GRU as a single fused graph node with backpropagation through
// time inside the backward closure. Gate order in the stacked parameter
// matrices is (update z, reset r, candidate n):
//   z_t = sigmoid(Wz x_t + bz_x + Uz h_{t-1} + bz_h)
//   r_t = sigmoid(Wr x_t + br_x + Ur h_{t-1} + br_h)
//   n_t = tanh(Wn x_t + bn_x + r_t .* (Un h_{t-1} + bn_h))
//   h_t = (1 - z_t) .* n_t + z_t .* h_{t-1}
// The output is [T, 2H]: forward hidden states in the left half, backward in
// the right half (the reverse scan's state after consuming x_t).

#include "amt/nn/ops.hpp"
#include "amt/nn/tensor.hpp"

#include <cmath>
#include <memory>
#include <vector>

namespace amt::nn {

template <class S>
struct GruDirParams {
    Tensor<S> wx; // [3H, D]
    Tensor<S> wh; // [3H, H]
    Tensor<S> bx; // [3H]
    Tensor<S> bh; // [3H]
};

namespace detail {

template <class S>
struct GruCache {
    std::vector<S> z, r, n, hn_pre; // gate activations, [T,H] each
    std::vector<S> h;               // post states, [T,H]
    std::vector<S> xw;              // input projections incl. bias, [T,3H]
};

template <class S>
void gru_scan(const S* x, int t_len, int d, int h, const GruDirParams<S>& p, bool reverse,
              GruCache<S>& cache) {
    const int h3 = 3 * h;
    cache.z.assign(static_cast<size_t>(t_len) * h, S(0));
    cache.r.assign(static_cast<size_t>(t_len) * h, S(0));
    cache.n.assign(static_cast<size_t>(t_len) * h, S(0));
    cache.hn_pre.assign(static_cast<size_t>(t_len) * h, S(0));
    cache.h.assign(static_cast<size_t>(t_len) * h, S(0));
    cache.xw.assign(static_cast<size_t>(t_len) * h3, S(0));

    for (int ti = 0; ti < t_len; ++ti)
        std::copy_n(p.bx.values().data(), h3, cache.xw.data() + static_cast<size_t>(ti) * h3);
    mm_nt(x, p.wx.values().data(), cache.xw.data(), t_len, d, h3);

    std::vector<S> hw(h3);
    std::vector<S> h_prev(h, S(0));
    const S* whv = p.wh.values().data();
    for (int step = 0; step < t_len; ++step) {
        const int ti = reverse ? t_len - 1 - step : step;
        std::copy_n(p.bh.values().data(), h3, hw.data());
        for (int row = 0; row < h3; ++row)
            hw[row] += dot(whv + static_cast<size_t>(row) * h, h_prev.data(), h);

        const S* xw = cache.xw.data() + static_cast<size_t>(ti) * h3;
        S* z = cache.z.data() + static_cast<size_t>(ti) * h;
        S* r = cache.r.data() + static_cast<size_t>(ti) * h;
        S* n = cache.n.data() + static_cast<size_t>(ti) * h;
        S* hn = cache.hn_pre.data() + static_cast<size_t>(ti) * h;
        S* hv = cache.h.data() + static_cast<size_t>(ti) * h;
        for (int j = 0; j < h; ++j) {
            z[j] = static_cast<S>(1.0 / (1.0 + std::exp(-static_cast<double>(xw[j] + hw[j]))));
            r[j] = static_cast<S>(
                1.0 / (1.0 + std::exp(-static_cast<double>(xw[h + j] + hw[h + j]))));
            hn[j] = hw[2 * h + j];
            n[j] =
                static_cast<S>(std::tanh(static_cast<double>(xw[2 * h + j] + r[j] * hn[j])));
            hv[j] = (S(1) - z[j]) * n[j] + z[j] * h_prev[j];
        }
        std::copy_n(hv, h, h_prev.data());
    }
}

// BPTT for one direction. dout [T,H] is this direction's slice of the output
// gradient; accumulates into the parameter grads and optionally dx.
template <class S>
void gru_backprop(const S* x, S* dx, const S* dout, int t_len, int d, int h,
                  const GruDirParams<S>& p, bool reverse, const GruCache<S>& cache) {
    const int h3 = 3 * h;
    std::vector<S> dxw(static_cast<size_t>(t_len) * h3, S(0));
    std::vector<S> dh(h, S(0));
    std::vector<S> dh_prev(h);
    std::vector<S> dhw(h3);
    const S* whv = p.wh.values().data();
    S* wh_g = p.wh.requires_grad() ? p.wh.node()->grad.data() : nullptr;
    S* bh_g = p.bh.requires_grad() ? p.bh.node()->grad.data() : nullptr;

    for (int step = t_len - 1; step >= 0; --step) {
        const int ti = reverse ? t_len - 1 - step : step;
        for (int j = 0; j < h; ++j) dh[j] += dout[static_cast<size_t>(ti) * h + j];

        const S* z = cache.z.data() + static_cast<size_t>(ti) * h;
        const S* r = cache.r.data() + static_cast<size_t>(ti) * h;
        const S* n = cache.n.data() + static_cast<size_t>(ti) * h;
        const S* hn = cache.hn_pre.data() + static_cast<size_t>(ti) * h;
        const S* h_prev =
            step == 0 ? nullptr
                      : cache.h.data() + static_cast<size_t>(reverse ? ti + 1 : ti - 1) * h;

        S* dxw_t = dxw.data() + static_cast<size_t>(ti) * h3;
        std::fill(dhw.begin(), dhw.end(), S(0));
        std::fill(dh_prev.begin(), dh_prev.end(), S(0));
        for (int j = 0; j < h; ++j) {
            const S hp = h_prev ? h_prev[j] : S(0);
            const S dz = dh[j] * (hp - n[j]) * z[j] * (S(1) - z[j]);
            const S dn = dh[j] * (S(1) - z[j]) * (S(1) - n[j] * n[j]);
            dh_prev[j] = dh[j] * z[j];
            const S dr = dn * hn[j] * r[j] * (S(1) - r[j]);
            dxw_t[j] = dz;
            dxw_t[h + j] = dr;
            dxw_t[2 * h + j] = dn;
            dhw[j] = dz;
            dhw[h + j] = dr;
            dhw[2 * h + j] = dn * r[j];
        }
        for (int row = 0; row < h3; ++row) {
            const S g = dhw[row];
            if (g != S(0)) {
                axpy(g, whv + static_cast<size_t>(row) * h, dh_prev.data(), h);
                if (wh_g && h_prev) axpy(g, h_prev, wh_g + static_cast<size_t>(row) * h, h);
            }
            if (bh_g) bh_g[row] += g;
        }
        std::swap(dh, dh_prev);
    }

    if (p.wx.requires_grad()) mm_tn(dxw.data(), x, p.wx.node()->grad.data(), h3, t_len, d);
    if (p.bx.requires_grad()) {
        S* g = p.bx.node()->grad.data();
        for (int ti = 0; ti < t_len; ++ti)
            for (int j = 0; j < h3; ++j) g[j] += dxw[static_cast<size_t>(ti) * h3 + j];
    }
    if (dx) mm_nn(dxw.data(), p.wx.values().data(), dx, t_len, h3, d);
}

} // namespace detail

template <class S>
Tensor<S> bigru(const Tensor<S>& x, const GruDirParams<S>& fwd, const GruDirParams<S>& bwd) {
    require(x.rank() == 2, "op.shape_mismatch", "bigru wants [T,D]");
    const int t = x.dim(0), d = x.dim(1);
    require(t >= 1, "op.shape_mismatch", "bigru needs at least one time step");
    const int h3 = fwd.wx.dim(0);
    require(h3 % 3 == 0, "op.shape_mismatch", "bigru: stacked gate dim not divisible by 3");
    const int h = h3 / 3;
    for (const auto* p : {&fwd, &bwd}) {
        require(p->wx.shape() == Shape{3 * h, d}, "op.shape_mismatch", "bigru: wx shape");
        require(p->wh.shape() == Shape{3 * h, h}, "op.shape_mismatch", "bigru: wh shape");
        require(p->bx.numel() == static_cast<size_t>(3 * h) &&
                    p->bh.numel() == static_cast<size_t>(3 * h),
                "op.shape_mismatch", "bigru: bias shape");
    }

    auto fc = std::make_shared<detail::GruCache<S>>();
    auto bc = std::make_shared<detail::GruCache<S>>();
    detail::gru_scan(x.values().data(), t, d, h, fwd, false, *fc);
    detail::gru_scan(x.values().data(), t, d, h, bwd, true, *bc);

    Tensor<S> out = op_result<S>(
        {t, 2 * h}, {x, fwd.wx, fwd.wh, fwd.bx, fwd.bh, bwd.wx, bwd.wh, bwd.bx, bwd.bh});
    for (int ti = 0; ti < t; ++ti) {
        std::copy_n(fc->h.data() + static_cast<size_t>(ti) * h, h,
                    out.values().data() + static_cast<size_t>(ti) * 2 * h);
        std::copy_n(bc->h.data() + static_cast<size_t>(ti) * h, h,
                    out.values().data() + static_cast<size_t>(ti) * 2 * h + h);
    }

    if (out.requires_grad()) {
        out.node()->backward = [o = out.raw(), xn = x.raw(), fwd, bwd, fc, bc, t, d, h] {
            std::vector<S> dout_f(static_cast<size_t>(t) * h), dout_b(static_cast<size_t>(t) * h);
            for (int ti = 0; ti < t; ++ti)
                for (int j = 0; j < h; ++j) {
                    dout_f[static_cast<size_t>(ti) * h + j] =
                        o->grad[static_cast<size_t>(ti) * 2 * h + j];
                    dout_b[static_cast<size_t>(ti) * h + j] =
                        o->grad[static_cast<size_t>(ti) * 2 * h + h + j];
                }
            S* dx = xn->requires_grad ? xn->grad.data() : nullptr;
            detail::gru_backprop(xn->value.data(), dx, dout_f.data(), t, d, h, fwd, false, *fc);
            detail::gru_backprop(xn->value.data(), dx, dout_b.data(), t, d, h, bwd, true, *bc);
        };
    }
    detail::check_finite_values(out.raw(), "bigru");
    return out;
}

} // namespace amt::nn
