#pragma once

// Scaled dot-product attention over pre-projected q/k/v, fused into one graph
// node. Heads are column slices of width D/h; per head
//   P = softmax(Q K^T / sqrt(D/h)),  O = P V
// and the softmax probabilities are cached for the backward pass:
//   dV = P^T dO,  dP = dO V^T,  dS = P .* (dP - rowsum(dP .* P)),
//   dQ = dS K / sqrt(dh),       dK = dS^T Q / sqrt(dh).
// No causal mask: every query sees every key.

#include "amt/nn/ops.hpp"
#include "amt/nn/tensor.hpp"

#include <cmath>
#include <memory>
#include <vector>

namespace amt::nn {

template <class S>
Tensor<S> attention_core(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                         int heads) {
    require(q.rank() == 2 && k.rank() == 2 && v.rank() == 2, "op.shape_mismatch",
            "attention wants 2-D q/k/v");
    const int tq = q.dim(0), d = q.dim(1), tk = k.dim(0);
    require(k.dim(1) == d && v.dim(1) == d && v.dim(0) == tk, "op.shape_mismatch",
            "attention: k/v shapes");
    require(heads >= 1 && d % heads == 0, "op.heads_indivisible",
            "model width not divisible by head count");
    const int dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    auto probs = std::make_shared<std::vector<S>>(
        static_cast<size_t>(heads) * tq * tk, S(0));

    Tensor<S> out = op_result<S>({tq, d}, {q, k, v});

    // scratch: contiguous per-head copies
    std::vector<S> qh(static_cast<size_t>(tq) * dh), kh(static_cast<size_t>(tk) * dh),
        vh(static_cast<size_t>(tk) * dh), oh(static_cast<size_t>(tq) * dh);
    auto gather = [](const std::vector<S>& src, std::vector<S>& dst, int rows, int d_full,
                     int col0, int w) {
        for (int r = 0; r < rows; ++r)
            std::copy_n(src.data() + static_cast<size_t>(r) * d_full + col0, w,
                        dst.data() + static_cast<size_t>(r) * w);
    };
    auto scatter_add = [](const std::vector<S>& src, std::vector<S>& dst, int rows, int d_full,
                          int col0, int w) {
        for (int r = 0; r < rows; ++r)
            for (int j = 0; j < w; ++j)
                dst[static_cast<size_t>(r) * d_full + col0 + j] +=
                    src[static_cast<size_t>(r) * w + j];
    };

    for (int hi = 0; hi < heads; ++hi) {
        gather(q.values(), qh, tq, d, hi * dh, dh);
        gather(k.values(), kh, tk, d, hi * dh, dh);
        gather(v.values(), vh, tk, d, hi * dh, dh);
        S* p = probs->data() + static_cast<size_t>(hi) * tq * tk;
        detail::mm_nt(qh.data(), kh.data(), p, tq, dh, tk);
        for (int r = 0; r < tq; ++r) {
            S* row = p + static_cast<size_t>(r) * tk;
            double mx = -1e300;
            for (int j = 0; j < tk; ++j) {
                row[j] = static_cast<S>(row[j] * inv_sqrt);
                mx = std::max(mx, static_cast<double>(row[j]));
            }
            double z = 0.0;
            for (int j = 0; j < tk; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
            for (int j = 0; j < tk; ++j)
                row[j] = static_cast<S>(std::exp(static_cast<double>(row[j]) - mx) / z);
        }
        std::fill(oh.begin(), oh.end(), S(0));
        detail::mm_nn(p, vh.data(), oh.data(), tq, tk, dh);
        scatter_add(oh, out.values(), tq, d, hi * dh, dh);
    }

    if (out.requires_grad()) {
        out.node()->backward = [o = out.raw(), qn = q.raw(), kn = k.raw(), vn = v.raw(), probs,
                                heads, tq, tk, d, dh, inv_sqrt] {
            std::vector<S> qh(static_cast<size_t>(tq) * dh), kh(static_cast<size_t>(tk) * dh),
                vh(static_cast<size_t>(tk) * dh), goh(static_cast<size_t>(tq) * dh),
                gq(static_cast<size_t>(tq) * dh), gk(static_cast<size_t>(tk) * dh),
                gv(static_cast<size_t>(tk) * dh), ds(static_cast<size_t>(tq) * tk);
            auto gather = [](const std::vector<S>& src, std::vector<S>& dst, int rows,
                             int d_full, int col0, int w) {
                for (int r = 0; r < rows; ++r)
                    std::copy_n(src.data() + static_cast<size_t>(r) * d_full + col0, w,
                                dst.data() + static_cast<size_t>(r) * w);
            };
            auto scatter_add = [](const std::vector<S>& src, std::vector<S>& dst, int rows,
                                  int d_full, int col0, int w) {
                for (int r = 0; r < rows; ++r)
                    for (int j = 0; j < w; ++j)
                        dst[static_cast<size_t>(r) * d_full + col0 + j] +=
                            src[static_cast<size_t>(r) * w + j];
            };
            for (int hi = 0; hi < heads; ++hi) {
                gather(qn->value, qh, tq, d, hi * dh, dh);
                gather(kn->value, kh, tk, d, hi * dh, dh);
                gather(vn->value, vh, tk, d, hi * dh, dh);
                gather(o->grad, goh, tq, d, hi * dh, dh);
                const S* p = probs->data() + static_cast<size_t>(hi) * tq * tk;

                if (vn->requires_grad) {
                    // dV = P^T (tk x tq) * dO (tq x dh)
                    std::fill(gv.begin(), gv.end(), S(0));
                    detail::mm_tn(p, goh.data(), gv.data(), tk, tq, dh);
                }
                // dP = dO * V^T  (tq x tk)
                std::fill(ds.begin(), ds.end(), S(0));
                detail::mm_nt(goh.data(), vh.data(), ds.data(), tq, dh, tk);
                // softmax backward in place: dS = P .* (dP - rowsum(dP .* P))
                for (int r = 0; r < tq; ++r) {
                    const S* prow = p + static_cast<size_t>(r) * tk;
                    S* drow = ds.data() + static_cast<size_t>(r) * tk;
                    double inner = 0.0;
                    for (int j = 0; j < tk; ++j)
                        inner += static_cast<double>(drow[j]) * prow[j];
                    for (int j = 0; j < tk; ++j)
                        drow[j] = static_cast<S>(prow[j] *
                                                 (static_cast<double>(drow[j]) - inner) *
                                                 inv_sqrt);
                }
                if (qn->requires_grad) {
                    std::fill(gq.begin(), gq.end(), S(0));
                    detail::mm_nn(ds.data(), kh.data(), gq.data(), tq, tk, dh);
                    scatter_add(gq, qn->grad, tq, d, hi * dh, dh);
                }
                if (kn->requires_grad) {
                    // dK = dS^T (tk x tq) * Q (tq x dh)
                    std::fill(gk.begin(), gk.end(), S(0));
                    detail::mm_tn(ds.data(), qh.data(), gk.data(), tk, tq, dh);
                    scatter_add(gk, kn->grad, tk, d, hi * dh, dh);
                }
                if (vn->requires_grad) scatter_add(gv, vn->grad, tk, d, hi * dh, dh);
            }
        };
    }
    detail::check_finite_values(out.raw(), "attention");
    return out;
}

} // namespace amt::nn
