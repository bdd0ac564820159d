#pragma once

// Thin parameter-owning wrappers over the ops, registering their tensors
// under hierarchical names.

#include "amt/nn/attention.hpp"
#include "amt/nn/gru.hpp"
#include "amt/nn/module.hpp"
#include "amt/nn/ops.hpp"

#include <random>
#include <string>

namespace amt::nn {

template <class S>
struct Conv2dLayer {
    Tensor<S> w, b;
    int dil_t = 1, dil_f = 1;

    Conv2dLayer() = default;
    Conv2dLayer(ParamRegistry<S>& reg, const std::string& prefix, std::mt19937& rng, int in_c,
                int out_c, int kt, int kf, int dt = 1, int df = 1)
        : dil_t(dt), dil_f(df) {
        w = reg.add(prefix + ".weight",
                    xavier_uniform<S>(rng, {out_c, in_c, kt, kf}, in_c * kt * kf,
                                      out_c * kt * kf));
        b = reg.add(prefix + ".bias", zeros_param<S>({out_c}));
    }

    Tensor<S> operator()(const Tensor<S>& x) const { return conv2d(x, w, b, dil_t, dil_f); }
};

template <class S>
struct InstanceNormLayer {
    Tensor<S> gamma, beta;

    InstanceNormLayer() = default;
    InstanceNormLayer(ParamRegistry<S>& reg, const std::string& prefix, int channels) {
        gamma = reg.add(prefix + ".gamma", const_param<S>({channels}, S(1)));
        beta = reg.add(prefix + ".beta", zeros_param<S>({channels}));
    }

    Tensor<S> operator()(const Tensor<S>& x) const { return instance_norm(x, gamma, beta); }
};

template <class S>
struct LinearLayer {
    Tensor<S> w, b;

    LinearLayer() = default;
    LinearLayer(ParamRegistry<S>& reg, const std::string& prefix, std::mt19937& rng, int in_d,
                int out_d) {
        w = reg.add(prefix + ".weight", xavier_uniform<S>(rng, {out_d, in_d}, in_d, out_d));
        b = reg.add(prefix + ".bias", zeros_param<S>({out_d}));
    }

    Tensor<S> operator()(const Tensor<S>& x) const { return linear(x, w, b); }
};

template <class S>
struct LayerNormLayer {
    Tensor<S> gamma, beta;

    LayerNormLayer() = default;
    LayerNormLayer(ParamRegistry<S>& reg, const std::string& prefix, int dim) {
        gamma = reg.add(prefix + ".gamma", const_param<S>({dim}, S(1)));
        beta = reg.add(prefix + ".beta", zeros_param<S>({dim}));
    }

    Tensor<S> operator()(const Tensor<S>& x) const { return layer_norm(x, gamma, beta); }
};

template <class S>
struct BiGruLayer {
    GruDirParams<S> fwd, bwd;

    BiGruLayer() = default;
    BiGruLayer(ParamRegistry<S>& reg, const std::string& prefix, std::mt19937& rng, int in_d,
               int hidden) {
        auto make_dir = [&](const std::string& dir) {
            GruDirParams<S> p;
            p.wx = reg.add(prefix + "." + dir + ".wx",
                           xavier_uniform<S>(rng, {3 * hidden, in_d}, in_d, hidden));
            p.wh = reg.add(prefix + "." + dir + ".wh", orthogonal_stack<S>(rng, 3, hidden));
            p.bx = reg.add(prefix + "." + dir + ".bx", zeros_param<S>({3 * hidden}));
            p.bh = reg.add(prefix + "." + dir + ".bh", zeros_param<S>({3 * hidden}));
            return p;
        };
        fwd = make_dir("fwd");
        bwd = make_dir("bwd");
    }

    Tensor<S> operator()(const Tensor<S>& x) const { return bigru(x, fwd, bwd); }
};

// Multi-head attention with the usual four projections. Self-attention when
// memory == input; cross-attention when the key/value source differs.
template <class S>
struct MultiHeadAttention {
    LinearLayer<S> proj_q, proj_k, proj_v, proj_out;
    int heads = 1;

    MultiHeadAttention() = default;
    MultiHeadAttention(ParamRegistry<S>& reg, const std::string& prefix, std::mt19937& rng,
                       int dim, int n_heads)
        : heads(n_heads) {
        require(dim % n_heads == 0, "op.heads_indivisible",
                "model width not divisible by head count");
        proj_q = LinearLayer<S>(reg, prefix + ".q", rng, dim, dim);
        proj_k = LinearLayer<S>(reg, prefix + ".k", rng, dim, dim);
        proj_v = LinearLayer<S>(reg, prefix + ".v", rng, dim, dim);
        proj_out = LinearLayer<S>(reg, prefix + ".out", rng, dim, dim);
    }

    Tensor<S> operator()(const Tensor<S>& x, const Tensor<S>& memory) const {
        return proj_out(attention_core(proj_q(x), proj_k(memory), proj_v(memory), heads));
    }
};

} // namespace amt::nn
