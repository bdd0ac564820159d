#pragma once

// The two transcription architectures.
//
// CrnnModel: four task heads (frame, onset, offset, velocity), each a dilated
// convolution block over the CQT followed by a biGRU and a sigmoid
// projection. Velocity conditions the final onset; onset and offset condition
// the final frame. Conditioning is fully differentiable: downstream losses
// also train the heads they are conditioned on.
//
// HybridModel: one shared dilated block + biGRU encoder, then a
// non-autoregressive transformer decoder: per-frame trainable queries pass
// through four pre-norm blocks of self-attention, cross-attention over the
// encoder sequence, and a feed-forward, and one linear layer emits all four
// output planes jointly. No conditioning between outputs.
//
// The dilated block stacks, over a 352-bin input: three 7x7 convs
// (norm+ReLU), eight parallel 1x3 convs with harmonic dilation rates summed
// elementwise, a 1x3 conv at dilation 48 (norm+ReLU), frequency max-pool 4
// down to the 88 pitch lanes, a 1x3 conv at dilation 12 (norm+ReLU), and
// three 5x1 convs along time.

#include "amt/common.hpp"
#include "amt/config.hpp"
#include "amt/labels.hpp"
#include "amt/nn/layers.hpp"

#include <array>
#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace amt {

// Bin-index distance between a fundamental and its k-th overtone on a
// log-frequency axis with q bins per octave: round(q * log2(k)), k = 2..k_max.
inline std::vector<int> harmonic_dilations(int q, int k_max) {
    require(q >= 1 && k_max >= 2, "models.bad_harmonics", "need q >= 1 and k_max >= 2");
    std::vector<int> rates;
    for (int k = 2; k <= k_max; ++k)
        rates.push_back(static_cast<int>(std::lround(q * std::log2(static_cast<double>(k)))));
    return rates;
}

struct DilatedBlockConfig {
    std::array<int, 3> entry_channels{16, 16, 32}; // 7x7 convs
    int dilated_channels = 64;                     // the eight harmonic convs
    std::array<int, 3> tail_channels{64, 32, 8};   // 5x1 convs
    int bins_per_octave = 48;
    int max_harmonic = 9;
    int merge_dilation = 48;
    int post_pool_dilation = 12;
    int pool = 4;

    std::vector<int> dilation_rates() const {
        return harmonic_dilations(bins_per_octave, max_harmonic);
    }
    int out_channels() const { return tail_channels[2]; }
};

struct CrnnConfig {
    DilatedBlockConfig block;
    int gru_hidden = 88;
};

struct HybridConfig {
    DilatedBlockConfig block;
    int gru_hidden = 64;
    int d_model = 96;
    int heads = 4;
    int ff_dim = 192;
    int t_max = 1001; // longest decodable sequence (20 s at 50 fps)
    static constexpr int decoder_blocks = 4;
};

enum class ModelKind { crnn, hybrid };

struct ModelConfig {
    ModelKind kind = ModelKind::crnn;
    CrnnConfig crnn;
    HybridConfig hybrid;

    static std::vector<std::string> config_keys() {
        return {"model",      "entry_channels", "dilated_channels", "tail_channels",
                "gru_hidden", "d_model",        "heads",            "ff_dim",
                "t_max"};
    }

    static ModelConfig from_kv(const KeyValueConfig& kv) {
        kv.reject_unknown_keys(config_keys());
        return from_kv_unchecked(kv);
    }

    // parses without key validation, for files that mix in other sections
    static ModelConfig from_kv_unchecked(const KeyValueConfig& kv) {
        ModelConfig cfg;
        const std::string kind = kv.get_string("model", "crnn");
        if (kind == "crnn")
            cfg.kind = ModelKind::crnn;
        else if (kind == "hybrid")
            cfg.kind = ModelKind::hybrid;
        else
            throw DataError("config.bad_value", "model must be crnn or hybrid, got " + kind);

        auto read_block = [&kv](DilatedBlockConfig& b) {
            const auto entry = kv.get_int_list(
                "entry_channels", {b.entry_channels[0], b.entry_channels[1], b.entry_channels[2]});
            require(entry.size() == 3, "config.bad_value", "entry_channels wants 3 values");
            std::copy_n(entry.begin(), 3, b.entry_channels.begin());
            b.dilated_channels = static_cast<int>(kv.get_int("dilated_channels", b.dilated_channels));
            const auto tail = kv.get_int_list(
                "tail_channels", {b.tail_channels[0], b.tail_channels[1], b.tail_channels[2]});
            require(tail.size() == 3, "config.bad_value", "tail_channels wants 3 values");
            std::copy_n(tail.begin(), 3, b.tail_channels.begin());
        };
        read_block(cfg.crnn.block);
        read_block(cfg.hybrid.block);
        cfg.crnn.gru_hidden = static_cast<int>(kv.get_int("gru_hidden", cfg.crnn.gru_hidden));
        cfg.hybrid.gru_hidden = static_cast<int>(kv.get_int("gru_hidden", cfg.hybrid.gru_hidden));
        cfg.hybrid.d_model = static_cast<int>(kv.get_int("d_model", cfg.hybrid.d_model));
        cfg.hybrid.heads = static_cast<int>(kv.get_int("heads", cfg.hybrid.heads));
        cfg.hybrid.ff_dim = static_cast<int>(kv.get_int("ff_dim", cfg.hybrid.ff_dim));
        cfg.hybrid.t_max = static_cast<int>(kv.get_int("t_max", cfg.hybrid.t_max));
        return cfg;
    }

    static ModelConfig from_file(const std::string& path) {
        return from_kv(KeyValueConfig::parse_file(path));
    }
};

// Four output planes, each [T,88] in (0,1).
template <class S>
struct OutputTensors {
    nn::Tensor<S> on, off, frame, vel;

    ModelPlanes<S> planes() const {
        auto to_grid = [](const nn::Tensor<S>& t) {
            Grid<S> g(t.dim(0), t.dim(1));
            g.v = t.values();
            return g;
        };
        return {to_grid(on), to_grid(off), to_grid(frame), to_grid(vel)};
    }
};

namespace detail {

template <class S>
struct DilatedBlock {
    nn::Conv2dLayer<S> entry[3];
    nn::InstanceNormLayer<S> entry_norm[3];
    std::vector<nn::Conv2dLayer<S>> harmonic;
    nn::Conv2dLayer<S> merge;
    nn::InstanceNormLayer<S> merge_norm;
    nn::Conv2dLayer<S> post;
    nn::InstanceNormLayer<S> post_norm;
    nn::Conv2dLayer<S> tail[3];
    int pool = 4;

    DilatedBlock() = default;
    DilatedBlock(nn::ParamRegistry<S>& reg, const std::string& prefix, std::mt19937& rng,
                 const DilatedBlockConfig& cfg)
        : pool(cfg.pool) {
        int in_c = 1;
        for (int i = 0; i < 3; ++i) {
            const int out_c = cfg.entry_channels[i];
            entry[i] = nn::Conv2dLayer<S>(reg, prefix + ".entry" + std::to_string(i), rng, in_c,
                                          out_c, 7, 7);
            entry_norm[i] = nn::InstanceNormLayer<S>(
                reg, prefix + ".entry" + std::to_string(i) + ".norm", out_c);
            in_c = out_c;
        }
        const std::vector<int> rates = cfg.dilation_rates();
        for (size_t i = 0; i < rates.size(); ++i)
            harmonic.push_back(nn::Conv2dLayer<S>(reg, prefix + ".harmonic" + std::to_string(i),
                                                  rng, in_c, cfg.dilated_channels, 1, 3, 1,
                                                  rates[i]));
        merge = nn::Conv2dLayer<S>(reg, prefix + ".merge", rng, cfg.dilated_channels,
                                   cfg.dilated_channels, 1, 3, 1, cfg.merge_dilation);
        merge_norm = nn::InstanceNormLayer<S>(reg, prefix + ".merge.norm", cfg.dilated_channels);
        post = nn::Conv2dLayer<S>(reg, prefix + ".post", rng, cfg.dilated_channels,
                                  cfg.dilated_channels, 1, 3, 1, cfg.post_pool_dilation);
        post_norm = nn::InstanceNormLayer<S>(reg, prefix + ".post.norm", cfg.dilated_channels);
        in_c = cfg.dilated_channels;
        for (int i = 0; i < 3; ++i) {
            tail[i] = nn::Conv2dLayer<S>(reg, prefix + ".tail" + std::to_string(i), rng, in_c,
                                         cfg.tail_channels[i], 5, 1);
            in_c = cfg.tail_channels[i];
        }
    }

    nn::Tensor<S> operator()(const nn::Tensor<S>& x) const {
        require(x.rank() == 4 && x.dim(3) % pool == 0, "models.bad_input",
                "dilated block input width must divide by the pool size");
        nn::Tensor<S> h = x;
        for (int i = 0; i < 3; ++i) h = nn::relu(entry_norm[i](entry[i](h)));
        std::vector<nn::Tensor<S>> branches;
        branches.reserve(harmonic.size());
        for (const auto& conv : harmonic) branches.push_back(conv(h));
        h = nn::add_n(branches);
        h = nn::relu(merge_norm(merge(h)));
        h = nn::maxpool_freq(h, pool);
        h = nn::relu(post_norm(post(h)));
        for (int i = 0; i < 3; ++i) h = tail[i](h);
        return h;
    }
};

} // namespace detail

template <class S>
class TranscriptionModel {
public:
    virtual ~TranscriptionModel() = default;
    virtual OutputTensors<S> forward(const nn::Tensor<S>& x) = 0;
    virtual nn::ParamRegistry<S>& params() = 0;
    virtual ModelKind kind() const = 0;
    virtual int max_frames() const { return 1 << 30; }
};

template <class S>
class CrnnModel final : public TranscriptionModel<S> {
public:
    CrnnModel(const CrnnConfig& cfg, unsigned seed) : cfg_(cfg) {
        std::mt19937 rng(seed);
        const int feat = cfg.block.out_channels() * kNumPitches;
        const int gru_out = 2 * cfg.gru_hidden;
        const char* names[4] = {"frame", "onset", "offset", "velocity"};
        for (int i = 0; i < 4; ++i) {
            heads_[i].block = detail::DilatedBlock<S>(reg_, std::string(names[i]) + ".block",
                                                      rng, cfg.block);
            heads_[i].gru =
                nn::BiGruLayer<S>(reg_, std::string(names[i]) + ".gru", rng, feat,
                                  cfg.gru_hidden);
            heads_[i].out = nn::LinearLayer<S>(reg_, std::string(names[i]) + ".out", rng,
                                               gru_out, kNumPitches);
        }
        cond_on_gru_ = nn::BiGruLayer<S>(reg_, "onset_cond.gru", rng, 2 * kNumPitches,
                                         cfg.gru_hidden);
        cond_on_out_ =
            nn::LinearLayer<S>(reg_, "onset_cond.out", rng, gru_out, kNumPitches);
        cond_fr_gru_ = nn::BiGruLayer<S>(reg_, "frame_cond.gru", rng, 3 * kNumPitches,
                                         cfg.gru_hidden);
        cond_fr_out_ =
            nn::LinearLayer<S>(reg_, "frame_cond.out", rng, gru_out, kNumPitches);
    }

    OutputTensors<S> forward(const nn::Tensor<S>& x) override {
        check_input(x);
        nn::Tensor<S> frame_pred = head_forward(0, x);
        nn::Tensor<S> onset_pred = head_forward(1, x);
        nn::Tensor<S> offset_pred = head_forward(2, x);
        nn::Tensor<S> vel_pred = head_forward(3, x);

        // velocity -> onset
        nn::Tensor<S> on_in = nn::concat_cols<S>({onset_pred, vel_pred});
        nn::Tensor<S> onset_final = nn::sigmoid(cond_on_out_(cond_on_gru_(on_in)));
        // onset, offset -> frame
        nn::Tensor<S> fr_in = nn::concat_cols<S>({frame_pred, onset_final, offset_pred});
        nn::Tensor<S> frame_final = nn::sigmoid(cond_fr_out_(cond_fr_gru_(fr_in)));

        return {onset_final, offset_pred, frame_final, vel_pred};
    }

    nn::ParamRegistry<S>& params() override { return reg_; }
    ModelKind kind() const override { return ModelKind::crnn; }
    const CrnnConfig& config() const { return cfg_; }

private:
    struct Head {
        detail::DilatedBlock<S> block;
        nn::BiGruLayer<S> gru;
        nn::LinearLayer<S> out;
    };

    void check_input(const nn::Tensor<S>& x) const {
        require(x.rank() == 4 && x.dim(0) == 1 && x.dim(1) == 1 &&
                    x.dim(3) == kNumPitches * cfg_.block.pool,
                "models.bad_input", "expected [1,1,T,352] spectrogram tensor");
    }

    nn::Tensor<S> head_forward(int i, const nn::Tensor<S>& x) {
        return nn::sigmoid(heads_[i].out(heads_[i].gru(nn::flatten_ctf(heads_[i].block(x)))));
    }

    CrnnConfig cfg_;
    nn::ParamRegistry<S> reg_;
    Head heads_[4]; // frame, onset, offset, velocity
    nn::BiGruLayer<S> cond_on_gru_, cond_fr_gru_;
    nn::LinearLayer<S> cond_on_out_, cond_fr_out_;
};

template <class S>
class HybridModel final : public TranscriptionModel<S> {
public:
    HybridModel(const HybridConfig& cfg, unsigned seed) : cfg_(cfg) {
        std::mt19937 rng(seed);
        encoder_block_ = detail::DilatedBlock<S>(reg_, "encoder.block", rng, cfg.block);
        const int feat = cfg.block.out_channels() * kNumPitches;
        encoder_gru_ = nn::BiGruLayer<S>(reg_, "encoder.gru", rng, feat, cfg.gru_hidden);
        encoder_proj_ =
            nn::LinearLayer<S>(reg_, "encoder.proj", rng, 2 * cfg.gru_hidden, cfg.d_model);
        query_embed_ = reg_.add("decoder.query_embed",
                                nn::xavier_uniform<S>(rng, {cfg.t_max, cfg.d_model},
                                                      cfg.d_model, cfg.d_model));
        for (int i = 0; i < HybridConfig::decoder_blocks; ++i) {
            const std::string p = "decoder.block" + std::to_string(i);
            blocks_[i].ln_self = nn::LayerNormLayer<S>(reg_, p + ".ln_self", cfg.d_model);
            blocks_[i].self_attn =
                nn::MultiHeadAttention<S>(reg_, p + ".self", rng, cfg.d_model, cfg.heads);
            blocks_[i].ln_cross = nn::LayerNormLayer<S>(reg_, p + ".ln_cross", cfg.d_model);
            blocks_[i].cross_attn =
                nn::MultiHeadAttention<S>(reg_, p + ".cross", rng, cfg.d_model, cfg.heads);
            blocks_[i].ln_ff = nn::LayerNormLayer<S>(reg_, p + ".ln_ff", cfg.d_model);
            blocks_[i].ff1 = nn::LinearLayer<S>(reg_, p + ".ff1", rng, cfg.d_model, cfg.ff_dim);
            blocks_[i].ff2 = nn::LinearLayer<S>(reg_, p + ".ff2", rng, cfg.ff_dim, cfg.d_model);
        }
        final_norm_ = nn::LayerNormLayer<S>(reg_, "decoder.final_norm", cfg.d_model);
        out_proj_ = nn::LinearLayer<S>(reg_, "decoder.out", rng, cfg.d_model, 4 * kNumPitches);
    }

    OutputTensors<S> forward(const nn::Tensor<S>& x) override {
        require(x.rank() == 4 && x.dim(0) == 1 && x.dim(1) == 1 &&
                    x.dim(3) == kNumPitches * cfg_.block.pool,
                "models.bad_input", "expected [1,1,T,352] spectrogram tensor");
        const int t = x.dim(2);
        require(t <= cfg_.t_max, "models.too_long",
                "sequence of " + std::to_string(t) + " frames exceeds t_max " +
                    std::to_string(cfg_.t_max));

        nn::Tensor<S> memory =
            encoder_proj_(encoder_gru_(nn::flatten_ctf(encoder_block_(x))));

        nn::Tensor<S> q = nn::slice_rows(query_embed_, 0, t);
        for (const Block& blk : blocks_) {
            nn::Tensor<S> qn = blk.ln_self(q);
            q = nn::add(q, blk.self_attn(qn, qn));
            q = nn::add(q, blk.cross_attn(blk.ln_cross(q), memory));
            q = nn::add(q, blk.ff2(nn::relu(blk.ff1(blk.ln_ff(q)))));
        }
        nn::Tensor<S> planes = nn::sigmoid(out_proj_(final_norm_(q)));
        const int k = kNumPitches;
        return {nn::slice_cols(planes, 0, k), nn::slice_cols(planes, k, 2 * k),
                nn::slice_cols(planes, 2 * k, 3 * k), nn::slice_cols(planes, 3 * k, 4 * k)};
    }

    nn::ParamRegistry<S>& params() override { return reg_; }
    ModelKind kind() const override { return ModelKind::hybrid; }
    int max_frames() const override { return cfg_.t_max; }
    const HybridConfig& config() const { return cfg_; }

private:
    struct Block {
        nn::LayerNormLayer<S> ln_self, ln_cross, ln_ff;
        nn::MultiHeadAttention<S> self_attn, cross_attn;
        nn::LinearLayer<S> ff1, ff2;
    };

    HybridConfig cfg_;
    nn::ParamRegistry<S> reg_;
    detail::DilatedBlock<S> encoder_block_;
    nn::BiGruLayer<S> encoder_gru_;
    nn::LinearLayer<S> encoder_proj_;
    nn::Tensor<S> query_embed_;
    Block blocks_[HybridConfig::decoder_blocks];
    nn::LayerNormLayer<S> final_norm_;
    nn::LinearLayer<S> out_proj_;
};

template <class S>
std::unique_ptr<TranscriptionModel<S>> make_model(const ModelConfig& cfg, unsigned seed) {
    if (cfg.kind == ModelKind::crnn)
        return std::make_unique<CrnnModel<S>>(cfg.crnn, seed);
    return std::make_unique<HybridModel<S>>(cfg.hybrid, seed);
}

} // namespace amt
