#pragma once

// Training machinery: the four-component loss, Adam, plateau learning-rate
// scheduling, 20-second segmentation, a simple additive synthesizer for
// desk-scale datasets, and the deterministic training loop.

#include "amt/audio.hpp"
#include "amt/common.hpp"
#include "amt/config.hpp"
#include "amt/labels.hpp"
#include "amt/midi.hpp"
#include "amt/models.hpp"
#include "amt/nn/module.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace amt {

// -------------------------------------------------------------------- losses

constexpr double kBceClamp = 1e-7;

// Soft-target binary cross-entropy on one value. Predictions are clamped to
// [1e-7, 1 - 1e-7] so saturated sigmoids stay finite.
inline double bce(double target, double pred) {
    pred = std::clamp(pred, kBceClamp, 1.0 - kBceClamp);
    return -target * std::log(pred) - (1.0 - target) * std::log(1.0 - pred);
}

enum class Reduction { sum, mean };

struct LossBreakdown {
    double on = 0.0, off = 0.0, fr = 0.0, vel = 0.0;
    double total = 0.0; // always the exact sum of the four components
};

namespace detail {

// Differentiable masked-BCE reduction node. Entries with mask == 0 are
// skipped outright, so they contribute exactly zero to both the loss and the
// gradient. Accumulation is in double.
template <class S>
nn::Tensor<S> bce_reduce(const nn::Tensor<S>& pred, const Grid<S>& target, const Grid<S>* mask,
                         double scale) {
    require(pred.rank() == 2 && pred.dim(0) == target.rows && pred.dim(1) == target.cols,
            "loss.shape_mismatch", "prediction/target shapes differ");
    if (mask)
        require(mask->rows == target.rows && mask->cols == target.cols, "loss.shape_mismatch",
                "mask shape differs");
    nn::Tensor<S> out = nn::op_result<S>({1}, {pred});
    double acc = 0.0;
    for (size_t i = 0; i < target.v.size(); ++i) {
        if (mask && mask->v[i] == S(0)) continue;
        acc += bce(static_cast<double>(target.v[i]), static_cast<double>(pred.values()[i]));
    }
    out.values()[0] = static_cast<S>(acc * scale);
    if (out.requires_grad()) {
        Grid<S> target_copy = target;
        Grid<S> mask_copy = mask ? *mask : Grid<S>();
        const bool masked = mask != nullptr;
        out.node()->backward = [o = out.raw(), pn = pred.raw(), target_copy, mask_copy, masked,
                                scale] {
            const double g0 = static_cast<double>(o->grad[0]) * scale;
            for (size_t i = 0; i < target_copy.v.size(); ++i) {
                if (masked && mask_copy.v[i] == S(0)) continue;
                const double p = static_cast<double>(pn->value[i]);
                if (p <= kBceClamp || p >= 1.0 - kBceClamp) continue; // clamped: zero slope
                const double y = static_cast<double>(target_copy.v[i]);
                pn->grad[i] += static_cast<S>(g0 * (-y / p + (1.0 - y) / (1.0 - p)));
            }
        };
    }
    return out;
}

} // namespace detail

template <class S>
struct LossResult {
    nn::Tensor<S> total; // scalar graph node, ready for backward()
    LossBreakdown parts;
};

// L_total = L_on + L_off + L_fr + L_vel over the T x 88 planes. The equations
// are plain sums; mean reduction divides every component by T*K so the
// published learning rate is usable at any sequence length.
template <class S>
LossResult<S> total_loss(const OutputTensors<S>& out, const RollTargets<S>& targets,
                         Reduction reduction = Reduction::sum) {
    const double scale = reduction == Reduction::sum
                             ? 1.0
                             : 1.0 / static_cast<double>(targets.g_on.v.size());
    const Grid<S>* no_mask = nullptr;
    nn::Tensor<S> on = detail::bce_reduce(out.on, targets.g_on, no_mask, scale);
    nn::Tensor<S> off = detail::bce_reduce(out.off, targets.g_off, no_mask, scale);
    nn::Tensor<S> fr = detail::bce_reduce(out.frame, targets.b_fr, no_mask, scale);
    nn::Tensor<S> vel = detail::bce_reduce(out.vel, targets.vel, &targets.b_on, scale);
    LossResult<S> res;
    res.total = nn::add(nn::add(on, off), nn::add(fr, vel));
    res.parts.on = static_cast<double>(on.item());
    res.parts.off = static_cast<double>(off.item());
    res.parts.fr = static_cast<double>(fr.item());
    res.parts.vel = static_cast<double>(vel.item());
    res.parts.total = res.parts.on + res.parts.off + res.parts.fr + res.parts.vel;
    return res;
}

// ----------------------------------------------------------------- optimizer

// Adam with bias correction. Moment buffers live in the working precision so
// checkpointed state round-trips exactly. A non-finite gradient aborts the
// step before any parameter is touched.
template <class S>
class Adam {
public:
    static constexpr double beta1 = 0.9;
    static constexpr double beta2 = 0.999;
    static constexpr double eps = 1e-8;

    Adam(nn::ParamRegistry<S>& params, double lr) : params_(&params), lr_(lr) {
        require(lr > 0.0, "optim.bad_lr", "learning rate must be positive");
        m_.resize(params.entries().size());
        v_.resize(params.entries().size());
        for (size_t i = 0; i < m_.size(); ++i) {
            m_[i].assign(params.entries()[i].tensor.numel(), S(0));
            v_[i].assign(params.entries()[i].tensor.numel(), S(0));
        }
    }

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }
    int64_t step_count() const { return step_; }

    void step() {
        for (const auto& e : params_->entries())
            for (const S& g : e.tensor.grad())
                if (!std::isfinite(static_cast<double>(g)))
                    throw NumericError("optim.nonfinite_grad",
                                       "NaN/Inf gradient in " + e.name + "; step aborted");
        ++step_;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
        for (size_t i = 0; i < m_.size(); ++i) {
            nn::Tensor<S>& t = params_->entries()[i].tensor;
            const std::vector<S>& g = t.grad();
            std::vector<S>& val = t.values();
            for (size_t j = 0; j < g.size(); ++j) {
                const double gj = static_cast<double>(g[j]);
                const double m = beta1 * static_cast<double>(m_[i][j]) + (1.0 - beta1) * gj;
                const double v = beta2 * static_cast<double>(v_[i][j]) + (1.0 - beta2) * gj * gj;
                m_[i][j] = static_cast<S>(m);
                v_[i][j] = static_cast<S>(v);
                val[j] -= static_cast<S>(lr_ * (m / bc1) / (std::sqrt(v / bc2) + eps));
            }
        }
    }

    // moment buffers exposed for checkpointing
    std::vector<std::vector<S>>& moments_m() { return m_; }
    std::vector<std::vector<S>>& moments_v() { return v_; }
    void set_step_count(int64_t s) { step_ = s; }

private:
    nn::ParamRegistry<S>* params_;
    double lr_;
    int64_t step_ = 0;
    std::vector<std::vector<S>> m_, v_;
};

// ----------------------------------------------------------------- scheduler

// Multiplies the learning rate by `factor` once the best observed metric has
// failed to improve by more than `rel_threshold` (relative) for `patience`
// consecutive observations. No cooldown; the floor is min_lr.
class PlateauScheduler {
public:
    double factor = 0.1;
    int patience = 10;
    double rel_threshold = 1e-4;
    double min_lr = 0.0;

    double observe(double metric, double lr) {
        if (!has_best_ || metric < best_ * (1.0 - rel_threshold)) {
            best_ = metric;
            has_best_ = true;
            bad_count_ = 0;
            return lr;
        }
        if (++bad_count_ >= patience) {
            bad_count_ = 0;
            return std::max(min_lr, lr * factor);
        }
        return lr;
    }

    double best() const { return best_; }
    int bad_count() const { return bad_count_; }
    bool has_best() const { return has_best_; }
    void restore(double best, int bad_count, bool has_best) {
        best_ = best;
        bad_count_ = bad_count;
        has_best_ = has_best;
    }

private:
    double best_ = 0.0;
    int bad_count_ = 0;
    bool has_best_ = false;
};

// -------------------------------------------------------------- segmentation

// Consecutive fixed-length windows over an aligned (audio, notes) pair. The
// last window is zero-padded to full length. Notes are clipped to each
// window and re-based to its start; a note spanning a boundary appears
// truncated in both windows.
inline std::vector<std::pair<AudioClip, NoteSequence>>
segment(const AudioClip& clip, const NoteSequence& seq, double seconds = 20.0) {
    require(seconds > 0.0, "segment.bad_length", "window length must be positive");
    const size_t win = static_cast<size_t>(std::llround(seconds * clip.sample_rate));
    require(win > 0, "segment.bad_length", "window shorter than one sample");
    const size_t n = clip.samples.size();
    const size_t n_seg = n == 0 ? 0 : (n + win - 1) / win;

    std::vector<std::pair<AudioClip, NoteSequence>> out;
    for (size_t s = 0; s < n_seg; ++s) {
        AudioClip piece;
        piece.sample_rate = clip.sample_rate;
        piece.samples.assign(win, 0.0f);
        const size_t begin = s * win;
        const size_t count = std::min(win, n - begin);
        std::copy_n(clip.samples.begin() + static_cast<std::ptrdiff_t>(begin), count,
                    piece.samples.begin());

        const double t0 = static_cast<double>(s) * seconds;
        const double t1 = t0 + seconds;
        NoteSequence notes;
        for (const NoteEvent& note : seq.notes) {
            if (note.onset >= t1 || note.offset <= t0) continue;
            NoteEvent clipped = note;
            clipped.onset = std::max(note.onset, t0) - t0;
            clipped.offset = std::min(note.offset, t1) - t0;
            if (clipped.offset > clipped.onset) notes.notes.push_back(clipped);
        }
        notes.sort_notes();
        out.emplace_back(std::move(piece), std::move(notes));
    }
    return out;
}

// ----------------------------------------------------------------- synthesis

struct SynthSpec {
    NoteSequence notes;
    int partials = 8;    // harmonics per note, 1/h amplitude rolloff
    double decay = 3.0;  // exponential amplitude decay per second
};

// Additive rendering: each note is a sum of harmonics of its equal-tempered
// fundamental 440 * 2^((pitch-69)/12), scaled by velocity/127, decaying from
// the onset and silenced at the offset. Harmonics at or above Nyquist are
// dropped. Peak-normalized to 0.9 unless disabled.
inline AudioClip synthesize(const SynthSpec& spec, int sample_rate, bool normalize = true) {
    spec.notes.validate();
    require(spec.partials >= 1, "synth.bad_spec", "need at least one partial");
    require(spec.decay >= 0.0, "synth.bad_spec", "decay must be non-negative");
    AudioClip clip;
    clip.sample_rate = sample_rate;
    const double span = spec.notes.span();
    clip.samples.assign(static_cast<size_t>(std::ceil(span * sample_rate)) + 1, 0.0f);

    std::vector<double> acc(clip.samples.size(), 0.0);
    for (const NoteEvent& note : spec.notes.notes) {
        const double f0 = 440.0 * std::pow(2.0, (note.pitch - 69) / 12.0);
        const double amp = note.velocity / 127.0;
        const size_t n0 = static_cast<size_t>(std::llround(note.onset * sample_rate));
        const size_t n1 = std::min(clip.samples.size(),
                                   static_cast<size_t>(std::llround(note.offset * sample_rate)));
        for (int h = 1; h <= spec.partials; ++h) {
            const double fh = h * f0;
            if (fh >= sample_rate / 2.0) break;
            const double w = 2.0 * M_PI * fh / sample_rate;
            const double ha = amp / h;
            for (size_t i = n0; i < n1; ++i) {
                const double dt = static_cast<double>(i - n0) / sample_rate;
                acc[i] += ha * std::exp(-spec.decay * dt) * std::sin(w * static_cast<double>(i - n0));
            }
        }
    }
    double peak = 0.0;
    for (double x : acc) peak = std::max(peak, std::abs(x));
    const double gain = (normalize && peak > 0.0) ? 0.9 / peak : 1.0;
    for (size_t i = 0; i < acc.size(); ++i) clip.samples[i] = static_cast<float>(acc[i] * gain);
    return clip;
}

// -------------------------------------------------------------- training run

struct TrainConfig {
    double lr = 6e-4;
    int batch_size = 2;
    unsigned seed = 1234;
    Reduction reduction = Reduction::mean;
    int sharpness = 5; // J
    int max_steps = 1000;
    int checkpoint_every = 200;
    int eval_every = 50; // plateau-scheduler cadence at desk scale
    double segment_seconds = 20.0;

    static std::vector<std::string> config_keys() {
        return {"lr",        "batch_size",       "seed",       "reduction",      "J",
                "max_steps", "checkpoint_every", "eval_every", "segment_seconds"};
    }

    static TrainConfig from_kv(const KeyValueConfig& kv) {
        kv.reject_unknown_keys(config_keys());
        return from_kv_unchecked(kv);
    }

    static TrainConfig from_kv_unchecked(const KeyValueConfig& kv) {
        TrainConfig cfg;
        cfg.lr = kv.get_double("lr", cfg.lr);
        cfg.batch_size = static_cast<int>(kv.get_int("batch_size", cfg.batch_size));
        cfg.seed = static_cast<unsigned>(kv.get_int("seed", static_cast<long>(cfg.seed)));
        const std::string red = kv.get_string("reduction", "mean");
        if (red == "mean")
            cfg.reduction = Reduction::mean;
        else if (red == "sum")
            cfg.reduction = Reduction::sum;
        else
            throw DataError("config.bad_value", "reduction must be sum or mean");
        cfg.sharpness = static_cast<int>(kv.get_int("J", cfg.sharpness));
        cfg.max_steps = static_cast<int>(kv.get_int("max_steps", cfg.max_steps));
        cfg.checkpoint_every =
            static_cast<int>(kv.get_int("checkpoint_every", cfg.checkpoint_every));
        cfg.eval_every = static_cast<int>(kv.get_int("eval_every", cfg.eval_every));
        cfg.segment_seconds = kv.get_double("segment_seconds", cfg.segment_seconds);
        require(cfg.batch_size >= 1 && cfg.max_steps >= 1 && cfg.sharpness >= 1,
                "config.bad_value", "batch_size, max_steps and J must be positive");
        return cfg;
    }

    static TrainConfig from_file(const std::string& path) {
        return from_kv(KeyValueConfig::parse_file(path));
    }
};

template <class S>
struct TrainItem {
    Grid<float> spectrogram; // T x 352
    RollTargets<S> targets;  // aligned T x 88 planes
};

struct StepInfo {
    int64_t step = 0;
    LossBreakdown loss;
    double lr = 0.0;
};

// Deterministic loop: step i trains on items [(i-1)*B .. i*B) modulo the
// dataset, so a resumed run replays the unbroken schedule exactly.
template <class S>
class Trainer {
public:
    Trainer(TranscriptionModel<S>& model, TrainConfig cfg)
        : model_(&model), cfg_(cfg), optim_(model.params(), cfg.lr) {}

    void set_dataset(std::vector<TrainItem<S>> items) {
        require(!items.empty(), "train.empty_dataset", "no training items");
        items_ = std::move(items);
    }

    const TrainConfig& config() const { return cfg_; }
    Adam<S>& optimizer() { return optim_; }
    int64_t step_count() const { return optim_.step_count(); }

    StepInfo step() {
        require(!items_.empty(), "train.empty_dataset", "no training items");
        model_->params().zero_grad();
        LossBreakdown batch_loss;
        const int64_t s = optim_.step_count();
        for (int b = 0; b < cfg_.batch_size; ++b) {
            const TrainItem<S>& item =
                items_[static_cast<size_t>((s * cfg_.batch_size + b) % items_.size())];
            nn::Tensor<S> x = spectrogram_tensor(item.spectrogram);
            OutputTensors<S> out = model_->forward(x);
            LossResult<S> loss = total_loss(out, item.targets, cfg_.reduction);
            nn::Tensor<S> scaled = nn::scale(loss.total, 1.0 / cfg_.batch_size);
            nn::backward(scaled);
            batch_loss.on += loss.parts.on / cfg_.batch_size;
            batch_loss.off += loss.parts.off / cfg_.batch_size;
            batch_loss.fr += loss.parts.fr / cfg_.batch_size;
            batch_loss.vel += loss.parts.vel / cfg_.batch_size;
        }
        batch_loss.total = batch_loss.on + batch_loss.off + batch_loss.fr + batch_loss.vel;
        optim_.step();
        if (cfg_.eval_every > 0 && optim_.step_count() % cfg_.eval_every == 0)
            optim_.set_lr(scheduler_.observe(batch_loss.total, optim_.lr()));
        return {optim_.step_count(), batch_loss, optim_.lr()};
    }

    void run(int steps, const std::function<void(const StepInfo&)>& on_step = {}) {
        for (int i = 0; i < steps; ++i) {
            StepInfo info = step();
            if (on_step) on_step(info);
        }
    }

    // Checkpoints hold the model parameters plus optimizer moments, step
    // counter, learning rate and scheduler state, so a resumed run continues
    // the exact trajectory.
    void save(const std::string& path) {
        std::vector<nn::CheckpointRecord> extra;
        const auto& entries = model_->params().entries();
        for (size_t i = 0; i < entries.size(); ++i) {
            extra.push_back(moment_record("opt.m." + entries[i].name, optim_.moments_m()[i],
                                          entries[i].tensor.shape()));
            extra.push_back(moment_record("opt.v." + entries[i].name, optim_.moments_v()[i],
                                          entries[i].tensor.shape()));
        }
        nn::CheckpointRecord state;
        state.name = "trainer.state";
        state.shape = {6};
        state.data = {static_cast<float>(optim_.step_count()), static_cast<float>(optim_.lr()),
                      static_cast<float>(scheduler_.best()),
                      static_cast<float>(scheduler_.bad_count()),
                      scheduler_.has_best() ? 1.0f : 0.0f, 0.0f};
        extra.push_back(std::move(state));
        nn::save_checkpoint(model_->params(), path, extra);
    }

    void load(const std::string& path) {
        std::vector<nn::CheckpointRecord> extra = nn::load_checkpoint(model_->params(), path);
        const auto& entries = model_->params().entries();
        size_t found = 0;
        for (const nn::CheckpointRecord& r : extra) {
            if (r.name == "trainer.state") {
                require(r.data.size() == 6, "ckpt.bad_record", "trainer.state size");
                optim_.set_step_count(static_cast<int64_t>(r.data[0]));
                optim_.set_lr(static_cast<double>(r.data[1]));
                scheduler_.restore(static_cast<double>(r.data[2]),
                                   static_cast<int>(r.data[3]), r.data[4] != 0.0f);
                ++found;
                continue;
            }
            for (size_t i = 0; i < entries.size(); ++i) {
                if (r.name == "opt.m." + entries[i].name) {
                    restore_moments(optim_.moments_m()[i], r);
                    ++found;
                } else if (r.name == "opt.v." + entries[i].name) {
                    restore_moments(optim_.moments_v()[i], r);
                    ++found;
                }
            }
        }
        require(found == 2 * entries.size() + 1, "ckpt.missing_params",
                "checkpoint lacks optimizer state; was it saved by the trainer?");
    }

    static nn::Tensor<S> spectrogram_tensor(const Grid<float>& spec) {
        std::vector<S> data(spec.v.size());
        for (size_t i = 0; i < data.size(); ++i) data[i] = static_cast<S>(spec.v[i]);
        return nn::Tensor<S>::from({1, 1, spec.rows, spec.cols}, std::move(data), false);
    }

private:
    static nn::CheckpointRecord moment_record(const std::string& name,
                                              const std::vector<S>& buf, nn::Shape shape) {
        nn::CheckpointRecord r;
        r.name = name;
        r.shape = std::move(shape);
        r.data.resize(buf.size());
        for (size_t i = 0; i < buf.size(); ++i) r.data[i] = static_cast<float>(buf[i]);
        return r;
    }

    static void restore_moments(std::vector<S>& buf, const nn::CheckpointRecord& r) {
        require(r.data.size() == buf.size(), "ckpt.bad_record",
                "optimizer moment size mismatch for " + r.name);
        for (size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<S>(r.data[i]);
    }

    TranscriptionModel<S>* model_;
    TrainConfig cfg_;
    Adam<S> optim_;
    PlateauScheduler scheduler_;
    std::vector<TrainItem<S>> items_;
};

} // namespace amt
