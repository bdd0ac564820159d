#pragma once

// Constant-Q spectrogram front-end. Direct time-domain kernel evaluation:
// per frame and bin, the windowed complex exponential is correlated with the
// signal around the frame center. Correct and simple; not optimized for
// real-time use.

#include "amt/audio.hpp"
#include "amt/common.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace amt {

struct CqtConfig {
    int sample_rate = 16000;
    int hop = 320;            // samples per frame -> 20 ms at 16 kHz
    int bins_per_octave = 48;
    int n_bins = 352;         // 88 keys x 4 bins per semitone
    double f_min = 27.5;      // A0, MIDI pitch 21

    double frame_period() const { return static_cast<double>(hop) / sample_rate; }
    double bin_frequency(int b) const {
        return f_min * std::pow(2.0, static_cast<double>(b) / bins_per_octave);
    }

    void validate() const {
        require(hop > 0, "cqt.bad_config", "hop must be positive");
        require(sample_rate > 0 && n_bins > 0 && bins_per_octave > 0 && f_min > 0,
                "cqt.bad_config", "all CQT parameters must be positive");
        require(bin_frequency(n_bins - 1) < sample_rate / 2.0, "cqt.bad_config",
                "top bin exceeds Nyquist");
    }
};

struct Spectrogram {
    Grid<float> values;          // T x F, log-compressed magnitudes
    double frame_period = 0.0;   // seconds per frame
    std::vector<double> f_bins;  // bin center frequencies, Hz
};

// log(1 + C*m) with C chosen so the quiet floor maps near zero while
// realistic magnitudes stay O(10).
inline double log_compress(double magnitude) {
    return std::log1p(1e4 * magnitude);
}

// Precomputed windowed exponentials, one pair of tables (cos/sin) per bin.
// Kernel length is the full constant-Q support Q_factor * fs / f_b with a
// Hann window, normalized by the window sum so a unit sine at a bin center
// yields magnitude ~0.5 regardless of bin.
class CqtTransform {
public:
    explicit CqtTransform(const CqtConfig& cfg) : cfg_(cfg) {
        cfg.validate();
        const double q_factor = 1.0 / (std::pow(2.0, 1.0 / cfg.bins_per_octave) - 1.0);
        kernels_.resize(cfg.n_bins);
        max_half_ = 0;
        for (int b = 0; b < cfg.n_bins; ++b) {
            const double fb = cfg.bin_frequency(b);
            int n = static_cast<int>(std::lround(q_factor * cfg.sample_rate / fb));
            if (n % 2 == 0) ++n; // odd length, symmetric around the frame center
            const int half = n / 2;
            max_half_ = std::max(max_half_, half);
            Kernel& k = kernels_[b];
            k.half = half;
            k.cosw.resize(n);
            k.sinw.resize(n);
            double wsum = 0.0;
            std::vector<double> w(n);
            for (int i = 0; i < n; ++i) {
                w[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / (n - 1)); // Hann
                wsum += w[i];
            }
            for (int i = 0; i < n; ++i) {
                const double arg = 2.0 * M_PI * fb * (i - half) / cfg.sample_rate;
                k.cosw[i] = static_cast<float>(w[i] * std::cos(arg) / wsum);
                k.sinw[i] = static_cast<float>(w[i] * std::sin(arg) / wsum);
            }
        }
    }

    const CqtConfig& config() const { return cfg_; }
    int min_clip_length() const { return 2 * max_half_ + 1; }

    // Raw magnitudes (pre-compression), linear in the input amplitude.
    Grid<double> magnitudes(const AudioClip& clip) const {
        require(clip.sample_rate == cfg_.sample_rate, "cqt.rate_mismatch",
                "clip rate " + std::to_string(clip.sample_rate) + " != config rate " +
                    std::to_string(cfg_.sample_rate));
        const int len = static_cast<int>(clip.samples.size());
        require(len >= min_clip_length(), "cqt.clip_too_short",
                "clip shorter than the lowest-bin kernel (" +
                    std::to_string(min_clip_length()) + " samples)");

        const int frames = static_cast<int>((len + cfg_.hop - 1) / cfg_.hop);

        // Reflection-padded copy: every kernel read becomes branch-free.
        const int pad = max_half_;
        std::vector<float> x(static_cast<size_t>(len) + 2 * pad);
        for (int i = -pad; i < len + pad; ++i) x[i + pad] = clip.samples[reflect(i, len)];

        Grid<double> out(frames, cfg_.n_bins);
        for (int t = 0; t < frames; ++t) {
            const int center = t * cfg_.hop;
            for (int b = 0; b < cfg_.n_bins; ++b) {
                const Kernel& k = kernels_[b];
                const float* sig = x.data() + pad + center - k.half;
                const int n = 2 * k.half + 1;
                double re = 0.0, im = 0.0;
                for (int i = 0; i < n; ++i) {
                    re += static_cast<double>(sig[i]) * k.cosw[i];
                    im += static_cast<double>(sig[i]) * k.sinw[i];
                }
                out.at(t, b) = std::sqrt(re * re + im * im);
            }
        }
        return out;
    }

    Spectrogram operator()(const AudioClip& clip) const {
        Grid<double> mag = magnitudes(clip);
        Spectrogram spec;
        spec.frame_period = cfg_.frame_period();
        spec.values = Grid<float>(mag.rows, mag.cols);
        for (size_t i = 0; i < mag.v.size(); ++i)
            spec.values.v[i] = static_cast<float>(log_compress(mag.v[i]));
        require(all_finite(spec.values.v), "cqt.nonfinite", "non-finite spectrogram values");
        spec.f_bins.resize(cfg_.n_bins);
        for (int b = 0; b < cfg_.n_bins; ++b) spec.f_bins[b] = cfg_.bin_frequency(b);
        return spec;
    }

private:
    struct Kernel {
        int half = 0;
        std::vector<float> cosw, sinw;
    };

    static int reflect(int i, int len) {
        // numpy-style "reflect": ..., 2, 1, 0, 1, 2, ..., len-2, len-1, len-2, ...
        while (i < 0 || i >= len) {
            if (i < 0) i = -i;
            if (i >= len) i = 2 * len - 2 - i;
        }
        return i;
    }

    CqtConfig cfg_;
    std::vector<Kernel> kernels_;
    int max_half_ = 0;
};

inline Spectrogram cqt(const AudioClip& clip, const CqtConfig& cfg = {}) {
    return CqtTransform(cfg)(clip);
}

// Flat binary spectrogram container: "CQTS", u32 T, u32 F, f64 frame_period,
// then T*F row-major f32 values.
inline void save_spectrogram(const Spectrogram& spec, const std::string& path) {
    std::ofstream os = io::open_out(path);
    os.write("CQTS", 4);
    io::write_raw<uint32_t>(os, static_cast<uint32_t>(spec.values.rows));
    io::write_raw<uint32_t>(os, static_cast<uint32_t>(spec.values.cols));
    io::write_raw<double>(os, spec.frame_period);
    os.write(reinterpret_cast<const char*>(spec.values.v.data()),
             static_cast<std::streamsize>(spec.values.v.size() * sizeof(float)));
    require(os.good(), "io.unwritable", "write failed: " + path);
}

inline Spectrogram load_spectrogram(const std::string& path) {
    std::ifstream is = io::open_in(path);
    char magic[4];
    is.read(magic, 4);
    require(is.gcount() == 4 && std::memcmp(magic, "CQTS", 4) == 0, "cqts.bad_magic",
            "not a CQTS file: " + path);
    const uint32_t t = io::read_raw<uint32_t>(is, "cqts.truncated");
    const uint32_t f = io::read_raw<uint32_t>(is, "cqts.truncated");
    Spectrogram spec;
    spec.frame_period = io::read_raw<double>(is, "cqts.truncated");
    spec.values = Grid<float>(static_cast<int>(t), static_cast<int>(f));
    is.read(reinterpret_cast<char*>(spec.values.v.data()),
            static_cast<std::streamsize>(spec.values.v.size() * sizeof(float)));
    require(static_cast<size_t>(is.gcount()) == spec.values.v.size() * sizeof(float),
            "cqts.truncated", "value block shorter than header promises");
    return spec;
}

} // namespace amt
