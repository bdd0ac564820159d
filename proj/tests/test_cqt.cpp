#include "amt/cqt.hpp"
#include "amt/labels.hpp"
#include "amt/models.hpp"

#include "testutil.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace amt;

namespace {

AudioClip sine_clip(double freq, double seconds, double amp = 0.9, int rate = 16000) {
    AudioClip clip;
    clip.sample_rate = rate;
    const int n = static_cast<int>(seconds * rate);
    clip.samples.resize(n);
    for (int i = 0; i < n; ++i)
        clip.samples[i] = static_cast<float>(amp * std::sin(2.0 * M_PI * freq * i / rate));
    return clip;
}

int argmax_in(const Grid<double>& g, int t, int lo, int hi) {
    int best = lo;
    for (int b = lo; b <= hi; ++b)
        if (g.at(t, b) > g.at(t, best)) best = b;
    return best;
}

} // namespace

TEST_CASE("bin frequencies are geometric with ratio 2^(1/48)") {
    CqtConfig cfg;
    const double ratio = std::pow(2.0, 1.0 / 48.0);
    for (int b = 0; b + 1 < cfg.n_bins; ++b) {
        const double r = cfg.bin_frequency(b + 1) / cfg.bin_frequency(b);
        REQUIRE(std::abs(r / ratio - 1.0) < 1e-12);
    }
    REQUIRE(cfg.bin_frequency(48) == Catch::Approx(55.0).epsilon(1e-12)); // one octave up
    REQUIRE(cfg.n_bins == 352);
    REQUIRE(cfg.frame_period() == Catch::Approx(0.02).epsilon(1e-15));
}

TEST_CASE("frame-time convention shared with the label codec") {
    CqtConfig cfg;
    FrameGrid grid{cfg.frame_period(), 100};
    for (int t : {0, 1, 17, 99}) REQUIRE(grid.center(t) == Catch::Approx(t * 0.02).epsilon(1e-15));
}

TEST_CASE("all-zero clip maps to an all-zero spectrogram") {
    AudioClip clip;
    clip.sample_rate = 16000;
    clip.samples.assign(48000, 0.0f);
    Spectrogram spec = cqt(clip);
    for (float v : spec.values.v) REQUIRE(v == 0.0f);
    REQUIRE(spec.values.rows == 150); // ceil(48000/320)
    REQUIRE(spec.values.cols == 352);
}

TEST_CASE("pure tone at a bin center wins the argmax on interior frames") {
    CqtConfig cfg;
    const int bin = 100;
    AudioClip clip = sine_clip(cfg.bin_frequency(bin), 3.0);
    CqtTransform transform(cfg);
    Grid<double> mag = transform.magnitudes(clip);
    const int guard = transform.min_clip_length() / (2 * cfg.hop) + 1;
    REQUIRE(mag.rows - 2 * guard > 5);
    for (int t = guard; t < mag.rows - guard; ++t)
        REQUIRE(argmax_in(mag, t, 0, cfg.n_bins - 1) == bin);
}

TEST_CASE("harmonic distances match round(48*log2(k)) within one bin") {
    CqtConfig cfg;
    CqtTransform transform(cfg);
    const int f0_bin = 60;
    const double f0 = cfg.bin_frequency(f0_bin);
    const int guard = transform.min_clip_length() / (2 * cfg.hop) + 1;
    for (int k = 2; k <= 9; ++k) {
        AudioClip clip;
        clip.sample_rate = cfg.sample_rate;
        const int n = cfg.sample_rate * 3;
        clip.samples.resize(n);
        for (int i = 0; i < n; ++i)
            clip.samples[i] = static_cast<float>(
                0.45 * std::sin(2.0 * M_PI * f0 * i / cfg.sample_rate) +
                0.45 * std::sin(2.0 * M_PI * k * f0 * i / cfg.sample_rate));
        Grid<double> mag = transform.magnitudes(clip);
        const int expected = static_cast<int>(std::lround(48.0 * std::log2(k)));
        const int t = mag.rows / 2;
        REQUIRE(t >= guard);
        const int low = argmax_in(mag, t, f0_bin - 24, f0_bin + 24);
        const int high = argmax_in(mag, t, f0_bin + expected - 24,
                                   std::min(cfg.n_bins - 1, f0_bin + expected + 24));
        REQUIRE(std::abs((high - low) - expected) <= 1);
    }
}

TEST_CASE("raw magnitude is linear in input amplitude") {
    CqtConfig cfg;
    CqtTransform transform(cfg);
    std::mt19937 rng(11);
    std::uniform_real_distribution<float> dist(-0.4f, 0.4f);
    AudioClip clip;
    clip.sample_rate = cfg.sample_rate;
    clip.samples.resize(45000);
    for (auto& s : clip.samples) s = dist(rng);
    AudioClip doubled = clip;
    for (auto& s : doubled.samples) s *= 2.0f;

    Grid<double> a = transform.magnitudes(clip);
    Grid<double> b = transform.magnitudes(doubled);
    for (size_t i = 0; i < a.v.size(); ++i) {
        if (a.v[i] < 1e-9) continue;
        REQUIRE(b.v[i] / a.v[i] == Catch::Approx(2.0).epsilon(1e-6));
    }
}

TEST_CASE("log compression maps zero to zero and is monotone") {
    REQUIRE(log_compress(0.0) == 0.0);
    REQUIRE(log_compress(0.5) > log_compress(0.1));
}

TEST_CASE("clip shorter than the lowest-bin kernel is rejected") {
    AudioClip clip;
    clip.sample_rate = 16000;
    clip.samples.assign(16000, 0.1f); // 1 s < lowest kernel (~2.5 s)
    try {
        cqt(clip);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        REQUIRE(e.code() == "cqt.clip_too_short");
    }
}

TEST_CASE("sample-rate mismatch with the config is rejected") {
    AudioClip clip;
    clip.sample_rate = 22050;
    clip.samples.assign(60000, 0.0f);
    try {
        cqt(clip);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        REQUIRE(e.code() == "cqt.rate_mismatch");
    }
}

TEST_CASE("invalid configs are rejected") {
    CqtConfig cfg;
    cfg.hop = 0;
    REQUIRE_THROWS_AS(cfg.validate(), DataError);
    cfg = CqtConfig{};
    cfg.n_bins = 1000; // would exceed Nyquist
    REQUIRE_THROWS_AS(cfg.validate(), DataError);
}

TEST_CASE("CQTS container round-trips") {
    const std::string dir = testutil::temp_dir("cqt");
    Spectrogram spec;
    spec.frame_period = 0.02;
    spec.values = Grid<float>(7, 5);
    for (size_t i = 0; i < spec.values.v.size(); ++i)
        spec.values.v[i] = static_cast<float>(i) * 0.25f;
    save_spectrogram(spec, dir + "/s.cqts");
    Spectrogram back = load_spectrogram(dir + "/s.cqts");
    REQUIRE(back.values.rows == 7);
    REQUIRE(back.values.cols == 5);
    REQUIRE(back.frame_period == spec.frame_period);
    REQUIRE(back.values.v == spec.values.v);
}
