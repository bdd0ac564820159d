#include "amt/labels.hpp"

#include "testutil.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <random>

using namespace amt;

namespace {

FrameGrid grid_of(int frames) { return FrameGrid{0.02, frames}; }

ModelPlanes<double> planes_from(const RollTargets<double>& t) {
    return {t.g_on, t.g_off, t.b_fr, t.vel};
}

} // namespace

TEST_CASE("encode_regression: triangle at a frame center (hand values)") {
    std::vector<std::vector<double>> events(kNumPitches);
    events[10] = {1.00};
    Grid<double> g = encode_regression<double>(events, grid_of(100), 5);
    REQUIRE(g.at(50, 10) == Catch::Approx(1.0).epsilon(1e-12));
    REQUIRE(g.at(49, 10) == Catch::Approx(0.8).epsilon(1e-12));
    REQUIRE(g.at(51, 10) == Catch::Approx(0.8).epsilon(1e-12));
    REQUIRE(g.at(48, 10) == Catch::Approx(0.6).epsilon(1e-12));
    REQUIRE(g.at(52, 10) == Catch::Approx(0.6).epsilon(1e-12));
    REQUIRE(g.at(45, 10) == 0.0);
}

TEST_CASE("encode_regression: off-center onset (hand values)") {
    std::vector<std::vector<double>> events(kNumPitches);
    events[0] = {1.005};
    Grid<double> g = encode_regression<double>(events, grid_of(100), 5);
    REQUIRE(g.at(49, 0) == Catch::Approx(0.75).epsilon(1e-12));
    REQUIRE(g.at(50, 0) == Catch::Approx(0.95).epsilon(1e-12));
    REQUIRE(g.at(51, 0) == Catch::Approx(0.85).epsilon(1e-12));
}

TEST_CASE("encode_regression: no events leaves the plane zero") {
    Grid<double> g =
        encode_regression<double>(std::vector<std::vector<double>>(kNumPitches), grid_of(40), 5);
    for (double v : g.v) REQUIRE(v == 0.0);
}

TEST_CASE("encode_regression: out-of-range events are rejected") {
    std::vector<std::vector<double>> events(kNumPitches);
    events[0] = {99.0};
    REQUIRE_THROWS_AS(encode_regression<double>(events, grid_of(40), 5), DataError);
}

TEST_CASE("encode_targets: frame activity is onset-inclusive, offset-exclusive") {
    NoteSequence seq;
    seq.notes.push_back({60, 1.00, 1.50, 127});
    RollTargets<double> t = encode_targets<double>(seq, grid_of(100), 5);
    const int k = 60 - kPitchMin;
    for (int f = 50; f <= 74; ++f) REQUIRE(t.b_fr.at(f, k) == 1.0);
    REQUIRE(t.b_fr.at(75, k) == 0.0);
    REQUIRE(t.b_fr.at(49, k) == 0.0);
    // velocity 127 -> 1.0 on the onset-support frames
    REQUIRE(t.vel.at(50, k) == Catch::Approx(1.0).epsilon(1e-12));
    // b_on marks exactly the nonzero onset support
    int support = 0;
    for (int f = 0; f < 100; ++f) {
        REQUIRE((t.b_on.at(f, k) == 1.0) == (t.g_on.at(f, k) > 0.0));
        support += t.b_on.at(f, k) > 0.0 ? 1 : 0;
    }
    REQUIRE(support <= 2 * 5);
}

TEST_CASE("encode_targets: empty sequence gives all-zero planes") {
    RollTargets<double> t = encode_targets<double>(NoteSequence{}, grid_of(50), 5);
    for (double v : t.g_on.v) REQUIRE(v == 0.0);
    for (double v : t.b_fr.v) REQUIRE(v == 0.0);
    for (double v : t.vel.v) REQUIRE(v == 0.0);
}

TEST_CASE("encode_targets: note outside the grid is an error") {
    NoteSequence seq;
    seq.notes.push_back({60, 0.5, 3.0, 90});
    REQUIRE_THROWS_AS(encode_targets<double>(seq, grid_of(50), 5), DataError); // grid spans 1 s
}

TEST_CASE("decode_precise_time: hand inversions") {
    REQUIRE(decode_precise_time(0.75, 0.95, 0.85, 1.00, 0.02) ==
            Catch::Approx(1.005).epsilon(1e-12));
    REQUIRE(decode_precise_time(0.85, 0.95, 0.75, 1.00, 0.02) ==
            Catch::Approx(0.995).epsilon(1e-12));
    REQUIRE(decode_precise_time(0.8, 1.0, 0.8, 1.00, 0.02) == 1.00); // symmetric
    REQUIRE(decode_precise_time(0.9, 0.9, 0.9, 1.00, 0.02) == 1.00); // flat: denominator guard
}

TEST_CASE("decode_precise_time: shift clamped to half a frame") {
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    for (int i = 0; i < 2000; ++i) {
        double a = dist(rng), c = dist(rng);
        double b = std::max(a, c) + dist(rng) * 0.2;
        double t = decode_precise_time(a, b, c, 2.0, 0.02);
        REQUIRE(t >= 2.0 - 0.01 - 1e-12);
        REQUIRE(t <= 2.0 + 0.01 + 1e-12);
    }
}

TEST_CASE("extract_notes: codec round trip on a single note is exact") {
    NoteSequence seq;
    seq.notes.push_back({60, 1.005, 1.505, 100});
    RollTargets<double> t = encode_targets<double>(seq, grid_of(120), 5);
    NoteSequence out = extract_notes(planes_from(t), DecodeThresholds{}, grid_of(120));
    REQUIRE(out.notes.size() == 1);
    REQUIRE(out.notes[0].pitch == 60);
    REQUIRE(out.notes[0].velocity == 100);
    REQUIRE(out.notes[0].onset == Catch::Approx(1.005).margin(1e-9));
    REQUIRE(out.notes[0].offset == Catch::Approx(1.505).margin(1e-9));
}

TEST_CASE("extract_notes: all-zero planes give an empty sequence") {
    ModelPlanes<double> planes{Grid<double>(60, 88), Grid<double>(60, 88), Grid<double>(60, 88),
                              Grid<double>(60, 88)};
    NoteSequence out = extract_notes(planes, DecodeThresholds{}, grid_of(60));
    REQUIRE(out.notes.empty());
}

TEST_CASE("extract_notes: a second onset truncates the open note") {
    // hand-built planes: onsets at 1.0 and 1.2, one offset at 1.5, frame
    // activity covering 1.0..1.5
    const int k = 20;
    ModelPlanes<double> p{Grid<double>(120, 88), Grid<double>(120, 88), Grid<double>(120, 88),
                         Grid<double>(120, 88)};
    auto put_triangle = [&](Grid<double>& g, double t_star) {
        for (int t = 0; t < 120; ++t) {
            const double v = 1.0 - std::abs(t * 0.02 - t_star) / 0.1;
            if (v > 0) g.at(t, k) = std::max(g.at(t, k), v);
        }
    };
    put_triangle(p.on, 1.0);
    put_triangle(p.on, 1.2);
    put_triangle(p.off, 1.5);
    for (int t = 50; t < 75; ++t) p.frame.at(t, k) = 1.0;
    for (int t = 0; t < 120; ++t) p.vel.at(t, k) = 0.5;

    NoteSequence out = extract_notes(p, DecodeThresholds{}, grid_of(120));
    REQUIRE(out.notes.size() == 2);
    REQUIRE(out.notes[0].onset == Catch::Approx(1.0).margin(1e-9));
    REQUIRE(out.notes[0].offset == Catch::Approx(1.2).margin(1e-9));
    REQUIRE(out.notes[1].offset == Catch::Approx(1.5).margin(1e-9));
}

TEST_CASE("extract_notes: open note at the end closes at the last frame center") {
    const int k = 5;
    ModelPlanes<double> p{Grid<double>(80, 88), Grid<double>(80, 88), Grid<double>(80, 88),
                         Grid<double>(80, 88)};
    for (int t = 0; t < 80; ++t) {
        const double v = 1.0 - std::abs(t * 0.02 - 1.0) / 0.1;
        if (v > 0) p.on.at(t, k) = v;
        p.frame.at(t, k) = t >= 50 ? 1.0 : 0.0;
        p.vel.at(t, k) = 0.9;
    }
    NoteSequence out = extract_notes(p, DecodeThresholds{}, grid_of(80));
    REQUIRE(out.notes.size() == 1);
    REQUIRE(out.notes[0].offset == Catch::Approx(79 * 0.02).margin(1e-9));
}

TEST_CASE("extract_notes: velocity gate drops notes at or below the threshold") {
    NoteSequence seq;
    seq.notes.push_back({60, 1.0, 1.4, 100});
    RollTargets<double> t = encode_targets<double>(seq, grid_of(100), 5);
    DecodeThresholds thr;
    thr.velocity = 0.9; // 100/127 ~ 0.787 <= 0.9
    NoteSequence out = extract_notes(planes_from(t), thr, grid_of(100));
    REQUIRE(out.notes.empty());
}

TEST_CASE("extract_notes: shape mismatch is an error") {
    ModelPlanes<double> p{Grid<double>(60, 88), Grid<double>(59, 88), Grid<double>(60, 88),
                         Grid<double>(60, 88)};
    REQUIRE_THROWS_AS(extract_notes(p, DecodeThresholds{}, grid_of(60)), DataError);
}

TEST_CASE("round-trip property: non-overlapping notes recover exactly") {
    std::mt19937 rng(99);
    std::uniform_real_distribution<double> time_jitter(0.0, 0.02);
    const FrameGrid grid = grid_of(400); // 8 s
    for (int rep = 0; rep < 300; ++rep) {
        // single-pitch sets with onsets >= 3 frames apart
        const int pitch = 21 + static_cast<int>(rng() % 88);
        NoteSequence seq;
        double t = 0.3 + time_jitter(rng);
        std::uniform_int_distribution<int> vel_dist(1, 127);
        std::uniform_real_distribution<double> dur_dist(0.05, 0.5);
        std::uniform_real_distribution<double> gap_dist(0.001, 0.4);
        while (true) {
            const double dur = dur_dist(rng);
            if (t + dur > grid.span() - 0.3) break;
            seq.notes.push_back({pitch, t, t + dur, vel_dist(rng)});
            double next = t + std::max(3 * 0.02 + 1e-4, dur + gap_dist(rng));
            t = next;
        }
        if (seq.notes.empty()) continue;
        RollTargets<double> targets = encode_targets<double>(seq, grid, 5);
        NoteSequence out = extract_notes(planes_from(targets), DecodeThresholds{}, grid);
        REQUIRE(out.notes.size() == seq.notes.size());
        for (size_t i = 0; i < seq.notes.size(); ++i) {
            REQUIRE(out.notes[i].pitch == seq.notes[i].pitch);
            REQUIRE(out.notes[i].velocity == seq.notes[i].velocity);
            REQUIRE(std::abs(out.notes[i].onset - seq.notes[i].onset) < 1e-9);
            REQUIRE(std::abs(out.notes[i].offset - seq.notes[i].offset) < 1e-9);
        }
    }
}

TEST_CASE("monotone threshold property: higher onset threshold, never more notes") {
    std::mt19937 rng(123);
    std::uniform_real_distribution<double> noise(-0.15, 0.15);
    const FrameGrid grid = grid_of(200);
    for (int rep = 0; rep < 40; ++rep) {
        NoteSequence seq = testutil::random_notes(rng, 8, 0.3, 3.5, 0.12, 0.1, 0.6);
        RollTargets<double> t = encode_targets<double>(seq, grid, 5);
        ModelPlanes<double> p = planes_from(t);
        for (auto* g : {&p.on, &p.off, &p.frame, &p.vel})
            for (double& v : g->v) v = std::clamp(v + noise(rng), 0.0, 1.0);
        size_t prev = SIZE_MAX;
        for (double thr : {0.1, 0.3, 0.5, 0.7, 0.9}) {
            DecodeThresholds d;
            d.onset = thr;
            const size_t n = extract_notes(p, d, grid).notes.size();
            REQUIRE(n <= prev);
            prev = n;
        }
    }
}

TEST_CASE("ROLL container round-trips") {
    const std::string dir = testutil::temp_dir("labels");
    NoteSequence seq;
    seq.notes.push_back({72, 0.4, 0.9, 77});
    FrameGrid grid = grid_of(60);
    RollTargets<float> t = encode_targets<float>(seq, grid, 5);
    save_targets(t, grid, dir + "/t.roll");
    FrameGrid grid_back;
    RollTargets<float> back = load_targets<float>(dir + "/t.roll", &grid_back);
    REQUIRE(grid_back.n_frames == 60);
    REQUIRE(grid_back.frame_period == grid.frame_period);
    REQUIRE(back.sharpness == 5);
    REQUIRE(back.g_on.v == t.g_on.v);
    REQUIRE(back.g_off.v == t.g_off.v);
    REQUIRE(back.b_fr.v == t.b_fr.v);
    REQUIRE(back.vel.v == t.vel.v);
    REQUIRE(back.b_on.v == t.b_on.v);
}
