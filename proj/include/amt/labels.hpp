#pragma once

// Label codec: note events <-> frame-rate target planes.
//
// Encoding places a triangular pulse of half-width J frames around each
// onset/offset so the sub-frame time survives quantization; decoding finds
// thresholded local maxima and inverts the triangle to recover times at
// arbitrary resolution. For an exact triangle the inversion
//   delta = D * (C - A) / (2 * (B - min(A, C)))
// around peak frame value B with neighbors A, C reproduces the encoded time
// exactly.

#include "amt/common.hpp"
#include "amt/midi.hpp"

#include <cmath>
#include <optional>
#include <vector>

namespace amt {

struct FrameGrid {
    double frame_period = 0.02; // seconds per frame
    int n_frames = 0;

    double center(int t) const { return t * frame_period; }
    double span() const { return n_frames * frame_period; }
};

// Regression/binary target planes, all T x 88.
template <class S>
struct RollTargets {
    Grid<S> g_on;  // continuous onset targets in [0,1]
    Grid<S> g_off; // continuous offset targets in [0,1]
    Grid<S> b_fr;  // binary frame activity
    Grid<S> vel;   // velocity/127 where b_on = 1, else 0
    Grid<S> b_on;  // binary onset-support mask (g_on > 0)
    int sharpness = 5;
};

struct DecodeThresholds {
    double onset = 0.4;
    double offset = 0.4;
    double frame = 0.4;
    double velocity = 0.0;
};

// Model output planes, each T x 88 in [0,1].
template <class S>
struct ModelPlanes {
    Grid<S> on, off, frame, vel;
};

namespace detail {

// Boundary-robust frame index helpers: comparisons of real times against
// frame centers tolerate ~1e-9-frame rounding noise.
inline int first_frame_at_or_after(double t, double period) {
    return static_cast<int>(std::ceil(t / period - 1e-9));
}
inline int last_frame_before(double t, double period) {
    return static_cast<int>(std::ceil(t / period - 1e-9)) - 1;
}

} // namespace detail

// Writes max(existing, 1 - |center - t*| / (J*D)) on every frame within J
// frames of each event time; overlapping pulses combine by elementwise max so
// values stay interpretable as probabilities.
template <class S>
Grid<S> encode_regression(const std::vector<std::vector<double>>& events_per_pitch,
                          const FrameGrid& grid, int sharpness) {
    require(sharpness >= 1, "labels.bad_sharpness", "J must be >= 1");
    require(static_cast<int>(events_per_pitch.size()) == kNumPitches, "labels.bad_shape",
            "expected one event list per pitch lane");
    const double period = grid.frame_period;
    const double reach = sharpness * period;
    Grid<S> plane(grid.n_frames, kNumPitches);
    for (int k = 0; k < kNumPitches; ++k) {
        for (double t_star : events_per_pitch[k]) {
            require(t_star >= 0.0 && t_star <= grid.span() + 1e-9, "labels.event_out_of_range",
                    "event time outside the frame grid");
            const int lo = std::max(0, static_cast<int>(std::floor((t_star - reach) / period)));
            const int hi = std::min(grid.n_frames - 1,
                                    static_cast<int>(std::ceil((t_star + reach) / period)));
            for (int t = lo; t <= hi; ++t) {
                const double g = 1.0 - std::abs(grid.center(t) - t_star) / reach;
                // 1e-12 floor keeps rounding fuzz from widening the support
                if (g > 1e-12) plane.at(t, k) = std::max(plane.at(t, k), static_cast<S>(g));
            }
        }
    }
    return plane;
}

template <class S>
RollTargets<S> encode_targets(const NoteSequence& seq, const FrameGrid& grid, int sharpness = 5) {
    seq.validate();
    const double period = grid.frame_period;
    const double reach = sharpness * period;
    RollTargets<S> out;
    out.sharpness = sharpness;
    out.g_on = Grid<S>(grid.n_frames, kNumPitches);
    out.g_off = Grid<S>(grid.n_frames, kNumPitches);
    out.b_fr = Grid<S>(grid.n_frames, kNumPitches);
    out.vel = Grid<S>(grid.n_frames, kNumPitches);
    out.b_on = Grid<S>(grid.n_frames, kNumPitches);

    std::vector<std::vector<double>> offsets(kNumPitches);
    for (const NoteEvent& n : seq.notes) {
        require(n.onset >= 0.0 && n.offset <= grid.span() + 1e-9, "labels.note_outside_grid",
                "note extends outside the frame grid");
        const int k = n.pitch - kPitchMin;
        offsets[k].push_back(n.offset);

        // Onset triangle; the velocity rides with whichever event wins the max.
        const int lo = std::max(0, static_cast<int>(std::floor((n.onset - reach) / period)));
        const int hi = std::min(grid.n_frames - 1,
                                static_cast<int>(std::ceil((n.onset + reach) / period)));
        for (int t = lo; t <= hi; ++t) {
            const double g = 1.0 - std::abs(grid.center(t) - n.onset) / reach;
            if (g > 1e-12 && g > static_cast<double>(out.g_on.at(t, k))) {
                out.g_on.at(t, k) = static_cast<S>(g);
                out.vel.at(t, k) = static_cast<S>(n.velocity / 127.0);
            }
        }

        // Frame activity: onset-inclusive, offset-exclusive.
        const int f_lo = std::max(0, detail::first_frame_at_or_after(n.onset, period));
        const int f_hi = std::min(grid.n_frames - 1, detail::last_frame_before(n.offset, period));
        for (int t = f_lo; t <= f_hi; ++t) out.b_fr.at(t, k) = S(1);
    }
    out.g_off = encode_regression<S>(offsets, grid, sharpness);
    for (size_t i = 0; i < out.g_on.v.size(); ++i)
        out.b_on.v[i] = out.g_on.v[i] > S(0) ? S(1) : S(0);
    return out;
}

// Triangle inversion around a local maximum B with neighbors A (left) and
// C (right). Returns center when the peak is flat to within 1e-9; the shift
// is clamped to half a frame either way.
inline double decode_precise_time(double a, double b, double c, double center, double period) {
    const double denom = b - std::min(a, c);
    if (denom < 1e-9) return center;
    double delta = period * (c - a) / (2.0 * denom);
    delta = std::clamp(delta, -period / 2.0, period / 2.0);
    return center + delta;
}

namespace detail {

// Local-maximum rule shared by onset and offset detection: strictly above
// the left neighbor, at least the right neighbor, so a flat run detects only
// its earliest frame. Out-of-range neighbors count as -1.
template <class S>
bool is_local_max(const Grid<S>& plane, int t, int k) {
    const double b = static_cast<double>(plane.at(t, k));
    const double a = t > 0 ? static_cast<double>(plane.at(t - 1, k)) : -1.0;
    const double c = t + 1 < plane.rows ? static_cast<double>(plane.at(t + 1, k)) : -1.0;
    return b > a && b >= c;
}

template <class S>
double interpolate_peak(const Grid<S>& plane, int t, int k, const FrameGrid& grid) {
    if (t == 0 || t + 1 >= plane.rows) return grid.center(t);
    return decode_precise_time(static_cast<double>(plane.at(t - 1, k)),
                               static_cast<double>(plane.at(t, k)),
                               static_cast<double>(plane.at(t + 1, k)),
                               grid.center(t), grid.frame_period);
}

} // namespace detail

// Model outputs -> note events.
//   Step 1: onsets at thresholded local maxima of the onset plane, times by
//           triangle inversion.
//   Step 2: velocity from the velocity plane at the onset frame, rescaled to
//           [1,127]; the note is emitted only if its velocity output exceeds
//           the velocity threshold.
//   Step 3: scanning forward, the offset is the first offset-plane local
//           maximum above threshold (interpolated) or the first frame whose
//           frame activity drops below the frame threshold (frame center),
//           whichever comes first; a following onset of the same pitch
//           truncates the note at the new precise onset time; notes still
//           open at the end close at the last frame center.
template <class S>
NoteSequence extract_notes(const ModelPlanes<S>& planes, const DecodeThresholds& thr,
                           const FrameGrid& grid) {
    require(planes.on.same_shape(planes.off) && planes.on.same_shape(planes.frame) &&
                planes.on.same_shape(planes.vel),
            "labels.shape_mismatch", "output planes disagree in shape");
    require(planes.on.cols == kNumPitches, "labels.bad_shape", "expected 88 pitch lanes");
    require(planes.on.rows == grid.n_frames, "labels.bad_shape",
            "plane frame count disagrees with the grid");

    const int frames = grid.n_frames;
    NoteSequence out;
    for (int k = 0; k < kNumPitches; ++k) {
        std::vector<int> onset_frames;
        std::vector<double> onset_times;
        for (int t = 0; t < frames; ++t) {
            if (static_cast<double>(planes.on.at(t, k)) > thr.onset &&
                detail::is_local_max(planes.on, t, k)) {
                onset_frames.push_back(t);
                onset_times.push_back(detail::interpolate_peak(planes.on, t, k, grid));
            }
        }

        for (size_t i = 0; i < onset_frames.size(); ++i) {
            const int t_on = onset_frames[i];
            // Scan range is inclusive of the next onset's frame: an offset
            // pulse whose peak rounds onto that frame still belongs to the
            // open note.
            const int t_limit =
                (i + 1 < onset_frames.size()) ? onset_frames[i + 1] : frames - 1;

            const double v_raw = static_cast<double>(planes.vel.at(t_on, k));
            if (v_raw <= thr.velocity) continue;
            const int velocity =
                std::clamp(static_cast<int>(std::lround(v_raw * 127.0)), 1, 127);

            std::optional<double> offset_time;
            for (int t = t_on + 1; t <= t_limit; ++t) {
                if (static_cast<double>(planes.off.at(t, k)) > thr.offset &&
                    detail::is_local_max(planes.off, t, k)) {
                    offset_time = detail::interpolate_peak(planes.off, t, k, grid);
                    break;
                }
                if (static_cast<double>(planes.frame.at(t, k)) < thr.frame) {
                    offset_time = grid.center(t);
                    break;
                }
            }
            if (!offset_time) {
                offset_time = (i + 1 < onset_frames.size()) ? onset_times[i + 1]
                                                            : grid.center(frames - 1);
            }

            NoteEvent note;
            note.pitch = kPitchMin + k;
            note.onset = onset_times[i];
            note.offset = *offset_time;
            note.velocity = velocity;
            if (note.offset > note.onset) out.notes.push_back(note);
        }
    }
    out.sort_notes();
    return out;
}

// RollTargets container: "ROLL", u32 T, u32 K, f64 frame_period, u32 J,
// u8 plane count, then per plane a tag byte (1 g_on, 2 g_off, 3 b_fr, 4 vel,
// 5 b_on) followed by T*K row-major f32 values.
template <class S>
void save_targets(const RollTargets<S>& roll, const FrameGrid& grid, const std::string& path) {
    std::ofstream os = io::open_out(path);
    os.write("ROLL", 4);
    io::write_raw<uint32_t>(os, static_cast<uint32_t>(roll.g_on.rows));
    io::write_raw<uint32_t>(os, static_cast<uint32_t>(roll.g_on.cols));
    io::write_raw<double>(os, grid.frame_period);
    io::write_raw<uint32_t>(os, static_cast<uint32_t>(roll.sharpness));
    io::write_raw<uint8_t>(os, 5);
    const Grid<S>* planes[5] = {&roll.g_on, &roll.g_off, &roll.b_fr, &roll.vel, &roll.b_on};
    for (int p = 0; p < 5; ++p) {
        io::write_raw<uint8_t>(os, static_cast<uint8_t>(p + 1));
        for (const S& x : planes[p]->v) io::write_raw<float>(os, static_cast<float>(x));
    }
    require(os.good(), "io.unwritable", "write failed: " + path);
}

template <class S>
RollTargets<S> load_targets(const std::string& path, FrameGrid* grid_out = nullptr) {
    std::ifstream is = io::open_in(path);
    char magic[4];
    is.read(magic, 4);
    require(is.gcount() == 4 && std::memcmp(magic, "ROLL", 4) == 0, "roll.bad_magic",
            "not a ROLL file: " + path);
    const int t = static_cast<int>(io::read_raw<uint32_t>(is, "roll.truncated"));
    const int k = static_cast<int>(io::read_raw<uint32_t>(is, "roll.truncated"));
    const double period = io::read_raw<double>(is, "roll.truncated");
    RollTargets<S> roll;
    roll.sharpness = static_cast<int>(io::read_raw<uint32_t>(is, "roll.truncated"));
    const int n_planes = io::read_raw<uint8_t>(is, "roll.truncated");
    require(n_planes == 5, "roll.bad_plane_count", "expected 5 planes");
    Grid<S>* planes[5] = {&roll.g_on, &roll.g_off, &roll.b_fr, &roll.vel, &roll.b_on};
    for (int p = 0; p < 5; ++p) {
        const int tag = io::read_raw<uint8_t>(is, "roll.truncated");
        require(tag == p + 1, "roll.bad_tag", "unexpected plane tag");
        *planes[p] = Grid<S>(t, k);
        for (S& x : planes[p]->v)
            x = static_cast<S>(io::read_raw<float>(is, "roll.truncated"));
    }
    if (grid_out) *grid_out = FrameGrid{period, t};
    return roll;
}

} // namespace amt
