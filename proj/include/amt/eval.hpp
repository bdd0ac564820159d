#pragma once

// Note-level transcription scoring in the three standard regimes:
//   Onset               pitch equal, onset within 50 ms
//   Onset & Offset      ... and offset within max(50 ms, 20% of duration)
//   Onset, Offset & Vel ... and velocity within 0.1 after global rescaling
// Candidate pairs are resolved to a one-to-one assignment by maximum-
// cardinality bipartite matching (augmenting paths), so the score never
// depends on note order.

#include "amt/common.hpp"
#include "amt/midi.hpp"

#include <cmath>
#include <cstring>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

namespace amt {

struct MatchTolerances {
    double onset_tol = 0.05;      // seconds
    double offset_ratio = 0.2;    // fraction of the reference duration
    double offset_min_tol = 0.05; // seconds, floor for the offset window
    double velocity_tol = 0.1;    // after rescaling to [0,1]
};

struct RegimeResult {
    double precision = 0.0, recall = 0.0, f1 = 0.0;
    int n_ref = 0, n_est = 0, n_matched = 0;
    std::vector<std::pair<int, int>> pairs; // (ref index, est index)
};

struct EvalReport {
    RegimeResult onset;
    RegimeResult onset_offset;
    RegimeResult full;
    bool velocity_degenerate = false; // all-zero reference velocities
};

namespace detail {

// Kuhn's augmenting-path maximum matching. adj[e] lists candidate ref
// indices for est note e. Returns match_ref: ref index -> est index or -1.
inline std::vector<int> max_matching(const std::vector<std::vector<int>>& adj, int n_ref) {
    std::vector<int> match_ref(n_ref, -1);
    std::vector<char> visited;
    std::function<bool(int)> try_assign = [&](int e) {
        for (int r : adj[e]) {
            if (visited[r]) continue;
            visited[r] = 1;
            if (match_ref[r] < 0 || try_assign(match_ref[r])) {
                match_ref[r] = e;
                return true;
            }
        }
        return false;
    };
    for (size_t e = 0; e < adj.size(); ++e) {
        visited.assign(n_ref, 0);
        try_assign(static_cast<int>(e));
    }
    return match_ref;
}

inline bool onset_hit(const NoteEvent& ref, const NoteEvent& est, const MatchTolerances& tol) {
    return ref.pitch == est.pitch && std::abs(ref.onset - est.onset) <= tol.onset_tol;
}

inline bool offset_hit(const NoteEvent& ref, const NoteEvent& est, const MatchTolerances& tol) {
    const double window =
        std::max(tol.offset_min_tol, tol.offset_ratio * (ref.offset - ref.onset));
    return std::abs(ref.offset - est.offset) <= window;
}

inline RegimeResult score_candidates(const std::vector<std::vector<int>>& adj, int n_ref,
                                     int n_est) {
    RegimeResult res;
    res.n_ref = n_ref;
    res.n_est = n_est;
    const std::vector<int> match_ref = max_matching(adj, n_ref);
    for (int r = 0; r < n_ref; ++r)
        if (match_ref[r] >= 0) res.pairs.emplace_back(r, match_ref[r]);
    res.n_matched = static_cast<int>(res.pairs.size());
    if (n_ref == 0 && n_est == 0) {
        res.precision = res.recall = res.f1 = 1.0;
        return res;
    }
    res.precision = n_est > 0 ? static_cast<double>(res.n_matched) / n_est : 0.0;
    res.recall = n_ref > 0 ? static_cast<double>(res.n_matched) / n_ref : 0.0;
    res.f1 = (res.precision + res.recall) > 0.0
                 ? 2.0 * res.precision * res.recall / (res.precision + res.recall)
                 : 0.0;
    return res;
}

} // namespace detail

inline RegimeResult match_onset(const NoteSequence& ref, const NoteSequence& est,
                                const MatchTolerances& tol = {}) {
    const int n_ref = static_cast<int>(ref.notes.size());
    std::vector<std::vector<int>> adj(est.notes.size());
    for (size_t e = 0; e < est.notes.size(); ++e)
        for (int r = 0; r < n_ref; ++r)
            if (detail::onset_hit(ref.notes[r], est.notes[e], tol)) adj[e].push_back(r);
    return detail::score_candidates(adj, n_ref, static_cast<int>(est.notes.size()));
}

inline RegimeResult match_onset_offset(const NoteSequence& ref, const NoteSequence& est,
                                       const MatchTolerances& tol = {}) {
    const int n_ref = static_cast<int>(ref.notes.size());
    std::vector<std::vector<int>> adj(est.notes.size());
    for (size_t e = 0; e < est.notes.size(); ++e)
        for (int r = 0; r < n_ref; ++r)
            if (detail::onset_hit(ref.notes[r], est.notes[e], tol) &&
                detail::offset_hit(ref.notes[r], est.notes[e], tol))
                adj[e].push_back(r);
    return detail::score_candidates(adj, n_ref, static_cast<int>(est.notes.size()));
}

// The velocity regime rescales: reference velocities are divided by the
// maximum reference velocity; a single multiplicative factor mapping
// estimated velocities onto that scale is least-squares fitted over the
// onset+offset candidate pairs; surviving pairs must then agree within
// velocity_tol. All-zero reference velocities make the scaling degenerate
// and are reported via the flag with an empty regime.
inline RegimeResult match_full(const NoteSequence& ref, const NoteSequence& est,
                               const MatchTolerances& tol = {},
                               bool* velocity_degenerate = nullptr) {
    const int n_ref = static_cast<int>(ref.notes.size());
    const int n_est = static_cast<int>(est.notes.size());
    int max_vel = 0;
    for (const NoteEvent& n : ref.notes) max_vel = std::max(max_vel, n.velocity);
    if (velocity_degenerate) *velocity_degenerate = false;
    if (n_ref > 0 && max_vel == 0) {
        if (velocity_degenerate) *velocity_degenerate = true;
        return detail::score_candidates(std::vector<std::vector<int>>(n_est), n_ref, n_est);
    }

    std::vector<std::vector<int>> candidates(est.notes.size());
    double num = 0.0, den = 0.0;
    for (int e = 0; e < n_est; ++e)
        for (int r = 0; r < n_ref; ++r)
            if (detail::onset_hit(ref.notes[r], est.notes[e], tol) &&
                detail::offset_hit(ref.notes[r], est.notes[e], tol)) {
                candidates[e].push_back(r);
                const double ref_scaled = static_cast<double>(ref.notes[r].velocity) / max_vel;
                num += ref_scaled * est.notes[e].velocity;
                den += static_cast<double>(est.notes[e].velocity) * est.notes[e].velocity;
            }
    const double factor = den > 0.0 ? num / den : 0.0;

    std::vector<std::vector<int>> adj(est.notes.size());
    for (int e = 0; e < n_est; ++e)
        for (int r : candidates[e]) {
            const double ref_scaled = static_cast<double>(ref.notes[r].velocity) / max_vel;
            if (std::abs(factor * est.notes[e].velocity - ref_scaled) <= tol.velocity_tol)
                adj[e].push_back(r);
        }
    return detail::score_candidates(adj, n_ref, n_est);
}

inline EvalReport evaluate(const NoteSequence& ref, const NoteSequence& est,
                           const MatchTolerances& tol = {}) {
    EvalReport report;
    report.onset = match_onset(ref, est, tol);
    report.onset_offset = match_onset_offset(ref, est, tol);
    report.full = match_full(ref, est, tol, &report.velocity_degenerate);
    return report;
}

// ----------------------------------------------------------------- reporting

inline const char* regime_name(int i) {
    switch (i) {
        case 0: return "onset";
        case 1: return "onset_offset";
        default: return "onset_offset_velocity";
    }
}

inline const RegimeResult& regime_of(const EvalReport& r, int i) {
    switch (i) {
        case 0: return r.onset;
        case 1: return r.onset_offset;
        default: return r.full;
    }
}

inline RegimeResult& regime_of(EvalReport& r, int i) {
    switch (i) {
        case 0: return r.onset;
        case 1: return r.onset_offset;
        default: return r.full;
    }
}

inline std::string format_report_table(const EvalReport& report) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(2);
    os << "regime                     P(%)     R(%)    F1(%)\n";
    for (int i = 0; i < 3; ++i) {
        const RegimeResult& r = regime_of(report, i);
        os << regime_name(i);
        for (size_t pad = std::strlen(regime_name(i)); pad < 22; ++pad) os << ' ';
        os.width(9);
        os << 100.0 * r.precision;
        os.width(9);
        os << 100.0 * r.recall;
        os.width(9);
        os << 100.0 * r.f1;
        os << "\n";
    }
    if (report.velocity_degenerate)
        os << "note: reference velocities are all zero; velocity regime skipped\n";
    if (report.onset.n_ref == 0 && report.onset.n_est == 0)
        os << "note: both sequences are empty; metrics defined as 100\n";
    return os.str();
}

// One line per regime: <label> <regime> <P> <R> <F1> <n_ref> <n_est> <n_matched>
inline std::string format_report_lines(const std::string& label, const EvalReport& report) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(6);
    for (int i = 0; i < 3; ++i) {
        const RegimeResult& r = regime_of(report, i);
        os << label << "\t" << regime_name(i) << "\t" << r.precision << "\t" << r.recall << "\t"
           << r.f1 << "\t" << r.n_ref << "\t" << r.n_est << "\t" << r.n_matched << "\n";
    }
    return os.str();
}

// Dataset aggregation: per-piece averaging by default (each file weighs the
// same), note-pooled as the alternative.
inline EvalReport aggregate_reports(const std::vector<EvalReport>& reports, bool pooled = false) {
    EvalReport out;
    if (reports.empty()) return out;
    for (int i = 0; i < 3; ++i) {
        RegimeResult& dst = regime_of(out, i);
        if (pooled) {
            for (const EvalReport& r : reports) {
                const RegimeResult& src = regime_of(r, i);
                dst.n_ref += src.n_ref;
                dst.n_est += src.n_est;
                dst.n_matched += src.n_matched;
            }
            if (dst.n_ref == 0 && dst.n_est == 0) {
                dst.precision = dst.recall = dst.f1 = 1.0;
            } else {
                dst.precision = dst.n_est > 0 ? static_cast<double>(dst.n_matched) / dst.n_est : 0.0;
                dst.recall = dst.n_ref > 0 ? static_cast<double>(dst.n_matched) / dst.n_ref : 0.0;
                dst.f1 = (dst.precision + dst.recall) > 0.0
                             ? 2.0 * dst.precision * dst.recall / (dst.precision + dst.recall)
                             : 0.0;
            }
        } else {
            for (const EvalReport& r : reports) {
                const RegimeResult& src = regime_of(r, i);
                dst.precision += src.precision / reports.size();
                dst.recall += src.recall / reports.size();
                dst.f1 += src.f1 / reports.size();
                dst.n_ref += src.n_ref;
                dst.n_est += src.n_est;
                dst.n_matched += src.n_matched;
            }
        }
    }
    for (const EvalReport& r : reports) out.velocity_degenerate |= r.velocity_degenerate;
    return out;
}

} // namespace amt
