#pragma once

// End-to-end inference: audio -> resample -> 20 s segments -> CQT -> model
// -> concatenated output planes -> note extraction -> boundary merge.

#include "amt/audio.hpp"
#include "amt/cqt.hpp"
#include "amt/labels.hpp"
#include "amt/models.hpp"
#include "amt/train.hpp"

#include <vector>

namespace amt {

// Notes that straddle a segment boundary decode as two pieces: the first
// segment closes the note at its last frame, the second re-detects nothing
// (no onset) or a spurious continuation. Same-pitch fragments separated by
// less than two frames around a boundary are merged back together.
inline void merge_boundary_notes(NoteSequence& seq, double segment_seconds,
                                 double frame_period) {
    const double tol = 2.0 * frame_period;
    std::vector<NoteEvent>& notes = seq.notes;
    seq.sort_notes();
    for (size_t i = 0; i < notes.size(); ++i) {
        for (size_t j = i + 1; j < notes.size();) {
            if (notes[j].pitch != notes[i].pitch) {
                ++j;
                continue;
            }
            const double gap = notes[j].onset - notes[i].offset;
            if (gap > tol) break; // sorted by onset: later notes only get farther
            const double boundary =
                std::round(notes[i].offset / segment_seconds) * segment_seconds;
            const bool at_boundary = std::abs(notes[i].offset - boundary) <= tol &&
                                     boundary > 0.0 && gap >= 0.0;
            if (at_boundary) {
                notes[i].offset = notes[j].offset;
                notes.erase(notes.begin() + static_cast<std::ptrdiff_t>(j));
            } else {
                ++j;
            }
        }
    }
    seq.sort_notes();
}

template <class S>
NoteSequence transcribe(const AudioClip& audio, TranscriptionModel<S>& model,
                        const DecodeThresholds& thresholds = {}, const CqtConfig& cqt_cfg = {},
                        double segment_seconds = 20.0) {
    AudioClip clip = audio.sample_rate == cqt_cfg.sample_rate
                         ? audio
                         : resample(audio, cqt_cfg.sample_rate);
    const int total_frames =
        static_cast<int>((clip.samples.size() + cqt_cfg.hop - 1) / cqt_cfg.hop);
    if (total_frames == 0) return {};

    const CqtTransform transform(cqt_cfg);
    const std::vector<std::pair<AudioClip, NoteSequence>> pieces =
        segment(clip, NoteSequence{}, segment_seconds);

    ModelPlanes<S> planes;
    planes.on = Grid<S>(0, kNumPitches);
    auto append = [](Grid<S>& dst, const Grid<S>& src) {
        dst.cols = src.cols;
        dst.rows += src.rows;
        dst.v.insert(dst.v.end(), src.v.begin(), src.v.end());
    };
    for (const auto& [piece, unused] : pieces) {
        Spectrogram spec = transform(piece);
        nn::Tensor<S> x = Trainer<S>::spectrogram_tensor(spec.values);
        OutputTensors<S> out = model.forward(x);
        ModelPlanes<S> p = out.planes();
        append(planes.on, p.on);
        append(planes.off, p.off);
        append(planes.frame, p.frame);
        append(planes.vel, p.vel);
    }

    // drop frames that only exist because of zero padding
    auto trim = [total_frames](Grid<S>& g) {
        g.rows = total_frames;
        g.v.resize(static_cast<size_t>(total_frames) * g.cols);
    };
    trim(planes.on);
    trim(planes.off);
    trim(planes.frame);
    trim(planes.vel);

    const FrameGrid grid{cqt_cfg.frame_period(), total_frames};
    NoteSequence notes = extract_notes(planes, thresholds, grid);
    merge_boundary_notes(notes, segment_seconds, grid.frame_period);
    return notes;
}

} // namespace amt
