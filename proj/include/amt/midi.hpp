#pragma once

// Standard MIDI File reader/writer specialized to piano note events.
// The reader accepts format 0/1, resolves tempo changes, pairs note-on with
// note-off (or note-on velocity 0), and ignores sustain-pedal messages.
// The writer emits a fixed-tempo single-track format 0 file.

#include "amt/common.hpp"

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

namespace amt {

constexpr int kPitchMin = 21;  // A0
constexpr int kPitchMax = 108; // C8
constexpr int kNumPitches = 88;

struct NoteEvent {
    int pitch = 0;       // MIDI note number, 21..108
    double onset = 0.0;  // seconds
    double offset = 0.0; // seconds, > onset
    int velocity = 0;    // 0..127

    bool operator==(const NoteEvent&) const = default;
};

struct TempoChange {
    int64_t tick = 0;
    int64_t usec_per_quarter = 500000;
};

struct NoteSequence {
    std::vector<NoteEvent> notes; // sorted by (onset, pitch)
    int ticks_per_quarter = 480;
    std::vector<TempoChange> tempo_map;
    bool had_unterminated = false; // reader auto-closed a hanging note-on

    void sort_notes() {
        std::stable_sort(notes.begin(), notes.end(), [](const NoteEvent& a, const NoteEvent& b) {
            if (a.onset != b.onset) return a.onset < b.onset;
            return a.pitch < b.pitch;
        });
    }

    void validate() const {
        for (const NoteEvent& n : notes) {
            require(n.offset > n.onset, "notes.bad_span", "note offset must exceed onset");
            require(n.pitch >= kPitchMin && n.pitch <= kPitchMax, "notes.bad_pitch",
                    "pitch outside 88-key range");
            require(n.velocity >= 0 && n.velocity <= 127, "notes.bad_velocity",
                    "velocity outside [0,127]");
            require(n.onset >= 0.0, "notes.bad_span", "negative onset");
        }
    }

    double span() const {
        double end = 0.0;
        for (const NoteEvent& n : notes) end = std::max(end, n.offset);
        return end;
    }
};

namespace detail {

class ByteReader {
public:
    ByteReader(const uint8_t* p, size_t n) : p_(p), n_(n) {}
    size_t pos() const { return i_; }
    size_t remaining() const { return n_ - i_; }
    bool done() const { return i_ >= n_; }

    uint8_t u8() {
        require(i_ < n_, "midi.truncated", "unexpected end of data");
        return p_[i_++];
    }
    uint8_t peek() const {
        require(i_ < n_, "midi.truncated", "unexpected end of data");
        return p_[i_];
    }
    uint16_t u16() { return static_cast<uint16_t>((u8() << 8) | u8()); }
    uint32_t u32() {
        uint32_t x = 0;
        for (int k = 0; k < 4; ++k) x = (x << 8) | u8();
        return x;
    }
    uint32_t varint() {
        uint32_t x = 0;
        for (int k = 0; k < 4; ++k) {
            uint8_t b = u8();
            x = (x << 7) | (b & 0x7F);
            if (!(b & 0x80)) return x;
        }
        throw DataError("midi.bad_varint", "variable-length quantity longer than 4 bytes");
    }
    void skip(size_t n) {
        require(i_ + n <= n_, "midi.truncated", "chunk extends past end of data");
        i_ += n;
    }

private:
    const uint8_t* p_;
    size_t n_;
    size_t i_ = 0;
};

struct RawNoteEvent {
    int64_t tick;
    int seq;       // global arrival order, stabilizes same-tick handling
    uint8_t channel;
    uint8_t pitch;
    uint8_t velocity;
    bool is_on;
};

inline double ticks_to_seconds(int64_t tick, const std::vector<TempoChange>& tempo, int tpq) {
    double sec = 0.0;
    int64_t t_prev = 0;
    int64_t usec = 500000;
    for (const TempoChange& c : tempo) {
        if (c.tick >= tick) break;
        sec += static_cast<double>(c.tick - t_prev) * usec / (1e6 * tpq);
        t_prev = c.tick;
        usec = c.usec_per_quarter;
    }
    sec += static_cast<double>(tick - t_prev) * usec / (1e6 * tpq);
    return sec;
}

} // namespace detail

inline NoteSequence parse_midi(const uint8_t* bytes, size_t len) {
    detail::ByteReader r(bytes, len);

    char magic[4];
    for (auto& c : magic) c = static_cast<char>(r.u8());
    require(std::memcmp(magic, "MThd", 4) == 0, "midi.bad_header", "missing MThd chunk");
    const uint32_t hdr_len = r.u32();
    require(hdr_len >= 6, "midi.bad_header", "header chunk too short");
    const uint16_t format = r.u16();
    const uint16_t n_tracks = r.u16();
    const uint16_t division = r.u16();
    r.skip(hdr_len - 6);
    require(format == 0 || format == 1, "midi.bad_header",
            "unsupported SMF format " + std::to_string(format));
    require(!(division & 0x8000), "midi.bad_header", "SMPTE time division not supported");
    require(division > 0, "midi.bad_header", "zero ticks per quarter");

    std::vector<detail::RawNoteEvent> raw;
    std::vector<TempoChange> tempo;
    int seq_counter = 0;
    bool unterminated = false;

    for (uint16_t trk = 0; trk < n_tracks && !r.done(); ++trk) {
        for (auto& c : magic) c = static_cast<char>(r.u8());
        require(std::memcmp(magic, "MTrk", 4) == 0, "midi.bad_header", "missing MTrk chunk");
        const uint32_t trk_len = r.u32();
        require(trk_len <= r.remaining(), "midi.truncated", "track length past end of file");
        const size_t trk_end = r.pos() + trk_len;

        int64_t tick = 0;
        int running_status = -1;
        // open note per (channel, pitch); holds index into raw[]
        std::vector<int> open(16 * 128, -1);

        while (r.pos() < trk_end) {
            tick += r.varint();
            uint8_t status = r.peek();
            if (status & 0x80) {
                r.u8();
                if (status < 0xF0) running_status = status;
            } else {
                require(running_status >= 0, "midi.running_status",
                        "data byte with no running status");
                status = static_cast<uint8_t>(running_status);
            }

            if (status == 0xFF) { // meta
                const uint8_t type = r.u8();
                const uint32_t mlen = r.varint();
                if (type == 0x51 && mlen == 3) {
                    int64_t usec = (static_cast<int64_t>(r.u8()) << 16);
                    usec |= (static_cast<int64_t>(r.u8()) << 8);
                    usec |= r.u8();
                    if (usec > 0) tempo.push_back({tick, usec});
                } else {
                    r.skip(mlen);
                }
                running_status = -1;
            } else if (status == 0xF0 || status == 0xF7) { // sysex
                r.skip(r.varint());
                running_status = -1;
            } else {
                const uint8_t kind = status & 0xF0;
                const uint8_t channel = status & 0x0F;
                require(kind >= 0x80, "midi.bad_event", "unexpected status byte");
                const int n_data = (kind == 0xC0 || kind == 0xD0) ? 1 : 2;
                const uint8_t d0 = r.u8() & 0x7F;
                const uint8_t d1 = (n_data == 2) ? (r.u8() & 0x7F) : 0;

                if (kind == 0x90 || kind == 0x80) {
                    const bool is_on = (kind == 0x90) && d1 > 0;
                    const int slot = channel * 128 + d0;
                    if (is_on) {
                        if (open[slot] >= 0) {
                            // overlapping same-pitch note: truncate the earlier
                            // one at this onset
                            raw.push_back({tick, seq_counter++, channel, d0, 0, false});
                        }
                        raw.push_back({tick, seq_counter++, channel, d0, d1, true});
                        open[slot] = 1;
                    } else if (open[slot] >= 0) {
                        raw.push_back({tick, seq_counter++, channel, d0, d1, false});
                        open[slot] = -1;
                    }
                    // note-off with nothing open is dropped
                }
                // CC64 (sustain) and all other channel messages are ignored
            }
        }
        require(r.pos() == trk_end, "midi.truncated", "event ran past declared track length");

        for (int slot = 0; slot < 16 * 128; ++slot) {
            if (open[slot] >= 0) {
                raw.push_back({tick, seq_counter++,
                               static_cast<uint8_t>(slot / 128),
                               static_cast<uint8_t>(slot % 128), 0, false});
                unterminated = true;
            }
        }
    }

    std::sort(tempo.begin(), tempo.end(), [](const TempoChange& a, const TempoChange& b) {
        return a.tick < b.tick;
    });

    // pair up raw events; the truncation logic above guarantees at most one
    // open note per (channel, pitch)
    std::stable_sort(raw.begin(), raw.end(),
                     [](const detail::RawNoteEvent& a, const detail::RawNoteEvent& b) {
                         if (a.tick != b.tick) return a.tick < b.tick;
                         return a.seq < b.seq;
                     });

    NoteSequence out;
    out.ticks_per_quarter = division;
    out.tempo_map = tempo;
    out.had_unterminated = unterminated;

    struct Open {
        int64_t tick;
        uint8_t velocity;
    };
    std::vector<Open> open(16 * 128, {-1, 0});
    std::vector<bool> is_open(16 * 128, false);
    for (const detail::RawNoteEvent& e : raw) {
        const int slot = e.channel * 128 + e.pitch;
        if (e.is_on) {
            open[slot] = {e.tick, e.velocity};
            is_open[slot] = true;
        } else if (is_open[slot]) {
            is_open[slot] = false;
            if (e.pitch < kPitchMin || e.pitch > kPitchMax) continue; // outside 88 keys
            NoteEvent n;
            n.pitch = e.pitch;
            n.velocity = open[slot].velocity;
            n.onset = detail::ticks_to_seconds(open[slot].tick, tempo, division);
            n.offset = detail::ticks_to_seconds(e.tick, tempo, division);
            if (n.offset > n.onset) out.notes.push_back(n);
        }
    }
    out.sort_notes();
    return out;
}

inline NoteSequence parse_midi(const std::vector<uint8_t>& bytes) {
    return parse_midi(bytes.data(), bytes.size());
}

inline NoteSequence parse_midi_file(const std::string& path) {
    return parse_midi(io::read_file(path));
}

// Serializer: format 0, 480 ticks per quarter, fixed tempo 500000 us/quarter
// (960 ticks per second), so round-tripped times stay within half a tick.
inline std::vector<uint8_t> write_midi_bytes(const NoteSequence& seq) {
    seq.validate();
    constexpr int tpq = 480;
    constexpr double ticks_per_second = tpq * 1e6 / 500000.0;

    struct WireEvent {
        int64_t tick;
        int order; // note-offs sort before note-ons at the same tick
        uint8_t status, d0, d1;
    };
    std::vector<WireEvent> events;
    events.reserve(seq.notes.size() * 2);
    for (const NoteEvent& n : seq.notes) {
        const int64_t on = std::llround(n.onset * ticks_per_second);
        const int64_t off = std::llround(n.offset * ticks_per_second);
        require(on <= 0x0FFFFFFF && off <= 0x0FFFFFFF, "midi.tick_overflow",
                "note time exceeds representable tick range");
        events.push_back({on, 1, 0x90, static_cast<uint8_t>(n.pitch),
                          static_cast<uint8_t>(n.velocity)});
        events.push_back({off, 0, 0x80, static_cast<uint8_t>(n.pitch), 0});
    }
    std::stable_sort(events.begin(), events.end(), [](const WireEvent& a, const WireEvent& b) {
        if (a.tick != b.tick) return a.tick < b.tick;
        if (a.order != b.order) return a.order < b.order;
        return a.d0 < b.d0;
    });

    std::vector<uint8_t> track;
    auto put_varint = [&track](int64_t v) {
        uint8_t buf[4];
        int n = 0;
        do {
            buf[n++] = static_cast<uint8_t>(v & 0x7F);
            v >>= 7;
        } while (v > 0);
        for (int i = n - 1; i >= 0; --i) track.push_back(i == 0 ? buf[0] : (buf[i] | 0x80));
    };

    // tempo meta at tick 0
    track.insert(track.end(), {0x00, 0xFF, 0x51, 0x03, 0x07, 0xA1, 0x20});
    int64_t prev = 0;
    for (const WireEvent& e : events) {
        put_varint(e.tick - prev);
        prev = e.tick;
        track.push_back(e.status);
        track.push_back(e.d0);
        track.push_back(e.d1);
    }
    track.insert(track.end(), {0x00, 0xFF, 0x2F, 0x00}); // end of track

    std::vector<uint8_t> out;
    auto put_u32 = [&out](uint32_t v) {
        out.push_back(static_cast<uint8_t>(v >> 24));
        out.push_back(static_cast<uint8_t>(v >> 16));
        out.push_back(static_cast<uint8_t>(v >> 8));
        out.push_back(static_cast<uint8_t>(v));
    };
    out.insert(out.end(), {'M', 'T', 'h', 'd'});
    put_u32(6);
    out.insert(out.end(), {0x00, 0x00, 0x00, 0x01}); // format 0, one track
    out.push_back(static_cast<uint8_t>(tpq >> 8));
    out.push_back(static_cast<uint8_t>(tpq & 0xFF));
    out.insert(out.end(), {'M', 'T', 'r', 'k'});
    put_u32(static_cast<uint32_t>(track.size()));
    out.insert(out.end(), track.begin(), track.end());
    return out;
}

inline void write_midi(const NoteSequence& seq, const std::string& path) {
    const std::vector<uint8_t> bytes = write_midi_bytes(seq);
    std::ofstream os = io::open_out(path);
    os.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
    require(os.good(), "io.unwritable", "write failed: " + path);
}

} // namespace amt
