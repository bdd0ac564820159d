#pragma once

// Piano-roll rendering to a binary PPM (P6). Fixed scale: 100 px per second
// horizontally, one row per pitch (88 rows, pitch 21 at row 0). Brightness
// encodes velocity; later-onset notes paint over earlier ones.

#include "amt/common.hpp"
#include "amt/midi.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace amt {

struct Image {
    int width = 0, height = 0;
    std::vector<uint8_t> rgb; // 3 bytes per pixel, row-major

    uint8_t* pixel(int x, int y) { return rgb.data() + 3 * (static_cast<size_t>(y) * width + x); }
    const uint8_t* pixel(int x, int y) const {
        return rgb.data() + 3 * (static_cast<size_t>(y) * width + x);
    }
};

constexpr int kPianorollPxPerSecond = 100;

inline Image render_pianoroll(const NoteSequence& seq) {
    seq.validate();
    Image img;
    img.height = kNumPitches;
    img.width = std::max(1, static_cast<int>(std::ceil(seq.span() * kPianorollPxPerSecond)));
    img.rgb.assign(static_cast<size_t>(img.width) * img.height * 3, 0);

    std::vector<NoteEvent> sorted = seq.notes;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const NoteEvent& a, const NoteEvent& b) { return a.onset < b.onset; });
    for (const NoteEvent& n : sorted) {
        const int row = n.pitch - kPitchMin;
        const int x0 = static_cast<int>(std::floor(n.onset * kPianorollPxPerSecond));
        const int x1 = std::min(
            img.width, std::max(x0 + 1, static_cast<int>(std::lround(
                                            n.offset * kPianorollPxPerSecond))));
        const uint8_t level = static_cast<uint8_t>(std::lround(n.velocity * 255.0 / 127.0));
        for (int x = x0; x < x1; ++x) {
            uint8_t* px = img.pixel(x, row);
            px[0] = px[1] = px[2] = level;
        }
    }
    return img;
}

inline void write_ppm(const Image& img, const std::string& path) {
    std::ofstream os = io::open_out(path);
    os << "P6\n" << img.width << " " << img.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.rgb.data()),
             static_cast<std::streamsize>(img.rgb.size()));
    require(os.good(), "io.unwritable", "write failed: " + path);
}

} // namespace amt
