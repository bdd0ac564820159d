#pragma once

// Shared primitives: error types, the dense T-by-K grid used for
// spectrograms / target planes, and little-endian binary I/O helpers.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace amt {

// Every failure carries a short machine-readable code ("wav.truncated",
// "midi.bad_header", ...) next to the human-readable message. The CLI maps
// codes to exit codes; tests match on them.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& msg)
        : std::runtime_error(code + ": " + msg), code_(std::move(code)) {}
    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

// Malformed or inconsistent input data (files, shapes, configs).
class DataError : public Error {
public:
    using Error::Error;
};

// NaN/Inf or other numeric breakdown. Always a hard error.
class NumericError : public Error {
public:
    using Error::Error;
};

inline void require(bool cond, const std::string& code, const std::string& msg) {
    if (!cond) throw DataError(code, msg);
}

// Dense row-major rows x cols grid. Rows index time frames, columns index
// frequency bins or pitch lanes depending on the producer.
template <class S>
struct Grid {
    int rows = 0;
    int cols = 0;
    std::vector<S> v;

    Grid() = default;
    Grid(int r, int c, S fill = S(0)) : rows(r), cols(c), v(static_cast<size_t>(r) * c, fill) {}

    S& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
    const S& at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
    S* row(int r) { return v.data() + static_cast<size_t>(r) * cols; }
    const S* row(int r) const { return v.data() + static_cast<size_t>(r) * cols; }
    size_t size() const { return v.size(); }
    bool same_shape(const Grid& o) const { return rows == o.rows && cols == o.cols; }

    template <class U>
    Grid<U> cast() const {
        Grid<U> out(rows, cols);
        for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
        return out;
    }
};

template <class S>
inline bool all_finite(const std::vector<S>& v) {
    for (const S& x : v)
        if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
}

namespace io {

// All on-disk formats are little-endian. The host is assumed little-endian
// (checked once at stream open).
inline void check_little_endian() {
    const uint32_t probe = 1;
    uint8_t b;
    std::memcpy(&b, &probe, 1);
    require(b == 1, "io.big_endian_host", "big-endian hosts are not supported");
}

template <class T>
void write_raw(std::ostream& os, const T& x) {
    os.write(reinterpret_cast<const char*>(&x), sizeof(T));
}

template <class T>
T read_raw(std::istream& is, const std::string& code) {
    T x{};
    is.read(reinterpret_cast<char*>(&x), sizeof(T));
    require(is.gcount() == sizeof(T), code, "unexpected end of stream");
    return x;
}

inline std::ofstream open_out(const std::string& path) {
    check_little_endian();
    std::ofstream os(path, std::ios::binary);
    require(os.good(), "io.unwritable", "cannot open for writing: " + path);
    return os;
}

inline std::ifstream open_in(const std::string& path) {
    check_little_endian();
    std::ifstream is(path, std::ios::binary);
    require(is.good(), "io.unreadable", "cannot open for reading: " + path);
    return is;
}

inline std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream is = open_in(path);
    is.seekg(0, std::ios::end);
    std::streamoff n = is.tellg();
    is.seekg(0, std::ios::beg);
    std::vector<uint8_t> bytes(static_cast<size_t>(n));
    if (n > 0) is.read(reinterpret_cast<char*>(bytes.data()), n);
    require(is.gcount() == n, "io.short_read", "short read: " + path);
    return bytes;
}

} // namespace io
} // namespace amt
