#pragma once

// Shared plumbing: error type, FNV-1a hashing, little-endian IO helpers.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace steer {

inline constexpr std::string_view kToolVersion = "0.1.0";

enum class ErrorKind {
    io_missing,         // file does not exist / cannot be opened
    bad_magic,          // wrong file magic
    bad_version,        // unsupported format version
    corrupt_payload,    // checksum failure or truncated payload
    shape_mismatch,     // tensor shape inconsistent with declared config
    model_mismatch,     // artifact bound to a different model_id
    dimension_mismatch, // operation contract violation (incompatible sizes)
    sequence_overflow,  // sequence longer than model max_seq
    invalid_argument,   // bad user input: unknown id, malformed line, bad flag combo
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

// Exit-code mapping for the CLI: validation problems are the caller's fault.
inline bool is_validation_error(ErrorKind k) noexcept {
    switch (k) {
        case ErrorKind::io_missing:
        case ErrorKind::bad_magic:
        case ErrorKind::bad_version:
        case ErrorKind::corrupt_payload:
        case ErrorKind::shape_mismatch:
        case ErrorKind::model_mismatch:
        case ErrorKind::sequence_overflow:
        case ErrorKind::invalid_argument:
            return true;
        case ErrorKind::dimension_mismatch:
            return false;
    }
    return false;
}

// ---------------------------------------------------------------------------
// FNV-1a 64-bit. Used for weight hashes, file checksums and provenance
// fingerprints. Not cryptographic; collision resistance is not a goal here.
// ---------------------------------------------------------------------------

class Fnv1a64 {
public:
    void update(const void* data, size_t n) noexcept {
        const auto* p = static_cast<const unsigned char*>(data);
        for (size_t i = 0; i < n; ++i) {
            state_ ^= p[i];
            state_ *= 0x100000001b3ULL;
        }
    }

    void update(std::string_view s) noexcept { update(s.data(), s.size()); }

    template <typename T>
    void update_pod(const T& v) noexcept {
        static_assert(std::is_trivially_copyable_v<T>);
        update(&v, sizeof(T));
    }

    uint64_t digest() const noexcept { return state_; }

private:
    uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline uint64_t fnv1a64(const void* data, size_t n) noexcept {
    Fnv1a64 h;
    h.update(data, n);
    return h.digest();
}

inline uint64_t fnv1a64(std::string_view s) noexcept { return fnv1a64(s.data(), s.size()); }

inline std::string to_hex(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<size_t>(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Little-endian binary IO. All file formats in this project are LE on disk;
// the helpers below byte-swap on big-endian hosts so formats stay portable.
// ---------------------------------------------------------------------------

namespace detail {

inline bool host_is_little_endian() noexcept {
    const uint32_t probe = 1;
    unsigned char b;
    std::memcpy(&b, &probe, 1);
    return b == 1;
}

}  // namespace detail

template <typename T>
void write_le(std::ostream& os, T value) {
    static_assert(std::is_trivially_copyable_v<T> && sizeof(T) <= 8);
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    if (!detail::host_is_little_endian()) {
        for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
    }
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
bool read_le(std::istream& is, T& value) {
    unsigned char buf[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) return false;
    if (!detail::host_is_little_endian()) {
        for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
    }
    std::memcpy(&value, buf, sizeof(T));
    return true;
}

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
    std::ifstream ifs(path, std::ios::binary);
    if (!ifs) throw Error(ErrorKind::io_missing, "cannot open file: " + path);
    ifs.seekg(0, std::ios::end);
    const auto sz = static_cast<size_t>(ifs.tellg());
    ifs.seekg(0, std::ios::beg);
    std::vector<unsigned char> buf(sz);
    if (sz > 0) ifs.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(sz));
    if (!ifs) throw Error(ErrorKind::corrupt_payload, "short read: " + path);
    return buf;
}

}  // namespace steer
