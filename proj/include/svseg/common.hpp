#pragma once
// Shared plumbing: error types, deterministic RNG, little-endian byte
// buffers with CRC32 framing, atomic file writes and a small parallel_for.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace svseg {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// File could not be opened, read or written.
class IoError : public Error {
public:
    using Error::Error;
};

/// Malformed on-disk artifact: wrong magic, version, checksum or truncation.
class FormatError : public Error {
public:
    using Error::Error;
};

/// A caller-side precondition was violated; the message names it.
class PreconditionError : public Error {
public:
    using Error::Error;
};

class DimensionMismatchError : public PreconditionError {
public:
    using PreconditionError::PreconditionError;
};

/// Feature layout of a model and a feature matrix disagree.
class LayoutMismatchError : public PreconditionError {
public:
    using PreconditionError::PreconditionError;
};

/// Training data contains only one class.
class SingleClassError : public PreconditionError {
public:
    using PreconditionError::PreconditionError;
};

void warn(std::string_view message);

// ---------------------------------------------------------------------------
// Random numbers
// ---------------------------------------------------------------------------

/// splitmix64 finalizer; used to derive independent sub-seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0) {
    return mix_seed(mix_seed(mix_seed(master) ^ (a + 0x632BE59BD9B4E019ull)) ^ (b + 0x8CB92BA72F3D8DD7ull));
}

/// Platform-independent generator: mt19937_64 output (fully specified by the
/// standard) mapped to ranges without the implementation-defined std
/// distributions.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(mix_seed(seed)) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, n). n must be > 0.
    std::uint64_t uniform_index(std::uint64_t n) {
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t v;
        do {
            v = engine_();
        } while (v >= limit);
        return v % n;
    }

    /// Uniform integer in [lo, hi].
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        return lo + static_cast<std::int64_t>(uniform_index(static_cast<std::uint64_t>(hi - lo) + 1));
    }

    /// Uniform real in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double log_uniform(double lo, double hi);

    double normal();

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[uniform_index(i)]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// Parallelism
// ---------------------------------------------------------------------------

/// Worker count: SVSEG_THREADS if set, else hardware concurrency.
unsigned worker_count();

/// Runs body(i) for i in [0, n). Each index must write only its own output;
/// results are then independent of scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

// ---------------------------------------------------------------------------
// Binary framing
// ---------------------------------------------------------------------------

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

/// 64-bit FNV-1a, used for feature layout fingerprints.
std::uint64_t fnv1a64(std::string_view text);

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f32(float v);
    void f64(double v);
    void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
    void str(std::string_view s);
    void magic(std::string_view four_cc);

    /// Appends CRC32 of everything written so far.
    void seal();

    const std::vector<std::uint8_t>& data() const { return buf_; }
    std::vector<std::uint8_t> take() { return std::move(buf_); }

private:
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

    std::uint8_t u8();
    std::uint32_t u32();
    std::uint64_t u64();
    float f32();
    double f64();
    std::string str();
    std::span<const std::uint8_t> bytes(std::size_t n);

    /// Throws FormatError unless the first four bytes equal four_cc.
    void expect_magic(std::string_view four_cc, std::string_view what);

    std::size_t remaining() const { return data_.size() - pos_; }

private:
    void need(std::size_t n) const;

    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

/// Validates a trailing CRC32 and returns the payload span without it.
std::span<const std::uint8_t> verify_sealed(std::span<const std::uint8_t> data, std::string_view what);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

/// Write to a temporary sibling then rename over the destination.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);

std::string read_file_text(const std::filesystem::path& path);

}  // namespace svseg
