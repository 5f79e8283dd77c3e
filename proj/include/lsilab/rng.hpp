#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace lsilab {

namespace detail {

// Philox 4x64-10 block cipher (Salmon et al., "Parallel random numbers:
// as easy as 1, 2, 3"). Same constants and round structure as the
// reference implementation, so output is reproducible anywhere.
struct Philox4x64 {
    static constexpr std::uint64_t kMul0 = 0xD2E7470EE14C6C93ULL;
    static constexpr std::uint64_t kMul1 = 0xCA5A826395121157ULL;
    static constexpr std::uint64_t kWeyl0 = 0x9E3779B97F4A7C15ULL;
    static constexpr std::uint64_t kWeyl1 = 0xBB67AE8584CAA73BULL;

    static void round(std::array<std::uint64_t, 4>& ctr,
                      const std::array<std::uint64_t, 2>& key) {
        const unsigned __int128 p0 =
            static_cast<unsigned __int128>(kMul0) * ctr[0];
        const unsigned __int128 p1 =
            static_cast<unsigned __int128>(kMul1) * ctr[2];
        const std::uint64_t lo0 = static_cast<std::uint64_t>(p0);
        const std::uint64_t hi0 = static_cast<std::uint64_t>(p0 >> 64);
        const std::uint64_t lo1 = static_cast<std::uint64_t>(p1);
        const std::uint64_t hi1 = static_cast<std::uint64_t>(p1 >> 64);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }

    static std::array<std::uint64_t, 4> block(
        std::array<std::uint64_t, 4> ctr, std::array<std::uint64_t, 2> key) {
        for (int r = 0; r < 10; ++r) {
            if (r > 0) {
                key[0] += kWeyl0;
                key[1] += kWeyl1;
            }
            round(ctr, key);
        }
        return ctr;
    }
};

// SplitMix64 finalizer, used to derive substream identifiers.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace detail

/// Counter-based random stream. A variate is a pure function of
/// (seed, stream, draw index), so replays are bit-identical no matter how
/// work is scheduled across threads, and forking per-path substreams is
/// free of shared state.
class RngStream {
  public:
    RngStream() : RngStream(0, 0) {}
    RngStream(std::uint64_t seed, std::uint64_t stream)
        : seed_(seed), stream_(stream) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }

    /// Derive an independent stream keyed by `tag`. Forking does not
    /// disturb this stream's own draw position.
    RngStream fork(std::uint64_t tag) const {
        return RngStream(seed_,
                         detail::mix64(stream_ ^ detail::mix64(tag + 1)));
    }

    std::uint64_t next_u64() {
        const std::uint64_t idx = next_index_++;
        const std::uint64_t blk = idx >> 2;
        if (blk != cached_block_ || !cache_valid_) {
            buffer_ = detail::Philox4x64::block({blk, 0, 0, 0}, {seed_, stream_});
            cached_block_ = blk;
            cache_valid_ = true;
        }
        return buffer_[idx & 3];
    }

    /// Uniform draw in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1p-53; }

    /// Exp(1) draw; strictly positive.
    double exponential() { return -std::log1p(-uniform()); }

    /// Standard normal via Box-Muller (two uniforms per draw).
    double normal() {
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log1p(-u1));
        return r * std::cos(6.283185307179586477 * u2);
    }

  private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t next_index_ = 0;
    std::uint64_t cached_block_ = 0;
    bool cache_valid_ = false;
    std::array<std::uint64_t, 4> buffer_{};
};

}  // namespace lsilab
