#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

namespace trusttune {

// 64-bit FNV-1a. Used for content hashes of checkpoints/CSV artifacts and for
// deriving named RNG stream seeds. Stable across platforms and releases.
class Fnv1a64 {
public:
    static constexpr std::uint64_t kOffset = 1469598103934665603ULL;
    static constexpr std::uint64_t kPrime = 1099511628211ULL;

    void update(const void* data, std::size_t len) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < len; ++i) {
            state_ ^= static_cast<std::uint64_t>(p[i]);
            state_ *= kPrime;
        }
    }
    void update(std::string_view s) { update(s.data(), s.size()); }
    void update_u64(std::uint64_t v) {
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
        update(b, 8);
    }
    // Doubles are hashed by their little-endian bit pattern.
    void update_f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        update_u64(bits);
    }
    void update_f64(const std::vector<double>& v) {
        for (double x : v) update_f64(x);
    }

    std::uint64_t digest() const { return state_; }

private:
    std::uint64_t state_ = kOffset;
};

inline std::uint64_t fnv1a64(std::string_view s) {
    Fnv1a64 h;
    h.update(s);
    return h.digest();
}

std::string to_hex(std::uint64_t v);

// Seed for a named RNG stream: hash(master_seed, stream_name).
inline std::uint64_t stream_seed(std::uint64_t master_seed, std::string_view stream_name) {
    Fnv1a64 h;
    h.update_u64(master_seed);
    h.update(stream_name);
    return h.digest();
}

}  // namespace trusttune
