#ifndef KINFIT_RNG_HPP
#define KINFIT_RNG_HPP

#include <cstdint>

namespace kinfit {

/// SplitMix64 step. Used to derive independent sub-stream seeds from a
/// master seed so that per-pixel / per-realization results do not depend
/// on evaluation order.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Deterministic seed for stream (a, b) under a master seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0) {
    std::uint64_t s = master;
    std::uint64_t h = splitmix64(s);
    s ^= a + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    h = splitmix64(s);
    s ^= b + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    return splitmix64(s);
}

/// Minimal xorshift-based generator with a portable uniform(0,1) mapping.
/// Used where bitwise reproducibility of the stream matters (initial
/// guesses); heavier distributions go through <random>.
class SplitMix {
public:
    explicit SplitMix(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() { return splitmix64(state_); }

    /// Uniform double in (0, 1): 53 mantissa bits, never exactly 0 or 1.
    double next_uniform01() {
        const std::uint64_t bits = next_u64() >> 11;  // 53 bits
        double u = static_cast<double>(bits) * 0x1.0p-53;
        if (u <= 0.0) u = 0x1.0p-53;
        return u;
    }

private:
    std::uint64_t state_;
};

}  // namespace kinfit

#endif
