#ifndef FMK_RNG_HPP
#define FMK_RNG_HPP

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace fmk {

// splitmix64 stream (Vigna's reference algorithm). Chosen over std engines
// because the output sequence is fully pinned by the algorithm itself, so
// every derived artifact is bit-reproducible across platforms and standard
// library implementations.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // [0,1) from the top 53 bits of one output.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Standard normal via Box-Muller; one fresh draw per call, no cached spare.
    double gaussian() {
        const double u1 = 1.0 - next_double(); // (0,1], keeps log finite
        const double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    // [0,n). Modulo bias is irrelevant at the n used here and keeps the
    // draw count per call fixed, which matters for reproducibility.
    std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Deterministic derived seed for substream `salt` of stream `seed`.
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t salt) {
        SplitMix64 s(seed ^ (salt * 0xD1B54A32D192ED03ULL));
        return s.next_u64();
    }

private:
    std::uint64_t state_;
};

} // namespace fmk

#endif
