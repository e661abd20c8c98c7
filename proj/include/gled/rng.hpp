#pragma once

#include <cmath>
#include <cstdint>

namespace gled {

/// Counter-based generator: output j of stream (seed, stream) is a pure
/// function of (seed, stream, j). Every stochastic stage owns its stream,
/// which makes runs replayable regardless of call interleaving.
class CounterRng {
public:
    explicit CounterRng(uint64_t seed, uint64_t stream = 0)
        : key_(mix(seed + kGamma) ^ mix(stream * 0xD1B54A32D192ED03ull + kGamma)) {}

    uint64_t next_u64() { return mix(key_ + kGamma * ++counter_); }

    /// Uniform draw in (0,1]; never returns 0, safe under log().
    double uniform01() {
        return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller; the paired draw is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform01();
        double u2 = uniform01();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * 3.141592653589793238462643383279502884 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    template <class T>
    void fill_normal(T* out, long n) {
        for (long i = 0; i < n; ++i) out[i] = static_cast<T>(normal());
    }

private:
    static constexpr uint64_t kGamma = 0x9E3779B97F4A7C15ull;

    static uint64_t mix(uint64_t z) {
        z ^= z >> 30;
        z *= 0xBF58476D1CE4E5B9ull;
        z ^= z >> 27;
        z *= 0x94D049BB133111EBull;
        z ^= z >> 31;
        return z;
    }

    uint64_t key_;
    uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace gled
