#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace dcoral {

// Seeded random source with fully specified transforms, so a seed produces the
// same sequence on every conforming platform. std::mt19937_64 is pinned by the
// standard; the distributions in <random> are not, hence the hand-written ones.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Uniform integer in [0, n), rejection sampling without modulo bias.
    std::uint64_t below(std::uint64_t n);

    // Standard normal via the Box-Muller transform. Both outputs of each
    // transform are used; the spare is cached.
    double normal();

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Fisher-Yates, driven by below().
    template <typename T>
    void shuffle(std::span<T> values) {
        for (std::size_t i = values.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(values[i - 1], values[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// SplitMix64 finalizer, used to derive independent stream seeds from one seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) noexcept;

}  // namespace dcoral
