#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "polyaudit/common.hpp"

namespace polyaudit {

// All randomness flows through RngStream.  Streams are keyed by a root seed
// plus small integer tags, so any entity (polyp, frame, fold, probe) can be
// re-derived in isolation and results never depend on evaluation order.
//
// The samplers below are written out explicitly instead of using the
// std::*_distribution classes because the standard leaves those
// implementation-defined; with a fixed engine (mt19937_64, fully specified)
// and fixed sampler algorithms, identical seeds give identical datasets.

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}
}  // namespace detail

class RngStream {
  public:
    explicit RngStream(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform01() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform01();
    }

    // Unbiased integer in [0, n) by rejection.
    std::uint64_t uniform_index(std::uint64_t n) {
        require_config(n > 0, "uniform_index requires n > 0");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v = engine_();
        while (v >= limit) v = engine_();
        return v % n;
    }

    // Box-Muller.  The sine twin is discarded to keep the stream state a
    // pure function of the number of calls.
    double normal() {
        double u1 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return r * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    double normal(double mu, double sigma) { return mu + sigma * normal(); }

    double lognormal(double mu, double sigma) {
        return std::exp(normal(mu, sigma));
    }

    // log(x) uniform over [log lo, log hi].
    double loguniform(double lo, double hi) {
        require_config(lo > 0.0 && hi >= lo, "loguniform requires 0 < lo <= hi");
        return std::exp(uniform(std::log(lo), std::log(hi)));
    }

    // Fisher-Yates with the stream's own index sampler (std::shuffle is
    // implementation-defined and would break cross-run reproducibility).
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(uniform_index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::mt19937_64 engine_;
};

// Derives a child stream from a root seed and up to three tag integers.
inline RngStream make_stream(std::uint64_t seed, std::uint64_t a,
                             std::uint64_t b = 0, std::uint64_t c = 0) {
    using detail::splitmix64;
    std::uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ a);
    h = splitmix64(h ^ b);
    h = splitmix64(h ^ c);
    return RngStream(h);
}

// Stable tag values for stream derivation.  Listed in one place so that two
// call sites can never collide by accident.
namespace stream_tag {
inline constexpr std::uint64_t kCohort = 0x01;
inline constexpr std::uint64_t kPolyp = 0x02;
inline constexpr std::uint64_t kMask = 0x03;
inline constexpr std::uint64_t kFolds = 0x04;
inline constexpr std::uint64_t kTrain = 0x05;
inline constexpr std::uint64_t kScale = 0x06;
}  // namespace stream_tag

}  // namespace polyaudit
