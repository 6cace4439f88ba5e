#pragma once

#include <cstdint>
#include <cmath>
#include <stdexcept>
#include <string>

namespace robox {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Incompatible tensor/mask/box dimensions.
struct ShapeError : Error {
    using Error::Error;
};

/// Invalid parameter value (out of the documented range).
struct ParamError : Error {
    using Error::Error;
};

/// Operation requires a non-empty target mask.
struct EmptyTargetError : Error {
    using Error::Error;
};

/// File read/write failure.
struct IoError : Error {
    using Error::Error;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace detail

/// Deterministic pseudo-random stream. The generator and the
/// uniform/normal mappings are fixed by this library, so identical seeds
/// give identical streams on every platform and standard library.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(detail::splitmix64(seed ^ 0x8f1bbcdcbfa53e0bULL)) {}

    std::uint64_t next_u64() {
        state_ = detail::splitmix64(state_);
        return state_;
    }

    /// Uniform double in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t uniform_index(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

    /// Standard normal via Box-Muller.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Derive an independent child stream keyed by up to three tags.
    /// Children with distinct tags are decorrelated from each other and
    /// from the parent, and are reproducible from (seed, tags).
    Rng child(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) const {
        std::uint64_t h = state_;
        h = detail::splitmix64(h ^ detail::splitmix64(a ^ 0xa0761d6478bd642fULL));
        h = detail::splitmix64(h ^ detail::splitmix64(b ^ 0xe7037ed1a0b428dbULL));
        h = detail::splitmix64(h ^ detail::splitmix64(c ^ 0x8ebc6af09c88c6e3ULL));
        Rng r(0);
        r.state_ = h;
        return r;
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace robox
