#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace ckd {

/// Deterministic random stream. All randomness in the project flows from a
/// single root seed, split per subsystem via child("label"). Uniform/normal
/// mappings are hand-rolled on top of the (standard-specified) mt19937_64
/// output so results are identical across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(mix(seed ^ 0x9e3779b97f4a7c15ull)), seed_(seed) {}

    /// Derive an independent stream keyed by a fixed label.
    Rng child(std::string_view label) const {
        std::uint64_t h = 1469598103934665603ull; // FNV-1a
        for (char c : label) {
            h ^= static_cast<unsigned char>(c);
            h *= 1099511628211ull;
        }
        return Rng(mix(seed_ ^ mix(h)));
    }

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Unbiased integer in [0, n).
    std::uint64_t uniform_int(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t u;
        do {
            u = next_u64();
        } while (u >= limit);
        return u % n;
    }

    /// Standard normal via Box-Muller (pairs cached).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    // splitmix64 finalizer, used for seeding and label mixing.
    static std::uint64_t mix(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ull;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

    std::mt19937_64 gen_;
    std::uint64_t seed_ = 0;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace ckd
