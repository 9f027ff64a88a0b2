#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace fedmix {

// All randomness in a run flows from one 64-bit seed through named streams.
// A stream key mixes the seed with a tag ("init", "partition", "sample",
// "batch", ...) and up to three integer indices (round, shard, epoch), so any
// subsystem can be re-created in isolation and parallel client execution
// cannot reorder draws.
//
// The engine is std::mt19937_64 (bit-exact by the standard). The standard
// *distributions* are not portable across library implementations, so the
// transforms below are hand-rolled.
class RngStream {
public:
    explicit RngStream(uint64_t key) : eng_(key) {}

    static uint64_t mix(uint64_t a, uint64_t b) {
        // splitmix64 finalizer over the running hash
        uint64_t z = a + 0x9e3779b97f4a7c15ULL + b;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    static uint64_t key(uint64_t seed, std::string_view tag,
                        uint64_t a = 0, uint64_t b = 0, uint64_t c = 0) {
        uint64_t h = 0xcbf29ce484222325ULL; // FNV-1a over the tag
        for (char ch : tag) {
            h ^= static_cast<unsigned char>(ch);
            h *= 0x100000001b3ULL;
        }
        uint64_t k = mix(seed, h);
        k = mix(k, a);
        k = mix(k, b);
        k = mix(k, c);
        return k;
    }

    static RngStream named(uint64_t seed, std::string_view tag,
                           uint64_t a = 0, uint64_t b = 0, uint64_t c = 0) {
        return RngStream(key(seed, tag, a, b, c));
    }

    uint64_t next_u64() { return eng_(); }

    // uniform in [0, 1) with 53 significant bits
    double uniform01() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform01();
    }

    // uniform integer in [0, n), rejection-free of modulo bias
    uint64_t below(uint64_t n) {
        if (n == 0) return 0;
        const uint64_t limit = UINT64_MAX - (UINT64_MAX % n + 1) % n;
        uint64_t x = eng_();
        while (x > limit) x = eng_();
        return x % n;
    }

    // standard normal via Box-Muller; a fresh pair of uniforms per call
    double normal() {
        double u1 = uniform01();
        while (u1 == 0.0) u1 = uniform01();
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Gamma(alpha, 1) via Marsaglia-Tsang, boosted for alpha < 1
    double gamma(double alpha) {
        if (alpha < 1.0) {
            const double u = uniform01();
            return gamma(alpha + 1.0) * std::pow(u > 0.0 ? u : 0x1.0p-53, 1.0 / alpha);
        }
        const double d = alpha - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = normal();
            double v = 1.0 + c * x;
            if (v <= 0.0) continue;
            v = v * v * v;
            const double u = uniform01();
            if (u < 1.0 - 0.0331 * (x * x) * (x * x)) return d * v;
            if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    std::vector<double> dirichlet(double alpha, size_t k) {
        std::vector<double> p(k);
        double sum = 0.0;
        for (auto& v : p) {
            v = gamma(alpha);
            sum += v;
        }
        if (sum <= 0.0) {
            for (auto& v : p) v = 1.0 / static_cast<double>(k);
            return p;
        }
        for (auto& v : p) v /= sum;
        return p;
    }

    // std::shuffle's algorithm is unspecified, so determinism needs our own
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 eng_;
};

} // namespace fedmix
