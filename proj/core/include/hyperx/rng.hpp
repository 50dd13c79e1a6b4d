#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace hyperx {

/// Deterministic random stream. All sampling goes through this wrapper so
/// results are bit-reproducible for a given seed: the raw engine is
/// std::mt19937_64 (fully specified by the standard) and every distribution
/// is derived here from raw 64-bit draws instead of the
/// implementation-defined std::*_distribution adapters.
///
/// Independent sub-streams are derived with child("tag"); the derivation
/// depends only on the parent seed and the tag, never on how many values the
/// parent has already produced.
class Rng {
  public:
    explicit Rng(uint64_t seed) : seed_(seed), gen_(seed) {}

    uint64_t seed() const { return seed_; }

    uint64_t next_u64() { return gen_(); }

    /// Uniform double in [0, 1), 53 bits of entropy.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be positive.
    int uniform_int(int n) { return static_cast<int>(gen_() % static_cast<uint64_t>(n)); }

    bool bernoulli(double p) { return uniform() < p; }

    /// Box-Muller, with the spare value cached.
    double normal(double mean = 0.0, double stddev = 1.0) {
        if (have_spare_) {
            have_spare_ = false;
            return mean + stddev * spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return mean + stddev * r * std::cos(theta);
    }

    /// Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = gen_() % i;
            std::swap(v[i - 1], v[j]);
        }
    }

    /// Derive an independent stream from this stream's seed and a tag.
    Rng child(std::string_view tag) const { return Rng(mix(seed_, tag)); }

    /// FNV-1a over the seed bytes and the tag, followed by a splitmix64
    /// finalizer. Used for all documented seed offsets.
    static uint64_t mix(uint64_t seed, std::string_view tag) {
        uint64_t h = 1469598103934665603ull;
        for (int i = 0; i < 8; ++i) {
            h ^= (seed >> (8 * i)) & 0xff;
            h *= 1099511628211ull;
        }
        for (unsigned char c : tag) {
            h ^= c;
            h *= 1099511628211ull;
        }
        h += 0x9e3779b97f4a7c15ull;
        h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
        h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
        return h ^ (h >> 31);
    }

  private:
    uint64_t seed_;
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace hyperx
