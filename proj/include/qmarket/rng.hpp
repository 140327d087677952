#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace qmarket {

// splitmix64 step, used to spread user seeds and derive named substreams.
inline std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Stable seed for a substream identified by a label, e.g. ("run", policy, seed).
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a offset basis
    for (unsigned char c : tag) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    std::uint64_t s = base ^ h;
    return splitmix64(s);
}

// Deterministic generator wrapper. All randomness in the project flows through
// this class so that a (seed, substream tag) pair pins every drawn value.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t raw() { return eng_(); }

    // Uniform in [0,1) with 53 random bits.
    double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    // Uniform integer in [lo, hi] via rejection-free scaling (hi - lo small here).
    int uniform_int(int lo, int hi) {
        if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(eng_() % span);
    }

    // Index drawn from an unnormalized weight vector by CDF scan.
    std::size_t pick_weighted(const std::vector<double>& w) {
        double total = 0.0;
        for (double v : w) total += v;
        if (!(total > 0.0)) throw std::invalid_argument("pick_weighted: nonpositive total");
        double u = uniform01() * total;
        double acc = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            acc += w[i];
            if (u < acc) return i;
        }
        return w.size() - 1;
    }

    // In-place Fisher-Yates; spelled out so the permutation sequence is ours,
    // not the standard library's.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(0, static_cast<int>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 eng_;
};

}  // namespace qmarket
