#pragma once

#include <cstdint>
#include <vector>

namespace kt {

/// Deterministic xoshiro256++ generator with explicit distributions.
/// Results are identical across platforms and standard-library versions,
/// which the reproducibility contract of this project depends on.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();

    /// Uniform double in [0, 1), 53-bit resolution.
    double uniform();

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi);

    /// Standard normal via Box-Muller.
    double normal();
    double normal(double mean, double stddev);

    /// Unbiased uniform integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n);

    /// k distinct values from [0, n), ascending order. k <= n required.
    std::vector<int> sample_without_replacement(int n, int k);

    /// Weighted sampling without replacement: k distinct indices from
    /// [0, weights.size()), ascending order. Weights must be non-negative
    /// with at least k strictly positive entries.
    std::vector<int> weighted_sample_without_replacement(const std::vector<double>& weights, int k);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = below(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    /// Child generator with an independent stream derived from (seed, stream).
    Rng spawn(std::uint64_t stream) const;

private:
    std::uint64_t seed_;
    std::uint64_t state_[4];
};

/// splitmix64 step; also used for seed derivation.
std::uint64_t splitmix64(std::uint64_t& state);

} // namespace kt
