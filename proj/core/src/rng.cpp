#include "kt/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "kt/errors.hpp"

namespace kt {

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

namespace {
inline std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}
} // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed) {
    std::uint64_t sm = seed;
    for (auto& s : state_) s = splitmix64(sm);
}

std::uint64_t Rng::next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

double Rng::normal() {
    // Box-Muller; guard against log(0).
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::normal(double mean, double stddev) {
    return mean + stddev * normal();
}

std::uint64_t Rng::below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: n must be > 0");
    // Rejection sampling on the top bits; unbiased.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
}

std::vector<int> Rng::sample_without_replacement(int n, int k) {
    if (k < 0 || k > n) throw ConfigError("sample_without_replacement: need 0 <= k <= n");
    std::vector<int> pool(n);
    for (int i = 0; i < n; ++i) pool[i] = i;
    // Partial Fisher-Yates.
    for (int i = 0; i < k; ++i) {
        const int j = i + static_cast<int>(below(static_cast<std::uint64_t>(n - i)));
        std::swap(pool[i], pool[j]);
    }
    std::vector<int> out(pool.begin(), pool.begin() + k);
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<int> Rng::weighted_sample_without_replacement(const std::vector<double>& weights, int k) {
    const int n = static_cast<int>(weights.size());
    if (k < 0 || k > n) throw ConfigError("weighted_sample_without_replacement: need 0 <= k <= n");
    std::vector<double> w = weights;
    std::vector<int> out;
    out.reserve(k);
    for (int draw = 0; draw < k; ++draw) {
        double total = 0.0;
        for (double x : w) total += x;
        if (!(total > 0.0))
            throw ConfigError("weighted_sample_without_replacement: ran out of positive weights");
        double target = uniform() * total;
        int pick = -1;
        for (int i = 0; i < n; ++i) {
            if (w[i] <= 0.0) continue;
            target -= w[i];
            pick = i;
            if (target < 0.0) break;
        }
        out.push_back(pick);
        w[pick] = 0.0;
    }
    std::sort(out.begin(), out.end());
    return out;
}

Rng Rng::spawn(std::uint64_t stream) const {
    std::uint64_t s = seed_ ^ (0xA0761D6478BD642FULL * (stream + 1));
    return Rng(splitmix64(s));
}

} // namespace kt
