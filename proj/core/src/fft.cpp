#include "kt/fft.hpp"

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <utility>
#include <vector>

namespace kt {

namespace {

using cd = std::complex<double>;

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

int next_pow2(int n) {
    int m = 1;
    while (m < n) m <<= 1;
    return m;
}

struct Pow2Plan {
    int n = 1;
    std::vector<int> bitrev;
    std::vector<cd> twiddle; // twiddle[k] = exp(-2*pi*i*k/n), k < n/2

    explicit Pow2Plan(int len) : n(len) {
        bitrev.resize(n);
        int log2n = 0;
        while ((1 << log2n) < n) ++log2n;
        for (int i = 0; i < n; ++i) {
            int rev = 0;
            for (int b = 0; b < log2n; ++b)
                if (i & (1 << b)) rev |= 1 << (log2n - 1 - b);
            bitrev[i] = rev;
        }
        twiddle.resize(n / 2 > 0 ? n / 2 : 1);
        for (int k = 0; k < n / 2; ++k) {
            const double ang = -2.0 * std::numbers::pi * k / n;
            twiddle[k] = {std::cos(ang), std::sin(ang)};
        }
    }
};

void fft_pow2(const Pow2Plan& plan, cd* a, bool inverse) {
    const int n = plan.n;
    if (n == 1) return;
    for (int i = 0; i < n; ++i) {
        const int j = plan.bitrev[i];
        if (i < j) std::swap(a[i], a[j]);
    }
    for (int len = 2; len <= n; len <<= 1) {
        const int half = len >> 1;
        const int step = n / len;
        for (int base = 0; base < n; base += len) {
            for (int k = 0; k < half; ++k) {
                cd w = plan.twiddle[k * step];
                if (inverse) w = std::conj(w);
                const cd u = a[base + k];
                const cd v = a[base + k + half] * w;
                a[base + k] = u + v;
                a[base + k + half] = u - v;
            }
        }
    }
}

// Bluestein's chirp-z reduction of an arbitrary-length DFT to a
// power-of-two circular convolution. Chirp exponents are reduced mod 2n
// so the angles stay exact for large indices.
struct BluesteinPlan {
    int n;
    int m;
    std::shared_ptr<const Pow2Plan> convPlan;
    std::vector<cd> chirp; // chirp[k] = exp(-i*pi*k^2/n)
    std::vector<cd> bfft;  // forward FFT of the wrapped conjugate chirp

    BluesteinPlan(int len, std::shared_ptr<const Pow2Plan> cp)
        : n(len), m(cp->n), convPlan(std::move(cp)) {
        chirp.resize(n);
        for (int k = 0; k < n; ++k) {
            const std::uint64_t k2 = (static_cast<std::uint64_t>(k) * k) % (2ULL * n);
            const double ang = -std::numbers::pi * static_cast<double>(k2) / n;
            chirp[k] = {std::cos(ang), std::sin(ang)};
        }
        std::vector<cd> b(m, cd{0.0, 0.0});
        b[0] = std::conj(chirp[0]);
        for (int k = 1; k < n; ++k) {
            b[k] = std::conj(chirp[k]);
            b[m - k] = std::conj(chirp[k]);
        }
        fft_pow2(*convPlan, b.data(), false);
        bfft = std::move(b);
    }
};

std::shared_ptr<const Pow2Plan> pow2_plan(int n) {
    static std::mutex mu;
    static std::map<int, std::shared_ptr<const Pow2Plan>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    auto plan = std::make_shared<const Pow2Plan>(n);
    cache.emplace(n, plan);
    return plan;
}

std::shared_ptr<const BluesteinPlan> bluestein_plan(int n) {
    static std::mutex mu;
    static std::map<int, std::shared_ptr<const BluesteinPlan>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    auto plan = std::make_shared<const BluesteinPlan>(n, pow2_plan(next_pow2(2 * n - 1)));
    cache.emplace(n, plan);
    return plan;
}

void fft_bluestein(const BluesteinPlan& plan, cd* x, bool inverse) {
    const int n = plan.n;
    const int m = plan.m;
    thread_local std::vector<cd> scratch;
    scratch.assign(m, cd{0.0, 0.0});
    for (int k = 0; k < n; ++k) {
        const cd v = inverse ? std::conj(x[k]) : x[k];
        scratch[k] = v * plan.chirp[k];
    }
    fft_pow2(*plan.convPlan, scratch.data(), false);
    for (int k = 0; k < m; ++k) scratch[k] *= plan.bfft[k];
    fft_pow2(*plan.convPlan, scratch.data(), true);
    const double invm = 1.0 / m;
    for (int k = 0; k < n; ++k) {
        cd v = scratch[k] * invm * plan.chirp[k];
        x[k] = inverse ? std::conj(v) : v;
    }
}

/// Unnormalized 1-D transform dispatch.
void fft_1d(cd* x, int n, bool inverse) {
    if (n == 1) return;
    if (is_pow2(n)) {
        fft_pow2(*pow2_plan(n), x, inverse);
    } else {
        fft_bluestein(*bluestein_plan(n), x, inverse);
    }
}

} // namespace

void fft2_inplace(cd* data, int rows, int cols, bool inverse) {
    for (int r = 0; r < rows; ++r) fft_1d(data + static_cast<std::size_t>(r) * cols, cols, inverse);
    thread_local std::vector<cd> column;
    if (rows > 1) {
        column.resize(rows);
        for (int c = 0; c < cols; ++c) {
            for (int r = 0; r < rows; ++r) column[r] = data[static_cast<std::size_t>(r) * cols + c];
            fft_1d(column.data(), rows, inverse);
            for (int r = 0; r < rows; ++r) data[static_cast<std::size_t>(r) * cols + c] = column[r];
        }
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(rows) * cols);
    const std::size_t total = static_cast<std::size_t>(rows) * cols;
    for (std::size_t i = 0; i < total; ++i) data[i] *= scale;
}

ComplexMatrix dft2(const ComplexMatrix& x, TransformDirection dir) {
    ComplexMatrix out = x;
    fft2_inplace(out.data.data(), out.rows, out.cols, dir == TransformDirection::inverse);
    return out;
}

ComplexMatrix center_shift(const ComplexMatrix& x, bool inverse) {
    const int r = x.rows, c = x.cols;
    const int si = inverse ? r - r / 2 : r / 2;
    const int sj = inverse ? c - c / 2 : c / 2;
    ComplexMatrix out(r, c);
    for (int i = 0; i < r; ++i) {
        const int ti = (i + si) % r;
        for (int j = 0; j < c; ++j) out.at(ti, (j + sj) % c) = x.at(i, j);
    }
    return out;
}

} // namespace kt
