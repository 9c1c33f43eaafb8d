#include "kt/coils.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "kt/fft.hpp"

namespace kt {

namespace {
using cd = std::complex<double>;

// Gaussian elimination with partial pivoting on an n x n complex system.
// Returns false when a pivot underflows the scale-relative tolerance.
bool solve_complex(std::vector<cd> a, std::vector<cd> b, int n, std::vector<cd>& out) {
    double scale = 0.0;
    for (const cd& v : a) scale = std::max(scale, std::abs(v));
    if (scale == 0.0) return false;
    const double tol = scale * 1e-12;
    for (int col = 0; col < n; ++col) {
        int pivot = col;
        for (int r = col + 1; r < n; ++r)
            if (std::abs(a[r * n + col]) > std::abs(a[pivot * n + col])) pivot = r;
        if (std::abs(a[pivot * n + col]) < tol) return false;
        if (pivot != col) {
            for (int j = 0; j < n; ++j) std::swap(a[col * n + j], a[pivot * n + j]);
            std::swap(b[col], b[pivot]);
        }
        for (int r = col + 1; r < n; ++r) {
            const cd f = a[r * n + col] / a[col * n + col];
            for (int j = col; j < n; ++j) a[r * n + j] -= f * a[col * n + j];
            b[r] -= f * b[col];
        }
    }
    out.assign(n, cd{0.0, 0.0});
    for (int r = n - 1; r >= 0; --r) {
        cd acc = b[r];
        for (int j = r + 1; j < n; ++j) acc -= a[r * n + j] * out[j];
        out[r] = acc / a[r * n + r];
    }
    return true;
}

} // namespace

CoilStack::CoilStack(std::vector<ComplexMatrix> c) : coils(std::move(c)) {
    if (coils.empty()) throw ShapeError("CoilStack: need at least one coil");
    for (const auto& m : coils)
        if (!m.same_shape(coils.front()))
            throw ShapeError("CoilStack: all coil matrices must share dimensions");
}

RealMatrix rss_combine(const CoilStack& stack) {
    const int r = stack.rows(), c = stack.cols();
    RealMatrix sumsq(r, c, 0.0);
    for (const auto& coil : stack.coils) {
        const ComplexMatrix img = dft2(coil, TransformDirection::inverse);
        for (std::size_t i = 0; i < img.size(); ++i) sumsq.data[i] += std::norm(img.data[i]);
    }
    RealMatrix out(r, c);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = std::sqrt(sumsq.data[i]);
    return out;
}

EscResult esc_combine(const CoilStack& stack) {
    const int n = stack.n_coils();
    const int r = stack.rows(), c = stack.cols();
    const std::size_t npix = static_cast<std::size_t>(r) * c;

    std::vector<ComplexMatrix> images;
    images.reserve(n);
    for (const auto& coil : stack.coils) images.push_back(dft2(coil, TransformDirection::inverse));

    const RealMatrix rss = rss_combine(stack);

    // Target: RSS magnitude with the phase of the uniform-weight combination.
    // Matching phases make the LS residual equal the magnitude residual for
    // the uniform combination itself, so the fit can only improve on it.
    std::vector<cd> target(npix);
    for (std::size_t i = 0; i < npix; ++i) {
        cd u{0.0, 0.0};
        for (const auto& img : images) u += img.data[i];
        u /= static_cast<double>(n);
        const double phase = (u == cd{0.0, 0.0}) ? 0.0 : std::arg(u);
        target[i] = std::polar(rss.data[i], phase);
    }

    // Normal equations of min_w || sum_j w_j m_j - t ||^2.
    std::vector<cd> gram(static_cast<std::size_t>(n) * n);
    std::vector<cd> rhs(n);
    for (int j = 0; j < n; ++j) {
        for (int k = 0; k < n; ++k) {
            cd acc{0.0, 0.0};
            for (std::size_t i = 0; i < npix; ++i)
                acc += std::conj(images[j].data[i]) * images[k].data[i];
            gram[static_cast<std::size_t>(j) * n + k] = acc;
        }
        cd acc{0.0, 0.0};
        for (std::size_t i = 0; i < npix; ++i) acc += std::conj(images[j].data[i]) * target[i];
        rhs[j] = acc;
    }

    EscResult result;
    if (!solve_complex(gram, rhs, n, result.weights)) {
        result.weights.assign(n, cd{1.0 / n, 0.0});
        result.uniform_fallback = true;
    }

    result.kspace = ComplexMatrix(r, c);
    for (int j = 0; j < n; ++j) {
        const cd w = result.weights[j];
        for (std::size_t i = 0; i < npix; ++i) result.kspace.data[i] += w * stack.coils[j].data[i];
    }
    return result;
}

} // namespace kt
