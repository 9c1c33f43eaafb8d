#pragma once

#include <complex>
#include <vector>

#include "kt/tensor.hpp"

namespace kt {

/// Multi-coil k-space acquisition: one complex matrix per receiver coil,
/// all sharing the same dimensions.
struct CoilStack {
    std::vector<ComplexMatrix> coils;

    explicit CoilStack(std::vector<ComplexMatrix> c);

    int n_coils() const { return static_cast<int>(coils.size()); }
    int rows() const { return coils.front().rows; }
    int cols() const { return coils.front().cols; }
};

/// Root-sum-of-squares image combination: per-coil inverse transform,
/// then per-pixel sqrt of the summed squared magnitudes.
RealMatrix rss_combine(const CoilStack& stack);

struct EscResult {
    ComplexMatrix kspace;                   // weighted k-space sum
    std::vector<std::complex<double>> weights; // one complex weight per coil
    bool uniform_fallback = false;          // set when the LS system was singular
};

/// Emulated-single-coil combination: one global complex weight per coil,
/// fit by least squares so the combined image matches the RSS magnitude
/// image (with phase taken from the uniform-weight combination). Falls
/// back to uniform weights 1/n when the normal equations are singular.
EscResult esc_combine(const CoilStack& stack);

} // namespace kt
