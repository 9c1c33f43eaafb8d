#pragma once

#include <complex>

#include "kt/tensor.hpp"

namespace kt {

enum class TransformDirection { forward, inverse };

/// Unitary 2-D DFT (1/sqrt(rows*cols) scaling in both directions), so
/// forward followed by inverse is the identity and Parseval holds with a
/// unit constant. Power-of-two dims take the radix-2 path; every other
/// length goes through Bluestein's algorithm.
ComplexMatrix dft2(const ComplexMatrix& x, TransformDirection dir);

/// Cyclic shift by (floor(rows/2), floor(cols/2)), moving the (0,0)
/// coefficient to the matrix center. inverse=true undoes it (the two
/// differ for odd dims, where the inverse shifts by the ceiling).
ComplexMatrix center_shift(const ComplexMatrix& x, bool inverse = false);

/// In-place unitary 2-D transform on a contiguous row-major complex buffer.
/// Workhorse behind dft2; exposed for code that streams many transforms.
void fft2_inplace(std::complex<double>* data, int rows, int cols, bool inverse);

} // namespace kt
