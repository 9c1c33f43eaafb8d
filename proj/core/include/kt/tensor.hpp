#pragma once

#include <complex>
#include <vector>

#include "kt/errors.hpp"

namespace kt {

/// Dense row-major real matrix, double precision.
struct RealMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    RealMatrix() = default;
    RealMatrix(int r, int c, double fill = 0.0) : rows(r), cols(c) {
        if (r < 1 || c < 1) throw ShapeError("RealMatrix: rows and cols must be >= 1");
        data.assign(static_cast<std::size_t>(r) * c, fill);
    }

    double& at(int i, int j) { return data[static_cast<std::size_t>(i) * cols + j]; }
    double at(int i, int j) const { return data[static_cast<std::size_t>(i) * cols + j]; }
    std::size_t size() const { return data.size(); }
};

/// Dense row-major complex matrix. std::complex<double> storage keeps
/// real/imag interleaved, matching the on-disk tensor layout.
struct ComplexMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<std::complex<double>> data;

    ComplexMatrix() = default;
    ComplexMatrix(int r, int c, std::complex<double> fill = {0.0, 0.0}) : rows(r), cols(c) {
        if (r < 1 || c < 1) throw ShapeError("ComplexMatrix: rows and cols must be >= 1");
        data.assign(static_cast<std::size_t>(r) * c, fill);
    }

    std::complex<double>& at(int i, int j) { return data[static_cast<std::size_t>(i) * cols + j]; }
    const std::complex<double>& at(int i, int j) const {
        return data[static_cast<std::size_t>(i) * cols + j];
    }
    std::size_t size() const { return data.size(); }

    bool same_shape(const ComplexMatrix& o) const { return rows == o.rows && cols == o.cols; }
};

/// Element-wise complex product. Shapes must match.
ComplexMatrix complex_hadamard(const ComplexMatrix& a, const ComplexMatrix& b);

/// Element-wise modulus sqrt(re^2 + im^2).
RealMatrix magnitude(const ComplexMatrix& a);

/// Element-wise complex conjugate.
ComplexMatrix conj(const ComplexMatrix& a);

} // namespace kt
