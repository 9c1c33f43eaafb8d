#include "kt/tensor.hpp"

#include <cmath>

namespace kt {

ComplexMatrix complex_hadamard(const ComplexMatrix& a, const ComplexMatrix& b) {
    if (!a.same_shape(b))
        throw ShapeError("complex_hadamard: dimension mismatch");
    ComplexMatrix out(a.rows, a.cols);
    for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] * b.data[i];
    return out;
}

RealMatrix magnitude(const ComplexMatrix& a) {
    RealMatrix out(a.rows, a.cols);
    for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = std::abs(a.data[i]);
    return out;
}

ComplexMatrix conj(const ComplexMatrix& a) {
    ComplexMatrix out(a.rows, a.cols);
    for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = std::conj(a.data[i]);
    return out;
}

} // namespace kt
