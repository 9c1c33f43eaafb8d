#pragma once

#include <string>
#include <vector>

#include "kt/rng.hpp"
#include "kt/tensor.hpp"

namespace kt {

/// Cartesian sampling mask over whole k-space columns. Expands to a binary
/// r x c matrix in which a column is all-ones iff its index is sampled.
struct SamplingMask {
    int rows = 0;
    int cols = 0;
    std::vector<int> sampled_lines; // sorted, unique, non-empty

    SamplingMask() = default;
    SamplingMask(int r, int c, std::vector<int> lines);

    int n_lines() const { return static_cast<int>(sampled_lines.size()); }
    bool samples(int col) const;

    /// Dense {0,1} expansion, mostly for oracle tests.
    RealMatrix expand() const;

    bool operator==(const SamplingMask& o) const {
        return rows == o.rows && cols == o.cols && sampled_lines == o.sampled_lines;
    }
};

enum class PriorMode { uniform, center_weighted };

/// Data-independent distribution over masks with a fixed line budget.
struct MaskPrior {
    int cols = 0;
    int n_lines = 0;
    PriorMode mode = PriorMode::uniform;
    double sigma = 0.0; // line-index stddev for center_weighted

    MaskPrior() = default;
    MaskPrior(int cols_, int n_lines_, PriorMode mode_ = PriorMode::uniform, double sigma_ = 0.0);
};

/// Draws a mask with exactly prior.n_lines distinct lines. Uniform mode
/// samples without replacement; center_weighted uses Gaussian weights over
/// the distance from the center column.
SamplingMask draw_mask(const MaskPrior& prior, Rng& rng, int rows);

/// x with unsampled columns zeroed: x_s = x o s.
ComplexMatrix apply_mask(const ComplexMatrix& x, const SamplingMask& s);

/// Fraction of measured entries: |sampled_lines| / cols.
double sampling_rate(const SamplingMask& s);

/// The n_lines columns nearest floor(cols/2), ties broken toward the
/// lower index.
SamplingMask center_mask(int rows, int cols, int n_lines);

/// Line budget for a target sampling rate: round(rate*cols), at least 1.
int lines_for_rate(double rate, int cols);

/// Mask file round trip (JSON: rows, cols, axis, sampled_lines).
void write_mask(const SamplingMask& mask, const std::string& path);
SamplingMask read_mask(const std::string& path);
std::string mask_to_json(const SamplingMask& mask);
SamplingMask mask_from_json(const std::string& text);

} // namespace kt
