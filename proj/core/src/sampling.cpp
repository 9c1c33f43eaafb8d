#include "kt/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "kt/errors.hpp"

namespace kt {

SamplingMask::SamplingMask(int r, int c, std::vector<int> lines)
    : rows(r), cols(c), sampled_lines(std::move(lines)) {
    if (r < 1 || c < 1) throw ShapeError("SamplingMask: rows and cols must be >= 1");
    if (sampled_lines.empty()) throw ConfigError("SamplingMask: at least one sampled line required");
    std::sort(sampled_lines.begin(), sampled_lines.end());
    for (std::size_t i = 0; i < sampled_lines.size(); ++i) {
        const int line = sampled_lines[i];
        if (line < 0 || line >= cols)
            throw ConfigError("SamplingMask: line index out of range");
        if (i > 0 && sampled_lines[i - 1] == line)
            throw ConfigError("SamplingMask: duplicate line index");
    }
}

bool SamplingMask::samples(int col) const {
    return std::binary_search(sampled_lines.begin(), sampled_lines.end(), col);
}

RealMatrix SamplingMask::expand() const {
    RealMatrix out(rows, cols, 0.0);
    for (int line : sampled_lines)
        for (int i = 0; i < rows; ++i) out.at(i, line) = 1.0;
    return out;
}

MaskPrior::MaskPrior(int cols_, int n_lines_, PriorMode mode_, double sigma_)
    : cols(cols_), n_lines(n_lines_), mode(mode_), sigma(sigma_) {
    if (cols < 1) throw ConfigError("MaskPrior: cols must be >= 1");
    if (n_lines < 1 || n_lines > cols)
        throw ConfigError("MaskPrior: need 1 <= n_lines <= cols");
    if (mode == PriorMode::center_weighted && !(sigma > 0.0))
        throw ConfigError("MaskPrior: center_weighted needs sigma > 0");
}

SamplingMask draw_mask(const MaskPrior& prior, Rng& rng, int rows) {
    std::vector<int> lines;
    if (prior.mode == PriorMode::uniform) {
        lines = rng.sample_without_replacement(prior.cols, prior.n_lines);
    } else {
        const double center = prior.cols / 2;
        std::vector<double> weights(prior.cols);
        for (int j = 0; j < prior.cols; ++j) {
            const double d = j - center;
            weights[j] = std::exp(-d * d / (2.0 * prior.sigma * prior.sigma));
        }
        lines = rng.weighted_sample_without_replacement(weights, prior.n_lines);
    }
    return SamplingMask(rows, prior.cols, std::move(lines));
}

ComplexMatrix apply_mask(const ComplexMatrix& x, const SamplingMask& s) {
    if (x.rows != s.rows || x.cols != s.cols)
        throw ShapeError("apply_mask: mask dimensions do not match the matrix");
    ComplexMatrix out(x.rows, x.cols);
    for (int line : s.sampled_lines)
        for (int i = 0; i < x.rows; ++i) out.at(i, line) = x.at(i, line);
    return out;
}

double sampling_rate(const SamplingMask& s) {
    return static_cast<double>(s.n_lines()) / s.cols;
}

SamplingMask center_mask(int rows, int cols, int n_lines) {
    if (n_lines > cols) throw ConfigError("center_mask: n_lines exceeds cols");
    const int center = cols / 2;
    std::vector<int> order(cols);
    for (int j = 0; j < cols; ++j) order[j] = j;
    std::stable_sort(order.begin(), order.end(), [center](int a, int b) {
        const int da = std::abs(a - center), db = std::abs(b - center);
        if (da != db) return da < db;
        return a < b; // tie toward the lower index
    });
    return SamplingMask(rows, cols, std::vector<int>(order.begin(), order.begin() + n_lines));
}

int lines_for_rate(double rate, int cols) {
    if (!(rate > 0.0) || rate > 1.0) throw ConfigError("lines_for_rate: rate must be in (0, 1]");
    const int n = static_cast<int>(std::lround(rate * cols));
    return std::clamp(n, 1, cols);
}

std::string mask_to_json(const SamplingMask& mask) {
    nlohmann::json j;
    j["rows"] = mask.rows;
    j["cols"] = mask.cols;
    j["axis"] = "cols";
    j["sampled_lines"] = mask.sampled_lines;
    return j.dump();
}

SamplingMask mask_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("mask: invalid JSON: ") + e.what(), e.byte);
    }
    try {
        if (j.value("axis", "cols") != std::string("cols"))
            throw ConfigError("mask: only axis \"cols\" is supported");
        return SamplingMask(j.at("rows").get<int>(), j.at("cols").get<int>(),
                            j.at("sampled_lines").get<std::vector<int>>());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("mask: missing or ill-typed field: ") + e.what(), 0);
    }
}

void write_mask(const SamplingMask& mask, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("mask: cannot open for writing: " + path, 0);
    out << mask_to_json(mask) << "\n";
}

SamplingMask read_mask(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("mask: cannot open: " + path, 0);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return mask_from_json(text);
}

} // namespace kt
