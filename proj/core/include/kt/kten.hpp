#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace kt {

/// Self-describing binary tensor blob:
///   magic "KTEN" | u16 version | u8 dtype | u8 ndim | ndim x u64 dims |
///   little-endian row-major payload.
/// dtype 0 = f32, dtype 1 = interleaved complex f32 (re, im per element).
struct KtenData {
    std::uint8_t dtype = 0;
    std::vector<std::uint64_t> dims;
    std::vector<float> payload; // complex payloads hold 2 floats per element

    std::uint64_t numel() const;
};

inline constexpr std::uint16_t kKtenVersion = 1;
inline constexpr std::uint8_t kKtenF32 = 0;
inline constexpr std::uint8_t kKtenComplexF32 = 1;

/// base_offset is added to positions reported in FormatError, so callers
/// embedding KTEN blobs in container files get file-absolute offsets.
void write_kten(std::ostream& out, const KtenData& t);
KtenData read_kten(std::istream& in, std::size_t base_offset = 0);

/// Reads the header and seeks past the payload; returns bytes consumed.
std::size_t skip_kten(std::istream& in, std::size_t base_offset = 0);

void write_kten_file(const std::string& path, const KtenData& t);
KtenData read_kten_file(const std::string& path);

} // namespace kt
