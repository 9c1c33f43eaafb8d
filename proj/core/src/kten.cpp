#include "kt/kten.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "kt/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "KTEN I/O assumes a little-endian host");

namespace kt {

namespace {

constexpr char kMagic[4] = {'K', 'T', 'E', 'N'};
constexpr int kMaxNdim = 8;

void write_raw(std::ostream& out, const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void read_raw(std::istream& in, void* p, std::size_t n, std::size_t offset,
              const char* what) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n)
        throw FormatError(std::string("kten: truncated while reading ") + what, offset);
}

} // namespace

std::uint64_t KtenData::numel() const {
    std::uint64_t n = 1;
    for (std::uint64_t d : dims) n *= d;
    return n;
}

void write_kten(std::ostream& out, const KtenData& t) {
    if (t.dims.empty() || t.dims.size() > kMaxNdim)
        throw ConfigError("kten: between 1 and 8 dims required");
    const std::uint64_t elems = t.numel();
    const std::uint64_t floats = t.dtype == kKtenComplexF32 ? 2 * elems : elems;
    if (t.payload.size() != floats)
        throw ConfigError("kten: payload size does not match dims/dtype");
    write_raw(out, kMagic, 4);
    const std::uint16_t version = kKtenVersion;
    write_raw(out, &version, sizeof version);
    write_raw(out, &t.dtype, 1);
    const std::uint8_t ndim = static_cast<std::uint8_t>(t.dims.size());
    write_raw(out, &ndim, 1);
    for (std::uint64_t d : t.dims) write_raw(out, &d, sizeof d);
    write_raw(out, t.payload.data(), t.payload.size() * sizeof(float));
    if (!out) throw FormatError("kten: write failed", 0);
}

namespace {

struct Header {
    std::uint8_t dtype;
    std::vector<std::uint64_t> dims;
    std::size_t bytes; // header bytes consumed
};

Header read_header(std::istream& in, std::size_t base) {
    std::size_t pos = 0;
    char magic[4];
    read_raw(in, magic, 4, base + pos, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("kten: bad magic", base + pos);
    pos += 4;
    std::uint16_t version = 0;
    read_raw(in, &version, sizeof version, base + pos, "version");
    if (version != kKtenVersion)
        throw FormatError("kten: unsupported version " + std::to_string(version), base + pos);
    pos += sizeof version;
    std::uint8_t dtype = 0;
    read_raw(in, &dtype, 1, base + pos, "dtype");
    if (dtype != kKtenF32 && dtype != kKtenComplexF32)
        throw FormatError("kten: unknown dtype " + std::to_string(dtype), base + pos);
    pos += 1;
    std::uint8_t ndim = 0;
    read_raw(in, &ndim, 1, base + pos, "ndim");
    if (ndim < 1 || ndim > kMaxNdim)
        throw FormatError("kten: ndim out of range", base + pos);
    pos += 1;
    std::vector<std::uint64_t> dims(ndim);
    for (auto& d : dims) {
        read_raw(in, &d, sizeof d, base + pos, "dims");
        if (d == 0) throw FormatError("kten: zero-extent dim", base + pos);
        pos += sizeof d;
    }
    return Header{dtype, std::move(dims), pos};
}

} // namespace

KtenData read_kten(std::istream& in, std::size_t base_offset) {
    Header h = read_header(in, base_offset);
    KtenData t;
    t.dtype = h.dtype;
    t.dims = std::move(h.dims);
    const std::uint64_t elems = t.numel();
    const std::uint64_t floats = t.dtype == kKtenComplexF32 ? 2 * elems : elems;
    if (floats > (1ULL << 32))
        throw FormatError("kten: payload implausibly large", base_offset + h.bytes);
    t.payload.resize(static_cast<std::size_t>(floats));
    read_raw(in, t.payload.data(), t.payload.size() * sizeof(float), base_offset + h.bytes,
             "payload");
    return t;
}

std::size_t skip_kten(std::istream& in, std::size_t base_offset) {
    Header h = read_header(in, base_offset);
    std::uint64_t elems = 1;
    for (std::uint64_t d : h.dims) elems *= d;
    const std::uint64_t floats = h.dtype == kKtenComplexF32 ? 2 * elems : elems;
    in.seekg(static_cast<std::streamoff>(floats * sizeof(float)), std::ios::cur);
    if (!in) throw FormatError("kten: truncated payload", base_offset + h.bytes);
    return h.bytes + static_cast<std::size_t>(floats * sizeof(float));
}

void write_kten_file(const std::string& path, const KtenData& t) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("kten: cannot open for writing: " + path, 0);
    write_kten(out, t);
}

KtenData read_kten_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("kten: cannot open: " + path, 0);
    return read_kten(in);
}

} // namespace kt
