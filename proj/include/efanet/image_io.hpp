#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "efanet/errors.hpp"
#include "efanet/image.hpp"

namespace efanet {

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, std::span<const unsigned char> bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to '" + path + "'");
}

// Reads a whitespace-delimited ASCII integer from a PNM header, skipping
// '#' comments.
inline int pnm_header_int(const std::vector<unsigned char>& buf, std::size_t& pos, const std::string& path) {
    while (pos < buf.size()) {
        if (buf[pos] == '#') {
            while (pos < buf.size() && buf[pos] != '\n') ++pos;
        } else if (std::isspace(buf[pos])) {
            ++pos;
        } else {
            break;
        }
    }
    if (pos >= buf.size() || !std::isdigit(buf[pos])) throw DataError("malformed PNM header in '" + path + "'");
    long v = 0;
    while (pos < buf.size() && std::isdigit(buf[pos])) {
        v = v * 10 + (buf[pos++] - '0');
        if (v > 1 << 20) throw DataError("PNM header value out of range in '" + path + "'");
    }
    return static_cast<int>(v);
}

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32(std::span<const unsigned char> in, std::size_t pos) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[pos + i]) << (8 * i);
    return v;
}

inline void put_f32(std::vector<unsigned char>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

inline float get_f32(std::span<const unsigned char> in, std::size_t pos) {
    return std::bit_cast<float>(get_u32(in, pos));
}

}  // namespace detail

// Binary PGM (P5) -> 1 channel, PPM (P6) -> 3 channels; 8-bit samples.
inline Image read_pnm(const std::string& path) {
    const auto buf = detail::read_file(path);
    if (buf.size() < 2 || buf[0] != 'P' || (buf[1] != '5' && buf[1] != '6')) {
        throw DataError("'" + path + "' is not a binary PGM/PPM file");
    }
    const int channels = buf[1] == '5' ? 1 : 3;
    std::size_t pos = 2;
    const int w = detail::pnm_header_int(buf, pos, path);
    const int h = detail::pnm_header_int(buf, pos, path);
    const int maxval = detail::pnm_header_int(buf, pos, path);
    if (w < 1 || h < 1 || maxval < 1 || maxval > 255) {
        throw DataError("unsupported PNM geometry/maxval in '" + path + "'");
    }
    ++pos;  // single whitespace before raster
    const std::size_t count = static_cast<std::size_t>(w) * h * channels;
    if (buf.size() < pos + count) throw DataError("truncated raster in '" + path + "'");
    Image img(channels, h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < channels; ++c)
                img.at(c, y, x) = static_cast<float>(buf[pos + (static_cast<std::size_t>(y) * w + x) * channels + c]) /
                                  static_cast<float>(maxval);
    return img;
}

inline std::uint8_t to_byte(double v) {
    const double c = std::clamp(v, 0.0, 1.0);
    return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

// Writes a 1-channel image as P5 or a 3-channel image as P6.
inline void write_pnm(const std::string& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3) throw DataError("write_pnm: need 1 or 3 channels");
    const std::string header = std::string(img.channels == 1 ? "P5" : "P6") + "\n" + std::to_string(img.width) + " " +
                               std::to_string(img.height) + "\n255\n";
    std::vector<unsigned char> out(header.begin(), header.end());
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) out.push_back(to_byte(img.at(c, y, x)));
    detail::write_file(path, out);
}

inline void write_pgm(const std::string& path, const Grid<std::uint8_t>& bytes) {
    const std::string header = "P5\n" + std::to_string(bytes.width) + " " + std::to_string(bytes.height) + "\n255\n";
    std::vector<unsigned char> out(header.begin(), header.end());
    out.insert(out.end(), bytes.values.begin(), bytes.values.end());
    detail::write_file(path, out);
}

// Masks are stored as {0, 255}.
inline void write_mask(const std::string& path, const Mask& mask) {
    Grid<std::uint8_t> bytes(mask.height, mask.width);
    for (std::size_t i = 0; i < mask.size(); ++i) bytes.values[i] = mask.values[i] ? 255 : 0;
    write_pgm(path, bytes);
}

inline void write_prob_map(const std::string& path, const ProbMap& map) {
    Grid<std::uint8_t> bytes(map.height, map.width);
    for (std::size_t i = 0; i < map.size(); ++i) bytes.values[i] = to_byte(map.values[i]);
    write_pgm(path, bytes);
}

// Foreground where the first channel is at least half of full scale.
inline Mask read_mask(const std::string& path) {
    const Image img = read_pnm(path);
    Mask m(img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) m.at(y, x) = img.at(0, y, x) >= 0.5f ? 1 : 0;
    return m;
}

// Raw float tensor file: "EFAT", u32 version, u32 rank, rank x u32 extents,
// then little-endian float32 values.
inline constexpr std::array<char, 4> kTensorMagic{'E', 'F', 'A', 'T'};
inline constexpr std::uint32_t kTensorFileVersion = 1;

struct RawTensor {
    std::vector<std::uint32_t> extents;
    std::vector<float> values;
};

inline void write_efat(const std::string& path, const RawTensor& t) {
    std::size_t count = 1;
    for (auto e : t.extents) count *= e;
    if (count != t.values.size()) throw DataError("write_efat: extents do not match value count");
    std::vector<unsigned char> out(kTensorMagic.begin(), kTensorMagic.end());
    detail::put_u32(out, kTensorFileVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(t.extents.size()));
    for (auto e : t.extents) detail::put_u32(out, e);
    for (float v : t.values) detail::put_f32(out, v);
    detail::write_file(path, out);
}

inline RawTensor read_efat(const std::string& path) {
    const auto buf = detail::read_file(path);
    if (buf.size() < 12 || std::memcmp(buf.data(), kTensorMagic.data(), 4) != 0) {
        throw DataError("'" + path + "' is not an EFAT tensor file");
    }
    if (detail::get_u32(buf, 4) != kTensorFileVersion) throw DataError("unsupported EFAT version in '" + path + "'");
    const std::uint32_t rank = detail::get_u32(buf, 8);
    if (rank > 8 || buf.size() < 12 + 4 * static_cast<std::size_t>(rank)) {
        throw DataError("bad EFAT rank in '" + path + "'");
    }
    RawTensor t;
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        t.extents.push_back(detail::get_u32(buf, 12 + 4 * i));
        count *= t.extents.back();
    }
    const std::size_t data = 12 + 4 * static_cast<std::size_t>(rank);
    if (buf.size() != data + 4 * count) throw DataError("EFAT payload size mismatch in '" + path + "'");
    t.values.resize(count);
    for (std::size_t i = 0; i < count; ++i) t.values[i] = detail::get_f32(buf, data + 4 * i);
    return t;
}

}  // namespace efanet
