#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <zlib.h>

namespace camdiff::png {

// Minimal PNG subset: 8-bit grayscale or RGB, no interlace. Writing always
// uses filter 0 and a fixed zlib level so output bytes are stable; reading
// handles the five standard row filters.

struct ImageU8 {
    int width = 0;
    int height = 0;
    int channels = 0;  // 1 or 3
    std::vector<std::uint8_t> pixels;  // row-major, interleaved
};

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
           (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

inline void write_chunk(std::vector<std::uint8_t>& out, const char type[4],
                        const std::uint8_t* data, std::size_t n) {
    put_u32(out, static_cast<std::uint32_t>(n));
    std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    if (n) out.insert(out.end(), data, data + n);
    std::uint32_t crc = static_cast<std::uint32_t>(
        crc32(0L, out.data() + start, static_cast<uInt>(n + 4)));
    put_u32(out, crc);
}

inline std::vector<std::uint8_t> zlib_compress(const std::vector<std::uint8_t>& raw) {
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> out(bound);
    if (compress2(out.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw std::runtime_error("png: zlib compress failed");
    out.resize(bound);
    return out;
}

inline std::vector<std::uint8_t> zlib_decompress(const std::uint8_t* data, std::size_t n,
                                                 std::size_t expected) {
    std::vector<std::uint8_t> out(expected);
    uLongf outlen = static_cast<uLongf>(expected);
    int rc = uncompress(out.data(), &outlen, data, static_cast<uLong>(n));
    if (rc != Z_OK || outlen != expected)
        throw std::runtime_error("png: zlib decompress failed");
    return out;
}

inline int paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode(const ImageU8& img) {
    if (img.channels != 1 && img.channels != 3)
        throw std::runtime_error("png: only 1- or 3-channel images supported");
    if (img.width <= 0 || img.height <= 0 ||
        img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * img.channels)
        throw std::runtime_error("png: bad image dimensions");

    std::vector<std::uint8_t> out;
    static const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    out.insert(out.end(), sig, sig + 8);

    std::uint8_t ihdr[13];
    ihdr[0] = static_cast<std::uint8_t>(img.width >> 24);
    ihdr[1] = static_cast<std::uint8_t>(img.width >> 16);
    ihdr[2] = static_cast<std::uint8_t>(img.width >> 8);
    ihdr[3] = static_cast<std::uint8_t>(img.width);
    ihdr[4] = static_cast<std::uint8_t>(img.height >> 24);
    ihdr[5] = static_cast<std::uint8_t>(img.height >> 16);
    ihdr[6] = static_cast<std::uint8_t>(img.height >> 8);
    ihdr[7] = static_cast<std::uint8_t>(img.height);
    ihdr[8] = 8;                                        // bit depth
    ihdr[9] = (img.channels == 3) ? 2 : 0;              // color type
    ihdr[10] = ihdr[11] = ihdr[12] = 0;                 // compression/filter/interlace
    detail::write_chunk(out, "IHDR", ihdr, 13);

    const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
    std::vector<std::uint8_t> raw;
    raw.reserve((stride + 1) * img.height);
    for (int y = 0; y < img.height; ++y) {
        raw.push_back(0);  // filter type 0
        raw.insert(raw.end(), img.pixels.begin() + y * stride,
                   img.pixels.begin() + (y + 1) * stride);
    }
    auto compressed = detail::zlib_compress(raw);
    detail::write_chunk(out, "IDAT", compressed.data(), compressed.size());
    detail::write_chunk(out, "IEND", nullptr, 0);
    return out;
}

inline void write_file(const std::string& path, const ImageU8& img) {
    auto bytes = encode(img);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("png: cannot open for write: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("png: write failed: " + path);
}

inline ImageU8 decode(const std::uint8_t* bytes, std::size_t n) {
    static const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    if (n < 8 || std::memcmp(bytes, sig, 8) != 0)
        throw std::runtime_error("png: bad signature");

    ImageU8 img;
    std::vector<std::uint8_t> idat;
    std::size_t pos = 8;
    int bit_depth = 0, color_type = -1;
    while (pos + 8 <= n) {
        std::uint32_t len = detail::get_u32(bytes + pos);
        const char* type = reinterpret_cast<const char*>(bytes + pos + 4);
        const std::uint8_t* data = bytes + pos + 8;
        if (pos + 12 + len > n) throw std::runtime_error("png: truncated chunk");
        if (std::memcmp(type, "IHDR", 4) == 0) {
            img.width = static_cast<int>(detail::get_u32(data));
            img.height = static_cast<int>(detail::get_u32(data + 4));
            bit_depth = data[8];
            color_type = data[9];
            if (data[12] != 0) throw std::runtime_error("png: interlaced not supported");
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    if (bit_depth != 8 || (color_type != 0 && color_type != 2))
        throw std::runtime_error("png: unsupported format (need 8-bit gray or RGB)");
    img.channels = (color_type == 2) ? 3 : 1;

    const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
    auto raw = detail::zlib_decompress(idat.data(), idat.size(), (stride + 1) * img.height);

    img.pixels.resize(stride * img.height);
    const int bpp = img.channels;
    for (int y = 0; y < img.height; ++y) {
        const std::uint8_t filter = raw[y * (stride + 1)];
        const std::uint8_t* src = raw.data() + y * (stride + 1) + 1;
        std::uint8_t* dst = img.pixels.data() + y * stride;
        const std::uint8_t* prev = (y > 0) ? img.pixels.data() + (y - 1) * stride : nullptr;
        for (std::size_t x = 0; x < stride; ++x) {
            int a = (x >= static_cast<std::size_t>(bpp)) ? dst[x - bpp] : 0;
            int b = prev ? prev[x] : 0;
            int c = (prev && x >= static_cast<std::size_t>(bpp)) ? prev[x - bpp] : 0;
            int v = src[x];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += detail::paeth(a, b, c); break;
                default: throw std::runtime_error("png: bad filter type");
            }
            dst[x] = static_cast<std::uint8_t>(v & 0xFF);
        }
    }
    return img;
}

inline ImageU8 read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("png: cannot open for read: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    return decode(bytes.data(), bytes.size());
}

}  // namespace camdiff::png
