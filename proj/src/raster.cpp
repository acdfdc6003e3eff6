// Copyright (C) 2026 CIRForge Contributors
// SPDX-License-Identifier: Apache-2.0

#include "cirforge/raster.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "cirforge/errors.hpp"

namespace cirforge::raster {

Raster::Raster(std::uint32_t w, std::uint32_t h, Rgb fill) : width(w), height(h) {
    pixels.resize(static_cast<std::size_t>(w) * h * 3);
    for (std::size_t i = 0; i < pixels.size(); i += 3) {
        pixels[i] = fill[0];
        pixels[i + 1] = fill[1];
        pixels[i + 2] = fill[2];
    }
}

Rgb Raster::at(std::uint32_t x, std::uint32_t y) const {
    const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
    return {pixels[i], pixels[i + 1], pixels[i + 2]};
}

void Raster::set(std::uint32_t x, std::uint32_t y, Rgb color) {
    const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
    pixels[i] = color[0];
    pixels[i + 1] = color[1];
    pixels[i + 2] = color[2];
}

void Raster::fill_rect(std::uint32_t x0, std::uint32_t y0, std::uint32_t x1, std::uint32_t y1,
                       Rgb color) {
    x1 = std::min(x1, width);
    y1 = std::min(y1, height);
    for (std::uint32_t y = y0; y < y1; ++y)
        for (std::uint32_t x = x0; x < x1; ++x) set(x, y, color);
}

namespace {

std::uint32_t crc32(const std::uint8_t* data, std::size_t len, std::uint32_t crc = 0) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t n = 0; n < 256; ++n) {
            std::uint32_t c = n;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[n] = c;
        }
        return t;
    }();
    crc ^= 0xFFFFFFFFu;
    for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

std::uint32_t adler32(const std::uint8_t* data, std::size_t len) {
    std::uint32_t a = 1, b = 0;
    for (std::size_t i = 0; i < len; ++i) {
        a = (a + data[i]) % 65521;
        b = (b + a) % 65521;
    }
    return (b << 16) | a;
}

void put_u32be(std::string& out, std::uint32_t v) {
    out += static_cast<char>((v >> 24) & 0xFF);
    out += static_cast<char>((v >> 16) & 0xFF);
    out += static_cast<char>((v >> 8) & 0xFF);
    out += static_cast<char>(v & 0xFF);
}

void put_chunk(std::string& out, const char type[4], const std::string& payload) {
    put_u32be(out, static_cast<std::uint32_t>(payload.size()));
    std::string body(type, 4);
    body += payload;
    out += body;
    put_u32be(out, crc32(reinterpret_cast<const std::uint8_t*>(body.data()), body.size()));
}

/// zlib stream with stored (uncompressed) deflate blocks.
std::string zlib_store(const std::vector<std::uint8_t>& raw) {
    std::string out;
    out += static_cast<char>(0x78);
    out += static_cast<char>(0x01);
    std::size_t pos = 0;
    do {
        const std::size_t n = std::min<std::size_t>(raw.size() - pos, 65535);
        const bool last = pos + n == raw.size();
        out += static_cast<char>(last ? 1 : 0);
        out += static_cast<char>(n & 0xFF);
        out += static_cast<char>((n >> 8) & 0xFF);
        out += static_cast<char>(~n & 0xFF);
        out += static_cast<char>((~n >> 8) & 0xFF);
        out.append(reinterpret_cast<const char*>(raw.data() + pos), n);
        pos += n;
    } while (pos < raw.size());
    put_u32be(out, adler32(raw.data(), raw.size()));
    return out;
}

std::uint32_t read_u32be(const std::string& bytes, std::size_t pos) {
    return (static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[pos])) << 24) |
           (static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[pos + 1])) << 16) |
           (static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[pos + 2])) << 8) |
           static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[pos + 3]));
}

constexpr char kSignature[] = "\x89PNG\r\n\x1a\n";

}  // namespace

std::string encode_png(const Raster& raster) {
    if (raster.width == 0 || raster.height == 0)
        throw IoError("cannot encode an empty raster");
    std::string out(kSignature, 8);

    std::string ihdr;
    put_u32be(ihdr, raster.width);
    put_u32be(ihdr, raster.height);
    ihdr += static_cast<char>(8);  // bit depth
    ihdr += static_cast<char>(2);  // color type: truecolor
    ihdr += static_cast<char>(0);  // compression
    ihdr += static_cast<char>(0);  // filter method
    ihdr += static_cast<char>(0);  // no interlace
    put_chunk(out, "IHDR", ihdr);

    std::vector<std::uint8_t> raw;
    raw.reserve(static_cast<std::size_t>(raster.height) * (raster.width * 3 + 1));
    for (std::uint32_t y = 0; y < raster.height; ++y) {
        raw.push_back(0);  // filter: none
        const std::size_t row = static_cast<std::size_t>(y) * raster.width * 3;
        raw.insert(raw.end(), raster.pixels.begin() + row,
                   raster.pixels.begin() + row + raster.width * 3);
    }
    put_chunk(out, "IDAT", zlib_store(raw));
    put_chunk(out, "IEND", "");
    return out;
}

Raster decode_png(const std::string& bytes) {
    if (bytes.size() < 8 || bytes.compare(0, 8, kSignature, 8) != 0)
        throw ParseError("bad_png", "missing PNG signature");
    std::size_t pos = 8;
    Raster raster;
    std::string idat;
    while (pos + 8 <= bytes.size()) {
        const std::uint32_t len = read_u32be(bytes, pos);
        const std::string type = bytes.substr(pos + 4, 4);
        if (pos + 12 + len > bytes.size()) throw ParseError("bad_png", "truncated chunk");
        const std::string payload = bytes.substr(pos + 8, len);
        pos += 12 + len;
        if (type == "IHDR") {
            raster.width = read_u32be(payload, 0);
            raster.height = read_u32be(payload, 4);
            if (payload[8] != 8 || payload[9] != 2)
                throw ParseError("bad_png", "only 8-bit RGB is supported");
        } else if (type == "IDAT") {
            idat += payload;
        } else if (type == "IEND") {
            break;
        }
    }
    if (idat.size() < 6) throw ParseError("bad_png", "missing image data");

    // Inflate, stored blocks only.
    std::vector<std::uint8_t> raw;
    std::size_t p = 2;  // skip zlib header
    while (true) {
        if (p >= idat.size()) throw ParseError("bad_png", "truncated deflate stream");
        const std::uint8_t header = static_cast<std::uint8_t>(idat[p]);
        if ((header >> 1) != 0) throw ParseError("bad_png", "only stored deflate blocks are supported");
        const std::size_t n = static_cast<std::uint8_t>(idat[p + 1]) |
                              (static_cast<std::size_t>(static_cast<std::uint8_t>(idat[p + 2])) << 8);
        raw.insert(raw.end(), idat.begin() + static_cast<long>(p) + 5,
                   idat.begin() + static_cast<long>(p) + 5 + static_cast<long>(n));
        p += 5 + n;
        if (header & 1) break;
    }

    const std::size_t stride = static_cast<std::size_t>(raster.width) * 3 + 1;
    if (raw.size() != stride * raster.height)
        throw ParseError("bad_png", "unexpected scanline data size");
    raster.pixels.reserve(static_cast<std::size_t>(raster.width) * raster.height * 3);
    for (std::uint32_t y = 0; y < raster.height; ++y) {
        if (raw[y * stride] != 0) throw ParseError("bad_png", "only filter 0 is supported");
        raster.pixels.insert(raster.pixels.end(), raw.begin() + y * stride + 1,
                             raw.begin() + (y + 1) * stride);
    }
    return raster;
}

void write_png(const Raster& raster, const std::filesystem::path& file) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw IoError("cannot open " + file.string() + " for writing");
    const std::string bytes = encode_png(raster);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + file.string());
}

Raster read_png(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError("cannot open " + file.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return decode_png(buffer.str());
}

}  // namespace cirforge::raster
