// Copyright (C) 2026 CIRForge Contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cirforge::raster {

using Rgb = std::array<std::uint8_t, 3>;

/// 8-bit RGB raster. Row-major, no padding.
struct Raster {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<std::uint8_t> pixels;  // width * height * 3

    Raster() = default;
    Raster(std::uint32_t w, std::uint32_t h, Rgb fill = {0, 0, 0});

    Rgb at(std::uint32_t x, std::uint32_t y) const;
    void set(std::uint32_t x, std::uint32_t y, Rgb color);
    void fill_rect(std::uint32_t x0, std::uint32_t y0, std::uint32_t x1, std::uint32_t y1,
                   Rgb color);

    friend bool operator==(const Raster&, const Raster&) = default;
};

/// Byte-deterministic PNG: 8-bit RGB, filter 0 scanlines, stored deflate
/// blocks. Identical rasters always encode to identical bytes, on every
/// platform.
std::string encode_png(const Raster& raster);

/// Decodes PNGs produced by encode_png (8-bit RGB, filters 0/none only).
Raster decode_png(const std::string& bytes);

void write_png(const Raster& raster, const std::filesystem::path& file);
Raster read_png(const std::filesystem::path& file);

}  // namespace cirforge::raster
