// Copyright (C) 2026 The SQUARE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

namespace square {

struct Rgb {
    std::uint8_t r = 0;
    std::uint8_t g = 0;
    std::uint8_t b = 0;

    bool operator==(const Rgb&) const = default;
};

/// 8-bit RGB raster, row-major, tightly packed.
class Raster {
public:
    Raster() = default;
    Raster(std::size_t width, std::size_t height, Rgb fill = {});

    std::size_t width() const noexcept { return width_; }
    std::size_t height() const noexcept { return height_; }
    bool empty() const noexcept { return width_ == 0 || height_ == 0; }

    Rgb at(std::size_t x, std::size_t y) const;
    void set(std::size_t x, std::size_t y, Rgb c);

    /// Fills the rectangle clipped to the raster bounds.
    void fill_rect(std::size_t x, std::size_t y, std::size_t w, std::size_t h, Rgb c);

    /// Copies `src` with its top-left corner at (x, y), clipped.
    void blit(const Raster& src, std::size_t x, std::size_t y);

    std::span<const std::uint8_t> bytes() const noexcept { return data_; }

    bool operator==(const Raster&) const = default;

private:
    std::size_t width_ = 0;
    std::size_t height_ = 0;
    std::vector<std::uint8_t> data_;
};

enum class ImageFormat { Png, Jpeg, Unknown };

ImageFormat sniff_format(std::span<const std::uint8_t> bytes) noexcept;
std::string_view mime_type(ImageFormat format) noexcept;

/// Decodes PNG or JPEG (any channel layout; alpha is composited onto black). Throws ImageDecode.
Raster decode_image(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_png(const Raster& image);

/// Resamples to exactly `width` x `height`: area averaging when shrinking, bilinear when growing.
Raster resize(const Raster& src, std::size_t width, std::size_t height);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace square
