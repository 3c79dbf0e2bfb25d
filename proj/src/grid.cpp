// Copyright (C) 2026 The SQUARE Authors
// SPDX-License-Identifier: Apache-2.0

#include "square/grid.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>

#include "square/error.hpp"

namespace square {

namespace {

constexpr std::size_t kGlyphW = 5;
constexpr std::size_t kGlyphH = 7;

// 5x7 digit glyphs, one byte per row, low 5 bits used (bit 4 = leftmost column).
constexpr std::array<std::array<std::uint8_t, kGlyphH>, 10> kDigits = {{
    {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E},  // 0
    {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E},  // 1
    {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F},  // 2
    {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E},  // 3
    {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02},  // 4
    {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E},  // 5
    {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E},  // 6
    {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},  // 7
    {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E},  // 8
    {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C},  // 9
}};

constexpr Rgb kWhite{255, 255, 255};

std::size_t glyph_scale(const GridSpec& spec) { return std::max<std::size_t>(1, spec.label_px / kGlyphH); }

void draw_digits(Raster& canvas, const std::string& text, std::size_t x0, std::size_t y0, std::size_t scale,
                 Rgb color) {
    std::size_t x = x0;
    for (char ch : text) {
        const auto& glyph = kDigits[static_cast<std::size_t>(ch - '0')];
        for (std::size_t gy = 0; gy < kGlyphH; ++gy) {
            for (std::size_t gx = 0; gx < kGlyphW; ++gx) {
                if (glyph[gy] & (0x10u >> gx)) {
                    canvas.fill_rect(x + gx * scale, y0 + gy * scale, scale, scale, color);
                }
            }
        }
        x += (kGlyphW + 1) * scale;
    }
}

}  // namespace

std::vector<Rgb> default_palette() {
    return {
        {230, 25, 75},   // red
        {60, 180, 75},   // green
        {0, 130, 200},   // blue
        {245, 130, 48},  // orange
        {145, 30, 180},  // purple
        {0, 128, 128},   // teal
        {240, 50, 230},  // magenta
        {128, 64, 0},    // brown
    };
}

void GridSpec::validate() const {
    if (m < 2) {
        throw Error(ErrorCode::ConfigError, "grid side m must be >= 2");
    }
    if (cell_px < 64) {
        throw Error(ErrorCode::ConfigError, "cell_px must be >= 64");
    }
    if (border_px == 0 || label_px == 0) {
        throw Error(ErrorCode::ConfigError, "border_px and label_px must be positive");
    }
    if (palette.empty()) {
        throw Error(ErrorCode::ConfigError, "palette must not be empty");
    }
    const auto widest = label_chip_box(cells() - 1, *this);
    if (2 * widest.width > cell_px || 2 * widest.height > cell_px) {
        throw Error(ErrorCode::ConfigError, "label chip does not fit in the cell; lower label_px or raise cell_px");
    }
}

ChipBox label_chip_box(std::size_t index, const GridSpec& spec) {
    const std::size_t s = glyph_scale(spec);
    const std::size_t digits = std::to_string(index).size();
    const std::size_t pad = s;
    return {2 * pad + digits * kGlyphW * s + (digits - 1) * s, 2 * pad + kGlyphH * s};
}

Raster render_label_chip(std::size_t index, const GridSpec& spec) {
    const auto box = label_chip_box(index, spec);
    const Rgb color = spec.palette[index % spec.palette.size()];
    Raster chip(box.width, box.height, color);
    const std::size_t s = glyph_scale(spec);
    draw_digits(chip, std::to_string(index), s, s, s, kWhite);
    return chip;
}

Raster annotate(const Raster& image, std::size_t index, const GridSpec& spec) {
    if (index >= spec.cells()) {
        throw Error(ErrorCode::IndexOutOfRange,
                    "label " + std::to_string(index) + " outside grid of " + std::to_string(spec.cells()));
    }
    if (image.empty()) {
        throw Error(ErrorCode::EmptyImage, "candidate " + std::to_string(index) + " has no pixels");
    }
    const std::size_t cell = spec.cell_px;
    const double scale = std::min(static_cast<double>(cell) / static_cast<double>(image.width()),
                                  static_cast<double>(cell) / static_cast<double>(image.height()));
    const auto fit = [&](std::size_t extent) {
        return std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(static_cast<double>(extent) * scale)),
                                       1, cell);
    };
    const std::size_t w = fit(image.width());
    const std::size_t h = fit(image.height());

    Raster out(cell, cell);
    out.blit(resize(image, w, h), (cell - w) / 2, (cell - h) / 2);

    const Rgb color = spec.palette[index % spec.palette.size()];
    const std::size_t b = std::min(spec.border_px, cell / 2);
    out.fill_rect(0, 0, cell, b, color);
    out.fill_rect(0, cell - b, cell, b, color);
    out.fill_rect(0, 0, b, cell, color);
    out.fill_rect(cell - b, 0, b, cell, color);

    out.blit(render_label_chip(index, spec), 0, 0);
    return out;
}

GridImage compose_grid(const std::vector<std::pair<std::string, Raster>>& images, const GridSpec& spec) {
    spec.validate();
    if (images.size() != spec.cells()) {
        throw Error(ErrorCode::WrongCount, "grid of " + std::to_string(spec.m) + "x" + std::to_string(spec.m) +
                                               " needs " + std::to_string(spec.cells()) + " images, got " +
                                               std::to_string(images.size()));
    }
    GridImage grid;
    grid.m = spec.m;
    grid.cell_px = spec.cell_px;
    grid.pixels = Raster(spec.m * spec.cell_px, spec.m * spec.cell_px);
    grid.source_ids.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        const auto pos = cell_of(i, spec.m);
        grid.pixels.blit(annotate(images[i].second, i, spec), pos.col * spec.cell_px, pos.row * spec.cell_px);
        grid.source_ids.push_back(images[i].first);
    }
    return grid;
}

}  // namespace square
