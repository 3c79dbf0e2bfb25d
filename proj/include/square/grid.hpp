// Copyright (C) 2026 The SQUARE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "square/image.hpp"

namespace square {

/// Eight well-separated colors; cell i uses palette[i % size].
std::vector<Rgb> default_palette();

struct GridSpec {
    std::size_t m = 4;         ///< grid side; the grid holds m*m candidates
    std::size_t cell_px = 256;
    std::size_t border_px = 6;
    std::size_t label_px = 28;  ///< digit height
    std::vector<Rgb> palette = default_palette();

    std::size_t cells() const noexcept { return m * m; }

    /// Throws ConfigError.
    void validate() const;
};

struct CellPos {
    std::size_t row = 0;
    std::size_t col = 0;

    bool operator==(const CellPos&) const = default;
};

/// Row-major placement of rank index `i` in an m-wide grid.
constexpr CellPos cell_of(std::size_t i, std::size_t m) noexcept { return {i / m, i % m}; }

struct GridImage {
    Raster pixels;
    std::size_t m = 0;
    std::size_t cell_px = 0;
    std::vector<std::string> source_ids;

    CellPos cell_of(std::size_t i) const noexcept { return square::cell_of(i, m); }
};

/// Extent of the label chip for `index` (top-left anchored inside the cell).
struct ChipBox {
    std::size_t width = 0;
    std::size_t height = 0;
};
ChipBox label_chip_box(std::size_t index, const GridSpec& spec);

/// The label chip for `index` rendered on its own: filled palette color with white digits.
Raster render_label_chip(std::size_t index, const GridSpec& spec);

/// Letterboxes `image` into a cell_px square (uniform scale, black padding, centered), draws a
/// border in the index color and the index label chip at the top-left corner.
/// Throws IndexOutOfRange (index >= m*m) and EmptyImage.
Raster annotate(const Raster& image, std::size_t index, const GridSpec& spec);

/// Arranges m*m candidate images (in rank order) row-wise. Throws WrongCount.
GridImage compose_grid(const std::vector<std::pair<std::string, Raster>>& images, const GridSpec& spec);

}  // namespace square
