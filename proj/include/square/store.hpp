// Copyright (C) 2026 The SQUARE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace square {

/// A vector in the shared image/text embedding space. Values are kept exactly
/// as exported; normalization happens at the use site.
class Embedding {
public:
    Embedding() = default;
    explicit Embedding(std::vector<float> values) : values_(std::move(values)) {}
    Embedding(std::initializer_list<float> values) : values_(values) {}

    std::size_t dim() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }
    std::span<const float> values() const noexcept { return values_; }
    float operator[](std::size_t i) const noexcept { return values_[i]; }

    bool operator==(const Embedding&) const = default;

private:
    std::vector<float> values_;
};

double dot(std::span<const float> a, std::span<const float> b);
double l2_norm(std::span<const float> v);

/// Returns e / ||e||. Throws ZeroVector for a zero (or non-finite-norm) input.
Embedding normalize(const Embedding& e);

/// Cosine similarity clamped to [-1, 1]. Throws DimMismatch / ZeroVector.
double cosine(const Embedding& a, const Embedding& b);

/// Throws NonFiniteValue if any component is NaN or infinite.
void check_finite(const Embedding& e, std::string_view id = {});

/// Immutable id -> embedding store. Iteration order is insertion (load) order.
class GalleryIndex {
public:
    struct Item {
        std::string id;
        Embedding embedding;
    };

    GalleryIndex() = default;

    /// Validates ids (unique), dimensions (all equal `dim`, dim > 0) and finiteness.
    GalleryIndex(std::uint32_t dim, std::vector<Item> items);

    std::uint32_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return items_.size(); }
    bool empty() const noexcept { return items_.empty(); }

    const std::vector<Item>& items() const noexcept { return items_; }
    const Item& item(std::size_t pos) const { return items_.at(pos); }

    /// L2 norm of the stored (raw) vector at `pos`, computed once at construction.
    double norm(std::size_t pos) const { return norms_.at(pos); }

    std::optional<std::size_t> find(std::string_view id) const;
    bool contains(std::string_view id) const { return find(id).has_value(); }

    /// Throws UnknownId.
    const Embedding& at(std::string_view id) const;

private:
    std::uint32_t dim_ = 0;
    std::vector<Item> items_;
    std::vector<double> norms_;
    std::unordered_map<std::string, std::size_t> lookup_;
};

// Binary embedding file ("SQEMB1"):
//   magic[6] | version u16 | dim u32 | count u64 | count x (id_len u16 | id bytes | dim x f32)
// All integers and floats little-endian.
inline constexpr std::string_view kEmbeddingMagic = "SQEMB1";
inline constexpr std::uint16_t kEmbeddingFormatVersion = 1;

GalleryIndex read_index(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> serialize_index(const GalleryIndex& index);

GalleryIndex load_index(const std::filesystem::path& path);
void write_index(const GalleryIndex& index, const std::filesystem::path& path);

/// Sibling manifest written by the embedding exporter: `<file>.manifest.json`.
struct IndexManifest {
    std::string checkpoint;
    std::uint32_t dim = 0;
    std::uint64_t count = 0;
    std::string created_at;
};

std::filesystem::path manifest_path_for(const std::filesystem::path& index_path);
std::optional<IndexManifest> load_index_manifest(const std::filesystem::path& index_path);

}  // namespace square
