// Copyright (C) 2026 The SQUARE Authors
// SPDX-License-Identifier: Apache-2.0

#include "square/store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "square/error.hpp"

namespace square {

namespace {

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

    std::span<const std::uint8_t> take(std::size_t n, const char* what) {
        if (remaining() < n) {
            throw Error(ErrorCode::TruncatedFile,
                        std::string("unexpected end of data while reading ") + what + " at offset " +
                            std::to_string(pos_));
        }
        auto out = bytes_.subspan(pos_, n);
        pos_ += n;
        return out;
    }

    template <typename T>
    T read_le(const char* what) {
        auto raw = take(sizeof(T), what);
        T value = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            value |= static_cast<T>(static_cast<T>(raw[i]) << (8 * i));
        }
        return value;
    }

    float read_f32(const char* what) { return std::bit_cast<float>(read_le<std::uint32_t>(what)); }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

template <typename T>
void append_le(std::vector<std::uint8_t>& out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<std::uint8_t>((value >> (8 * i)) & 0xFF));
    }
}

}  // namespace

double dot(std::span<const float> a, std::span<const float> b) {
    double acc = 0.0;
    const std::size_t n = std::min(a.size(), b.size());
    for (std::size_t i = 0; i < n; ++i) {
        acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    }
    return acc;
}

double l2_norm(std::span<const float> v) { return std::sqrt(dot(v, v)); }

Embedding normalize(const Embedding& e) {
    const double n = l2_norm(e.values());
    if (!(n > 0.0) || !std::isfinite(n)) {
        throw Error(ErrorCode::ZeroVector, "cannot normalize a zero vector");
    }
    std::vector<float> out(e.dim());
    for (std::size_t i = 0; i < e.dim(); ++i) {
        out[i] = static_cast<float>(static_cast<double>(e[i]) / n);
    }
    return Embedding(std::move(out));
}

double cosine(const Embedding& a, const Embedding& b) {
    if (a.dim() != b.dim()) {
        throw Error(ErrorCode::DimMismatch,
                    "cosine of dim " + std::to_string(a.dim()) + " vs " + std::to_string(b.dim()));
    }
    const double na = l2_norm(a.values());
    const double nb = l2_norm(b.values());
    if (!(na > 0.0) || !(nb > 0.0)) {
        throw Error(ErrorCode::ZeroVector, "cosine with a zero vector");
    }
    return std::clamp(dot(a.values(), b.values()) / (na * nb), -1.0, 1.0);
}

void check_finite(const Embedding& e, std::string_view id) {
    for (std::size_t i = 0; i < e.dim(); ++i) {
        if (!std::isfinite(e[i])) {
            throw Error(ErrorCode::NonFiniteValue,
                        "non-finite component " + std::to_string(i) + " in embedding '" + std::string(id) +
                            "'");
        }
    }
}

GalleryIndex::GalleryIndex(std::uint32_t dim, std::vector<Item> items) : dim_(dim), items_(std::move(items)) {
    if (dim_ == 0) {
        throw Error(ErrorCode::DimMismatch, "index dimension must be positive");
    }
    lookup_.reserve(items_.size());
    norms_.reserve(items_.size());
    for (std::size_t pos = 0; pos < items_.size(); ++pos) {
        const auto& item = items_[pos];
        if (item.embedding.dim() != dim_) {
            throw Error(ErrorCode::DimMismatch, "embedding '" + item.id + "' has dim " +
                                                    std::to_string(item.embedding.dim()) + ", index dim is " +
                                                    std::to_string(dim_));
        }
        check_finite(item.embedding, item.id);
        if (!lookup_.emplace(item.id, pos).second) {
            throw Error(ErrorCode::DuplicateId, "duplicate id '" + item.id + "'");
        }
        norms_.push_back(l2_norm(item.embedding.values()));
    }
}

std::optional<std::size_t> GalleryIndex::find(std::string_view id) const {
    auto it = lookup_.find(std::string(id));
    if (it == lookup_.end()) {
        return std::nullopt;
    }
    return it->second;
}

const Embedding& GalleryIndex::at(std::string_view id) const {
    auto pos = find(id);
    if (!pos) {
        throw Error(ErrorCode::UnknownId, "id '" + std::string(id) + "' not in index");
    }
    return items_[*pos].embedding;
}

GalleryIndex read_index(std::span<const std::uint8_t> bytes) {
    ByteReader reader(bytes);
    if (bytes.size() < kEmbeddingMagic.size() ||
        std::memcmp(bytes.data(), kEmbeddingMagic.data(), kEmbeddingMagic.size()) != 0) {
        throw Error(ErrorCode::BadMagic, "missing SQEMB1 header");
    }
    reader.take(kEmbeddingMagic.size(), "magic");
    const auto version = reader.read_le<std::uint16_t>("format version");
    if (version != kEmbeddingFormatVersion) {
        throw Error(ErrorCode::BadMagic, "unsupported format version " + std::to_string(version));
    }
    const auto dim = reader.read_le<std::uint32_t>("dim");
    const auto count = reader.read_le<std::uint64_t>("count");
    if (dim == 0) {
        throw Error(ErrorCode::DimMismatch, "header declares dim 0");
    }

    // Each record needs at least 2 + 4*dim bytes; never trust `count` beyond that bound.
    const std::uint64_t min_record = 2 + 4ULL * dim;
    if (count > reader.remaining() / min_record) {
        throw Error(ErrorCode::TruncatedFile, "header declares " + std::to_string(count) +
                                                  " records but only " + std::to_string(reader.remaining()) +
                                                  " bytes follow");
    }

    std::vector<GalleryIndex::Item> items;
    items.reserve(static_cast<std::size_t>(count));
    for (std::uint64_t r = 0; r < count; ++r) {
        const auto id_len = reader.read_le<std::uint16_t>("id length");
        auto id_bytes = reader.take(id_len, "id");
        std::string id(reinterpret_cast<const char*>(id_bytes.data()), id_bytes.size());
        std::vector<float> values(dim);
        for (std::uint32_t i = 0; i < dim; ++i) {
            values[i] = reader.read_f32("vector");
        }
        items.push_back({std::move(id), Embedding(std::move(values))});
    }
    if (reader.remaining() != 0) {
        throw Error(ErrorCode::TrailingData, std::to_string(reader.remaining()) + " bytes after last record");
    }
    return GalleryIndex(dim, std::move(items));
}

std::vector<std::uint8_t> serialize_index(const GalleryIndex& index) {
    std::vector<std::uint8_t> out;
    out.reserve(kEmbeddingMagic.size() + 14 + index.size() * (2 + 16 + 4ULL * index.dim()));
    out.insert(out.end(), kEmbeddingMagic.begin(), kEmbeddingMagic.end());
    append_le<std::uint16_t>(out, kEmbeddingFormatVersion);
    append_le<std::uint32_t>(out, index.dim());
    append_le<std::uint64_t>(out, index.size());
    for (const auto& item : index.items()) {
        if (item.id.size() > 0xFFFF) {
            throw Error(ErrorCode::IoError, "id longer than 65535 bytes");
        }
        append_le<std::uint16_t>(out, static_cast<std::uint16_t>(item.id.size()));
        out.insert(out.end(), item.id.begin(), item.id.end());
        for (float v : item.embedding.values()) {
            append_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
        }
    }
    return out;
}

GalleryIndex load_index(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::IoError, "cannot open " + path.string());
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return read_index(bytes);
    } catch (const Error& e) {
        throw Error(e.code(), path.string() + ": " + e.what());
    }
}

void write_index(const GalleryIndex& index, const std::filesystem::path& path) {
    const auto bytes = serialize_index(index);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorCode::IoError, "cannot write " + path.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw Error(ErrorCode::IoError, "short write to " + path.string());
    }
}

std::filesystem::path manifest_path_for(const std::filesystem::path& index_path) {
    return std::filesystem::path(index_path.string() + ".manifest.json");
}

std::optional<IndexManifest> load_index_manifest(const std::filesystem::path& index_path) {
    const auto path = manifest_path_for(index_path);
    std::ifstream in(path);
    if (!in) {
        return std::nullopt;
    }
    try {
        const auto j = nlohmann::json::parse(in);
        IndexManifest m;
        m.checkpoint = j.value("checkpoint", "");
        m.dim = j.value("dim", 0U);
        m.count = j.value("count", std::uint64_t{0});
        m.created_at = j.value("created_at", "");
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
    }
}

}  // namespace square
