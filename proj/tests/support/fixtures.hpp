// Copyright (C) 2026 The SQUARE Authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared test fixtures and reference oracles. The oracles are written from the definitions, in the
// plainest possible way, and never call into the library code they check.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "square/error.hpp"
#include "square/image.hpp"
#include "square/store.hpp"

namespace square::testing {

// ------------------------------------------------------------------------------------------------
// Oracles

/// Cosine from the definition: a.b / (|a| |b|), all in double, no clamping shortcuts.
inline double oracle_cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    return ab / (std::sqrt(aa) * std::sqrt(bb));
}

inline std::vector<double> to_double(const Embedding& e) { return {e.values().begin(), e.values().end()}; }

inline std::vector<double> oracle_normalize(std::vector<double> v) {
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    for (double& x : v) x /= n;
    return v;
}

/// Weighted interpolation of two directions, renormalized.
inline std::vector<double> oracle_mix(const std::vector<double>& a, const std::vector<double>& b, double w) {
    const auto na = oracle_normalize(a);
    const auto nb = oracle_normalize(b);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = (1.0 - w) * na[i] + w * nb[i];
    return oracle_normalize(out);
}

/// Scores every item, sorts the whole gallery (score desc, id asc) and cuts at k.
inline std::vector<std::string> oracle_rank(const std::vector<double>& q,
                                            const std::vector<std::pair<std::string, std::vector<double>>>& items,
                                            std::size_t k, const std::set<std::string>& exclude = {}) {
    std::vector<std::pair<double, std::string>> scored;
    for (const auto& [id, v] : items) {
        if (exclude.count(id) == 0) scored.emplace_back(oracle_cosine(q, v), id);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
        if (x.first != y.first) return x.first > y.first;
        return x.second < y.second;
    });
    std::vector<std::string> out;
    for (std::size_t i = 0; i < scored.size() && i < k; ++i) out.push_back(scored[i].second);
    return out;
}

/// AP@k by direct summation: sum over hit positions of precision-at-that-position, divided by
/// min(|targets|, k).
inline double oracle_ap(const std::vector<std::string>& ranking, const std::set<std::string>& targets, std::size_t k) {
    double sum = 0.0;
    for (std::size_t pos = 1; pos <= k && pos <= ranking.size(); ++pos) {
        if (targets.count(ranking[pos - 1]) == 0) continue;
        std::size_t hits_so_far = 0;
        for (std::size_t j = 1; j <= pos; ++j) {
            if (targets.count(ranking[j - 1])) ++hits_so_far;
        }
        sum += static_cast<double>(hits_so_far) / static_cast<double>(pos);
    }
    return sum / static_cast<double>(std::min(targets.size(), k));
}

inline bool is_permutation_of_range(const std::vector<std::size_t>& v, std::size_t k) {
    if (v.size() != k) return false;
    std::vector<char> seen(k, 0);
    for (auto x : v) {
        if (x >= k || seen[x]) return false;
        seen[x] = 1;
    }
    return true;
}

// ------------------------------------------------------------------------------------------------
// Fixtures

/// Error code thrown by `f`, or nullopt when it returns normally.
template <typename F>
std::optional<ErrorCode> thrown_code(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return std::nullopt;
}

inline std::vector<float> random_vector(std::size_t dim, std::mt19937_64& rng) {
    std::normal_distribution<float> dist(0.0f, 1.0f);
    std::vector<float> v(dim);
    for (auto& x : v) x = dist(rng);
    return v;
}

inline Embedding random_embedding(std::size_t dim, std::mt19937_64& rng) { return Embedding(random_vector(dim, rng)); }

inline std::string numbered_id(const std::string& prefix, std::size_t i, int width = 5) {
    std::string digits = std::to_string(i);
    if (static_cast<int>(digits.size()) < width) digits.insert(0, width - digits.size(), '0');
    return prefix + digits;
}

inline GalleryIndex random_gallery(std::size_t n, std::size_t dim, std::mt19937_64& rng,
                                   const std::string& prefix = "g") {
    std::vector<GalleryIndex::Item> items;
    items.reserve(n);
    for (std::size_t i = 0; i < n; ++i) items.push_back({numbered_id(prefix, i), random_embedding(dim, rng)});
    return GalleryIndex(static_cast<std::uint32_t>(dim), std::move(items));
}

inline std::vector<std::pair<std::string, std::vector<double>>> gallery_as_double(const GalleryIndex& g) {
    std::vector<std::pair<std::string, std::vector<double>>> out;
    for (const auto& it : g.items()) out.emplace_back(it.id, to_double(it.embedding));
    return out;
}

/// Distinct, fully saturated-ish color for fixture image i.
inline Rgb fixture_color(std::size_t i) {
    return {static_cast<std::uint8_t>((i * 67 + 13) % 256), static_cast<std::uint8_t>((i * 151 + 101) % 256),
            static_cast<std::uint8_t>((i * 199 + 53) % 256)};
}

inline std::vector<std::uint8_t> solid_png(std::size_t w, std::size_t h, Rgb c) { return encode_png(Raster(w, h, c)); }

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("square-" + tag + "-" + std::to_string(rd()) + "-" +
                 std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

}  // namespace square::testing
