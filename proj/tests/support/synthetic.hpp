// Copyright (C) 2026 The SQUARE Authors
// SPDX-License-Identifier: Apache-2.0
//
// A small synthetic retrieval world: a gallery of solid-color images with random embeddings, and
// queries whose caption and text embeddings are planted near a chosen target item.

#pragma once

#include <map>
#include <random>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "square/metrics.hpp"
#include "square/pipeline.hpp"

namespace square::testing {

struct SyntheticWorld {
    GalleryIndex gallery;   // also serves as the reference-image index
    GalleryIndex text;      // modification texts, keyed by query id
    GalleryIndex caption;   // generated captions, keyed by query id
    std::vector<QueryAnnotation> queries;
    MemoryImageSource images;

    EmbeddingSources sources() const { return {&gallery, &gallery, &text, &caption}; }
};

inline std::vector<float> mix_towards(const Embedding& target, double weight, std::size_t dim, std::mt19937_64& rng) {
    const auto noise = random_vector(dim, rng);
    const double tn = l2_norm(target.values());
    const double nn = l2_norm(noise);
    std::vector<float> out(dim);
    for (std::size_t i = 0; i < dim; ++i) {
        out[i] = static_cast<float>(weight * target[i] / tn + (1.0 - weight) * noise[i] / nn);
    }
    return out;
}

/// `gallery_size` items "g00000".."g000NN" and `query_count` queries "q000".., each with one target
/// and a distinct reference drawn from the gallery.
inline SyntheticWorld make_world(std::size_t gallery_size, std::size_t query_count, std::size_t dim,
                                 std::uint64_t seed, std::size_t image_px = 24) {
    std::mt19937_64 rng(seed);
    SyntheticWorld w;
    w.gallery = random_gallery(gallery_size, dim, rng);
    for (std::size_t i = 0; i < gallery_size; ++i) {
        w.images.add(w.gallery.item(i).id, solid_png(image_px + i % 7, image_px, fixture_color(i)));
    }
    std::vector<GalleryIndex::Item> text_items;
    std::vector<GalleryIndex::Item> caption_items;
    std::uniform_int_distribution<std::size_t> pick(0, gallery_size - 1);
    for (std::size_t q = 0; q < query_count; ++q) {
        const std::size_t target = pick(rng);
        std::size_t reference = pick(rng);
        while (reference == target) reference = pick(rng);
        QueryAnnotation a;
        a.query_id = numbered_id("q", q, 3);
        a.reference_id = w.gallery.item(reference).id;
        a.modification_text = "variant " + std::to_string(q);
        a.target_ids = {w.gallery.item(target).id};
        const auto& t = w.gallery.item(target).embedding;
        text_items.push_back({a.query_id, Embedding(mix_towards(t, 0.35, dim, rng))});
        caption_items.push_back({a.query_id, Embedding(mix_towards(t, 0.3, dim, rng))});
        w.queries.push_back(std::move(a));
    }
    w.text = GalleryIndex(static_cast<std::uint32_t>(dim), std::move(text_items));
    w.caption = GalleryIndex(static_cast<std::uint32_t>(dim), std::move(caption_items));
    return w;
}

/// An offline run configuration: mock backend, one worker, no cache.
inline RunConfig mock_run_config(const std::string& rerank_spec, std::size_t m = 4) {
    RunConfig cfg;
    cfg.grid.m = m;
    cfg.grid.cell_px = 64;
    cfg.grid.border_px = 3;
    cfg.grid.label_px = 7;
    cfg.depth = 30;
    cfg.mllm_caption.endpoint_url = "mock:echo";
    cfg.mllm_rerank.endpoint_url = rerank_spec;
    for (auto* m_cfg : {&cfg.mllm_caption, &cfg.mllm_rerank}) {
        m_cfg->backoff_base = std::chrono::milliseconds(1);
        m_cfg->backoff_max = std::chrono::milliseconds(2);
        m_cfg->max_retries = 1;
    }
    return cfg;
}

}  // namespace square::testing
