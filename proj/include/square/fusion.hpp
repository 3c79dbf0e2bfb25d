// Copyright (C) 2026 The SQUARE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>

#include "square/store.hpp"

namespace square {

inline constexpr double kDefaultAlpha = 0.7;
inline constexpr double kDefaultBeta = 0.6;

struct FusionParams {
    double alpha = kDefaultAlpha;  ///< weight of the modification text against the reference image
    double beta = kDefaultBeta;    ///< weight of the generated target caption against the fused query

    /// Throws AlphaOutOfRange / BetaOutOfRange.
    void validate() const;
};

struct ComposedQuery {
    std::string query_id;
    Embedding q_vlm;    ///< image/text fusion, unit length
    Embedding q_final;  ///< caption-augmented query, unit length
    FusionParams params;
};

/// normalize((1 - alpha) * normalize(image) + alpha * normalize(text))
Embedding fuse_vlm(const Embedding& ref_img_emb, const Embedding& mod_text_emb, double alpha);

/// normalize((1 - beta) * q_vlm + beta * normalize(caption))
///
/// q_vlm is taken as given (fuse_vlm already returns it at unit length).
Embedding fuse_final(const Embedding& q_vlm, const Embedding& caption_emb, double beta);

/// Both fusion steps. Without a caption embedding the caption term is dropped
/// (equivalent to beta = 0) and `params.beta` records the effective 0.
ComposedQuery compose_query(std::string query_id, const Embedding& ref_img_emb, const Embedding& mod_text_emb,
                            const Embedding* caption_emb, FusionParams params);

}  // namespace square
