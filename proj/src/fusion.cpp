// Copyright (C) 2026 The SQUARE Authors
// SPDX-License-Identifier: Apache-2.0

#include "square/fusion.hpp"

#include <cmath>
#include <vector>

#include "square/error.hpp"

namespace square {

namespace {

void require_same_dim(const Embedding& a, const Embedding& b, const char* what) {
    if (a.dim() != b.dim() || a.dim() == 0) {
        throw Error(ErrorCode::DimMismatch, std::string(what) + ": dim " + std::to_string(a.dim()) + " vs " +
                                                std::to_string(b.dim()));
    }
}

double checked_norm(const Embedding& e, const char* what) {
    const double n = l2_norm(e.values());
    if (!(n > 0.0) || !std::isfinite(n)) {
        throw Error(ErrorCode::ZeroVector, std::string(what) + " is a zero vector");
    }
    return n;
}

// Weighted sum of two directions, each scaled by its own inverse norm, then renormalized.
Embedding blend(const Embedding& a, double a_norm, double wa, const Embedding& b, double b_norm, double wb) {
    std::vector<double> mix(a.dim());
    for (std::size_t i = 0; i < a.dim(); ++i) {
        mix[i] = wa * (static_cast<double>(a[i]) / a_norm) + wb * (static_cast<double>(b[i]) / b_norm);
    }
    double sq = 0.0;
    for (double v : mix) {
        sq += v * v;
    }
    const double n = std::sqrt(sq);
    // Exact cancellation of antipodal inputs leaves only rounding noise.
    if (!(n > 1e-12)) {
        throw Error(ErrorCode::ZeroVector, "fused query vanishes (antipodal inputs with cancelling weights)");
    }
    std::vector<float> out(mix.size());
    for (std::size_t i = 0; i < mix.size(); ++i) {
        out[i] = static_cast<float>(mix[i] / n);
    }
    return Embedding(std::move(out));
}

}  // namespace

void FusionParams::validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw Error(ErrorCode::AlphaOutOfRange, "alpha = " + std::to_string(alpha));
    }
    if (!(beta >= 0.0 && beta <= 1.0)) {
        throw Error(ErrorCode::BetaOutOfRange, "beta = " + std::to_string(beta));
    }
}

Embedding fuse_vlm(const Embedding& ref_img_emb, const Embedding& mod_text_emb, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw Error(ErrorCode::AlphaOutOfRange, "alpha = " + std::to_string(alpha));
    }
    require_same_dim(ref_img_emb, mod_text_emb, "fuse_vlm");
    const double ni = checked_norm(ref_img_emb, "reference image embedding");
    const double nt = checked_norm(mod_text_emb, "modification text embedding");
    return blend(ref_img_emb, ni, 1.0 - alpha, mod_text_emb, nt, alpha);
}

Embedding fuse_final(const Embedding& q_vlm, const Embedding& caption_emb, double beta) {
    if (!(beta >= 0.0 && beta <= 1.0)) {
        throw Error(ErrorCode::BetaOutOfRange, "beta = " + std::to_string(beta));
    }
    require_same_dim(q_vlm, caption_emb, "fuse_final");
    checked_norm(q_vlm, "q_vlm");
    const double nc = checked_norm(caption_emb, "caption embedding");
    return blend(q_vlm, 1.0, 1.0 - beta, caption_emb, nc, beta);
}

ComposedQuery compose_query(std::string query_id, const Embedding& ref_img_emb, const Embedding& mod_text_emb,
                            const Embedding* caption_emb, FusionParams params) {
    params.validate();
    ComposedQuery q;
    q.query_id = std::move(query_id);
    q.q_vlm = fuse_vlm(ref_img_emb, mod_text_emb, params.alpha);
    if (caption_emb == nullptr) {
        params.beta = 0.0;
    }
    q.q_final = params.beta == 0.0 ? q.q_vlm : fuse_final(q.q_vlm, *caption_emb, params.beta);
    q.params = params;
    return q;
}

}  // namespace square
