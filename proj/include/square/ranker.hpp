// Copyright (C) 2026 The SQUARE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "square/fusion.hpp"
#include "square/store.hpp"

namespace square {

struct ScoredCandidate {
    std::string gallery_id;
    double score = 0.0;
    std::size_t rank = 0;

    bool operator==(const ScoredCandidate&) const = default;
};

struct CandidateList {
    std::string query_id;
    std::vector<ScoredCandidate> candidates;
    std::size_t k = 0;

    std::size_t size() const noexcept { return candidates.size(); }
    std::vector<std::string> ids() const;

    bool operator==(const CandidateList&) const = default;
};

/// Ranking order: score descending, then gallery id ascending.
bool ranks_before(double score_a, const std::string& id_a, double score_b, const std::string& id_b) noexcept;

struct RankOptions {
    /// Number of scoring partitions. Output does not depend on this value.
    std::size_t threads = 1;
};

/// Exact top-k cosine search over `index`, skipping ids in `exclude`.
/// Throws EmptyGallery (nothing left after exclusion) and DimMismatch.
CandidateList global_rank(const ComposedQuery& q, const GalleryIndex& index, std::size_t k,
                          const std::set<std::string>& exclude = {}, RankOptions options = {});

/// Scores and sorts only `subset`. Throws UnknownId.
CandidateList rank_subset(const ComposedQuery& q, const GalleryIndex& index, std::span<const std::string> subset);

// Ranking dump: JSON lines {"query_id": ..., "candidates": [{"id": ..., "score": 0.123456}, ...]}.
// Scores are written with exactly 6 decimal places.
void write_ranking_line(std::ostream& out, const CandidateList& list);
void write_rankings(std::ostream& out, const std::vector<CandidateList>& lists);
std::vector<CandidateList> read_rankings(std::istream& in);

}  // namespace square
