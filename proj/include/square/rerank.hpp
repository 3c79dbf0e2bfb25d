// Copyright (C) 2026 The SQUARE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "square/ranker.hpp"

namespace square {

enum class RerankStatus {
    Full,      ///< the model ordered every candidate in the window
    Partial,   ///< the model ordered some candidates; the rest keep their initial order
    Skipped,   ///< no usable completion (API failure or window not fillable); initial order stands
    Fallback,  ///< completion contained no usable index; initial order stands
};

std::string_view to_string(RerankStatus status) noexcept;

struct ParseStats {
    std::size_t out_of_range = 0;
    std::size_t duplicates = 0;
};

/// Extracts the model's index sequence from free-form text. The first bracketed list of integers
/// wins; without one, the first run of integers separated only by commas/whitespace is taken.
/// Values outside [0, k) and repeats are dropped (counted in `stats`).
std::vector<std::size_t> parse_indices(std::string_view completion, std::size_t k, ParseStats* stats = nullptr);

/// pi_prime followed by the missing indices of 0..k-1 in ascending order.
/// Throws DuplicateIndex / IndexOutOfRange.
std::vector<std::size_t> merge_ranking(std::span<const std::size_t> pi_prime, std::size_t k);

/// Reorders the first |pi| candidates so output rank j holds input candidate pi[j]; scores are kept
/// and ranks rewritten. Throws LengthMismatch when |pi| != |candidates|.
CandidateList apply_rerank(const CandidateList& candidates, std::span<const std::size_t> pi);

/// Like apply_rerank, but only the leading |pi| candidates (the rerank window) move; the tail is
/// left untouched. Throws LengthMismatch when the list is shorter than the window.
CandidateList apply_rerank_window(const CandidateList& candidates, std::span<const std::size_t> pi);

struct RerankOutcome {
    std::string query_id;
    std::vector<std::size_t> pi_prime;
    std::vector<std::size_t> pi_final;
    RerankStatus status = RerankStatus::Skipped;
    std::string raw_completion;
    ParseStats dropped;
    std::string error;  ///< set when status is Skipped
};

/// Parses and merges a completion for a window of size k.
RerankOutcome resolve_completion(std::string query_id, std::string completion, std::size_t k);

/// Identity outcome for a query whose rerank could not run.
RerankOutcome skipped_outcome(std::string query_id, std::size_t k, std::string reason);

// Audit log: JSON lines {query_id, status, pi_prime, pi_final, raw_completion}.
void write_audit_line(std::ostream& out, const RerankOutcome& outcome);

}  // namespace square
