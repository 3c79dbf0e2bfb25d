// Copyright (C) 2026 The SQUARE Authors
// SPDX-License-Identifier: Apache-2.0

#include "square/rerank.hpp"

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>

#include <nlohmann/json.hpp>

#include "square/error.hpp"

namespace square {

namespace {

struct Number {
    bool negative = false;
    std::uint64_t value = 0;  // saturates
};

bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_separator(char c) { return c == ',' || std::isspace(static_cast<unsigned char>(c)); }

// Reads an integer at `pos` (optional '-' directly before the digits). Advances `pos` on success.
std::optional<Number> read_number(std::string_view s, std::size_t& pos) {
    std::size_t p = pos;
    Number n;
    if (p < s.size() && s[p] == '-' && p + 1 < s.size() && is_digit(s[p + 1])) {
        n.negative = true;
        ++p;
    }
    if (p >= s.size() || !is_digit(s[p])) {
        return std::nullopt;
    }
    constexpr auto kCap = std::numeric_limits<std::uint64_t>::max() / 16;
    while (p < s.size() && is_digit(s[p])) {
        n.value = n.value >= kCap ? kCap : n.value * 10 + static_cast<std::uint64_t>(s[p] - '0');
        ++p;
    }
    pos = p;
    return n;
}

// Integers separated only by commas/whitespace, starting at `pos` (which must hold a number).
std::vector<Number> read_run(std::string_view s, std::size_t& pos) {
    std::vector<Number> run;
    while (true) {
        auto n = read_number(s, pos);
        if (!n) {
            break;
        }
        run.push_back(*n);
        std::size_t p = pos;
        while (p < s.size() && is_separator(s[p])) {
            ++p;
        }
        if (p == pos || p >= s.size()) {
            pos = p;
            break;
        }
        std::size_t probe = p;
        if (!read_number(s, probe)) {
            pos = p;
            break;
        }
        pos = p;
    }
    return run;
}

std::optional<std::vector<Number>> first_bracketed(std::string_view s) {
    for (std::size_t open = s.find('['); open != std::string_view::npos; open = s.find('[', open + 1)) {
        std::size_t p = open + 1;
        while (p < s.size() && is_separator(s[p])) {
            ++p;
        }
        std::size_t probe = p;
        if (!read_number(s, probe)) {
            continue;
        }
        auto run = read_run(s, p);
        while (p < s.size() && is_separator(s[p])) {
            ++p;
        }
        // A list cut off by the end of the completion still counts.
        if (p >= s.size() || s[p] == ']') {
            return run;
        }
    }
    return std::nullopt;
}

std::vector<Number> first_plain_run(std::string_view s) {
    for (std::size_t p = 0; p < s.size(); ++p) {
        if (!is_digit(s[p]) && s[p] != '-') {
            continue;
        }
        // A '-' only negates when it does not join two words ("top-5").
        if (s[p] == '-' && p > 0 && std::isalnum(static_cast<unsigned char>(s[p - 1]))) {
            continue;
        }
        std::size_t probe = p;
        if (!read_number(s, probe)) {
            continue;
        }
        return read_run(s, p);
    }
    return {};
}

}  // namespace

std::string_view to_string(RerankStatus status) noexcept {
    switch (status) {
        case RerankStatus::Full: return "full";
        case RerankStatus::Partial: return "partial";
        case RerankStatus::Skipped: return "skipped";
        case RerankStatus::Fallback: return "fallback";
    }
    return "unknown";
}

std::vector<std::size_t> parse_indices(std::string_view completion, std::size_t k, ParseStats* stats) {
    auto bracketed = first_bracketed(completion);
    const auto run = bracketed ? std::move(*bracketed) : first_plain_run(completion);

    std::vector<std::size_t> out;
    std::vector<char> seen(k, 0);
    ParseStats local;
    for (const auto& n : run) {
        if (n.negative || n.value >= k) {
            ++local.out_of_range;
            continue;
        }
        const auto idx = static_cast<std::size_t>(n.value);
        if (seen[idx]) {
            ++local.duplicates;
            continue;
        }
        seen[idx] = 1;
        out.push_back(idx);
    }
    if (stats) {
        *stats = local;
    }
    return out;
}

std::vector<std::size_t> merge_ranking(std::span<const std::size_t> pi_prime, std::size_t k) {
    std::vector<char> used(k, 0);
    std::vector<std::size_t> out;
    out.reserve(k);
    for (std::size_t idx : pi_prime) {
        if (idx >= k) {
            throw Error(ErrorCode::IndexOutOfRange, "index " + std::to_string(idx) + " >= k=" + std::to_string(k));
        }
        if (used[idx]) {
            throw Error(ErrorCode::DuplicateIndex, "index " + std::to_string(idx) + " repeated");
        }
        used[idx] = 1;
        out.push_back(idx);
    }
    for (std::size_t idx = 0; idx < k; ++idx) {
        if (!used[idx]) {
            out.push_back(idx);
        }
    }
    return out;
}

CandidateList apply_rerank(const CandidateList& candidates, std::span<const std::size_t> pi) {
    if (pi.size() != candidates.size()) {
        throw Error(ErrorCode::LengthMismatch, "permutation of length " + std::to_string(pi.size()) + " for " +
                                                   std::to_string(candidates.size()) + " candidates");
    }
    return apply_rerank_window(candidates, pi);
}

CandidateList apply_rerank_window(const CandidateList& candidates, std::span<const std::size_t> pi) {
    if (pi.size() > candidates.size()) {
        throw Error(ErrorCode::LengthMismatch, "rerank window of " + std::to_string(pi.size()) + " exceeds " +
                                                   std::to_string(candidates.size()) + " candidates");
    }
    std::vector<char> used(pi.size(), 0);
    for (std::size_t idx : pi) {
        if (idx >= pi.size() || used[idx]) {
            throw Error(ErrorCode::LengthMismatch, "not a permutation of 0.." + std::to_string(pi.size() - 1));
        }
        used[idx] = 1;
    }
    CandidateList out = candidates;
    for (std::size_t j = 0; j < pi.size(); ++j) {
        out.candidates[j] = candidates.candidates[pi[j]];
    }
    for (std::size_t j = 0; j < out.candidates.size(); ++j) {
        out.candidates[j].rank = j;
    }
    return out;
}

RerankOutcome resolve_completion(std::string query_id, std::string completion, std::size_t k) {
    RerankOutcome o;
    o.query_id = std::move(query_id);
    o.pi_prime = parse_indices(completion, k, &o.dropped);
    o.pi_final = merge_ranking(o.pi_prime, k);
    if (o.pi_prime.empty()) {
        o.status = RerankStatus::Fallback;
    } else if (o.pi_prime.size() == k) {
        o.status = RerankStatus::Full;
    } else {
        o.status = RerankStatus::Partial;
    }
    o.raw_completion = std::move(completion);
    return o;
}

RerankOutcome skipped_outcome(std::string query_id, std::size_t k, std::string reason) {
    RerankOutcome o;
    o.query_id = std::move(query_id);
    o.pi_final = merge_ranking({}, k);
    o.status = RerankStatus::Skipped;
    o.error = std::move(reason);
    return o;
}

void write_audit_line(std::ostream& out, const RerankOutcome& outcome) {
    nlohmann::ordered_json j;
    j["query_id"] = outcome.query_id;
    j["status"] = to_string(outcome.status);
    j["pi_prime"] = outcome.pi_prime;
    j["pi_final"] = outcome.pi_final;
    j["raw_completion"] = outcome.raw_completion;
    if (outcome.dropped.out_of_range || outcome.dropped.duplicates) {
        j["dropped_out_of_range"] = outcome.dropped.out_of_range;
        j["dropped_duplicates"] = outcome.dropped.duplicates;
    }
    if (!outcome.error.empty()) {
        j["error"] = outcome.error;
    }
    out << j.dump() << '\n';
}

}  // namespace square
