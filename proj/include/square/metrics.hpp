// Copyright (C) 2026 The SQUARE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace square {

struct QueryAnnotation {
    std::string query_id;
    std::string reference_id;
    std::string modification_text;
    std::set<std::string> target_ids;
    std::optional<std::vector<std::string>> subset_ids;
    std::optional<std::string> group;  ///< e.g. FashionIQ category or GeneCIS task
};

/// 1 iff any of the first k ranked ids is a target.
int recall_at_k(std::span<const std::string> ranking, const std::set<std::string>& targets, std::size_t k);

/// AP@k normalized by min(|targets|, k). Throws EmptyTargets.
double average_precision_at_k(std::span<const std::string> ranking, const std::set<std::string>& targets,
                              std::size_t k);

enum class MetricKind { Recall, RecallSubset, MeanAP };

struct MetricSpec {
    MetricKind kind = MetricKind::Recall;
    std::size_t k = 1;

    /// "R@10", "Rs@1", "mAP@5"
    std::string name() const;
    /// Accepts the names produced by name() (also "recall@k", "recall_subset@k", "map@k").
    static MetricSpec parse(std::string_view text);
};

std::vector<MetricSpec> parse_metric_list(std::string_view comma_separated);

struct EvalReport {
    std::vector<std::string> metric_order;
    std::map<std::string, double> per_metric;                         ///< percent, macro over queries
    std::map<std::string, std::map<std::string, double>> per_group;  ///< group -> metric -> percent
    std::map<std::string, double> group_average;                     ///< mean of per-group values
    std::size_t query_count = 0;
    std::size_t subset_warnings = 0;  ///< annotations whose subset holds no target
};

/// Macro-averages each metric over annotations. Rankings are looked up by query id; subset metrics
/// restrict the ranking to the query's subset_ids. Throws MissingRanking / MissingSubset.
EvalReport evaluate(const std::map<std::string, std::vector<std::string>>& rankings,
                    std::span<const QueryAnnotation> annotations, std::span<const MetricSpec> metrics);

/// Rounds to 2 decimals for reporting.
double round2(double percent);

nlohmann::ordered_json report_to_json(const EvalReport& report);
/// Aligned plain-text table: one row per group (when present), then the group average and overall rows.
std::string report_to_table(const EvalReport& report);

// Annotation ingestion. The generic schema is a JSON array of
// {query_id, reference_id, modification_text, target_ids: [...], subset_ids?: [...], group?}.
enum class AnnotationFormat { Generic, Cirr, Circo, FashionIq, Genecis };

AnnotationFormat parse_annotation_format(std::string_view name);

/// Converts a parsed dataset file. `group` tags every query (FashionIQ category, GeneCIS task)
/// when the format carries no group of its own.
std::vector<QueryAnnotation> annotations_from_json(const nlohmann::json& doc, AnnotationFormat format,
                                                   const std::optional<std::string>& group = std::nullopt);

std::vector<QueryAnnotation> load_annotations(const std::filesystem::path& path, AnnotationFormat format,
                                              const std::optional<std::string>& group = std::nullopt);

nlohmann::json annotations_to_json(std::span<const QueryAnnotation> annotations);

}  // namespace square
