// Copyright (C) 2026 The SQUARE Authors
// SPDX-License-Identifier: Apache-2.0

#include "square/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_set>

#include "square/error.hpp"

namespace square {

using nlohmann::json;

int recall_at_k(std::span<const std::string> ranking, const std::set<std::string>& targets, std::size_t k) {
    const std::size_t n = std::min(k, ranking.size());
    for (std::size_t j = 0; j < n; ++j) {
        if (targets.contains(ranking[j])) {
            return 1;
        }
    }
    return 0;
}

double average_precision_at_k(std::span<const std::string> ranking, const std::set<std::string>& targets,
                              std::size_t k) {
    if (targets.empty()) {
        throw Error(ErrorCode::EmptyTargets, "average precision needs at least one target");
    }
    if (k == 0) {
        return 0.0;
    }
    const std::size_t n = std::min(k, ranking.size());
    std::size_t hits = 0;
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        if (targets.contains(ranking[j])) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(j + 1);
        }
    }
    return sum / static_cast<double>(std::min(targets.size(), k));
}

std::string MetricSpec::name() const {
    switch (kind) {
        case MetricKind::Recall: return "R@" + std::to_string(k);
        case MetricKind::RecallSubset: return "Rs@" + std::to_string(k);
        case MetricKind::MeanAP: return "mAP@" + std::to_string(k);
    }
    return "?";
}

MetricSpec MetricSpec::parse(std::string_view text) {
    const auto at = text.find('@');
    if (at == std::string_view::npos || at + 1 >= text.size()) {
        throw Error(ErrorCode::ConfigError, "metric '" + std::string(text) + "' is not of the form NAME@K");
    }
    std::string name(text.substr(0, at));
    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
    MetricSpec spec;
    if (name == "r" || name == "recall") {
        spec.kind = MetricKind::Recall;
    } else if (name == "rs" || name == "recall_subset" || name == "r_subset") {
        spec.kind = MetricKind::RecallSubset;
    } else if (name == "map") {
        spec.kind = MetricKind::MeanAP;
    } else {
        throw Error(ErrorCode::ConfigError, "unknown metric '" + std::string(text) + "'");
    }
    const std::string k(text.substr(at + 1));
    if (k.empty() || !std::all_of(k.begin(), k.end(), [](unsigned char c) { return std::isdigit(c); }) ||
        std::stoul(k) == 0) {
        throw Error(ErrorCode::ConfigError, "metric '" + std::string(text) + "' needs a positive K");
    }
    spec.k = std::stoul(k);
    return spec;
}

std::vector<MetricSpec> parse_metric_list(std::string_view comma_separated) {
    std::vector<MetricSpec> out;
    std::size_t start = 0;
    while (start <= comma_separated.size()) {
        auto end = comma_separated.find(',', start);
        if (end == std::string_view::npos) {
            end = comma_separated.size();
        }
        auto item = comma_separated.substr(start, end - start);
        while (!item.empty() && std::isspace(static_cast<unsigned char>(item.front()))) item.remove_prefix(1);
        while (!item.empty() && std::isspace(static_cast<unsigned char>(item.back()))) item.remove_suffix(1);
        if (!item.empty()) {
            out.push_back(MetricSpec::parse(item));
        }
        start = end + 1;
    }
    return out;
}

EvalReport evaluate(const std::map<std::string, std::vector<std::string>>& rankings,
                    std::span<const QueryAnnotation> annotations, std::span<const MetricSpec> metrics) {
    EvalReport report;
    report.query_count = annotations.size();
    for (const auto& m : metrics) {
        report.metric_order.push_back(m.name());
    }

    std::map<std::string, double> totals;
    std::map<std::string, std::map<std::string, double>> group_totals;
    std::map<std::string, std::size_t> group_counts;

    for (const auto& a : annotations) {
        auto it = rankings.find(a.query_id);
        if (it == rankings.end()) {
            throw Error(ErrorCode::MissingRanking, "no ranking for query '" + a.query_id + "'");
        }
        if (a.target_ids.empty()) {
            throw Error(ErrorCode::EmptyTargets, "query '" + a.query_id + "' has no target ids");
        }
        const auto& ranking = it->second;

        std::vector<std::string> restricted;
        bool restricted_ready = false;
        if (a.subset_ids &&
            std::none_of(a.subset_ids->begin(), a.subset_ids->end(),
                         [&](const std::string& id) { return a.target_ids.contains(id); })) {
            ++report.subset_warnings;
        }

        if (a.group) {
            ++group_counts[*a.group];
        }
        for (const auto& m : metrics) {
            double value = 0.0;
            switch (m.kind) {
                case MetricKind::Recall: value = recall_at_k(ranking, a.target_ids, m.k); break;
                case MetricKind::MeanAP: value = average_precision_at_k(ranking, a.target_ids, m.k); break;
                case MetricKind::RecallSubset: {
                    if (!a.subset_ids) {
                        throw Error(ErrorCode::MissingSubset, "query '" + a.query_id + "' has no subset_ids");
                    }
                    if (!restricted_ready) {
                        const std::unordered_set<std::string> subset(a.subset_ids->begin(), a.subset_ids->end());
                        for (const auto& id : ranking) {
                            if (subset.contains(id)) {
                                restricted.push_back(id);
                            }
                        }
                        restricted_ready = true;
                    }
                    value = recall_at_k(restricted, a.target_ids, m.k);
                    break;
                }
            }
            totals[m.name()] += value;
            if (a.group) {
                group_totals[*a.group][m.name()] += value;
            }
        }
    }

    for (const auto& name : report.metric_order) {
        report.per_metric[name] =
            report.query_count ? 100.0 * totals[name] / static_cast<double>(report.query_count) : 0.0;
    }
    for (const auto& [group, values] : group_totals) {
        for (const auto& [name, total] : values) {
            report.per_group[group][name] = 100.0 * total / static_cast<double>(group_counts[group]);
        }
    }
    if (!report.per_group.empty()) {
        for (const auto& name : report.metric_order) {
            double sum = 0.0;
            for (const auto& [group, values] : report.per_group) {
                sum += values.at(name);
            }
            report.group_average[name] = sum / static_cast<double>(report.per_group.size());
        }
    }
    return report;
}

double round2(double percent) { return std::round(percent * 100.0) / 100.0; }

nlohmann::ordered_json report_to_json(const EvalReport& report) {
    auto metrics_json = [&](const std::map<std::string, double>& values) {
        nlohmann::ordered_json j = nlohmann::ordered_json::object();
        for (const auto& name : report.metric_order) {
            if (auto it = values.find(name); it != values.end()) {
                j[name] = round2(it->second);
            }
        }
        return j;
    };
    nlohmann::ordered_json j;
    j["query_count"] = report.query_count;
    j["metrics"] = metrics_json(report.per_metric);
    if (!report.per_group.empty()) {
        nlohmann::ordered_json groups = nlohmann::ordered_json::object();
        for (const auto& [group, values] : report.per_group) {
            groups[group] = metrics_json(values);
        }
        j["groups"] = groups;
        j["group_average"] = metrics_json(report.group_average);
    }
    if (report.subset_warnings) {
        j["subset_warnings"] = report.subset_warnings;
    }
    return j;
}

std::string report_to_table(const EvalReport& report) {
    std::vector<std::pair<std::string, const std::map<std::string, double>*>> rows;
    for (const auto& [group, values] : report.per_group) {
        rows.emplace_back(group, &values);
    }
    if (!report.per_group.empty()) {
        rows.emplace_back("Average", &report.group_average);
    }
    rows.emplace_back("All (" + std::to_string(report.query_count) + " queries)", &report.per_metric);

    std::size_t label_w = 5;
    for (const auto& r : rows) {
        label_w = std::max(label_w, r.first.size());
    }
    std::vector<std::size_t> widths;
    for (const auto& name : report.metric_order) {
        widths.push_back(std::max<std::size_t>(name.size(), 6));
    }

    std::ostringstream out;
    out << std::left << std::setw(static_cast<int>(label_w)) << "";
    for (std::size_t i = 0; i < widths.size(); ++i) {
        out << "  " << std::right << std::setw(static_cast<int>(widths[i])) << report.metric_order[i];
    }
    out << '\n';
    char buf[32];
    for (const auto& [label, values] : rows) {
        out << std::left << std::setw(static_cast<int>(label_w)) << label;
        for (std::size_t i = 0; i < widths.size(); ++i) {
            auto it = values->find(report.metric_order[i]);
            if (it == values->end()) {
                std::snprintf(buf, sizeof(buf), "-");
            } else {
                std::snprintf(buf, sizeof(buf), "%.2f", round2(it->second));
            }
            out << "  " << std::right << std::setw(static_cast<int>(widths[i])) << buf;
        }
        out << '\n';
    }
    return out.str();
}

AnnotationFormat parse_annotation_format(std::string_view name) {
    if (name == "generic") return AnnotationFormat::Generic;
    if (name == "cirr") return AnnotationFormat::Cirr;
    if (name == "circo") return AnnotationFormat::Circo;
    if (name == "fashioniq") return AnnotationFormat::FashionIq;
    if (name == "genecis") return AnnotationFormat::Genecis;
    throw Error(ErrorCode::ConfigError, "unknown annotation format '" + std::string(name) + "'");
}

namespace {

// Image ids arrive as strings or integers depending on the dataset.
std::string id_string(const json& v) {
    if (v.is_string()) {
        return v.get<std::string>();
    }
    if (v.is_number_integer()) {
        return std::to_string(v.get<long long>());
    }
    throw Error(ErrorCode::ParseError, "expected an id (string or integer), got " + v.dump());
}

// CIRCO ids are COCO image ids; gallery files are named with 12-digit zero padding.
std::string coco_id(const json& v) {
    std::string s = id_string(v);
    if (s.size() < 12 && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); })) {
        s.insert(0, 12 - s.size(), '0');
    }
    return s;
}

// GeneCIS references are either bare ids or objects carrying one.
std::string genecis_id(const json& v) {
    if (v.is_object()) {
        for (const char* key : {"image_id", "val_image_id", "id"}) {
            if (v.contains(key)) {
                return id_string(v.at(key));
            }
        }
        throw Error(ErrorCode::ParseError, "GeneCIS image entry without an id: " + v.dump());
    }
    return id_string(v);
}

QueryAnnotation from_generic(const json& e) {
    QueryAnnotation a;
    a.query_id = id_string(e.at("query_id"));
    a.reference_id = id_string(e.at("reference_id"));
    a.modification_text = e.value("modification_text", "");
    for (const auto& t : e.value("target_ids", json::array())) {
        a.target_ids.insert(id_string(t));
    }
    if (e.contains("subset_ids") && !e.at("subset_ids").is_null()) {
        std::vector<std::string> subset;
        for (const auto& s : e.at("subset_ids")) {
            subset.push_back(id_string(s));
        }
        a.subset_ids = std::move(subset);
    }
    if (e.contains("group") && e.at("group").is_string()) {
        a.group = e.at("group").get<std::string>();
    }
    return a;
}

QueryAnnotation from_cirr(const json& e) {
    QueryAnnotation a;
    a.query_id = id_string(e.at("pairid"));
    a.reference_id = id_string(e.at("reference"));
    a.modification_text = e.value("caption", "");
    if (e.contains("target_hard")) {
        a.target_ids.insert(id_string(e.at("target_hard")));
    }
    if (e.contains("img_set")) {
        std::vector<std::string> subset;
        for (const auto& m : e.at("img_set").at("members")) {
            auto id = id_string(m);
            if (id != a.reference_id) {
                subset.push_back(std::move(id));
            }
        }
        a.subset_ids = std::move(subset);
    }
    return a;
}

QueryAnnotation from_circo(const json& e) {
    QueryAnnotation a;
    a.query_id = id_string(e.at("id"));
    a.reference_id = coco_id(e.at("reference_img_id"));
    a.modification_text = e.value("relative_caption", "");
    if (e.contains("gt_img_ids")) {
        for (const auto& t : e.at("gt_img_ids")) {
            a.target_ids.insert(coco_id(t));
        }
    } else if (e.contains("target_img_id")) {
        a.target_ids.insert(coco_id(e.at("target_img_id")));
    }
    return a;
}

QueryAnnotation from_fashioniq(const json& e, std::size_t position, const std::optional<std::string>& group) {
    QueryAnnotation a;
    a.query_id = (group ? *group : std::string("fiq")) + ":" + std::to_string(position);
    a.reference_id = id_string(e.at("candidate"));
    if (e.contains("target")) {
        a.target_ids.insert(id_string(e.at("target")));
    }
    std::string text;
    for (const auto& c : e.at("captions")) {
        auto piece = c.get<std::string>();
        if (piece.empty()) {
            continue;
        }
        if (!text.empty()) {
            text += ", ";
        }
        text += piece;
    }
    a.modification_text = std::move(text);
    a.group = group;
    return a;
}

QueryAnnotation from_genecis(const json& e, std::size_t position, const std::optional<std::string>& group) {
    QueryAnnotation a;
    a.query_id = (group ? *group : std::string("genecis")) + ":" + std::to_string(position);
    a.reference_id = genecis_id(e.at("reference"));
    a.modification_text = id_string(e.at("condition"));
    const auto target = genecis_id(e.at("target"));
    a.target_ids.insert(target);
    std::vector<std::string> subset{target};
    for (const auto& g : e.value("gallery", json::array())) {
        subset.push_back(genecis_id(g));
    }
    a.subset_ids = std::move(subset);
    a.group = group;
    return a;
}

}  // namespace

std::vector<QueryAnnotation> annotations_from_json(const json& doc, AnnotationFormat format,
                                                   const std::optional<std::string>& group) {
    if (!doc.is_array()) {
        throw Error(ErrorCode::ParseError, "annotation file must be a JSON array");
    }
    std::vector<QueryAnnotation> out;
    out.reserve(doc.size());
    std::unordered_set<std::string> ids;
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const auto& e = doc[i];
        QueryAnnotation a;
        try {
            switch (format) {
                case AnnotationFormat::Generic: a = from_generic(e); break;
                case AnnotationFormat::Cirr: a = from_cirr(e); break;
                case AnnotationFormat::Circo: a = from_circo(e); break;
                case AnnotationFormat::FashionIq: a = from_fashioniq(e, i, group); break;
                case AnnotationFormat::Genecis: a = from_genecis(e, i, group); break;
            }
        } catch (const json::exception& ex) {
            throw Error(ErrorCode::ParseError, "annotation " + std::to_string(i) + ": " + ex.what());
        }
        if (!a.group && group) {
            a.group = group;
        }
        if (!ids.insert(a.query_id).second) {
            throw Error(ErrorCode::ParseError, "duplicate query id '" + a.query_id + "'");
        }
        out.push_back(std::move(a));
    }
    return out;
}

std::vector<QueryAnnotation> load_annotations(const std::filesystem::path& path, AnnotationFormat format,
                                              const std::optional<std::string>& group) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::IoError, "cannot open " + path.string());
    }
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
    }
    return annotations_from_json(doc, format, group);
}

json annotations_to_json(std::span<const QueryAnnotation> annotations) {
    json arr = json::array();
    for (const auto& a : annotations) {
        json e;
        e["query_id"] = a.query_id;
        e["reference_id"] = a.reference_id;
        e["modification_text"] = a.modification_text;
        e["target_ids"] = a.target_ids;
        if (a.subset_ids) {
            e["subset_ids"] = *a.subset_ids;
        }
        if (a.group) {
            e["group"] = *a.group;
        }
        arr.push_back(std::move(e));
    }
    return arr;
}

}  // namespace square
