// Copyright (C) 2026 The SQUARE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "square/fusion.hpp"
#include "square/grid.hpp"
#include "square/metrics.hpp"
#include "square/mllm.hpp"
#include "square/ranker.hpp"
#include "square/rerank.hpp"
#include "square/store.hpp"

namespace square {

enum class IntentForm {
    ReferencePlusText,  ///< reranker sees the reference image and the modification text
    GeneratedCaption,   ///< reranker sees the SQAF target caption instead
};

std::string_view to_string(IntentForm form) noexcept;
IntentForm parse_intent_form(std::string_view name);

struct RunConfig {
    FusionParams fusion;
    std::size_t depth = 50;  ///< candidates kept per query; the rerank window is the first grid.m^2
    GridSpec grid;
    bool ebr_enabled = true;
    MllmConfig mllm_caption;
    MllmConfig mllm_rerank;
    IntentForm intent_form = IntentForm::ReferencePlusText;
    bool exclude_reference = true;
    bool rank_within_subset = false;  ///< rank only each query's subset_ids (small per-query galleries)
    std::filesystem::path cache_dir;  ///< empty disables caching
    std::size_t workers = 1;
    std::size_t rank_threads = 1;
    std::vector<std::string> image_extensions = {"png", "jpg", "jpeg"};
    std::string prompt_dir;  ///< empty means the bundled assets

    std::size_t window() const noexcept { return grid.cells(); }

    /// Throws ConfigError (bad ranges, depth < window with EBR on) and Alpha/BetaOutOfRange.
    void validate() const;

    /// Documented keys only; anything else is a ConfigError.
    static RunConfig from_json(const nlohmann::json& j, const RunConfig& base);
    static RunConfig from_json(const nlohmann::json& j);
    nlohmann::ordered_json to_json() const;
};

/// Directory compiled in for the bundled prompt templates.
std::filesystem::path default_prompt_dir();

class ImageSource {
public:
    virtual ~ImageSource() = default;
    /// Encoded image bytes for `id`, or nullopt.
    virtual std::optional<std::vector<std::uint8_t>> load(const std::string& id) const = 0;
};

/// Looks for <dir>/<id>.<ext> trying extensions in priority order.
class DirectoryImageSource : public ImageSource {
public:
    DirectoryImageSource(std::filesystem::path dir, std::vector<std::string> extensions);
    std::optional<std::vector<std::uint8_t>> load(const std::string& id) const override;

private:
    std::filesystem::path dir_;
    std::vector<std::string> extensions_;
};

class MemoryImageSource : public ImageSource {
public:
    void add(std::string id, std::vector<std::uint8_t> bytes) { images_[std::move(id)] = std::move(bytes); }
    std::optional<std::vector<std::uint8_t>> load(const std::string& id) const override;

private:
    std::map<std::string, std::vector<std::uint8_t>> images_;
};

/// On-disk completion cache: <dir>/<namespace>/<sha256(key)>.json holding {key, text}.
class ResponseCache {
public:
    explicit ResponseCache(std::filesystem::path dir);

    std::optional<std::string> get(const std::string& ns, const std::string& key) const;
    void put(const std::string& ns, const std::string& key, const std::string& text) const;

    const std::filesystem::path& dir() const noexcept { return dir_; }

private:
    std::filesystem::path file_for(const std::string& ns, const std::string& key) const;
    std::filesystem::path dir_;
};

std::string caption_cache_key(const std::string& query_id, const MllmConfig& cfg, const PromptTemplate& tmpl);
std::string rerank_cache_key(const std::string& query_id, const MllmConfig& cfg, const PromptTemplate& tmpl,
                             const GridSpec& grid, std::span<const std::string> window_ids);

/// Runs fn(i) for i in [0, n) on up to `workers` threads. The first exception is rethrown.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

struct CaptionRecord {
    std::string query_id;
    std::optional<std::string> caption;  ///< nullopt means caption_missing
    bool cached = false;
    int retry_count = 0;
    std::string error;
};

/// Target captions for every query, served from `cache` when possible. Failures never abort:
/// the query is returned with caption = nullopt.
std::vector<CaptionRecord> generate_captions(std::span<const QueryAnnotation> queries, const ImageSource& ref_images,
                                             MllmClient& client, const PromptTemplate& tmpl,
                                             const ResponseCache* cache, std::size_t workers);

/// JSON lines {"id", "text"} for the text-embedding exporter. Queries without a caption are
/// omitted; a query absent from the file is treated as caption_missing downstream.
void write_captions(std::ostream& out, std::span<const CaptionRecord> records);
std::vector<CaptionRecord> read_captions(std::istream& in);

struct EmbeddingSources {
    const GalleryIndex* gallery = nullptr;    ///< candidate images, keyed by gallery id
    const GalleryIndex* reference = nullptr;  ///< reference images, keyed by reference id
    const GalleryIndex* text = nullptr;       ///< modification texts, keyed by query id
    const GalleryIndex* caption = nullptr;    ///< generated captions, keyed by query id
};

struct SqafResult {
    CandidateList candidates;
    bool caption_missing = false;
    double effective_beta = 0.0;
};

/// Fusion and global ranking for each query. Queries listed in `caption_missing` (or any query when
/// beta = 0) use the image/text fusion alone. Throws MissingEmbedding naming the absent id.
std::vector<SqafResult> run_sqaf(std::span<const QueryAnnotation> queries, const EmbeddingSources& sources,
                                 const RunConfig& cfg, const std::set<std::string>& caption_missing = {});

struct EbrResult {
    CandidateList candidates;
    RerankOutcome outcome;
    bool cached = false;
};

struct EbrInputs {
    const ImageSource* gallery_images = nullptr;
    const ImageSource* reference_images = nullptr;  ///< needed for the reference+text intent form
    const std::map<std::string, std::string>* captions = nullptr;  ///< needed for the caption intent form
    MllmClient* client = nullptr;
    const PromptTemplate* tmpl = nullptr;
    const ResponseCache* cache = nullptr;
};

/// Grid, rerank call, parse, merge and apply for every candidate list. Only the first window()
/// candidates move. Per-query failures leave the initial order and status "skipped".
std::vector<EbrResult> run_ebr(std::span<const CandidateList> lists, std::span<const QueryAnnotation> queries,
                               const EbrInputs& inputs, const RunConfig& cfg);

/// Loads and annotates the first m*m candidates of `list`. Throws MissingImage / WrongCount.
GridImage build_candidate_grid(const CandidateList& list, const ImageSource& images, const GridSpec& spec);

std::map<std::string, std::vector<std::string>> rankings_by_query(std::span<const CandidateList> lists);

/// Run manifest: config hash, prompt versions, model names, checkpoints, timestamp.
nlohmann::ordered_json make_manifest(const RunConfig& cfg, const PromptSet* prompts,
                                     const std::map<std::string, std::string>& checkpoints,
                                     const nlohmann::ordered_json& extra = {});
void write_manifest(const std::filesystem::path& path, const nlohmann::ordered_json& manifest);

struct SweepCell {
    double alpha = 0.0;
    double beta = 0.0;
    std::map<std::string, double> metrics;  ///< percent
};

struct SweepResult {
    std::vector<double> alphas;
    std::vector<double> betas;
    std::vector<std::string> metric_order;
    std::vector<SweepCell> cells;  ///< alpha-major

    const SweepCell& at(std::size_t ai, std::size_t bi) const { return cells.at(ai * betas.size() + bi); }
};

/// Fusion-weight ablation: SQAF + evaluation for each (alpha, beta).
SweepResult sweep_fusion(std::span<const QueryAnnotation> queries, const EmbeddingSources& sources,
                         const RunConfig& cfg, std::span<const double> alphas, std::span<const double> betas,
                         std::span<const MetricSpec> metrics, const std::set<std::string>& caption_missing = {});

/// Heatmap matrix for one metric: first row "alpha\beta,<betas...>", then one row per alpha.
std::string sweep_matrix_csv(const SweepResult& result, const std::string& metric);
/// One row per (alpha, beta) with every metric.
std::string sweep_long_csv(const SweepResult& result);

struct GridSweepRow {
    std::string label;  ///< "w/o EBR" or "MxM"
    std::map<std::string, double> metrics;
};

/// Grid-size ablation: evaluates the SQAF lists without EBR and with EBR at each grid side.
std::vector<GridSweepRow> sweep_grid_sizes(std::span<const CandidateList> lists,
                                           std::span<const QueryAnnotation> queries, const EbrInputs& inputs,
                                           const RunConfig& cfg, std::span<const std::size_t> sides,
                                           std::span<const MetricSpec> metrics);
std::string grid_sweep_csv(std::span<const GridSweepRow> rows, std::span<const MetricSpec> metrics);

/// Formats a parameter value for CSV headers: shortest round-trip decimal.
std::string format_param(double v);

}  // namespace square
