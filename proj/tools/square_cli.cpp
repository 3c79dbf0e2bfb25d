// Copyright (C) 2026 The SQUARE Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: index validation, caption generation, retrieval, grid dumps, reranking,
// evaluation and ablation sweeps. Configuration comes from a JSON file plus flag overrides; the
// MLLM API key is read from the environment variable named in the config, never from a flag.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "square/grid.hpp"
#include "square/image.hpp"
#include "square/metrics.hpp"
#include "square/pipeline.hpp"
#include "square/ranker.hpp"
#include "square/store.hpp"

namespace fs = std::filesystem;
using namespace square;

namespace {

// ------------------------------------------------------------------------------------------------
// Shared options

struct ConfigOptions {
    std::string config_file;
    double alpha = kDefaultAlpha;
    double beta = kDefaultBeta;
    std::size_t depth = 0;
    std::size_t grid_m = 0;
    std::size_t cell_px = 0;
    std::size_t border_px = 0;
    std::size_t label_px = 0;
    bool no_ebr = false;
    std::size_t workers = 0;
    std::size_t rank_threads = 0;
    std::string cache_dir;
    std::string intent_form;
    std::string caption_endpoint;
    std::string caption_model;
    std::string rerank_endpoint;
    std::string rerank_model;
    bool rank_within_subset = false;
    bool keep_reference = false;

    CLI::Option* alpha_opt = nullptr;
    CLI::Option* beta_opt = nullptr;

    void add_to(CLI::App& app) {
        app.add_option("-c,--config", config_file, "JSON run configuration")->check(CLI::ExistingFile);
        alpha_opt = app.add_option("--alpha", alpha, "image/text fusion weight")->check(CLI::Range(0.0, 1.0));
        beta_opt = app.add_option("--beta", beta, "caption fusion weight")->check(CLI::Range(0.0, 1.0));
        app.add_option("--depth", depth, "candidates kept per query");
        app.add_option("--grid-m", grid_m, "grid side m (window of m*m candidates)");
        app.add_option("--cell-px", cell_px, "grid cell size in pixels");
        app.add_option("--border-px", border_px, "colored cell border width in pixels");
        app.add_option("--label-px", label_px, "index label digit height in pixels");
        app.add_flag("--no-ebr", no_ebr, "disable grid reranking");
        app.add_option("--workers", workers, "concurrent queries");
        app.add_option("--rank-threads", rank_threads, "scoring partitions per query");
        app.add_option("--cache-dir", cache_dir, "completion cache directory");
        app.add_option("--intent-form", intent_form, "reference_plus_text | generated_caption");
        app.add_option("--caption-endpoint", caption_endpoint, "caption MLLM endpoint URL or mock spec");
        app.add_option("--caption-model", caption_model, "caption MLLM model name");
        app.add_option("--rerank-endpoint", rerank_endpoint, "rerank MLLM endpoint URL or mock spec");
        app.add_option("--rerank-model", rerank_model, "rerank MLLM model name");
        app.add_flag("--subset", rank_within_subset, "rank each query's subset only");
        app.add_flag("--keep-reference", keep_reference, "do not exclude the reference image from results");
    }

    RunConfig resolve() const {
        RunConfig cfg;
        if (!config_file.empty()) {
            std::ifstream in(config_file);
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(in);
            } catch (const nlohmann::json::exception& e) {
                throw Error(ErrorCode::ConfigError, config_file + ": " + e.what());
            }
            cfg = RunConfig::from_json(j);
        }
        if (alpha_opt && alpha_opt->count()) cfg.fusion.alpha = alpha;
        if (beta_opt && beta_opt->count()) cfg.fusion.beta = beta;
        if (depth) cfg.depth = depth;
        if (grid_m) cfg.grid.m = grid_m;
        if (cell_px) cfg.grid.cell_px = cell_px;
        if (border_px) cfg.grid.border_px = border_px;
        if (label_px) cfg.grid.label_px = label_px;
        if (no_ebr) cfg.ebr_enabled = false;
        if (workers) cfg.workers = workers;
        if (rank_threads) cfg.rank_threads = rank_threads;
        if (!cache_dir.empty()) cfg.cache_dir = cache_dir;
        if (!intent_form.empty()) cfg.intent_form = parse_intent_form(intent_form);
        if (!caption_endpoint.empty()) cfg.mllm_caption.endpoint_url = caption_endpoint;
        if (!caption_model.empty()) cfg.mllm_caption.model_name = caption_model;
        if (!rerank_endpoint.empty()) cfg.mllm_rerank.endpoint_url = rerank_endpoint;
        if (!rerank_model.empty()) cfg.mllm_rerank.model_name = rerank_model;
        if (rank_within_subset) cfg.rank_within_subset = true;
        if (keep_reference) cfg.exclude_reference = false;
        cfg.validate();
        return cfg;
    }
};

struct AnnotationOptions {
    std::string path;
    std::string format = "generic";
    std::string group;

    void add_to(CLI::App& app) {
        app.add_option("-a,--annotations", path, "query annotations")->required()->check(CLI::ExistingFile);
        app.add_option("--format", format, "generic | cirr | circo | fashioniq | genecis");
        app.add_option("--group", group, "group tag for every query (e.g. FashionIQ category)");
    }

    std::vector<QueryAnnotation> load() const {
        return load_annotations(path, parse_annotation_format(format),
                                group.empty() ? std::nullopt : std::optional<std::string>(group));
    }
};

struct EmbeddingOptions {
    std::string gallery;
    std::string reference;
    std::string text;
    std::string caption;

    void add_to(CLI::App& app) {
        app.add_option("--gallery-emb", gallery, "gallery image embeddings (SQEMB1)")->required()->check(CLI::ExistingFile);
        app.add_option("--reference-emb", reference, "reference image embeddings; defaults to the gallery file")
            ->check(CLI::ExistingFile);
        app.add_option("--text-emb", text, "modification text embeddings keyed by query id")
            ->required()
            ->check(CLI::ExistingFile);
        app.add_option("--caption-emb", caption, "target caption embeddings keyed by query id")->check(CLI::ExistingFile);
    }
};

struct LoadedEmbeddings {
    GalleryIndex gallery;
    std::optional<GalleryIndex> reference;
    GalleryIndex text;
    std::optional<GalleryIndex> caption;
    std::map<std::string, std::string> checkpoints;

    EmbeddingSources sources() const {
        return {&gallery, reference ? &*reference : &gallery, &text, caption ? &*caption : nullptr};
    }
};

// Loads every index and checks that all sibling manifests name one encoder checkpoint, so captions
// and modification texts are embedded by the same text encoder as the gallery.
LoadedEmbeddings load_embeddings(const EmbeddingOptions& opts) {
    LoadedEmbeddings e;
    auto note = [&](const std::string& role, const std::string& path) {
        if (const auto m = load_index_manifest(path)) e.checkpoints[role] = m->checkpoint;
    };
    e.gallery = load_index(opts.gallery);
    note("gallery", opts.gallery);
    if (!opts.reference.empty()) {
        e.reference = load_index(opts.reference);
        note("reference", opts.reference);
    }
    e.text = load_index(opts.text);
    note("text", opts.text);
    if (!opts.caption.empty()) {
        e.caption = load_index(opts.caption);
        note("caption", opts.caption);
    }
    std::set<std::string> distinct;
    for (const auto& [role, ckpt] : e.checkpoints) distinct.insert(ckpt);
    if (distinct.size() > 1) {
        std::string list;
        for (const auto& [role, ckpt] : e.checkpoints) list += " " + role + "=" + ckpt;
        throw Error(ErrorCode::ConfigError, "embedding files come from different checkpoints:" + list);
    }
    return e;
}

PromptSet load_prompts(const RunConfig& cfg) {
    return PromptSet::load(cfg.prompt_dir.empty() ? default_prompt_dir() : fs::path(cfg.prompt_dir));
}

std::optional<ResponseCache> make_cache(const RunConfig& cfg) {
    if (cfg.cache_dir.empty()) return std::nullopt;
    return ResponseCache(cfg.cache_dir);
}

std::vector<CandidateList> read_rankings_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot read " + path);
    return read_rankings(in);
}

std::vector<CaptionRecord> read_captions_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot read " + path);
    return read_captions(in);
}

std::ofstream open_output(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    return out;
}

fs::path manifest_beside(const fs::path& output) { return fs::path(output.string() + ".manifest.json"); }

void write_text(const fs::path& path, const std::string& text) { open_output(path) << text; }

// ------------------------------------------------------------------------------------------------
// Subcommands

int cmd_build_index(const std::string& input, std::uint32_t expect_dim) {
    const auto index = load_index(input);
    nlohmann::ordered_json summary = {{"path", input}, {"dim", index.dim()}, {"count", index.size()}};
    if (expect_dim && index.dim() != expect_dim) {
        throw Error(ErrorCode::DimMismatch,
                    input + " has dim " + std::to_string(index.dim()) + ", expected " + std::to_string(expect_dim));
    }
    if (const auto m = load_index_manifest(input)) {
        if (m->dim != index.dim() || m->count != index.size()) {
            throw Error(ErrorCode::ConfigError, manifest_path_for(input).string() + " disagrees with the index (dim " +
                                                    std::to_string(m->dim) + ", count " + std::to_string(m->count) +
                                                    ")");
        }
        summary["checkpoint"] = m->checkpoint;
        summary["created_at"] = m->created_at;
    } else {
        summary["manifest"] = nullptr;
    }
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index.norm(i) == 0.0) throw Error(ErrorCode::ZeroVector, "item " + index.item(i).id);
    }
    std::cout << summary.dump(2) << '\n';
    return 0;
}

int cmd_caption(const RunConfig& cfg, const AnnotationOptions& ann, const std::string& ref_dir,
                const fs::path& output) {
    const auto queries = ann.load();
    const auto prompts = load_prompts(cfg);
    const auto cache = make_cache(cfg);
    const DirectoryImageSource refs(ref_dir, cfg.image_extensions);
    MllmClient client(cfg.mllm_caption);
    const auto records =
        generate_captions(queries, refs, client, prompts.caption, cache ? &*cache : nullptr, cfg.workers);

    auto out = open_output(output);
    write_captions(out, records);
    std::size_t ok = 0, cached = 0;
    auto status = open_output(fs::path(output.string() + ".status.jsonl"));
    for (const auto& r : records) {
        ok += r.caption ? 1 : 0;
        cached += r.cached ? 1 : 0;
        nlohmann::ordered_json line = {{"query_id", r.query_id},
                                       {"status", r.caption ? "ok" : "caption_missing"},
                                       {"cached", r.cached},
                                       {"retry_count", r.retry_count}};
        if (!r.error.empty()) line["error"] = r.error;
        status << line.dump() << '\n';
    }
    write_manifest(manifest_beside(output),
                   make_manifest(cfg, &prompts, {}, {{"stage", "caption"}, {"queries", records.size()}}));
    std::fprintf(stderr, "captions: %zu of %zu generated (%zu from cache)\n", ok, records.size(), cached);
    return 0;
}

std::set<std::string> missing_captions(std::span<const QueryAnnotation> queries, const std::string& captions_file,
                                       const GalleryIndex* caption_index) {
    std::set<std::string> missing;
    std::set<std::string> have;
    if (!captions_file.empty()) {
        for (const auto& r : read_captions_file(captions_file)) {
            if (r.caption) have.insert(r.query_id);
        }
    }
    for (const auto& q : queries) {
        const bool in_file = captions_file.empty() || have.count(q.query_id);
        const bool embedded = caption_index && caption_index->contains(q.query_id);
        if (!in_file || !embedded) missing.insert(q.query_id);
    }
    return missing;
}

int cmd_retrieve(const RunConfig& cfg, const AnnotationOptions& ann, const EmbeddingOptions& emb,
                 const std::string& captions_file, const fs::path& output) {
    const auto queries = ann.load();
    const auto e = load_embeddings(emb);
    const auto missing = missing_captions(queries, captions_file, e.caption ? &*e.caption : nullptr);
    const auto results = run_sqaf(queries, e.sources(), cfg, missing);
    std::vector<CandidateList> lists;
    for (const auto& r : results) lists.push_back(r.candidates);
    auto out = open_output(output);
    write_rankings(out, lists);
    write_manifest(manifest_beside(output),
                   make_manifest(cfg, nullptr, e.checkpoints,
                                 {{"stage", "retrieve"}, {"queries", lists.size()}, {"caption_missing", missing}}));
    std::fprintf(stderr, "retrieve: %zu queries ranked, %zu without caption\n", lists.size(), missing.size());
    return 0;
}

int cmd_grid(const RunConfig& cfg, const std::string& rankings_file, const std::string& image_dir,
             const std::string& query, const fs::path& output) {
    const auto lists = read_rankings_file(rankings_file);
    const DirectoryImageSource images(image_dir, cfg.image_extensions);
    std::size_t written = 0;
    for (const auto& list : lists) {
        if (!query.empty() && list.query_id != query) continue;
        const auto grid = build_candidate_grid(list, images, cfg.grid);
        const fs::path target = query.empty() ? output / (list.query_id + ".png") : output;
        if (target.has_parent_path()) fs::create_directories(target.parent_path());
        write_file_bytes(target, encode_png(grid.pixels));
        ++written;
    }
    if (!query.empty() && written == 0) throw Error(ErrorCode::MissingRanking, "no ranking for query " + query);
    std::fprintf(stderr, "grid: wrote %zu image(s)\n", written);
    return 0;
}

struct RerankInputs {
    std::vector<QueryAnnotation> queries;
    std::vector<CandidateList> lists;
    std::optional<DirectoryImageSource> gallery_images;
    std::optional<DirectoryImageSource> reference_images;
    std::map<std::string, std::string> captions;
    PromptSet prompts;
    std::optional<ResponseCache> cache;
    std::optional<MllmClient> client;

    EbrInputs view(const RunConfig& cfg) {
        EbrInputs in;
        in.gallery_images = &*gallery_images;
        in.reference_images = &*reference_images;
        in.captions = &captions;
        in.client = &*client;
        in.tmpl = cfg.intent_form == IntentForm::GeneratedCaption ? &prompts.rerank_caption_intent : &prompts.rerank;
        in.cache = cache ? &*cache : nullptr;
        return in;
    }
};

// Fills `r` in place: the MLLM client owns a request gate and is not movable.
void prepare_rerank(RerankInputs& r, const RunConfig& cfg, const AnnotationOptions& ann,
                    const std::string& rankings_file, const std::string& image_dir, const std::string& ref_dir,
                    const std::string& captions_file) {
    r.queries = ann.load();
    r.lists = read_rankings_file(rankings_file);
    r.gallery_images.emplace(image_dir, cfg.image_extensions);
    r.reference_images.emplace(ref_dir.empty() ? image_dir : ref_dir, cfg.image_extensions);
    if (!captions_file.empty()) {
        for (const auto& c : read_captions_file(captions_file)) {
            if (c.caption) r.captions[c.query_id] = *c.caption;
        }
    } else if (cfg.intent_form == IntentForm::GeneratedCaption) {
        throw Error(ErrorCode::ConfigError, "the caption intent form needs --captions");
    }
    r.prompts = load_prompts(cfg);
    r.cache = make_cache(cfg);
    r.client.emplace(cfg.mllm_rerank);
}

int cmd_rerank(const RunConfig& cfg, RerankInputs& in, const fs::path& output) {
    std::vector<CandidateList> out_lists;
    std::ostringstream audit;
    std::map<std::string, std::size_t> statuses;
    if (cfg.ebr_enabled) {
        const auto results = run_ebr(in.lists, in.queries, in.view(cfg), cfg);
        for (const auto& r : results) {
            out_lists.push_back(r.candidates);
            write_audit_line(audit, r.outcome);
            ++statuses[std::string(to_string(r.outcome.status))];
        }
    } else {
        out_lists = in.lists;
    }
    auto out = open_output(output);
    write_rankings(out, out_lists);
    write_text(fs::path(output.string() + ".audit.jsonl"), audit.str());
    write_manifest(manifest_beside(output),
                   make_manifest(cfg, &in.prompts, {}, {{"stage", "rerank"}, {"statuses", statuses}}));
    std::fprintf(stderr, "rerank: %zu queries", out_lists.size());
    for (const auto& [s, n] : statuses) std::fprintf(stderr, ", %s %zu", s.c_str(), n);
    std::fprintf(stderr, "\n");
    return 0;
}

int cmd_evaluate(const AnnotationOptions& ann, const std::string& rankings_file, const std::string& metric_list,
                 const std::string& output) {
    const auto queries = ann.load();
    const auto lists = read_rankings_file(rankings_file);
    const auto report = evaluate(rankings_by_query(lists), queries, parse_metric_list(metric_list));
    std::cout << report_to_table(report);
    if (!output.empty()) write_text(output, report_to_json(report).dump(2) + "\n");
    if (report.subset_warnings) {
        std::fprintf(stderr, "evaluate: %zu queries have no target inside their subset\n", report.subset_warnings);
    }
    return 0;
}

int cmd_sweep_fusion(const RunConfig& cfg, const AnnotationOptions& ann, const EmbeddingOptions& emb,
                     const std::string& captions_file, const std::vector<double>& alphas,
                     const std::vector<double>& betas, const std::string& metric_list, const fs::path& out_dir) {
    const auto queries = ann.load();
    const auto e = load_embeddings(emb);
    const auto missing = missing_captions(queries, captions_file, e.caption ? &*e.caption : nullptr);
    const auto metrics = parse_metric_list(metric_list);
    const auto result = sweep_fusion(queries, e.sources(), cfg, alphas, betas, metrics, missing);
    fs::create_directories(out_dir);
    for (const auto& m : result.metric_order) {
        write_text(out_dir / ("fusion_" + m + ".csv"), sweep_matrix_csv(result, m));
    }
    write_text(out_dir / "fusion_long.csv", sweep_long_csv(result));
    write_manifest(out_dir / "manifest.json",
                   make_manifest(cfg, nullptr, e.checkpoints,
                                 {{"stage", "sweep-fusion"}, {"alphas", alphas}, {"betas", betas}}));
    std::fprintf(stderr, "sweep: %zu x %zu fusion grid written to %s\n", alphas.size(), betas.size(),
                 out_dir.string().c_str());
    return 0;
}

int cmd_sweep_grid(const RunConfig& cfg, RerankInputs& in, const std::vector<std::size_t>& sides,
                   const std::string& metric_list, const fs::path& out_dir) {
    const auto metrics = parse_metric_list(metric_list);
    const auto rows = sweep_grid_sizes(in.lists, in.queries, in.view(cfg), cfg, sides, metrics);
    fs::create_directories(out_dir);
    write_text(out_dir / "grid_sizes.csv", grid_sweep_csv(rows, metrics));
    write_manifest(out_dir / "manifest.json",
                   make_manifest(cfg, &in.prompts, {}, {{"stage", "sweep-grid"}, {"sides", sides}}));
    std::fprintf(stderr, "sweep: %zu grid sizes written to %s\n", sides.size(), out_dir.string().c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Training-free composed image retrieval: fusion, grid reranking and evaluation"};
    app.require_subcommand(1);

    // build-index
    auto* build = app.add_subcommand("build-index", "validate an embedding file and its manifest");
    std::string build_input;
    std::uint32_t expect_dim = 0;
    build->add_option("input", build_input, "SQEMB1 file")->required()->check(CLI::ExistingFile);
    build->add_option("--expect-dim", expect_dim, "required embedding dimension");

    // caption
    auto* caption = app.add_subcommand("caption", "generate target captions for every query");
    ConfigOptions caption_cfg;
    AnnotationOptions caption_ann;
    std::string caption_refs, caption_out;
    caption_cfg.add_to(*caption);
    caption_ann.add_to(*caption);
    caption->add_option("--reference-images", caption_refs, "directory of reference images")
        ->required()
        ->check(CLI::ExistingDirectory);
    caption->add_option("-o,--output", caption_out, "captions JSONL")->required();

    // retrieve
    auto* retrieve = app.add_subcommand("retrieve", "fuse embeddings and rank the gallery");
    ConfigOptions retrieve_cfg;
    AnnotationOptions retrieve_ann;
    EmbeddingOptions retrieve_emb;
    std::string retrieve_captions, retrieve_out;
    retrieve_cfg.add_to(*retrieve);
    retrieve_ann.add_to(*retrieve);
    retrieve_emb.add_to(*retrieve);
    retrieve->add_option("--captions", retrieve_captions, "captions JSONL; queries absent from it skip the caption")
        ->check(CLI::ExistingFile);
    retrieve->add_option("-o,--output", retrieve_out, "rankings JSONL")->required();

    // grid
    auto* grid = app.add_subcommand("grid", "dump annotated candidate grids as PNG");
    ConfigOptions grid_cfg;
    std::string grid_rankings, grid_images, grid_query, grid_out;
    grid_cfg.add_to(*grid);
    grid->add_option("-r,--rankings", grid_rankings, "rankings JSONL")->required()->check(CLI::ExistingFile);
    grid->add_option("--images", grid_images, "gallery image directory")->required()->check(CLI::ExistingDirectory);
    grid->add_option("-q,--query", grid_query, "single query id (output is a file); otherwise one PNG per query");
    grid->add_option("-o,--output", grid_out, "PNG file or directory")->required();

    // rerank
    auto* rerank = app.add_subcommand("rerank", "rerank the top window of each ranking with the MLLM");
    ConfigOptions rerank_cfg;
    AnnotationOptions rerank_ann;
    std::string rerank_rankings, rerank_images, rerank_refs, rerank_captions, rerank_out;
    rerank_cfg.add_to(*rerank);
    rerank_ann.add_to(*rerank);
    rerank->add_option("-r,--rankings", rerank_rankings, "rankings JSONL")->required()->check(CLI::ExistingFile);
    rerank->add_option("--images", rerank_images, "gallery image directory")->required()->check(CLI::ExistingDirectory);
    rerank->add_option("--reference-images", rerank_refs, "reference image directory; defaults to --images")
        ->check(CLI::ExistingDirectory);
    rerank->add_option("--captions", rerank_captions, "captions JSONL (caption intent form)")->check(CLI::ExistingFile);
    rerank->add_option("-o,--output", rerank_out, "reranked rankings JSONL")->required();

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "score rankings against annotations");
    AnnotationOptions eval_ann;
    std::string eval_rankings, eval_metrics = "R@1,R@5,R@10,R@50", eval_out;
    eval_ann.add_to(*eval);
    eval->add_option("-r,--rankings", eval_rankings, "rankings JSONL")->required()->check(CLI::ExistingFile);
    eval->add_option("-m,--metrics", eval_metrics, "comma-separated metrics, e.g. R@1,Rs@2,mAP@5");
    eval->add_option("-o,--output", eval_out, "JSON report");

    // sweep
    auto* sweep = app.add_subcommand("sweep", "fusion-weight and grid-size ablations as CSV");
    sweep->require_subcommand(1);
    auto* sweep_fusion_cmd = sweep->add_subcommand("fusion", "alpha x beta heatmap");
    ConfigOptions sf_cfg;
    AnnotationOptions sf_ann;
    EmbeddingOptions sf_emb;
    std::string sf_captions, sf_metrics = "R@1,R@5,R@10", sf_out;
    std::vector<double> sf_alphas{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    std::vector<double> sf_betas = sf_alphas;
    sf_cfg.add_to(*sweep_fusion_cmd);
    sf_ann.add_to(*sweep_fusion_cmd);
    sf_emb.add_to(*sweep_fusion_cmd);
    sweep_fusion_cmd->add_option("--captions", sf_captions, "captions JSONL")->check(CLI::ExistingFile);
    sweep_fusion_cmd->add_option("--alphas", sf_alphas, "alpha values")->delimiter(',')->check(CLI::Range(0.0, 1.0));
    sweep_fusion_cmd->add_option("--betas", sf_betas, "beta values")->delimiter(',')->check(CLI::Range(0.0, 1.0));
    sweep_fusion_cmd->add_option("-m,--metrics", sf_metrics, "comma-separated metrics");
    sweep_fusion_cmd->add_option("-o,--output", sf_out, "output directory")->required();

    auto* sweep_grid_cmd = sweep->add_subcommand("grid", "rerank with several grid sizes");
    ConfigOptions sg_cfg;
    AnnotationOptions sg_ann;
    std::string sg_rankings, sg_images, sg_refs, sg_captions, sg_metrics = "R@1,R@5,R@10", sg_out;
    std::vector<std::size_t> sg_sides{3, 4, 5, 6};
    sg_cfg.add_to(*sweep_grid_cmd);
    sg_ann.add_to(*sweep_grid_cmd);
    sweep_grid_cmd->add_option("-r,--rankings", sg_rankings, "rankings JSONL")->required()->check(CLI::ExistingFile);
    sweep_grid_cmd->add_option("--images", sg_images, "gallery image directory")
        ->required()
        ->check(CLI::ExistingDirectory);
    sweep_grid_cmd->add_option("--reference-images", sg_refs, "reference image directory")
        ->check(CLI::ExistingDirectory);
    sweep_grid_cmd->add_option("--captions", sg_captions, "captions JSONL")->check(CLI::ExistingFile);
    sweep_grid_cmd->add_option("--sides", sg_sides, "grid sides m")->delimiter(',');
    sweep_grid_cmd->add_option("-m,--metrics", sg_metrics, "comma-separated metrics");
    sweep_grid_cmd->add_option("-o,--output", sg_out, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*build) return cmd_build_index(build_input, expect_dim);
        if (*caption) return cmd_caption(caption_cfg.resolve(), caption_ann, caption_refs, caption_out);
        if (*retrieve) {
            return cmd_retrieve(retrieve_cfg.resolve(), retrieve_ann, retrieve_emb, retrieve_captions, retrieve_out);
        }
        if (*grid) return cmd_grid(grid_cfg.resolve(), grid_rankings, grid_images, grid_query, grid_out);
        if (*rerank) {
            const auto cfg = rerank_cfg.resolve();
            RerankInputs in;
            prepare_rerank(in, cfg, rerank_ann, rerank_rankings, rerank_images, rerank_refs, rerank_captions);
            return cmd_rerank(cfg, in, rerank_out);
        }
        if (*eval) return cmd_evaluate(eval_ann, eval_rankings, eval_metrics, eval_out);
        if (*sweep_fusion_cmd) {
            return cmd_sweep_fusion(sf_cfg.resolve(), sf_ann, sf_emb, sf_captions, sf_alphas, sf_betas, sf_metrics,
                                    sf_out);
        }
        if (*sweep_grid_cmd) {
            const auto cfg = sg_cfg.resolve();
            RerankInputs in;
            prepare_rerank(in, cfg, sg_ann, sg_rankings, sg_images, sg_refs, sg_captions);
            return cmd_sweep_grid(cfg, in, sg_sides, sg_metrics, sg_out);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 1;
}
