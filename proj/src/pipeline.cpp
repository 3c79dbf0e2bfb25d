// Copyright (C) 2026 The SQUARE Authors
// SPDX-License-Identifier: Apache-2.0

#include "square/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <ctime>
#include <exception>
#include <fstream>
#include <istream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "square/error.hpp"
#include "square/image.hpp"

#ifndef SQUARE_ASSET_DIR
#define SQUARE_ASSET_DIR "assets"
#endif

namespace square {

using nlohmann::json;

// ---------------------------------------------------------------------------------------------
// Configuration

std::string_view to_string(IntentForm form) noexcept {
    switch (form) {
        case IntentForm::ReferencePlusText: return "reference_plus_text";
        case IntentForm::GeneratedCaption: return "generated_caption";
    }
    return "unknown";
}

IntentForm parse_intent_form(std::string_view name) {
    if (name == "reference_plus_text") return IntentForm::ReferencePlusText;
    if (name == "generated_caption") return IntentForm::GeneratedCaption;
    throw Error(ErrorCode::ConfigError, "unknown intent_form '" + std::string(name) + "'");
}

void RunConfig::validate() const {
    fusion.validate();
    grid.validate();
    if (depth == 0) {
        throw Error(ErrorCode::ConfigError, "depth must be positive");
    }
    if (ebr_enabled && depth < window()) {
        throw Error(ErrorCode::ConfigError, "depth " + std::to_string(depth) + " is smaller than the rerank window " +
                                                std::to_string(window()));
    }
    if (workers == 0 || rank_threads == 0) {
        throw Error(ErrorCode::ConfigError, "workers and rank_threads must be positive");
    }
    mllm_caption.validate();
    mllm_rerank.validate();
}

RunConfig RunConfig::from_json(const json& j, const RunConfig& base) {
    if (!j.is_object()) {
        throw Error(ErrorCode::ConfigError, "run config must be a JSON object");
    }
    RunConfig c = base;
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "alpha") c.fusion.alpha = value.get<double>();
            else if (key == "beta") c.fusion.beta = value.get<double>();
            else if (key == "depth") c.depth = value.get<std::size_t>();
            else if (key == "ebr_enabled") c.ebr_enabled = value.get<bool>();
            else if (key == "grid") {
                for (const auto& [gk, gv] : value.items()) {
                    if (gk == "m") c.grid.m = gv.get<std::size_t>();
                    else if (gk == "cell_px") c.grid.cell_px = gv.get<std::size_t>();
                    else if (gk == "border_px") c.grid.border_px = gv.get<std::size_t>();
                    else if (gk == "label_px") c.grid.label_px = gv.get<std::size_t>();
                    else if (gk == "palette") {
                        c.grid.palette.clear();
                        for (const auto& rgb : gv) {
                            const auto v = rgb.get<std::vector<int>>();
                            if (v.size() != 3) throw Error(ErrorCode::ConfigError, "palette entries are [r, g, b]");
                            c.grid.palette.push_back({static_cast<std::uint8_t>(v[0]), static_cast<std::uint8_t>(v[1]),
                                                      static_cast<std::uint8_t>(v[2])});
                        }
                    } else throw Error(ErrorCode::ConfigError, "unknown grid key '" + gk + "'");
                }
            } else if (key == "mllm_caption") c.mllm_caption = MllmConfig::from_json(value, c.mllm_caption);
            else if (key == "mllm_rerank") c.mllm_rerank = MllmConfig::from_json(value, c.mllm_rerank);
            else if (key == "intent_form") c.intent_form = parse_intent_form(value.get<std::string>());
            else if (key == "exclude_reference") c.exclude_reference = value.get<bool>();
            else if (key == "rank_within_subset") c.rank_within_subset = value.get<bool>();
            else if (key == "cache_dir") c.cache_dir = value.get<std::string>();
            else if (key == "workers") c.workers = value.get<std::size_t>();
            else if (key == "rank_threads") c.rank_threads = value.get<std::size_t>();
            else if (key == "image_extensions") c.image_extensions = value.get<std::vector<std::string>>();
            else if (key == "prompt_dir") c.prompt_dir = value.get<std::string>();
            else throw Error(ErrorCode::ConfigError, "unknown config key '" + key + "'");
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ConfigError, std::string("run config: ") + e.what());
    }
    return c;
}

RunConfig RunConfig::from_json(const json& j) { return from_json(j, RunConfig{}); }

nlohmann::ordered_json RunConfig::to_json() const {
    nlohmann::ordered_json j;
    j["alpha"] = fusion.alpha;
    j["beta"] = fusion.beta;
    j["depth"] = depth;
    j["ebr_enabled"] = ebr_enabled;
    nlohmann::ordered_json palette = nlohmann::ordered_json::array();
    for (const auto& c : grid.palette) {
        palette.push_back({c.r, c.g, c.b});
    }
    j["grid"] = {{"m", grid.m},
                 {"cell_px", grid.cell_px},
                 {"border_px", grid.border_px},
                 {"label_px", grid.label_px},
                 {"palette", palette}};
    j["mllm_caption"] = mllm_caption.to_json();
    j["mllm_rerank"] = mllm_rerank.to_json();
    j["intent_form"] = to_string(intent_form);
    j["exclude_reference"] = exclude_reference;
    j["rank_within_subset"] = rank_within_subset;
    j["cache_dir"] = cache_dir.string();
    j["workers"] = workers;
    j["rank_threads"] = rank_threads;
    j["image_extensions"] = image_extensions;
    j["prompt_dir"] = prompt_dir;
    return j;
}

std::filesystem::path default_prompt_dir() { return std::filesystem::path(SQUARE_ASSET_DIR) / "prompts"; }

// ---------------------------------------------------------------------------------------------
// Image sources and cache

DirectoryImageSource::DirectoryImageSource(std::filesystem::path dir, std::vector<std::string> extensions)
    : dir_(std::move(dir)), extensions_(std::move(extensions)) {}

std::optional<std::vector<std::uint8_t>> DirectoryImageSource::load(const std::string& id) const {
    for (const auto& ext : extensions_) {
        const auto path = dir_ / (id + "." + ext);
        std::error_code ec;
        if (std::filesystem::is_regular_file(path, ec)) {
            return read_file_bytes(path);
        }
    }
    return std::nullopt;
}

std::optional<std::vector<std::uint8_t>> MemoryImageSource::load(const std::string& id) const {
    auto it = images_.find(id);
    if (it == images_.end()) {
        return std::nullopt;
    }
    return it->second;
}

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

std::filesystem::path ResponseCache::file_for(const std::string& ns, const std::string& key) const {
    return dir_ / ns / (sha256_hex(key) + ".json");
}

std::optional<std::string> ResponseCache::get(const std::string& ns, const std::string& key) const {
    std::ifstream in(file_for(ns, key));
    if (!in) {
        return std::nullopt;
    }
    try {
        const auto j = json::parse(in);
        // A hash collision or a hand-edited file must not serve the wrong entry.
        if (j.value("key", "") != key) {
            return std::nullopt;
        }
        return j.at("text").get<std::string>();
    } catch (const json::exception&) {
        return std::nullopt;
    }
}

void ResponseCache::put(const std::string& ns, const std::string& key, const std::string& text) const {
    const auto path = file_for(ns, key);
    std::filesystem::create_directories(path.parent_path());
    std::ostringstream tid;
    tid << std::this_thread::get_id();
    const auto tmp = path.string() + ".tmp" + tid.str();
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) {
            throw Error(ErrorCode::IoError, "cannot write cache file " + tmp);
        }
        nlohmann::ordered_json j;
        j["key"] = key;
        j["text"] = text;
        out << j.dump() << '\n';
    }
    std::filesystem::rename(tmp, path);
}

std::string caption_cache_key(const std::string& query_id, const MllmConfig& cfg, const PromptTemplate& tmpl) {
    return "caption|" + query_id + "|" + cfg.model_name + "|" + tmpl.version;
}

std::string rerank_cache_key(const std::string& query_id, const MllmConfig& cfg, const PromptTemplate& tmpl,
                             const GridSpec& grid, std::span<const std::string> window_ids) {
    std::string ids;
    for (const auto& id : window_ids) {
        ids += id;
        ids.push_back('\n');
    }
    return "rerank|" + query_id + "|" + cfg.model_name + "|" + tmpl.version + "|m=" + std::to_string(grid.m) +
           "|cell=" + std::to_string(grid.cell_px) + "|" + sha256_hex(ids);
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
    workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mu;
    {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
                    try {
                        fn(i);
                    } catch (...) {
                        std::lock_guard lock(error_mu);
                        if (!first_error) {
                            first_error = std::current_exception();
                        }
                        next.store(n);
                    }
                }
            });
        }
    }
    if (first_error) {
        std::rethrow_exception(first_error);
    }
}

// ---------------------------------------------------------------------------------------------
// Captions

std::vector<CaptionRecord> generate_captions(std::span<const QueryAnnotation> queries, const ImageSource& ref_images,
                                             MllmClient& client, const PromptTemplate& tmpl,
                                             const ResponseCache* cache, std::size_t workers) {
    std::vector<CaptionRecord> out(queries.size());
    parallel_for(queries.size(), workers, [&](std::size_t i) {
        const auto& q = queries[i];
        auto& rec = out[i];
        rec.query_id = q.query_id;
        const auto key = caption_cache_key(q.query_id, client.config(), tmpl);
        if (cache) {
            if (auto hit = cache->get("captions", key)) {
                rec.caption = std::move(*hit);
                rec.cached = true;
                return;
            }
        }
        const auto image = ref_images.load(q.reference_id);
        if (!image) {
            rec.error = std::string(to_string(ErrorCode::MissingImage)) + ": reference image '" + q.reference_id + "'";
            return;
        }
        try {
            auto reply = client.generate_target_caption(*image, q.modification_text, tmpl, q.query_id);
            rec.retry_count = reply.retry_count;
            rec.caption = std::move(reply.text);
            if (cache) {
                cache->put("captions", key, *rec.caption);
            }
        } catch (const MllmError& e) {
            rec.retry_count = e.retry_count();
            rec.error = e.what();
        } catch (const Error& e) {
            rec.error = e.what();
        }
    });
    return out;
}

void write_captions(std::ostream& out, std::span<const CaptionRecord> records) {
    for (const auto& r : records) {
        if (!r.caption) {
            continue;
        }
        nlohmann::ordered_json j;
        j["id"] = r.query_id;
        j["text"] = *r.caption;
        out << j.dump() << '\n';
    }
}

std::vector<CaptionRecord> read_captions(std::istream& in) {
    std::vector<CaptionRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            const auto j = json::parse(line);
            CaptionRecord r;
            r.query_id = j.at("id").get<std::string>();
            if (j.contains("text") && j.at("text").is_string()) {
                r.caption = j.at("text").get<std::string>();
            }
            out.push_back(std::move(r));
        } catch (const json::exception& e) {
            throw Error(ErrorCode::ParseError, "captions line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// SQAF

namespace {

const Embedding& require_embedding(const GalleryIndex* index, const std::string& id, const char* what) {
    if (index == nullptr) {
        throw Error(ErrorCode::MissingEmbedding, std::string("no ") + what + " embeddings loaded (needed for '" + id + "')");
    }
    auto pos = index->find(id);
    if (!pos) {
        throw Error(ErrorCode::MissingEmbedding, std::string(what) + " embedding for '" + id + "'");
    }
    return index->item(*pos).embedding;
}

}  // namespace

std::vector<SqafResult> run_sqaf(std::span<const QueryAnnotation> queries, const EmbeddingSources& sources,
                                 const RunConfig& cfg, const std::set<std::string>& caption_missing) {
    cfg.fusion.validate();
    if (sources.gallery == nullptr || sources.gallery->empty()) {
        throw Error(ErrorCode::EmptyGallery, "no gallery embeddings");
    }
    std::vector<SqafResult> out(queries.size());
    parallel_for(queries.size(), cfg.workers, [&](std::size_t i) {
        const auto& q = queries[i];
        const auto& ref = require_embedding(sources.reference, q.reference_id, "reference image");
        const auto& txt = require_embedding(sources.text, q.query_id, "modification text");
        const Embedding* cap = nullptr;
        const bool missing = caption_missing.contains(q.query_id);
        if (cfg.fusion.beta > 0.0 && !missing) {
            cap = &require_embedding(sources.caption, q.query_id, "caption");
        }
        const auto composed = compose_query(q.query_id, ref, txt, cap, cfg.fusion);

        auto& res = out[i];
        res.caption_missing = missing;
        res.effective_beta = composed.params.beta;
        if (cfg.rank_within_subset && q.subset_ids) {
            res.candidates = rank_subset(composed, *sources.gallery, *q.subset_ids);
            if (res.candidates.size() > cfg.depth) {
                res.candidates.candidates.resize(cfg.depth);
            }
            res.candidates.k = cfg.depth;
        } else {
            std::set<std::string> exclude;
            if (cfg.exclude_reference) {
                exclude.insert(q.reference_id);
            }
            res.candidates = global_rank(composed, *sources.gallery, cfg.depth, exclude, {cfg.rank_threads});
        }
    });
    return out;
}

// ---------------------------------------------------------------------------------------------
// EBR

GridImage build_candidate_grid(const CandidateList& list, const ImageSource& images, const GridSpec& spec) {
    const std::size_t window = spec.cells();
    if (list.size() < window) {
        throw Error(ErrorCode::WrongCount, "query '" + list.query_id + "' has " + std::to_string(list.size()) +
                                               " candidates, the grid needs " + std::to_string(window));
    }
    std::vector<std::pair<std::string, Raster>> cells;
    cells.reserve(window);
    for (std::size_t i = 0; i < window; ++i) {
        const auto& id = list.candidates[i].gallery_id;
        auto bytes = images.load(id);
        if (!bytes) {
            throw Error(ErrorCode::MissingImage, "candidate image '" + id + "'");
        }
        cells.emplace_back(id, decode_image(*bytes));
    }
    return compose_grid(cells, spec);
}

std::vector<EbrResult> run_ebr(std::span<const CandidateList> lists, std::span<const QueryAnnotation> queries,
                               const EbrInputs& inputs, const RunConfig& cfg) {
    if (inputs.gallery_images == nullptr || inputs.client == nullptr || inputs.tmpl == nullptr) {
        throw Error(ErrorCode::ConfigError, "run_ebr needs gallery images, a client and a rerank template");
    }
    cfg.grid.validate();
    std::map<std::string, const QueryAnnotation*> by_id;
    for (const auto& q : queries) {
        by_id[q.query_id] = &q;
    }
    const bool caption_intent = inputs.tmpl->kind == PromptKind::RerankCaptionIntent;
    const std::size_t window = cfg.window();

    std::vector<EbrResult> out(lists.size());
    parallel_for(lists.size(), cfg.workers, [&](std::size_t i) {
        const auto& list = lists[i];
        auto& res = out[i];
        res.candidates = list;
        auto skip = [&](const std::string& reason) { res.outcome = skipped_outcome(list.query_id, window, reason); };

        auto qit = by_id.find(list.query_id);
        if (qit == by_id.end()) {
            skip("no annotation for query");
            return;
        }
        const auto& q = *qit->second;
        std::string caption;
        std::vector<std::uint8_t> ref_bytes;
        if (caption_intent) {
            const auto cit = inputs.captions ? inputs.captions->find(q.query_id) : decltype(inputs.captions->end()){};
            if (!inputs.captions || cit == inputs.captions->end()) {
                skip("caption_missing");
                return;
            }
            caption = cit->second;
        } else {
            auto ref = inputs.reference_images ? inputs.reference_images->load(q.reference_id) : std::nullopt;
            if (!ref) {
                skip(std::string(to_string(ErrorCode::MissingImage)) + ": reference image '" + q.reference_id + "'");
                return;
            }
            ref_bytes = std::move(*ref);
        }

        const std::vector<std::string> ids = list.ids();
        const std::span<const std::string> window_ids(ids.data(), std::min(window, ids.size()));
        const auto key = rerank_cache_key(q.query_id, inputs.client->config(), *inputs.tmpl, cfg.grid, window_ids);

        std::optional<std::string> completion;
        if (inputs.cache) {
            completion = inputs.cache->get("rerank", key);
            res.cached = completion.has_value();
        }
        if (!completion) {
            try {
                const auto grid = build_candidate_grid(list, *inputs.gallery_images, cfg.grid);
                const auto png = encode_png(grid.pixels);
                auto reply = inputs.client->rerank_call(ref_bytes, q.modification_text, png, window, *inputs.tmpl,
                                                        q.query_id, caption);
                completion = std::move(reply.text);
            } catch (const Error& e) {
                skip(e.what());
                return;
            }
            if (inputs.cache) {
                inputs.cache->put("rerank", key, *completion);
            }
        }
        res.outcome = resolve_completion(q.query_id, std::move(*completion), window);
        res.candidates = apply_rerank_window(list, res.outcome.pi_final);
    });
    return out;
}

std::map<std::string, std::vector<std::string>> rankings_by_query(std::span<const CandidateList> lists) {
    std::map<std::string, std::vector<std::string>> out;
    for (const auto& l : lists) {
        out[l.query_id] = l.ids();
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// Manifest

nlohmann::ordered_json make_manifest(const RunConfig& cfg, const PromptSet* prompts,
                                     const std::map<std::string, std::string>& checkpoints,
                                     const nlohmann::ordered_json& extra) {
    auto cfg_json = cfg.to_json();
    nlohmann::ordered_json m;
    m["config_hash"] = sha256_hex(cfg_json.dump());
    m["config"] = cfg_json;
    if (prompts) {
        m["prompt_versions"] = {{"caption", prompts->caption.version},
                                {"rerank", prompts->rerank.version},
                                {"rerank_caption_intent", prompts->rerank_caption_intent.version}};
    }
    m["models"] = {{"caption", cfg.mllm_caption.model_name}, {"rerank", cfg.mllm_rerank.model_name}};
    m["checkpoints"] = checkpoints;
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    m["created_at"] = buf;
    if (!extra.is_null()) {
        for (const auto& [k, v] : extra.items()) {
            m[k] = v;
        }
    }
    return m;
}

void write_manifest(const std::filesystem::path& path, const nlohmann::ordered_json& manifest) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw Error(ErrorCode::IoError, "cannot write " + path.string());
    }
    out << manifest.dump(2) << '\n';
}

// ---------------------------------------------------------------------------------------------
// Sweeps

std::string format_param(double v) {
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return ec == std::errc() ? std::string(buf, end) : std::to_string(v);
}

SweepResult sweep_fusion(std::span<const QueryAnnotation> queries, const EmbeddingSources& sources,
                         const RunConfig& cfg, std::span<const double> alphas, std::span<const double> betas,
                         std::span<const MetricSpec> metrics, const std::set<std::string>& caption_missing) {
    SweepResult result;
    result.alphas.assign(alphas.begin(), alphas.end());
    result.betas.assign(betas.begin(), betas.end());
    for (const auto& m : metrics) {
        result.metric_order.push_back(m.name());
    }
    for (double a : alphas) {
        for (double b : betas) {
            RunConfig run = cfg;
            run.fusion.alpha = a;
            run.fusion.beta = b;
            const auto sqaf = run_sqaf(queries, sources, run, caption_missing);
            std::vector<CandidateList> lists;
            lists.reserve(sqaf.size());
            for (const auto& s : sqaf) {
                lists.push_back(s.candidates);
            }
            const auto report = evaluate(rankings_by_query(lists), queries, metrics);
            result.cells.push_back({a, b, report.per_metric});
        }
    }
    return result;
}

std::string sweep_matrix_csv(const SweepResult& result, const std::string& metric) {
    if (std::find(result.metric_order.begin(), result.metric_order.end(), metric) == result.metric_order.end()) {
        throw Error(ErrorCode::ConfigError, "metric '" + metric + "' was not computed in the sweep");
    }
    std::ostringstream out;
    out << "alpha\\beta";
    for (double b : result.betas) {
        out << ',' << format_param(b);
    }
    out << '\n';
    char buf[32];
    for (std::size_t ai = 0; ai < result.alphas.size(); ++ai) {
        out << format_param(result.alphas[ai]);
        for (std::size_t bi = 0; bi < result.betas.size(); ++bi) {
            std::snprintf(buf, sizeof(buf), "%.2f", round2(result.at(ai, bi).metrics.at(metric)));
            out << ',' << buf;
        }
        out << '\n';
    }
    return out.str();
}

std::string sweep_long_csv(const SweepResult& result) {
    std::ostringstream out;
    out << "alpha,beta";
    for (const auto& m : result.metric_order) {
        out << ',' << m;
    }
    out << '\n';
    char buf[32];
    for (const auto& cell : result.cells) {
        out << format_param(cell.alpha) << ',' << format_param(cell.beta);
        for (const auto& m : result.metric_order) {
            std::snprintf(buf, sizeof(buf), "%.2f", round2(cell.metrics.at(m)));
            out << ',' << buf;
        }
        out << '\n';
    }
    return out.str();
}

std::vector<GridSweepRow> sweep_grid_sizes(std::span<const CandidateList> lists,
                                           std::span<const QueryAnnotation> queries, const EbrInputs& inputs,
                                           const RunConfig& cfg, std::span<const std::size_t> sides,
                                           std::span<const MetricSpec> metrics) {
    std::vector<GridSweepRow> rows;
    rows.push_back({"w/o EBR", evaluate(rankings_by_query(lists), queries, metrics).per_metric});
    for (std::size_t m : sides) {
        RunConfig run = cfg;
        run.grid.m = m;
        const auto ebr = run_ebr(lists, queries, inputs, run);
        std::vector<CandidateList> reranked;
        reranked.reserve(ebr.size());
        for (const auto& r : ebr) {
            reranked.push_back(r.candidates);
        }
        rows.push_back({std::to_string(m) + "x" + std::to_string(m),
                        evaluate(rankings_by_query(reranked), queries, metrics).per_metric});
    }
    return rows;
}

std::string grid_sweep_csv(std::span<const GridSweepRow> rows, std::span<const MetricSpec> metrics) {
    std::ostringstream out;
    out << "grid";
    for (const auto& m : metrics) {
        out << ',' << m.name();
    }
    out << '\n';
    char buf[32];
    for (const auto& row : rows) {
        out << row.label;
        for (const auto& m : metrics) {
            std::snprintf(buf, sizeof(buf), "%.2f", round2(row.metrics.at(m.name())));
            out << ',' << buf;
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace square
