// Copyright (C) 2026 The SQUARE Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "square/pipeline.hpp"
#include "synthetic.hpp"

using namespace square;
using square::testing::make_world;
using square::testing::mock_run_config;
using square::testing::oracle_mix;
using square::testing::oracle_rank;
using square::testing::thrown_code;
using square::testing::to_double;
using Idx = std::vector<std::size_t>;

namespace {

const PromptSet& prompts() {
    static const PromptSet set = PromptSet::load(default_prompt_dir());
    return set;
}

std::vector<CandidateList> lists_of(const std::vector<SqafResult>& results) {
    std::vector<CandidateList> out;
    for (const auto& r : results) out.push_back(r.candidates);
    return out;
}

std::vector<CandidateList> lists_of(const std::vector<EbrResult>& results) {
    std::vector<CandidateList> out;
    for (const auto& r : results) out.push_back(r.candidates);
    return out;
}

struct EbrHarness {
    RunConfig cfg;
    std::shared_ptr<MockBackend> backend;
    MllmClient client;
    EbrInputs inputs;

    EbrHarness(const square::testing::SyntheticWorld& w, const std::string& spec, std::size_t m = 4)
        : cfg(mock_run_config(spec, m)),
          backend(std::make_shared<MockBackend>(spec)),
          client(cfg.mllm_rerank, backend) {
        inputs.gallery_images = &w.images;
        inputs.reference_images = &w.images;
        inputs.client = &client;
        inputs.tmpl = &prompts().rerank;
    }
};

}  // namespace

TEST_CASE("fusion and ranking match a step-by-step hand composition") {
    const auto w = make_world(40, 3, 16, 101);
    RunConfig cfg = mock_run_config("mock:identity");
    cfg.depth = 12;
    const auto results = run_sqaf(w.queries, w.sources(), cfg);
    REQUIRE(results.size() == 3);
    const auto items = square::testing::gallery_as_double(w.gallery);
    for (std::size_t i = 0; i < 3; ++i) {
        const auto& q = w.queries[i];
        const auto q_vlm = oracle_mix(to_double(w.gallery.at(q.reference_id)), to_double(w.text.at(q.query_id)), 0.7);
        const auto q_final = oracle_mix(q_vlm, to_double(w.caption.at(q.query_id)), 0.6);
        CHECK(results[i].candidates.ids() == oracle_rank(q_final, items, 12, {q.reference_id}));
        CHECK(results[i].candidates.query_id == q.query_id);
        CHECK_FALSE(results[i].caption_missing);
        CHECK(results[i].effective_beta == 0.6);
    }
}

TEST_CASE("beta = 0 and missing captions reduce to image/text fusion") {
    const auto w = make_world(40, 5, 16, 103);
    RunConfig cfg = mock_run_config("mock:identity");
    cfg.fusion.beta = 0.0;
    auto no_caption_sources = w.sources();
    no_caption_sources.caption = nullptr;
    const auto zero_beta = run_sqaf(w.queries, no_caption_sources, cfg);

    RunConfig with_beta = cfg;
    with_beta.fusion.beta = 0.6;
    std::set<std::string> all_missing;
    for (const auto& q : w.queries) all_missing.insert(q.query_id);
    const auto missing = run_sqaf(w.queries, no_caption_sources, with_beta, all_missing);
    for (std::size_t i = 0; i < w.queries.size(); ++i) {
        CHECK(zero_beta[i].candidates == missing[i].candidates);
        CHECK(missing[i].caption_missing);
        CHECK(missing[i].effective_beta == 0.0);
    }
    // Without the missing flag an absent caption embedding is an error.
    CHECK(thrown_code([&] { run_sqaf(w.queries, no_caption_sources, with_beta); }) == ErrorCode::MissingEmbedding);
    auto no_text = w.sources();
    no_text.text = nullptr;
    CHECK(thrown_code([&] { run_sqaf(w.queries, no_text, cfg); }) == ErrorCode::MissingEmbedding);
}

TEST_CASE("reference exclusion and subset ranking") {
    auto w = make_world(30, 4, 8, 107);
    RunConfig cfg = mock_run_config("mock:identity");
    cfg.depth = 30;
    for (const auto& r : run_sqaf(w.queries, w.sources(), cfg)) {
        CHECK(r.candidates.size() == 29);
    }
    cfg.exclude_reference = false;
    for (const auto& r : run_sqaf(w.queries, w.sources(), cfg)) {
        CHECK(r.candidates.size() == 30);
    }

    for (auto& q : w.queries) {
        q.subset_ids = std::vector<std::string>{*q.target_ids.begin(), "g00001", "g00002"};
    }
    cfg.rank_within_subset = true;
    for (const auto& r : run_sqaf(w.queries, w.sources(), cfg)) {
        CHECK(r.candidates.size() <= 3);
    }
}

TEST_CASE("rerank with identity, reversal and partial completions") {
    const auto w = make_world(50, 4, 16, 109);
    RunConfig base = mock_run_config("mock:identity");
    const auto lists = lists_of(run_sqaf(w.queries, w.sources(), base));

    SUBCASE("identity leaves every list unchanged") {
        EbrHarness h(w, "mock:identity");
        const auto out = run_ebr(lists, w.queries, h.inputs, h.cfg);
        for (std::size_t i = 0; i < lists.size(); ++i) {
            CHECK(out[i].candidates == lists[i]);
            CHECK(out[i].outcome.status == RerankStatus::Full);
        }
    }
    SUBCASE("reversal flips the window and keeps the tail") {
        EbrHarness h(w, "mock:reverse");
        const auto out = run_ebr(lists, w.queries, h.inputs, h.cfg);
        for (std::size_t i = 0; i < lists.size(); ++i) {
            const auto before = lists[i].ids();
            const auto after = out[i].candidates.ids();
            for (std::size_t j = 0; j < 16; ++j) CHECK(after[j] == before[15 - j]);
            CHECK(std::vector<std::string>(after.begin() + 16, after.end()) ==
                  std::vector<std::string>(before.begin() + 16, before.end()));
        }
    }
    SUBCASE("a partial answer is completed in initial order") {
        EbrHarness h(w, "mock:fixed;text=[5,2]");
        const auto out = run_ebr(lists, w.queries, h.inputs, h.cfg);
        CHECK(out[0].outcome.status == RerankStatus::Partial);
        CHECK(out[0].outcome.pi_final == Idx{5, 2, 0, 1, 3, 4, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15});
        const auto before = lists[0].ids();
        CHECK(out[0].candidates.ids()[0] == before[5]);
        CHECK(out[0].candidates.ids()[1] == before[2]);
        CHECK(out[0].candidates.ids()[2] == before[0]);
    }
    SUBCASE("an unusable answer falls back to the initial order") {
        EbrHarness h(w, "mock:fixed;text=no idea");
        const auto out = run_ebr(lists, w.queries, h.inputs, h.cfg);
        CHECK(out[0].outcome.status == RerankStatus::Fallback);
        CHECK(out[0].candidates == lists[0]);
    }
    SUBCASE("failures skip the query without aborting the batch") {
        EbrHarness h(w, "mock:refuse");
        const auto out = run_ebr(lists, w.queries, h.inputs, h.cfg);
        for (std::size_t i = 0; i < lists.size(); ++i) {
            CHECK(out[i].outcome.status == RerankStatus::Skipped);
            CHECK(out[i].outcome.error.find("ApiRefusal") != std::string::npos);
            CHECK(out[i].candidates == lists[i]);
        }
    }
}

TEST_CASE("rerank skips queries it cannot serve") {
    const auto w = make_world(50, 2, 16, 113);
    RunConfig base = mock_run_config("mock:identity");
    auto lists = lists_of(run_sqaf(w.queries, w.sources(), base));
    lists[1].candidates.resize(10);  // shorter than the 16-cell window

    MemoryImageSource partial;  // gallery images without the first query's top candidate
    for (const auto& it : w.gallery.items()) {
        if (it.id != lists[0].candidates[0].gallery_id) partial.add(it.id, *w.images.load(it.id));
    }
    EbrHarness h(w, "mock:reverse");
    h.inputs.gallery_images = &partial;
    const auto out = run_ebr(lists, w.queries, h.inputs, h.cfg);
    CHECK(out[0].outcome.status == RerankStatus::Skipped);
    CHECK(out[0].outcome.error.find("MissingImage") != std::string::npos);
    CHECK(out[1].outcome.status == RerankStatus::Skipped);
    CHECK(out[1].outcome.error.find("WrongCount") != std::string::npos);
    CHECK(h.backend->calls() == 0);
}

TEST_CASE("caption-intent rerank uses captions instead of the reference image") {
    const auto w = make_world(50, 2, 16, 127);
    RunConfig base = mock_run_config("mock:identity");
    const auto lists = lists_of(run_sqaf(w.queries, w.sources(), base));
    EbrHarness h(w, "mock:reverse");
    h.inputs.tmpl = &prompts().rerank_caption_intent;
    h.inputs.reference_images = nullptr;
    const std::map<std::string, std::string> captions{{w.queries[0].query_id, "a red car"}};
    h.inputs.captions = &captions;
    const auto out = run_ebr(lists, w.queries, h.inputs, h.cfg);
    CHECK(out[0].outcome.status == RerankStatus::Full);
    CHECK(out[1].outcome.status == RerankStatus::Skipped);
    CHECK(out[1].outcome.error == "caption_missing");
}

TEST_CASE("a warm cache serves every completion without calling the model") {
    square::testing::TempDir dir("cache");
    const auto w = make_world(50, 4, 16, 131);
    const ResponseCache cache(dir.path());

    auto caption_backend = std::make_shared<MockBackend>("mock:echo");
    MllmClient caption_client(mock_run_config("mock:echo").mllm_caption, caption_backend);
    const auto first = generate_captions(w.queries, w.images, caption_client, prompts().caption, &cache, 2);
    CHECK(caption_backend->calls() == 4);
    const auto second = generate_captions(w.queries, w.images, caption_client, prompts().caption, &cache, 2);
    CHECK(caption_backend->calls() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(second[i].cached);
        CHECK(second[i].caption == first[i].caption);
        CHECK(*first[i].caption == "TARGET: " + w.queries[i].modification_text);
    }

    RunConfig base = mock_run_config("mock:reverse");
    const auto lists = lists_of(run_sqaf(w.queries, w.sources(), base));
    EbrHarness cold(w, "mock:reverse");
    cold.inputs.cache = &cache;
    const auto a = run_ebr(lists, w.queries, cold.inputs, cold.cfg);
    CHECK(cold.backend->calls() == 4);
    EbrHarness warm(w, "mock:reverse");
    warm.inputs.cache = &cache;
    const auto b = run_ebr(lists, w.queries, warm.inputs, warm.cfg);
    CHECK(warm.backend->calls() == 0);
    std::ostringstream audit_a, audit_b;
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(b[i].cached);
        CHECK(a[i].candidates == b[i].candidates);
        write_audit_line(audit_a, a[i].outcome);
        write_audit_line(audit_b, b[i].outcome);
    }
    CHECK(audit_a.str() == audit_b.str());

    // A different grid size is a different question and misses the cache.
    EbrHarness other(w, "mock:reverse", 3);
    other.inputs.cache = &cache;
    run_ebr(lists, w.queries, other.inputs, other.cfg);
    CHECK(other.backend->calls() == 4);
}

TEST_CASE("caption generation records failures and round-trips through JSON lines") {
    const auto w = make_world(20, 3, 8, 137);
    MemoryImageSource refs;
    refs.add(w.queries[0].reference_id, *w.images.load(w.queries[0].reference_id));
    refs.add(w.queries[2].reference_id, *w.images.load(w.queries[2].reference_id));
    auto cfg = mock_run_config("mock:echo").mllm_caption;
    MllmClient client(cfg);
    auto records = generate_captions(w.queries, refs, client, prompts().caption, nullptr, 1);
    CHECK(records[0].caption.has_value());
    CHECK_FALSE(records[1].caption.has_value());
    CHECK(records[1].error.find("MissingImage") != std::string::npos);

    std::ostringstream out;
    write_captions(out, records);
    std::istringstream in(out.str());
    const auto back = read_captions(in);
    REQUIRE(back.size() == 2);
    CHECK(back[0].query_id == w.queries[0].query_id);
    CHECK(back[1].query_id == w.queries[2].query_id);
    CHECK(*back[1].caption == "TARGET: " + w.queries[2].modification_text);
    CHECK(out.str().find("\"id\"") != std::string::npos);

    MllmClient refusing(mock_run_config("mock:echo").mllm_caption, std::make_shared<MockBackend>("mock:refuse"));
    const auto refused = generate_captions(w.queries, w.images, refusing, prompts().caption, nullptr, 1);
    for (const auto& r : refused) {
        CHECK_FALSE(r.caption.has_value());
        CHECK(r.retry_count == 1);
    }
}

TEST_CASE("run configuration") {
    const auto cfg = RunConfig::from_json(nlohmann::json::parse(R"({
        "alpha": 0.5, "beta": 0.25, "depth": 100, "grid": {"m": 3, "cell_px": 128},
        "mllm_rerank": {"model_name": "gpt-4.1"}, "intent_form": "generated_caption", "workers": 4})"));
    CHECK(cfg.fusion.alpha == 0.5);
    CHECK(cfg.grid.m == 3);
    CHECK(cfg.window() == 9);
    CHECK(cfg.mllm_rerank.model_name == "gpt-4.1");
    CHECK(cfg.mllm_caption.model_name == "gpt-4o");
    CHECK(cfg.intent_form == IntentForm::GeneratedCaption);
    CHECK(RunConfig::from_json(cfg.to_json()).to_json() == cfg.to_json());
    cfg.validate();

    CHECK(thrown_code([] { RunConfig::from_json(nlohmann::json::parse(R"({"gamma": 1})")); }) ==
          ErrorCode::ConfigError);
    CHECK(thrown_code([] { RunConfig::from_json(nlohmann::json::parse(R"({"alpha": "high"})")); }) ==
          ErrorCode::ConfigError);
    RunConfig shallow;
    shallow.depth = 10;
    CHECK(thrown_code([&] { shallow.validate(); }) == ErrorCode::ConfigError);
    shallow.ebr_enabled = false;
    shallow.validate();
    RunConfig bad_alpha;
    bad_alpha.fusion.alpha = 2.0;
    CHECK(thrown_code([&] { bad_alpha.validate(); }) == ErrorCode::AlphaOutOfRange);
}

TEST_CASE("run manifest") {
    RunConfig cfg;
    const auto m = make_manifest(cfg, &prompts(), {{"gallery", "ViT-B-32/openai"}});
    CHECK(m["config_hash"].get<std::string>().size() == 64);
    CHECK(m["prompt_versions"]["caption"] == prompts().caption.version);
    CHECK(m["models"]["rerank"] == "gpt-4o");
    CHECK(m["checkpoints"]["gallery"] == "ViT-B-32/openai");
    CHECK(m.contains("created_at"));
    RunConfig other = cfg;
    other.fusion.alpha = 0.1;
    CHECK(make_manifest(other, nullptr, {})["config_hash"] != m["config_hash"]);
}

TEST_CASE("fusion sweep grid") {
    const auto w = make_world(50, 6, 16, 139);
    RunConfig cfg = mock_run_config("mock:identity");
    const std::vector<double> values{0.0, 0.5, 1.0};
    const auto metrics = parse_metric_list("R@1,R@10");
    const auto sweep = sweep_fusion(w.queries, w.sources(), cfg, values, values, metrics);
    CHECK(sweep.cells.size() == 9);
    const auto csv = sweep_matrix_csv(sweep, "R@10");
    std::istringstream lines(csv);
    std::string header;
    std::getline(lines, header);
    CHECK(header == "alpha\\beta,0,0.5,1");
    int rows = 0;
    for (std::string line; std::getline(lines, line);) ++rows;
    CHECK(rows == 3);
    CHECK(sweep_long_csv(sweep).rfind("alpha,beta,R@1,R@10\n", 0) == 0);
    CHECK(thrown_code([&] { sweep_matrix_csv(sweep, "mAP@5"); }) == ErrorCode::ConfigError);
    CHECK(format_param(0.25) == "0.25");
}

TEST_CASE("grid-size sweep") {
    const auto w = make_world(50, 3, 16, 149);
    RunConfig base = mock_run_config("mock:identity");
    const auto lists = lists_of(run_sqaf(w.queries, w.sources(), base));
    EbrHarness h(w, "mock:identity");
    const std::vector<std::size_t> sides{2, 3, 4};
    const auto metrics = parse_metric_list("R@1");
    const auto rows = sweep_grid_sizes(lists, w.queries, h.inputs, h.cfg, sides, metrics);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].label == "w/o EBR");
    CHECK(rows[3].label == "4x4");
    for (const auto& r : rows) CHECK(r.metrics.at("R@1") == rows[0].metrics.at("R@1"));
    CHECK(grid_sweep_csv(rows, metrics).rfind("grid,R@1\n", 0) == 0);
}

TEST_CASE("parallel_for runs every index and propagates errors") {
    std::vector<int> hits(100, 0);
    parallel_for(100, 4, [&](std::size_t i) { hits[i] += 1; });
    CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
    CHECK(thrown_code([] {
              parallel_for(50, 3, [](std::size_t i) {
                  if (i == 7) throw Error(ErrorCode::IoError, "boom");
              });
          }) == ErrorCode::IoError);
}

TEST_CASE("directory image source tries extensions in order") {
    square::testing::TempDir dir("images");
    write_file_bytes(dir / "a.jpg", square::testing::solid_png(2, 2, {1, 1, 1}));
    write_file_bytes(dir / "a.png", square::testing::solid_png(3, 3, {2, 2, 2}));
    const DirectoryImageSource src(dir.path(), {"png", "jpg"});
    CHECK(decode_image(*src.load("a")).width() == 3);
    CHECK_FALSE(src.load("b").has_value());
}
