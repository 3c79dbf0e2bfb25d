// Copyright (C) 2026 The SQUARE Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <sstream>

#include "fixtures.hpp"
#include "square/ranker.hpp"

using namespace square;
using square::testing::thrown_code;

namespace {

ComposedQuery query_of(const Embedding& e, std::string id = "q") { return {std::move(id), e, e, {}}; }

GalleryIndex abc_gallery() {
    return GalleryIndex(2, {{"a", Embedding{1.0f, 0.0f}}, {"b", Embedding{0.0f, 1.0f}}, {"c", Embedding{0.6f, 0.8f}}});
}

}  // namespace

TEST_CASE("three-item gallery examples") {
    const auto g = abc_gallery();
    const auto q = query_of(Embedding{1.0f, 0.0f});

    const auto top2 = global_rank(q, g, 2);
    REQUIRE(top2.size() == 2);
    CHECK(top2.candidates[0].gallery_id == "a");
    CHECK(top2.candidates[0].score == doctest::Approx(1.0));
    CHECK(top2.candidates[1].gallery_id == "c");
    CHECK(top2.candidates[1].score == doctest::Approx(0.6));
    CHECK(top2.candidates[1].rank == 1);

    CHECK(global_rank(q, g, 10).ids() == std::vector<std::string>{"a", "c", "b"});
    CHECK(global_rank(q, g, 2, {"a"}).ids() == std::vector<std::string>{"c", "b"});
}

TEST_CASE("ties break by ascending id") {
    const GalleryIndex g(2, {{"z", Embedding{1.0f, 0.0f}}, {"m", Embedding{2.0f, 0.0f}}, {"a", Embedding{0.5f, 0.0f}}});
    CHECK(global_rank(query_of(Embedding{1.0f, 0.0f}), g, 3).ids() == std::vector<std::string>{"a", "m", "z"});
    CHECK(global_rank(query_of(Embedding{1.0f, 0.0f}), g, 3, {}, {3}).ids() == std::vector<std::string>{"a", "m", "z"});
}

TEST_CASE("error cases") {
    const auto g = abc_gallery();
    CHECK(thrown_code([&] { global_rank(query_of(Embedding{1.0f}), g, 2); }) == ErrorCode::DimMismatch);
    CHECK(thrown_code([&] { global_rank(query_of(Embedding{1.0f, 0.0f}), g, 2, {"a", "b", "c"}); }) ==
          ErrorCode::EmptyGallery);
    CHECK(thrown_code([&] { global_rank(query_of(Embedding{0.0f, 0.0f}), g, 2); }) == ErrorCode::ZeroVector);
    const std::vector<std::string> bad{"a", "nope"};
    CHECK(thrown_code([&] { rank_subset(query_of(Embedding{1.0f, 0.0f}), g, bad); }) == ErrorCode::UnknownId);
}

TEST_CASE("matches the brute-force oracle for random galleries and thread counts") {
    std::mt19937_64 rng(41);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = 50 + trial * 97;
        const auto g = square::testing::random_gallery(n, 32, rng);
        const auto items = square::testing::gallery_as_double(g);
        const auto qe = square::testing::random_embedding(32, rng);
        const std::size_t k = 1 + trial * 7;
        const std::set<std::string> exclude{g.item(trial).id};
        const auto expected = square::testing::oracle_rank(square::testing::to_double(qe), items, k, exclude);
        for (std::size_t threads : {1u, 2u, 5u}) {
            CHECK(global_rank(query_of(qe), g, k, exclude, {threads}).ids() == expected);
        }
    }
}

TEST_CASE("prefix consistency and determinism") {
    std::mt19937_64 rng(43);
    const auto g = square::testing::random_gallery(500, 16, rng);
    const auto q = query_of(square::testing::random_embedding(16, rng));
    const auto k10 = global_rank(q, g, 10);
    const auto k5 = global_rank(q, g, 5);
    CHECK(std::vector<ScoredCandidate>(k10.candidates.begin(), k10.candidates.begin() + 5) == k5.candidates);
    CHECK(global_rank(q, g, 10) == k10);
}

TEST_CASE("subset ranking") {
    const auto g = abc_gallery();
    const auto q = query_of(Embedding{1.0f, 0.0f});
    const std::vector<std::string> single{"b"};
    CHECK(rank_subset(q, g, single).ids() == std::vector<std::string>{"b"});
    const std::vector<std::string> all{"c", "b", "a"};
    CHECK(rank_subset(q, g, all).ids() == global_rank(q, g, 3).ids());

    std::mt19937_64 rng(47);
    const auto big = square::testing::random_gallery(40, 8, rng);
    const auto qe = square::testing::random_embedding(8, rng);
    std::vector<std::string> subset;
    std::vector<std::pair<std::string, std::vector<double>>> sub_items;
    for (std::size_t i : {3u, 17u, 5u, 29u, 11u, 38u}) {
        subset.push_back(big.item(i).id);
        sub_items.emplace_back(big.item(i).id, square::testing::to_double(big.item(i).embedding));
    }
    CHECK(rank_subset(query_of(qe), big, subset).ids() ==
          square::testing::oracle_rank(square::testing::to_double(qe), sub_items, 6));
}

TEST_CASE("ranking dump round trip") {
    std::mt19937_64 rng(53);
    const auto g = square::testing::random_gallery(30, 8, rng);
    std::vector<CandidateList> lists;
    for (int i = 0; i < 3; ++i) {
        lists.push_back(global_rank(query_of(square::testing::random_embedding(8, rng), "q" + std::to_string(i)), g, 7));
    }
    std::ostringstream out;
    write_rankings(out, lists);
    std::istringstream in(out.str());
    const auto back = read_rankings(in);
    REQUIRE(back.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(back[i].query_id == lists[i].query_id);
        CHECK(back[i].ids() == lists[i].ids());
        for (std::size_t j = 0; j < back[i].size(); ++j) {
            CHECK(back[i].candidates[j].score == doctest::Approx(lists[i].candidates[j].score).epsilon(1e-5));
        }
    }
    std::ostringstream again;
    write_rankings(again, back);
    CHECK(again.str() == out.str());

    std::istringstream broken("{\"query_id\": 3}\n");
    CHECK(thrown_code([&] { read_rankings(broken); }) == ErrorCode::ParseError);
}
