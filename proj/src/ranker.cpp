// Copyright (C) 2026 The SQUARE Authors
// SPDX-License-Identifier: Apache-2.0

#include "square/ranker.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <queue>
#include <thread>

#include <nlohmann/json.hpp>

#include "square/error.hpp"

namespace square {

namespace {

struct Hit {
    double score;
    std::size_t pos;
};

// Keeps the k best hits seen so far; the worst kept hit sits on top of the heap.
class TopK {
public:
    TopK(std::size_t k, const GalleryIndex& index) : k_(k), index_(&index), heap_(Worse{&index}) {}

    void offer(Hit h) {
        if (heap_.size() < k_) {
            heap_.push(h);
        } else if (better(h, heap_.top())) {
            heap_.pop();
            heap_.push(h);
        }
    }

    std::vector<Hit> take() {
        std::vector<Hit> out;
        out.reserve(heap_.size());
        while (!heap_.empty()) {
            out.push_back(heap_.top());
            heap_.pop();
        }
        return out;
    }

private:
    struct Worse {
        const GalleryIndex* index;
        bool operator()(const Hit& a, const Hit& b) const {
            return ranks_before(a.score, index->item(a.pos).id, b.score, index->item(b.pos).id);
        }
    };

    bool better(const Hit& a, const Hit& b) const {
        return ranks_before(a.score, index_->item(a.pos).id, b.score, index_->item(b.pos).id);
    }

    std::size_t k_;
    const GalleryIndex* index_;
    std::priority_queue<Hit, std::vector<Hit>, Worse> heap_;
};

double score_at(const std::vector<float>& q, double q_norm, const GalleryIndex& index, std::size_t pos) {
    const double g_norm = index.norm(pos);
    if (!(g_norm > 0.0)) {
        return 0.0;  // a zero gallery vector has no direction; it ranks as orthogonal
    }
    const double s = dot(q, index.item(pos).embedding.values()) / (q_norm * g_norm);
    return std::clamp(s, -1.0, 1.0);
}

CandidateList finish(const std::string& query_id, std::vector<Hit> hits, const GalleryIndex& index,
                     std::size_t k) {
    std::sort(hits.begin(), hits.end(), [&](const Hit& a, const Hit& b) {
        return ranks_before(a.score, index.item(a.pos).id, b.score, index.item(b.pos).id);
    });
    if (hits.size() > k) {
        hits.resize(k);
    }
    CandidateList out;
    out.query_id = query_id;
    out.k = k;
    out.candidates.reserve(hits.size());
    for (std::size_t r = 0; r < hits.size(); ++r) {
        out.candidates.push_back({index.item(hits[r].pos).id, hits[r].score, r});
    }
    return out;
}

std::vector<float> query_values(const ComposedQuery& q, const GalleryIndex& index, double& norm) {
    if (q.q_final.dim() != index.dim()) {
        throw Error(ErrorCode::DimMismatch, "query '" + q.query_id + "' has dim " +
                                                std::to_string(q.q_final.dim()) + ", gallery dim is " +
                                                std::to_string(index.dim()));
    }
    norm = l2_norm(q.q_final.values());
    if (!(norm > 0.0)) {
        throw Error(ErrorCode::ZeroVector, "query '" + q.query_id + "' is a zero vector");
    }
    return {q.q_final.values().begin(), q.q_final.values().end()};
}

}  // namespace

std::vector<std::string> CandidateList::ids() const {
    std::vector<std::string> out;
    out.reserve(candidates.size());
    for (const auto& c : candidates) {
        out.push_back(c.gallery_id);
    }
    return out;
}

bool ranks_before(double score_a, const std::string& id_a, double score_b, const std::string& id_b) noexcept {
    if (score_a != score_b) {
        return score_a > score_b;
    }
    return id_a < id_b;
}

CandidateList global_rank(const ComposedQuery& q, const GalleryIndex& index, std::size_t k,
                          const std::set<std::string>& exclude, RankOptions options) {
    if (k == 0) {
        throw Error(ErrorCode::EmptyGallery, "k must be at least 1");
    }
    double q_norm = 0.0;
    const auto qv = query_values(q, index, q_norm);

    std::vector<char> skip(index.size(), 0);
    std::size_t eligible = index.size();
    for (const auto& id : exclude) {
        if (auto pos = index.find(id)) {
            skip[*pos] = 1;
            --eligible;
        }
    }
    if (eligible == 0) {
        throw Error(ErrorCode::EmptyGallery, "no gallery items left for query '" + q.query_id + "'");
    }

    const std::size_t parts = std::clamp<std::size_t>(options.threads, 1, std::max<std::size_t>(1, index.size()));
    std::vector<std::vector<Hit>> partial(parts);
    auto scan = [&](std::size_t part) {
        const std::size_t begin = index.size() * part / parts;
        const std::size_t end = index.size() * (part + 1) / parts;
        TopK top(k, index);
        for (std::size_t pos = begin; pos < end; ++pos) {
            if (!skip[pos]) {
                top.offer({score_at(qv, q_norm, index, pos), pos});
            }
        }
        partial[part] = top.take();
    };

    if (parts == 1) {
        scan(0);
    } else {
        std::vector<std::jthread> workers;
        workers.reserve(parts);
        for (std::size_t p = 0; p < parts; ++p) {
            workers.emplace_back(scan, p);
        }
    }

    std::vector<Hit> merged;
    for (auto& p : partial) {
        merged.insert(merged.end(), p.begin(), p.end());
    }
    return finish(q.query_id, std::move(merged), index, k);
}

CandidateList rank_subset(const ComposedQuery& q, const GalleryIndex& index, std::span<const std::string> subset) {
    double q_norm = 0.0;
    const auto qv = query_values(q, index, q_norm);
    std::vector<Hit> hits;
    hits.reserve(subset.size());
    std::vector<char> seen(index.size(), 0);
    for (const auto& id : subset) {
        auto pos = index.find(id);
        if (!pos) {
            throw Error(ErrorCode::UnknownId, "subset id '" + id + "' not in gallery");
        }
        if (seen[*pos]) {
            continue;
        }
        seen[*pos] = 1;
        hits.push_back({score_at(qv, q_norm, index, *pos), *pos});
    }
    const std::size_t n = hits.size();
    return finish(q.query_id, std::move(hits), index, std::max<std::size_t>(n, 1));
}

void write_ranking_line(std::ostream& out, const CandidateList& list) {
    out << "{\"query_id\":" << nlohmann::json(list.query_id).dump() << ",\"candidates\":[";
    char buf[64];
    for (std::size_t i = 0; i < list.candidates.size(); ++i) {
        const auto& c = list.candidates[i];
        // -0.000000 and 0.000000 must serialize identically.
        const double s = std::abs(c.score) < 5e-7 ? 0.0 : c.score;
        std::snprintf(buf, sizeof(buf), "%.6f", s);
        if (i) {
            out << ',';
        }
        out << "{\"id\":" << nlohmann::json(c.gallery_id).dump() << ",\"score\":" << buf << '}';
    }
    out << "]}\n";
}

void write_rankings(std::ostream& out, const std::vector<CandidateList>& lists) {
    for (const auto& l : lists) {
        write_ranking_line(out, l);
    }
}

std::vector<CandidateList> read_rankings(std::istream& in) {
    std::vector<CandidateList> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            const auto j = nlohmann::json::parse(line);
            CandidateList list;
            list.query_id = j.at("query_id").get<std::string>();
            for (const auto& c : j.at("candidates")) {
                list.candidates.push_back(
                    {c.at("id").get<std::string>(), c.at("score").get<double>(), list.candidates.size()});
            }
            list.k = list.candidates.size();
            out.push_back(std::move(list));
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::ParseError, "ranking dump line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace square
