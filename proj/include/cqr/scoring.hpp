#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "cqr/common.hpp"
#include "cqr/corpus.hpp"
#include "cqr/similarity.hpp"
#include "cqr/tokenizer.hpp"

namespace cqr {

/// Per-candidate self-consistency scores along the three dimensions:
/// rewrite-text agreement, retrieved-passage overlap, response agreement.
struct ConsistencyScores {
    std::vector<double> rw;
    std::vector<double> rt;
    std::vector<double> rp;
};

struct PairSelection {
    std::size_t chosen = 0;
    std::size_t rejected = 0;
    bool degenerate = false;  // all scores equal; chosen == rejected == 0
};

namespace detail {

// Off-diagonal row entries summed in ascending value order: the addend order
// is then a function of the value multiset alone, so permuting candidates
// permutes results exactly, with no floating-point drift.
inline double mean_excluding_self(const std::vector<std::vector<double>>& m, std::size_t i) {
    std::vector<double> vals;
    vals.reserve(m.size() - 1);
    for (std::size_t j = 0; j < m.size(); ++j)
        if (j != i) vals.push_back(m[i][j]);
    std::sort(vals.begin(), vals.end());
    double sum = 0.0;
    for (double v : vals) sum += v;
    return sum / static_cast<double>(m.size() - 1);
}

inline void require_square(const std::vector<std::vector<double>>& m, std::size_t k,
                           const char* what) {
    if (m.size() != k) throw ValidationError(std::string(what) + ": matrix has wrong row count");
    for (const auto& row : m)
        if (row.size() != k)
            throw ValidationError(std::string(what) + ": matrix has wrong column count");
}

}  // namespace detail

/// RW_i = mean_{j != i} simm[i][j] + len_i / max_j len_j.
inline std::vector<double> rewrite_score(const std::vector<std::string>& rqs,
                                         const std::vector<std::vector<double>>& simm,
                                         const std::vector<std::size_t>& lens) {
    const std::size_t k = rqs.size();
    if (k < 2) throw ValidationError("rewrite_score requires K >= 2 candidates");
    if (lens.size() != k) throw ValidationError("rewrite_score: lens size mismatch");
    detail::require_square(simm, k, "rewrite_score");
    std::size_t max_len = 0;
    for (std::size_t i = 0; i < k; ++i) {
        if (lens[i] == 0)
            throw ValidationError("rewrite_score: candidate " + std::to_string(i) +
                                  " has zero tokens");
        max_len = std::max(max_len, lens[i]);
    }
    std::vector<double> out(k);
    for (std::size_t i = 0; i < k; ++i)
        out[i] = detail::mean_excluding_self(simm, i) +
                 static_cast<double>(lens[i]) / static_cast<double>(max_len);
    return out;
}

/// RT_i = mean_{j != i} |set(pids_i) ∩ set(pids_j)|. Integer sums, so exact.
inline std::vector<double> retrieval_score(const std::vector<std::vector<std::string>>& pid_lists) {
    const std::size_t k = pid_lists.size();
    if (k < 2) throw ValidationError("retrieval_score requires K >= 2 candidates");
    std::vector<std::unordered_set<std::string>> sets;
    sets.reserve(k);
    for (const auto& pids : pid_lists) sets.emplace_back(pids.begin(), pids.end());

    std::vector<std::vector<std::uint64_t>> inter(k, std::vector<std::uint64_t>(k, 0));
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = i + 1; j < k; ++j) {
            const auto& small = sets[i].size() <= sets[j].size() ? sets[i] : sets[j];
            const auto& large = sets[i].size() <= sets[j].size() ? sets[j] : sets[i];
            std::uint64_t n = 0;
            for (const auto& pid : small) n += large.count(pid);
            inter[i][j] = n;
            inter[j][i] = n;
        }

    std::vector<double> out(k);
    for (std::size_t i = 0; i < k; ++i) {
        std::uint64_t sum = 0;
        for (std::size_t j = 0; j < k; ++j)
            if (j != i) sum += inter[i][j];
        out[i] = static_cast<double>(sum) / static_cast<double>(k - 1);
    }
    return out;
}

/// RP_i = mean_{j != i} simm[i][j].
inline std::vector<double> response_score(const std::vector<std::string>& rss,
                                          const std::vector<std::vector<double>>& simm) {
    const std::size_t k = rss.size();
    if (k < 2) throw ValidationError("response_score requires K >= 2 candidates");
    detail::require_square(simm, k, "response_score");
    std::vector<double> out(k);
    for (std::size_t i = 0; i < k; ++i) out[i] = detail::mean_excluding_self(simm, i);
    return out;
}

/// First index achieving the maximum is chosen, first achieving the minimum
/// is rejected. All-equal scores yield indices (0, 0) with the degenerate
/// flag set.
inline PairSelection select_pair(const std::vector<double>& scores, std::size_t candidate_count) {
    if (scores.size() != candidate_count)
        throw ValidationError("select_pair: scores and candidates differ in length");
    if (candidate_count < 2) throw ValidationError("select_pair requires K >= 2");
    PairSelection sel;
    for (std::size_t i = 1; i < scores.size(); ++i) {
        if (scores[i] > scores[sel.chosen]) sel.chosen = i;
        if (scores[i] < scores[sel.rejected]) sel.rejected = i;
    }
    if (scores[sel.chosen] == scores[sel.rejected]) {
        sel.chosen = 0;
        sel.rejected = 0;
        sel.degenerate = true;
    }
    return sel;
}

/// Runs both similarity matrices and all three score vectors for one
/// candidate set. Token lengths use the same tokenizer as retrieval.
inline ConsistencyScores score_candidate_set(const CandidateSet& cs, SimilarityBackend& backend,
                                             const IndexConfig& tokenizer_config = {}) {
    const std::size_t k = cs.candidates.size();
    if (k < 2) throw ValidationError("candidate set " + cs.key() + " has fewer than 2 candidates");

    std::vector<std::string> rqs, rss;
    std::vector<std::vector<std::string>> pid_lists;
    std::vector<std::size_t> lens;
    rqs.reserve(k);
    rss.reserve(k);
    pid_lists.reserve(k);
    lens.reserve(k);
    for (const auto& cand : cs.candidates) {
        rqs.push_back(cand.rq);
        rss.push_back(cand.rs);
        pid_lists.push_back(cand.pids);
        lens.push_back(token_count(cand.rq, tokenizer_config));
    }

    ConsistencyScores scores;
    scores.rw = rewrite_score(rqs, backend.sim_matrix(rqs), lens);
    scores.rt = retrieval_score(pid_lists);
    scores.rp = response_score(rss, backend.sim_matrix(rss));
    return scores;
}

inline nlohmann::json selection_to_json(const PairSelection& sel) {
    return {{"chosen", sel.chosen}, {"rejected", sel.rejected}, {"degenerate", sel.degenerate}};
}

/// Per-turn score record for the analysis stage.
inline nlohmann::json scores_to_json(const std::string& turn_key, const ConsistencyScores& scores,
                                     const PairSelection& rw_sel, const PairSelection& rt_sel,
                                     const PairSelection& rp_sel) {
    return {{"turn_key", turn_key},
            {"rw", scores.rw},
            {"rt", scores.rt},
            {"rp", scores.rp},
            {"selected",
             {{"rewrite", selection_to_json(rw_sel)},
              {"retrieval", selection_to_json(rt_sel)},
              {"response", selection_to_json(rp_sel)}}}};
}

struct ScoredTurn {
    std::string turn_key;
    ConsistencyScores scores;
};

inline ScoredTurn scored_turn_from_json(const nlohmann::json& j) {
    ScoredTurn turn;
    try {
        turn.turn_key = j.at("turn_key").get<std::string>();
        turn.scores.rw = j.at("rw").get<std::vector<double>>();
        turn.scores.rt = j.at("rt").get<std::vector<double>>();
        turn.scores.rp = j.at("rp").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("bad score record: ") + e.what());
    }
    const std::size_t k = turn.scores.rw.size();
    if (k < 2 || turn.scores.rt.size() != k || turn.scores.rp.size() != k)
        throw ValidationError("score record " + turn.turn_key + " has inconsistent vector sizes");
    return turn;
}

inline std::vector<ScoredTurn> load_scored_turns(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open scores file: " + path);
    std::vector<ScoredTurn> turns;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto j = detail::parse_line(line, path, lineno);
        try {
            turns.push_back(scored_turn_from_json(j));
        } catch (const ValidationError& e) {
            throw ValidationError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return turns;
}

}  // namespace cqr
