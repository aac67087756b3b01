#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "cqr/common.hpp"
#include "cqr/corpus.hpp"
#include "cqr/ranked_list.hpp"
#include "cqr/scoring.hpp"
#include "cqr/tokenizer.hpp"

namespace cqr {

/// Retrieval results keyed by query id. Within a query, ranks are the list
/// positions (1-based) and scores never increase.
struct RunFile {
    std::map<std::string, RankedList> queries;
};

namespace detail {

inline std::string format_score(double score) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", score);
    return buf;
}

}  // namespace detail

/// Writes "qid Q0 pid rank score runtag" lines, queries in id order.
inline void save_run(const RunFile& run, const std::string& path,
                     const std::string& runtag = "run") {
    if (runtag.empty() || runtag.find_first_of(" \t\n") != std::string::npos)
        throw ValidationError("runtag must be non-empty without whitespace");
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write run file: " + path);
    for (const auto& [qid, list] : run.queries) {
        for (std::size_t i = 0; i < list.size(); ++i) {
            if (i > 0 && list[i].score > list[i - 1].score)
                throw ValidationError("run for query " + qid + " has increasing scores at rank " +
                                      std::to_string(i + 1));
            out << qid << " Q0 " << list[i].pid << ' ' << (i + 1) << ' '
                << detail::format_score(list[i].score) << ' ' << runtag << '\n';
        }
    }
    if (!out) throw ValidationError("failed writing run file: " + path);
}

inline RunFile load_run(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open run file: " + path);
    RunFile run;
    std::map<std::string, std::unordered_set<std::string>> seen_pids;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::string where = path + ":" + std::to_string(lineno);
        std::istringstream iss(line);
        std::string qid, q0, pid, rank_s, score_s, tag, extra;
        if (!(iss >> qid >> q0 >> pid >> rank_s >> score_s >> tag) || (iss >> extra))
            throw ValidationError(where + ": expected 'qid Q0 pid rank score runtag'");
        std::size_t rank = 0;
        double score = 0.0;
        try {
            rank = std::stoul(rank_s);
            score = std::stod(score_s);
        } catch (const std::exception&) {
            throw ValidationError(where + ": unparseable rank or score");
        }
        auto& list = run.queries[qid];
        if (rank != list.size() + 1)
            throw ValidationError(where + ": rank " + rank_s + " breaks the contiguous 1..n " +
                                  "order for query " + qid);
        if (!list.empty() && score > list.entries.back().score)
            throw ValidationError(where + ": score increases within query " + qid);
        if (!seen_pids[qid].insert(pid).second)
            throw ValidationError(where + ": duplicate passage " + pid + " in query " + qid);
        list.entries.push_back({pid, score});
    }
    return run;
}

inline double mrr_for_query(const RankedList& list, const std::set<std::string>& relevant) {
    for (std::size_t i = 0; i < list.size(); ++i)
        if (relevant.count(list[i].pid)) return 1.0 / static_cast<double>(i + 1);
    return 0.0;
}

/// Binary-relevance NDCG: DCG over the top `cutoff` positions divided by the
/// DCG of packing min(#relevant, cutoff) hits at the top. 0 when the query
/// has no relevant passages at all.
inline double ndcg_for_query(const RankedList& list, const std::set<std::string>& relevant,
                             std::size_t cutoff = 3) {
    if (cutoff < 1) throw ValidationError("ndcg cutoff must be >= 1");
    double dcg = 0.0;
    const std::size_t depth = std::min(cutoff, list.size());
    for (std::size_t i = 0; i < depth; ++i)
        if (relevant.count(list[i].pid)) dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
    const std::size_t ideal = std::min(relevant.size(), cutoff);
    double idcg = 0.0;
    for (std::size_t i = 0; i < ideal; ++i) idcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
    if (idcg == 0.0) return 0.0;
    return dcg / idcg;
}

inline double recall_for_query(const RankedList& list, const std::set<std::string>& relevant,
                               std::size_t k) {
    if (k < 1) throw ValidationError("recall depth must be >= 1");
    if (relevant.empty()) return 0.0;
    std::size_t hits = 0;
    const std::size_t depth = std::min(k, list.size());
    for (std::size_t i = 0; i < depth; ++i)
        if (relevant.count(list[i].pid)) ++hits;
    return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

/// Per-query values for judged queries plus their mean. Queries without a
/// qrels entry are excluded from the mean and listed instead.
struct MetricSummary {
    std::map<std::string, double> per_query;
    double mean = 0.0;
    std::vector<std::string> unjudged;
};

namespace detail {

template <typename Fn>
MetricSummary aggregate_metric(const RunFile& run, const Qrels& qrels, Fn per_query_fn) {
    MetricSummary summary;
    for (const auto& [qid, list] : run.queries) {
        auto it = qrels.find(qid);
        if (it == qrels.end()) {
            summary.unjudged.push_back(qid);
            continue;
        }
        summary.per_query[qid] = per_query_fn(list, it->second);
    }
    if (summary.per_query.empty())
        throw ValidationError("run shares no query ids with the qrels");
    double sum = 0.0;
    for (const auto& [qid, value] : summary.per_query) sum += value;
    summary.mean = sum / static_cast<double>(summary.per_query.size());
    return summary;
}

}  // namespace detail

inline MetricSummary mrr(const RunFile& run, const Qrels& qrels) {
    return detail::aggregate_metric(run, qrels, [](const RankedList& l,
                                                   const std::set<std::string>& r) {
        return mrr_for_query(l, r);
    });
}

inline MetricSummary ndcg_at(const RunFile& run, const Qrels& qrels, std::size_t cutoff = 3) {
    return detail::aggregate_metric(run, qrels, [cutoff](const RankedList& l,
                                                         const std::set<std::string>& r) {
        return ndcg_for_query(l, r, cutoff);
    });
}

inline MetricSummary recall_at(const RunFile& run, const Qrels& qrels, std::size_t k) {
    return detail::aggregate_metric(run, qrels, [k](const RankedList& l,
                                                    const std::set<std::string>& r) {
        return recall_for_query(l, r, k);
    });
}

struct EvalReport {
    MetricSummary mrr;
    MetricSummary ndcg3;
    MetricSummary recall10;
    MetricSummary recall100;
    std::size_t judged = 0;
    std::size_t unjudged = 0;
};

inline EvalReport evaluate_run(const RunFile& run, const Qrels& qrels) {
    EvalReport report;
    report.mrr = mrr(run, qrels);
    report.ndcg3 = ndcg_at(run, qrels, 3);
    report.recall10 = recall_at(run, qrels, 10);
    report.recall100 = recall_at(run, qrels, 100);
    report.judged = report.mrr.per_query.size();
    report.unjudged = report.mrr.unjudged.size();
    return report;
}

inline nlohmann::json eval_report_to_json(const EvalReport& report) {
    auto summary = [](const MetricSummary& m) {
        return nlohmann::json{{"mean", m.mean}, {"per_query", m.per_query}};
    };
    return {{"mrr", summary(report.mrr)},
            {"ndcg@3", summary(report.ndcg3)},
            {"recall@10", summary(report.recall10)},
            {"recall@100", summary(report.recall100)},
            {"judged", report.judged},
            {"unjudged", report.unjudged},
            {"unjudged_qids", report.mrr.unjudged}};
}

inline std::string eval_report_table(const EvalReport& report) {
    auto row = [](const char* name, double mean) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%-11s %.4f\n", name, mean);
        return std::string(buf);
    };
    std::string table = "metric      mean\n";
    table += row("MRR", report.mrr.mean);
    table += row("NDCG@3", report.ndcg3.mean);
    table += row("Recall@10", report.recall10.mean);
    table += row("Recall@100", report.recall100.mean);
    table += "judged=" + std::to_string(report.judged) +
             " unjudged=" + std::to_string(report.unjudged) + "\n";
    return table;
}

/// Tau-b rank correlation. Pairs tied on both sides drop out; a side with
/// every pair tied leaves the statistic undefined, which is an error here.
inline double kendall_tau(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ValidationError("kendall_tau: input length mismatch");
    const std::size_t n = a.size();
    if (n < 2) throw ValidationError("kendall_tau needs at least 2 observations");
    for (double v : a)
        if (!std::isfinite(v)) throw ValidationError("kendall_tau: non-finite value");
    for (double v : b)
        if (!std::isfinite(v)) throw ValidationError("kendall_tau: non-finite value");

    std::int64_t concordant = 0, discordant = 0, ties_a_only = 0, ties_b_only = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const int ca = a[i] < a[j] ? -1 : (a[j] < a[i] ? 1 : 0);
            const int cb = b[i] < b[j] ? -1 : (b[j] < b[i] ? 1 : 0);
            if (ca == 0 && cb == 0) continue;
            if (ca == 0)
                ++ties_a_only;
            else if (cb == 0)
                ++ties_b_only;
            else if (ca == cb)
                ++concordant;
            else
                ++discordant;
        }
    const double fa = static_cast<double>(concordant + discordant + ties_a_only);
    const double fb = static_cast<double>(concordant + discordant + ties_b_only);
    if (fa == 0.0 || fb == 0.0)
        throw ValidationError("kendall_tau undefined: an input has all values tied");
    return static_cast<double>(concordant - discordant) / std::sqrt(fa * fb);
}

/// Distinct n-grams over total n-grams of the tokenized text; 0 when the
/// text has fewer than n tokens.
inline double ngram_diversity(const std::string& text, std::size_t n = 2,
                              const IndexConfig& config = {}) {
    if (n < 1) throw ValidationError("ngram size must be >= 1");
    const auto tokens = tokenize(text, config);
    if (tokens.size() < n) return 0.0;
    std::set<std::string> distinct;
    const std::size_t total = tokens.size() - n + 1;
    for (std::size_t i = 0; i < total; ++i) {
        std::string key;
        for (std::size_t j = 0; j < n; ++j) {
            if (j) key += '\x1f';
            key += tokens[i + j];
        }
        distinct.insert(std::move(key));
    }
    return static_cast<double>(distinct.size()) / static_cast<double>(total);
}

namespace detail {

template <typename Seq>
std::size_t edit_distance(const Seq& a, const Seq& b) {
    const std::size_t m = a.size(), n = b.size();
    if (m == 0) return n;
    if (n == 0) return m;
    std::vector<std::size_t> prev(n + 1), cur(n + 1);
    for (std::size_t j = 0; j <= n; ++j) prev[j] = j;
    for (std::size_t i = 1; i <= m; ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= n; ++j) {
            const std::size_t subst = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, subst});
        }
        std::swap(prev, cur);
    }
    return prev[n];
}

}  // namespace detail

inline std::size_t levenshtein(const std::vector<std::string>& a,
                               const std::vector<std::string>& b) {
    return detail::edit_distance(a, b);
}

inline std::size_t levenshtein_chars(const std::string& a, const std::string& b) {
    return detail::edit_distance(a, b);
}

/// Overlap of the two top-`depth` prefixes, as a fraction of depth.
inline double intersection_ratio(const RankedList& a, const RankedList& b,
                                 std::size_t depth = 100) {
    if (depth < 1) throw ValidationError("intersection depth must be >= 1");
    std::unordered_set<std::string> top_a;
    for (std::size_t i = 0; i < std::min(depth, a.size()); ++i) top_a.insert(a[i].pid);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < std::min(depth, b.size()); ++i)
        if (top_a.count(b[i].pid)) ++hits;
    return static_cast<double>(hits) / static_cast<double>(depth);
}

/// Mean pairwise tau-b between the three consistency score vectors over all
/// scored sets. A set whose tau is undefined for any pair is skipped whole.
struct CorrelationReport {
    std::array<std::array<double, 3>, 3> tau{};  // order: rw, rt, rp
    std::size_t sets_used = 0;
    std::size_t sets_skipped = 0;
};

inline CorrelationReport preference_correlation_report(const std::vector<ScoredTurn>& turns) {
    if (turns.empty())
        throw ValidationError("correlation report needs at least one scored set");
    double sum_rw_rt = 0.0, sum_rw_rp = 0.0, sum_rt_rp = 0.0;
    CorrelationReport report;
    for (const auto& turn : turns) {
        double t01, t02, t12;
        try {
            t01 = kendall_tau(turn.scores.rw, turn.scores.rt);
            t02 = kendall_tau(turn.scores.rw, turn.scores.rp);
            t12 = kendall_tau(turn.scores.rt, turn.scores.rp);
        } catch (const ValidationError&) {
            ++report.sets_skipped;
            continue;
        }
        sum_rw_rt += t01;
        sum_rw_rp += t02;
        sum_rt_rp += t12;
        ++report.sets_used;
    }
    if (report.sets_used == 0)
        throw ValidationError("all " + std::to_string(turns.size()) +
                              " scored sets have undefined rank correlation");
    const double n = static_cast<double>(report.sets_used);
    for (std::size_t i = 0; i < 3; ++i) report.tau[i][i] = 1.0;
    report.tau[0][1] = report.tau[1][0] = sum_rw_rt / n;
    report.tau[0][2] = report.tau[2][0] = sum_rw_rp / n;
    report.tau[1][2] = report.tau[2][1] = sum_rt_rp / n;
    return report;
}

inline nlohmann::json correlation_report_to_json(const CorrelationReport& report) {
    nlohmann::json tau = nlohmann::json::array();
    for (const auto& row : report.tau) tau.push_back(row);
    return {{"dims", {"rw", "rt", "rp"}},
            {"tau", tau},
            {"sets_used", report.sets_used},
            {"sets_skipped", report.sets_skipped}};
}

}  // namespace cqr
