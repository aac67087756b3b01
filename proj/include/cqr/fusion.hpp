#pragma once

#include <algorithm>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "cqr/common.hpp"
#include "cqr/ranked_list.hpp"

namespace cqr {

/// Query text assembled from ordered parts; text is always the parts joined
/// by single spaces.
struct FusedQuery {
    std::vector<std::string> parts;
    std::string text;
};

/// Trims each part and joins with single spaces, keeping part order.
inline FusedQuery concat_queries(const std::vector<std::string>& parts) {
    if (parts.empty()) throw ValidationError("concat_queries needs at least one part");
    FusedQuery fq;
    fq.parts.reserve(parts.size());
    for (std::size_t i = 0; i < parts.size(); ++i) {
        std::string part(trim(parts[i]));
        if (part.empty())
            throw ValidationError("concat_queries: part " + std::to_string(i) +
                                  " is empty after trimming");
        if (!fq.text.empty()) fq.text += ' ';
        fq.text += part;
        fq.parts.push_back(std::move(part));
    }
    return fq;
}

/// Appends a pseudo-response to the query. A blank pseudo-response leaves
/// the query untouched rather than polluting it with whitespace.
inline std::string expand_query(const std::string& query, const std::string& pseudo) {
    std::string q(trim(query));
    if (q.empty()) throw ValidationError("expand_query: query is empty");
    std::string p(trim(pseudo));
    if (p.empty()) return q;
    return q + ' ' + p;
}

inline constexpr int kRrfK = 60;

/// Reciprocal rank fusion: score(p) = sum over lists of 1 / (k + rank(p)),
/// rank counted from 1. Passages absent from a list contribute nothing for
/// it. Ties break by ascending passage id.
inline RankedList rrf(const std::vector<RankedList>& lists, int k = kRrfK) {
    if (lists.empty()) throw ValidationError("rrf needs at least one ranked list");
    if (k < 1) throw ValidationError("rrf constant must be >= 1");

    std::unordered_map<std::string, double> acc;
    std::vector<std::string> order;  // first-seen order, for deterministic iteration
    for (const auto& list : lists)
        for (std::size_t i = 0; i < list.size(); ++i) {
            auto [it, inserted] = acc.try_emplace(list[i].pid, 0.0);
            if (inserted) order.push_back(list[i].pid);
            it->second += 1.0 / static_cast<double>(k + static_cast<int>(i) + 1);
        }

    RankedList fused;
    fused.entries.reserve(order.size());
    for (const auto& pid : order) fused.entries.push_back({pid, acc[pid]});
    std::sort(fused.entries.begin(), fused.entries.end(),
              [](const ScoredPassage& a, const ScoredPassage& b) {
                  if (a.score != b.score) return a.score > b.score;
                  return a.pid < b.pid;
              });
    return fused;
}

/// One line of the exported query file.
struct QueryRow {
    std::string qid;
    std::string text;
};

namespace detail {

inline void require_tsv_safe(const std::string& value, const char* field) {
    if (value.empty()) throw ValidationError(std::string(field) + " is empty");
    if (value.find('\t') != std::string::npos || value.find('\n') != std::string::npos)
        throw ValidationError(std::string(field) + " contains a tab or newline: " + value);
}

}  // namespace detail

/// Two-column tab-separated file: qid <TAB> text.
inline void save_query_file(const std::vector<QueryRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write query file: " + path);
    for (const auto& row : rows) {
        detail::require_tsv_safe(row.qid, "query id");
        detail::require_tsv_safe(row.text, "query text");
        out << row.qid << '\t' << row.text << '\n';
    }
    if (!out) throw ValidationError("failed writing query file: " + path);
}

inline std::vector<QueryRow> load_query_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open query file: " + path);
    std::vector<QueryRow> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos || tab == 0 || tab + 1 >= line.size())
            throw ValidationError(path + ":" + std::to_string(lineno) +
                                  ": expected qid<TAB>text");
        rows.push_back({line.substr(0, tab), line.substr(tab + 1)});
    }
    return rows;
}

}  // namespace cqr
