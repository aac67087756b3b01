#pragma once

#include <string>
#include <vector>

namespace cqr {

struct ScoredPassage {
    std::string pid;
    double score;
};

/// Retrieval result, best first. Entry i has rank i+1.
struct RankedList {
    std::vector<ScoredPassage> entries;

    bool empty() const { return entries.empty(); }
    std::size_t size() const { return entries.size(); }
    const ScoredPassage& operator[](std::size_t i) const { return entries[i]; }
};

}  // namespace cqr
