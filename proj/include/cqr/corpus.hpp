#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "cqr/common.hpp"

namespace cqr {

struct Passage {
    std::string id;
    std::string text;
};

/// One conversational turn. `history` holds the (query, answer) pairs of all
/// earlier rounds in order; `gold_pids` is only needed for evaluation and may
/// be absent in training data.
struct DialogueTurn {
    std::string conv_id;
    int turn_id = 1;
    std::string query;
    std::vector<std::pair<std::string, std::string>> history;
    std::optional<std::set<std::string>> gold_pids;

    std::string key() const { return conv_id + "_" + std::to_string(turn_id); }
};

/// One sampled rewrite together with its generated response and the ids of
/// its top-T retrieved passages.
struct Candidate {
    std::string rq;
    std::string rs;
    std::vector<std::string> pids;
};

struct CandidateSet {
    std::string conv_id;
    int turn_id = 1;
    std::vector<Candidate> candidates;

    std::string key() const { return conv_id + "_" + std::to_string(turn_id); }
};

class PassageCollection {
public:
    void add(Passage p) {
        if (p.id.empty()) throw ValidationError("passage with empty id");
        if (p.text.empty()) throw ValidationError("passage '" + p.id + "' has empty text");
        auto [it, inserted] = index_.emplace(p.id, passages_.size());
        if (!inserted) throw ValidationError("duplicate passage id '" + p.id + "'");
        passages_.push_back(std::move(p));
    }

    const Passage& at(std::size_t ordinal) const { return passages_.at(ordinal); }

    const Passage* find(const std::string& id) const {
        auto it = index_.find(id);
        return it == index_.end() ? nullptr : &passages_[it->second];
    }

    std::size_t size() const { return passages_.size(); }
    bool empty() const { return passages_.empty(); }
    auto begin() const { return passages_.begin(); }
    auto end() const { return passages_.end(); }

private:
    std::vector<Passage> passages_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// qid -> relevant passage ids. Queries that appear in the qrels file with
/// only rel=0 lines end up with an empty set; they still count as judged and
/// contribute zero to every metric.
using Qrels = std::map<std::string, std::set<std::string>>;

namespace detail {

inline std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open file: " + path);
    return in;
}

inline nlohmann::json parse_line(const std::string& line, const std::string& path, std::size_t lineno) {
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        throw ValidationError(path + ":" + std::to_string(lineno) + ": malformed JSON record");
    return j;
}

}  // namespace detail

/// One JSON object per line, fields {"id", "text"}.
inline PassageCollection load_corpus(const std::string& path) {
    auto in = detail::open_input(path);
    PassageCollection collection;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto j = detail::parse_line(line, path, lineno);
        if (!j.contains("id") || !j.contains("text"))
            throw ValidationError(path + ":" + std::to_string(lineno) + ": record missing id or text");
        try {
            collection.add({j["id"].get<std::string>(), j["text"].get<std::string>()});
        } catch (const ValidationError& e) {
            throw ValidationError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (collection.empty()) log::warn("empty corpus: " + path);
    log::info("loaded " + std::to_string(collection.size()) + " passages from " + path);
    return collection;
}

inline void save_corpus(const PassageCollection& collection, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write file: " + path);
    for (const auto& p : collection) {
        nlohmann::json j{{"id", p.id}, {"text", p.text}};
        out << j.dump() << "\n";
    }
}

inline DialogueTurn dialogue_turn_from_json(const nlohmann::json& j) {
    DialogueTurn t;
    if (!j.contains("conv_id") || !j.contains("turn_id") || !j.contains("query"))
        throw ValidationError("dialogue record missing conv_id, turn_id, or query");
    t.conv_id = j["conv_id"].get<std::string>();
    t.turn_id = j["turn_id"].get<int>();
    if (t.turn_id < 1) throw ValidationError("turn_id must be >= 1, got " + std::to_string(t.turn_id));
    t.query = j["query"].get<std::string>();
    if (t.query.empty()) throw ValidationError("empty query in turn " + t.key());
    if (j.contains("history")) {
        for (const auto& h : j["history"])
            t.history.emplace_back(h.at("q").get<std::string>(), h.at("a").get<std::string>());
    }
    if (j.contains("gold_pids") && !j["gold_pids"].is_null()) {
        std::set<std::string> gold;
        for (const auto& pid : j["gold_pids"]) gold.insert(pid.get<std::string>());
        t.gold_pids = std::move(gold);
    }
    return t;
}

inline nlohmann::json dialogue_turn_to_json(const DialogueTurn& t) {
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& [q, a] : t.history) hist.push_back({{"q", q}, {"a", a}});
    nlohmann::json j{{"conv_id", t.conv_id}, {"turn_id", t.turn_id}, {"query", t.query}, {"history", hist}};
    if (t.gold_pids) j["gold_pids"] = *t.gold_pids;
    return j;
}

/// One JSON object per line, fields
/// {"conv_id", "turn_id", "query", "history": [{"q","a"}...], "gold_pids": [..]?}.
/// Turns come back in file order.
inline std::vector<DialogueTurn> load_dialogues(const std::string& path) {
    auto in = detail::open_input(path);
    std::vector<DialogueTurn> turns;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            turns.push_back(dialogue_turn_from_json(detail::parse_line(line, path, lineno)));
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(path + ":" + std::to_string(lineno) + ": " + e.what());
        } catch (const ValidationError& e) {
            throw ValidationError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    log::info("loaded " + std::to_string(turns.size()) + " dialogue turns from " + path);
    return turns;
}

inline void save_dialogues(const std::vector<DialogueTurn>& turns, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write file: " + path);
    for (const auto& t : turns) out << dialogue_turn_to_json(t).dump() << "\n";
}

inline CandidateSet candidate_set_from_json(const nlohmann::json& j) {
    CandidateSet cs;
    cs.conv_id = j.at("conv_id").get<std::string>();
    cs.turn_id = j.at("turn_id").get<int>();
    for (const auto& c : j.at("candidates")) {
        Candidate cand;
        cand.rq = c.at("rq").get<std::string>();
        cand.rs = c.at("rs").get<std::string>();
        std::unordered_set<std::string> seen;
        for (const auto& pid : c.at("pids")) {
            auto s = pid.get<std::string>();
            if (!seen.insert(s).second)
                throw ValidationError("duplicate pid '" + s + "' in candidate list for " + cs.key());
            cand.pids.push_back(std::move(s));
        }
        cs.candidates.push_back(std::move(cand));
    }
    if (cs.candidates.size() < 2)
        throw ValidationError("candidate set " + cs.key() + " has fewer than 2 candidates");
    return cs;
}

inline nlohmann::json candidate_set_to_json(const CandidateSet& cs) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : cs.candidates) arr.push_back({{"rq", c.rq}, {"rs", c.rs}, {"pids", c.pids}});
    return nlohmann::json{{"conv_id", cs.conv_id}, {"turn_id", cs.turn_id}, {"candidates", arr}};
}

/// One JSON object per line, fields
/// {"conv_id", "turn_id", "candidates": [{"rq","rs","pids":[..]}...]}.
/// Candidate order is the sampling order and is preserved.
inline std::vector<CandidateSet> load_candidate_sets(const std::string& path) {
    auto in = detail::open_input(path);
    std::vector<CandidateSet> sets;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            sets.push_back(candidate_set_from_json(detail::parse_line(line, path, lineno)));
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return sets;
}

inline void save_candidate_sets(const std::vector<CandidateSet>& sets, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write file: " + path);
    for (const auto& cs : sets) out << candidate_set_to_json(cs).dump() << "\n";
}

/// Whitespace-separated "qid 0 pid rel" lines with rel in {0,1}.
inline Qrels load_qrels(const std::string& path) {
    auto in = detail::open_input(path);
    Qrels qrels;
    std::string qid, iter, pid;
    int rel = 0;
    std::size_t lineno = 0;
    std::string line;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        std::istringstream ss(line);
        if (!(ss >> qid >> iter >> pid >> rel))
            throw ValidationError(path + ":" + std::to_string(lineno) + ": malformed qrels line");
        if (rel != 0 && rel != 1)
            throw ValidationError(path + ":" + std::to_string(lineno) + ": rel must be 0 or 1");
        auto& relevant = qrels[qid];
        if (rel == 1) relevant.insert(pid);
    }
    return qrels;
}

/// Deterministic text rendering of a turn: "Q:"/"A:" lines for each history
/// pair followed by "Q: <current query>".
inline std::string serialize_history(const DialogueTurn& turn) {
    std::string out;
    for (const auto& [q, a] : turn.history) {
        out += "Q: " + q + "\n";
        out += "A: " + a + "\n";
    }
    out += "Q: " + turn.query;
    return out;
}

}  // namespace cqr
