#pragma once

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "cqr/common.hpp"
#include "cqr/corpus.hpp"
#include "cqr/eval.hpp"
#include "cqr/fusion.hpp"
#include "cqr/llm_client.hpp"
#include "cqr/preference.hpp"
#include "cqr/retriever.hpp"
#include "cqr/scoring.hpp"
#include "cqr/similarity.hpp"
#include "cqr/tokenizer.hpp"

namespace cqr {

struct SimilarityChoice {
    std::string backend = "lexical";  // "lexical" or "embedding"
    EmbeddingConfig embedding;

    void validate() const {
        if (backend == "lexical") return;
        if (backend == "embedding") {
            embedding.validate();
            return;
        }
        throw ValidationError("unknown similarity backend: " + backend +
                              " (expected lexical or embedding)");
    }
};

/// Everything the subcommands share. Paths are taken as written in the config
/// file, so relative paths resolve against the working directory.
struct PipelineConfig {
    std::string corpus;
    std::string dialogues;
    std::string qrels;           // only evaluate needs it
    std::string output_dir;
    std::string index_path;      // empty = <output_dir>/index.bin
    std::string rewrite_demos;   // JSONL demo pool for candidate sampling
    std::string response_demos;  // JSONL demo pool for direct answers
    std::uint64_t seed = 0;
    std::size_t candidates = 16;        // K, rewrites sampled per turn
    std::size_t retrieval_depth = 100;  // T, passages kept per query
    double beta = 0.1;
    unsigned workers = 4;  // turn-level parallelism across all stages
    std::string response_mode = "direct";
    IndexConfig retriever;
    LlmConfig llm;
    SimilarityChoice similarity;

    std::string resolved_index_path() const {
        return index_path.empty() ? output_dir + "/index.bin" : index_path;
    }
    std::string candidates_path() const { return output_dir + "/candidates.jsonl"; }
    std::string scores_path() const { return output_dir + "/scores.jsonl"; }
    std::string preferences_path() const { return output_dir + "/preferences.jsonl"; }
    std::string rewrites_path() const { return output_dir + "/rewrites.jsonl"; }
    std::string prompt_audit_path() const { return output_dir + "/prompts.jsonl"; }
    std::string queries_path() const { return output_dir + "/queries.tsv"; }
    std::string run_path() const { return output_dir + "/run.txt"; }
    std::string eval_report_path() const { return output_dir + "/eval_report.json"; }
    std::string analysis_path() const { return output_dir + "/analysis.json"; }

    void validate() const {
        if (corpus.empty()) throw ValidationError("config needs a corpus path");
        if (dialogues.empty()) throw ValidationError("config needs a dialogues path");
        if (output_dir.empty()) throw ValidationError("config needs an output_dir");
        if (candidates < 2)
            throw ValidationError("candidates (K) must be >= 2, got " +
                                  std::to_string(candidates));
        if (retrieval_depth < 1) throw ValidationError("retrieval_depth (T) must be >= 1");
        if (!std::isfinite(beta) || beta <= 0.0)
            throw ValidationError("beta must be a positive finite number");
        if (workers < 1) throw ValidationError("workers must be >= 1");
        response_mode_from_string(response_mode);
        retriever.validate();
        similarity.validate();
    }
};

namespace detail {

inline void require_known_keys(const nlohmann::json& obj, std::string_view where,
                               std::initializer_list<std::string_view> known) {
    for (const auto& item : obj.items()) {
        if (std::find(known.begin(), known.end(), item.key()) == known.end())
            throw ValidationError("unknown config key " + std::string(where) + item.key());
    }
}

template <typename T>
T config_get(const nlohmann::json& obj, const char* key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ValidationError(std::string("config key ") + key + " has the wrong type");
    }
}

}  // namespace detail

inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ValidationError("config must be a JSON object");
    detail::require_known_keys(
        j, "", {"corpus", "dialogues", "qrels", "output_dir", "index_path", "rewrite_demos",
                "response_demos", "seed", "candidates", "retrieval_depth", "beta", "workers",
                "response_mode", "retriever", "llm", "similarity"});

    PipelineConfig c;
    c.corpus = detail::config_get<std::string>(j, "corpus", "");
    c.dialogues = detail::config_get<std::string>(j, "dialogues", "");
    c.qrels = detail::config_get<std::string>(j, "qrels", "");
    c.output_dir = detail::config_get<std::string>(j, "output_dir", "");
    c.index_path = detail::config_get<std::string>(j, "index_path", "");
    c.rewrite_demos = detail::config_get<std::string>(j, "rewrite_demos", "");
    c.response_demos = detail::config_get<std::string>(j, "response_demos", "");
    c.seed = detail::config_get<std::uint64_t>(j, "seed", 0);
    c.candidates = detail::config_get<std::size_t>(j, "candidates", 16);
    c.retrieval_depth = detail::config_get<std::size_t>(j, "retrieval_depth", 100);
    c.beta = detail::config_get<double>(j, "beta", 0.1);
    c.workers = detail::config_get<unsigned>(j, "workers", 4);
    c.response_mode = detail::config_get<std::string>(j, "response_mode", "direct");

    if (j.contains("retriever")) {
        const auto& r = j.at("retriever");
        detail::require_known_keys(
            r, "retriever.",
            {"k1", "b", "lowercase", "min_token_len", "remove_stopwords", "stem"});
        c.retriever.k1 = detail::config_get<double>(r, "k1", c.retriever.k1);
        c.retriever.b = detail::config_get<double>(r, "b", c.retriever.b);
        c.retriever.lowercase = detail::config_get<bool>(r, "lowercase", c.retriever.lowercase);
        c.retriever.min_token_len =
            detail::config_get<int>(r, "min_token_len", c.retriever.min_token_len);
        c.retriever.remove_stopwords =
            detail::config_get<bool>(r, "remove_stopwords", c.retriever.remove_stopwords);
        c.retriever.stem = detail::config_get<bool>(r, "stem", c.retriever.stem);
    }
    if (j.contains("llm")) {
        const auto& l = j.at("llm");
        detail::require_known_keys(
            l, "llm.", {"base_url", "model", "api_key_env", "temperature", "max_tokens",
                        "max_concurrency", "retry_limit", "retry_backoff_ms", "timeout_sec"});
        c.llm.base_url = detail::config_get<std::string>(l, "base_url", "");
        c.llm.model = detail::config_get<std::string>(l, "model", "");
        c.llm.api_key_env = detail::config_get<std::string>(l, "api_key_env", "");
        c.llm.temperature = detail::config_get<double>(l, "temperature", c.llm.temperature);
        c.llm.max_tokens = detail::config_get<int>(l, "max_tokens", c.llm.max_tokens);
        c.llm.max_concurrency =
            detail::config_get<unsigned>(l, "max_concurrency", c.llm.max_concurrency);
        c.llm.retry_limit = detail::config_get<int>(l, "retry_limit", c.llm.retry_limit);
        c.llm.retry_backoff_ms =
            detail::config_get<int>(l, "retry_backoff_ms", c.llm.retry_backoff_ms);
        c.llm.timeout_sec = detail::config_get<int>(l, "timeout_sec", c.llm.timeout_sec);
    }
    if (j.contains("similarity")) {
        const auto& s = j.at("similarity");
        detail::require_known_keys(
            s, "similarity.", {"backend", "base_url", "model", "api_key_env", "timeout_sec"});
        c.similarity.backend = detail::config_get<std::string>(s, "backend", "lexical");
        c.similarity.embedding.base_url = detail::config_get<std::string>(s, "base_url", "");
        c.similarity.embedding.model = detail::config_get<std::string>(s, "model", "");
        c.similarity.embedding.api_key_env =
            detail::config_get<std::string>(s, "api_key_env", "");
        c.similarity.embedding.timeout_sec =
            detail::config_get<int>(s, "timeout_sec", c.similarity.embedding.timeout_sec);
    }

    c.validate();
    return c;
}

inline PipelineConfig load_pipeline_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path + ": " + e.what());
    }
    try {
        return pipeline_config_from_json(j);
    } catch (const ValidationError& e) {
        throw ValidationError(path + ": " + e.what());
    }
}

inline std::unique_ptr<SimilarityBackend> make_similarity(const SimilarityChoice& choice) {
    choice.validate();
    if (choice.backend == "embedding")
        return std::make_unique<EmbeddingSimilarity>(choice.embedding);
    return std::make_unique<LexicalSimilarity>();
}

namespace detail {

/// Writes through a ".tmp" sibling and renames into place, so a crash never
/// leaves a partial file under the final name.
template <typename SaveFn>
void write_atomic(const std::string& path, SaveFn&& save) {
    const std::string tmp = path + ".tmp";
    try {
        save(tmp);
    } catch (...) {
        std::remove(tmp.c_str());
        throw;
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        std::remove(tmp.c_str());
        throw ValidationError("cannot move " + tmp + " into place");
    }
}

inline void write_text_atomic(const std::string& path, const std::string& content) {
    write_atomic(path, [&](const std::string& tmp) {
        std::ofstream out(tmp);
        if (!out) throw ValidationError("cannot write file: " + tmp);
        out << content;
        out.close();
        if (out.fail()) throw ValidationError("failed writing " + tmp);
    });
}

inline void ensure_output_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ValidationError("cannot create output_dir " + dir + ": " + ec.message());
}

/// Runs fn(0..n-1) on a shared pool. Exceptions are kept per index and the
/// lowest index is rethrown after the join, so a failure reproduces
/// identically for any worker count.
template <typename Fn>
void parallel_for(std::size_t n, unsigned workers, Fn&& fn) {
    const std::size_t used = std::min<std::size_t>(std::max(workers, 1u), n);
    if (used <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(n);
    std::vector<std::thread> pool;
    pool.reserve(used);
    for (std::size_t w = 0; w < used; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

inline void require_llm(const LlmConfig& llm) {
    if (llm.base_url.empty())
        throw ValidationError(
            "this command needs a generation backend (config key llm.base_url)");
    llm.validate();
}

inline void require_unique_turn_keys(const std::vector<DialogueTurn>& turns,
                                     const std::string& path) {
    std::set<std::string> seen;
    for (const auto& t : turns)
        if (!seen.insert(t.key()).second)
            throw ValidationError(path + ": duplicate turn key " + t.key());
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string join_ids(const std::vector<std::string>& ids, std::size_t limit = 10) {
    std::string out;
    const std::size_t n = std::min(limit, ids.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (i) out += ", ";
        out += ids[i];
    }
    if (ids.size() > n) out += ", ... (" + std::to_string(ids.size()) + " total)";
    return out;
}

}  // namespace detail

/// Builds the sparse index over the corpus and writes the artifact. The
/// serialized bytes depend only on corpus content and tokenizer settings, so
/// a rebuild from unchanged inputs is byte-identical.
inline std::uint64_t cmd_index(const PipelineConfig& config) {
    config.validate();
    const auto corpus = load_corpus(config.corpus);
    const auto index = build_index(corpus, config.retriever, config.workers);
    detail::ensure_output_dir(config.output_dir);
    detail::write_atomic(config.resolved_index_path(),
                         [&](const std::string& tmp) { save_index(index, tmp); });
    const std::uint64_t fp = index_fingerprint(index);
    log::info("indexed " + std::to_string(corpus.size()) + " passages into " +
              config.resolved_index_path() + " (fingerprint " + detail::hex64(fp) + ")");
    return fp;
}

struct ConstructStats {
    std::size_t turns = 0;
    std::size_t processed = 0;
    std::size_t skipped_turns = 0;
    std::size_t records = 0;
    std::size_t degenerate_skips = 0;
};

/// Candidate construction over every dialogue turn: sample K rewrites,
/// retrieve top-T per rewrite, answer each rewrite, score the set, and emit
/// up to three tagged preference pairs. Failing turns are logged and dropped
/// unless `strict`. Outputs are buffered per turn and written in dialogue
/// order, so reruns with the same inputs and seed are byte-identical.
inline ConstructStats cmd_construct(const PipelineConfig& config, bool strict = false) {
    config.validate();
    detail::require_llm(config.llm);
    if (config.rewrite_demos.empty())
        throw ValidationError("construct needs rewrite_demos in the config");
    if (config.response_demos.empty())
        throw ValidationError("construct needs response_demos in the config");

    const auto dialogues = load_dialogues(config.dialogues);
    if (dialogues.empty()) throw ValidationError("no dialogue turns in " + config.dialogues);
    detail::require_unique_turn_keys(dialogues, config.dialogues);
    const auto rewrite_pool = load_demo_pool(config.rewrite_demos);
    const auto response_pool = load_demo_pool(config.response_demos);
    const auto mode = response_mode_from_string(config.response_mode);
    const auto index = load_index(config.resolved_index_path(), config.retriever);
    PassageCollection corpus;
    if (mode == ResponseMode::grounded) corpus = load_corpus(config.corpus);
    const auto backend = make_backend(config.llm);
    const auto sim = make_similarity(config.similarity);

    SamplingOptions sampling;
    sampling.temperature = config.llm.temperature;
    sampling.max_tokens = config.llm.max_tokens;
    sampling.max_concurrency = config.llm.max_concurrency;

    struct TurnOutput {
        bool ok = false;
        std::string candidate_line;
        std::string score_line;
        std::vector<PreferenceRecord> records;
        std::size_t degenerate = 0;
    };
    std::vector<TurnOutput> outputs(dialogues.size());

    detail::parallel_for(dialogues.size(), config.workers, [&](std::size_t i) {
        const DialogueTurn& turn = dialogues[i];
        TurnOutput& out = outputs[i];
        try {
            CandidateSet cs;
            cs.conv_id = turn.conv_id;
            cs.turn_id = turn.turn_id;
            const auto rqs = sample_rewrites(*backend, turn, config.candidates, rewrite_pool,
                                             config.seed, sampling);
            for (const auto& rq : rqs) {
                Candidate cand;
                cand.rq = rq;
                const RankedList hits = search(index, rq, config.retrieval_depth);
                cand.pids.reserve(hits.size());
                for (const auto& sp : hits.entries) cand.pids.push_back(sp.pid);
                std::vector<std::string> passages;
                if (mode == ResponseMode::grounded) {
                    for (std::size_t p = 0; p < hits.size() && p < 3; ++p) {
                        const Passage* pass = corpus.find(hits[p].pid);
                        if (pass) passages.push_back(pass->text);
                    }
                }
                cand.rs = generate_response(*backend, turn, rq, mode, passages, response_pool,
                                            config.llm.max_tokens);
                cs.candidates.push_back(std::move(cand));
            }
            const auto scores = score_candidate_set(cs, *sim, config.retriever);
            const auto rw_sel = select_pair(scores.rw, cs.candidates.size());
            const auto rt_sel = select_pair(scores.rt, cs.candidates.size());
            const auto rp_sel = select_pair(scores.rp, cs.candidates.size());
            out.candidate_line = candidate_set_to_json(cs).dump();
            out.score_line = scores_to_json(cs.key(), scores, rw_sel, rt_sel, rp_sel).dump();
            out.records = emit_preference_records(cs, scores, turn, &out.degenerate);
            out.ok = true;
            log::info("turn " + turn.key() + ": " + std::to_string(out.records.size()) +
                      " records, " + std::to_string(out.degenerate) + " degenerate");
        } catch (const ValidationError& e) {
            if (strict) throw;
            log::warn("turn " + turn.key() + " skipped: " + e.what());
        } catch (const BackendError& e) {
            if (strict) throw;
            log::warn("turn " + turn.key() + " skipped: " + e.what());
        }
    });

    detail::ensure_output_dir(config.output_dir);
    std::string candidate_lines, score_lines;
    std::vector<PreferenceRecord> records;
    ConstructStats stats;
    stats.turns = dialogues.size();
    for (auto& out : outputs) {
        if (!out.ok) {
            ++stats.skipped_turns;
            continue;
        }
        ++stats.processed;
        candidate_lines += out.candidate_line;
        candidate_lines += '\n';
        score_lines += out.score_line;
        score_lines += '\n';
        stats.degenerate_skips += out.degenerate;
        for (auto& rec : out.records) records.push_back(std::move(rec));
    }
    stats.records = records.size();
    detail::write_text_atomic(config.candidates_path(), candidate_lines);
    detail::write_text_atomic(config.scores_path(), score_lines);
    detail::write_atomic(config.preferences_path(), [&](const std::string& tmp) {
        save_preference_records(records, tmp);
    });
    log::info("construct: " + std::to_string(stats.processed) + "/" +
              std::to_string(stats.turns) + " turns, " + std::to_string(stats.records) +
              " preference records, " + std::to_string(stats.degenerate_skips) +
              " degenerate skips, " + std::to_string(stats.skipped_turns) + " turns skipped");
    return stats;
}

/// One inference-side rewrite per (turn, tag), written to rewrites.jsonl.
struct TaggedRewrite {
    std::string turn_key;
    PreferenceTag tag = PreferenceTag::rewrite;
    std::string rewrite;
    std::string expanded;  // rewrite + pseudo answer; empty unless expansion ran
};

inline nlohmann::json tagged_rewrite_to_json(const TaggedRewrite& r) {
    nlohmann::json j = {{"turn_key", r.turn_key},
                        {"tag", std::string(to_string(r.tag))},
                        {"rewrite", r.rewrite}};
    if (!r.expanded.empty()) j["expanded"] = r.expanded;
    return j;
}

inline TaggedRewrite tagged_rewrite_from_json(const nlohmann::json& j) {
    TaggedRewrite r;
    try {
        r.turn_key = j.at("turn_key").get<std::string>();
        r.tag = preference_tag_from_string(j.at("tag").get<std::string>());
        r.rewrite = j.at("rewrite").get<std::string>();
        if (j.contains("expanded")) r.expanded = j.at("expanded").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("bad rewrite record: ") + e.what());
    }
    if (r.rewrite.empty()) throw ValidationError("rewrite record for " + r.turn_key + " is empty");
    return r;
}

inline std::vector<TaggedRewrite> load_tagged_rewrites(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open rewrites file: " + path);
    std::vector<TaggedRewrite> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto j = detail::parse_line(line, path, lineno);
        try {
            rows.push_back(tagged_rewrite_from_json(j));
        } catch (const ValidationError& e) {
            throw ValidationError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return rows;
}

struct RewriteStats {
    std::size_t turns = 0;
    std::size_t rewrites = 0;
    std::size_t skipped_turns = 0;
};

/// Generates one prefix-conditioned rewrite per requested tag for every turn.
/// With `expand`, each rewrite also gets a pseudo answer appended for
/// retrieval. Prompts go to a parallel audit file so the exact conditioning,
/// leading tag included, stays inspectable.
inline RewriteStats cmd_rewrite(const PipelineConfig& config,
                                const std::vector<PreferenceTag>& tags, bool expand,
                                bool strict = false) {
    config.validate();
    detail::require_llm(config.llm);
    if (tags.empty()) throw ValidationError("rewrite needs at least one tag");
    if (expand && config.response_demos.empty())
        throw ValidationError("query expansion needs response_demos in the config");

    const auto dialogues = load_dialogues(config.dialogues);
    if (dialogues.empty()) throw ValidationError("no dialogue turns in " + config.dialogues);
    detail::require_unique_turn_keys(dialogues, config.dialogues);
    DemoPool response_pool;
    if (expand) response_pool = load_demo_pool(config.response_demos);
    const auto backend = make_backend(config.llm);

    struct TurnOutput {
        bool ok = false;
        std::vector<TaggedRewrite> rows;
        std::vector<std::string> prompts;  // aligned with rows
    };
    std::vector<TurnOutput> outputs(dialogues.size());

    detail::parallel_for(dialogues.size(), config.workers, [&](std::size_t i) {
        const DialogueTurn& turn = dialogues[i];
        TurnOutput& out = outputs[i];
        try {
            for (PreferenceTag tag : tags) {
                TaggedRewrite row;
                row.turn_key = turn.key();
                row.tag = tag;
                row.rewrite =
                    generate_prefixed_rewrite(*backend, turn, tag, config.llm.max_tokens);
                if (expand) {
                    const std::string pseudo =
                        generate_response(*backend, turn, row.rewrite, ResponseMode::direct, {},
                                          response_pool, config.llm.max_tokens);
                    row.expanded = expand_query(row.rewrite, pseudo);
                }
                out.prompts.push_back(build_prompt(tag, turn));
                out.rows.push_back(std::move(row));
            }
            out.ok = true;
        } catch (const ValidationError& e) {
            if (strict) throw;
            log::warn("turn " + turn.key() + " skipped: " + e.what());
        } catch (const BackendError& e) {
            if (strict) throw;
            log::warn("turn " + turn.key() + " skipped: " + e.what());
        }
    });

    detail::ensure_output_dir(config.output_dir);
    std::string rewrite_lines, prompt_lines;
    RewriteStats stats;
    stats.turns = dialogues.size();
    for (const auto& out : outputs) {
        if (!out.ok) {
            ++stats.skipped_turns;
            continue;
        }
        for (std::size_t r = 0; r < out.rows.size(); ++r) {
            rewrite_lines += tagged_rewrite_to_json(out.rows[r]).dump();
            rewrite_lines += '\n';
            prompt_lines += nlohmann::json{{"turn_key", out.rows[r].turn_key},
                                           {"tag", std::string(to_string(out.rows[r].tag))},
                                           {"prompt", out.prompts[r]}}
                                .dump();
            prompt_lines += '\n';
            ++stats.rewrites;
        }
    }
    detail::write_text_atomic(config.rewrites_path(), rewrite_lines);
    detail::write_text_atomic(config.prompt_audit_path(), prompt_lines);
    log::info("rewrite: " + std::to_string(stats.rewrites) + " rewrites over " +
              std::to_string(stats.turns - stats.skipped_turns) + "/" +
              std::to_string(stats.turns) + " turns");
    return stats;
}

enum class FusionMode { concat, rrf };

inline FusionMode fusion_mode_from_string(std::string_view s) {
    if (s == "concat") return FusionMode::concat;
    if (s == "rrf") return FusionMode::rrf;
    throw ValidationError("unknown fusion mode: " + std::string(s) +
                          " (expected concat or rrf)");
}

inline std::string_view to_string(FusionMode mode) {
    return mode == FusionMode::concat ? "concat" : "rrf";
}

struct RetrieveStats {
    std::size_t turns = 0;
    std::size_t searches = 0;
};

/// Retrieval over the rewrites file. concat: the per-turn rewrites are fused
/// into one query string (tag order, expanded text when present) and searched
/// once. rrf: one search per rewrite, then reciprocal-rank fusion. The
/// queries actually searched go to a TSV audit file, one row per search.
inline RetrieveStats cmd_retrieve(const PipelineConfig& config, FusionMode mode,
                                  const std::string& runtag = "") {
    config.validate();
    const auto index = load_index(config.resolved_index_path(), config.retriever);
    const auto rows = load_tagged_rewrites(config.rewrites_path());
    if (rows.empty()) throw ValidationError("no rewrite records in " + config.rewrites_path());

    // Tag slots per turn, keyed in first-appearance order.
    std::vector<std::string> order;
    std::map<std::string, std::array<const TaggedRewrite*, 3>> by_turn;
    for (const auto& row : rows) {
        auto [it, inserted] = by_turn.try_emplace(row.turn_key,
                                                  std::array<const TaggedRewrite*, 3>{});
        if (inserted) order.push_back(row.turn_key);
        auto& slot = it->second[static_cast<std::size_t>(row.tag)];
        if (slot)
            throw ValidationError(config.rewrites_path() + ": duplicate rewrite for turn " +
                                  row.turn_key + " tag " + std::string(to_string(row.tag)));
        slot = &row;
    }

    RunFile run;
    std::vector<QueryRow> audit;
    RetrieveStats stats;
    stats.turns = order.size();
    for (const auto& key : order) {
        std::vector<std::string> texts;
        for (const TaggedRewrite* row : by_turn[key])
            if (row) texts.push_back(row->expanded.empty() ? row->rewrite : row->expanded);
        RankedList fusedlist;
        if (mode == FusionMode::concat) {
            const FusedQuery fused = concat_queries(texts);
            audit.push_back({key, fused.text});
            fusedlist = search(index, fused.text, config.retrieval_depth);
            ++stats.searches;
        } else {
            std::vector<RankedList> lists;
            lists.reserve(texts.size());
            for (const auto& text : texts) {
                audit.push_back({key, text});
                lists.push_back(search(index, text, config.retrieval_depth));
                ++stats.searches;
            }
            fusedlist = rrf(lists);
            if (fusedlist.size() > config.retrieval_depth)
                fusedlist.entries.resize(config.retrieval_depth);
        }
        run.queries.emplace(key, std::move(fusedlist));
    }

    detail::ensure_output_dir(config.output_dir);
    detail::write_atomic(config.queries_path(),
                         [&](const std::string& tmp) { save_query_file(audit, tmp); });
    const std::string tag = runtag.empty() ? std::string(to_string(mode)) : runtag;
    detail::write_atomic(config.run_path(),
                         [&](const std::string& tmp) { save_run(run, tmp, tag); });
    log::info("retrieve: " + std::to_string(stats.searches) + " searches over " +
              std::to_string(stats.turns) + " turns (" + std::string(to_string(mode)) + ")");
    return stats;
}

/// Scores a run file against qrels. A run that shares no query ids with the
/// qrels is treated as an id-space mistake and rejected with the orphan ids.
inline EvalReport cmd_evaluate(const std::string& run_path, const std::string& qrels_path,
                               const std::string& report_path = "") {
    const RunFile run = load_run(run_path);
    const Qrels qrels = load_qrels(qrels_path);

    std::vector<std::string> orphans;
    for (const auto& [qid, list] : run.queries)
        if (!qrels.count(qid)) orphans.push_back(qid);
    if (!run.queries.empty() && orphans.size() == run.queries.size())
        throw ValidationError("run " + run_path + " shares no query ids with " + qrels_path +
                              "; run-only ids: " + detail::join_ids(orphans));

    const EvalReport report = evaluate_run(run, qrels);
    if (!report_path.empty())
        detail::write_text_atomic(report_path, eval_report_to_json(report).dump(2) + "\n");
    return report;
}

struct AnalysisOptions {
    std::string scores_path;      // required
    std::string candidates_path;  // adds per-turn retrieval overlap when set
    std::string rewrites_path;    // with dialogues_path, adds per-tag text stats
    std::string dialogues_path;
    std::size_t depth = 100;   // overlap depth
    std::string report_path;   // written when set
};

/// Offline analysis of construct/rewrite outputs: rank correlation between
/// the three consistency dimensions, retrieval overlap across candidates,
/// and per-tag rewrite statistics against the original queries.
inline nlohmann::json cmd_analyze(const AnalysisOptions& opt) {
    if (opt.scores_path.empty()) throw ValidationError("analyze needs a scores file");
    if (opt.depth < 1) throw ValidationError("overlap depth must be >= 1");
    if (opt.rewrites_path.empty() != opt.dialogues_path.empty())
        throw ValidationError("per-tag analysis needs both the rewrites and dialogues files");

    const auto turns = load_scored_turns(opt.scores_path);
    if (turns.empty()) throw ValidationError("no score records in " + opt.scores_path);
    const CorrelationReport corr = preference_correlation_report(turns);

    nlohmann::json report;
    report["consistency"] = correlation_report_to_json(corr);

    if (!opt.candidates_path.empty()) {
        const auto sets = load_candidate_sets(opt.candidates_path);
        std::map<std::string, const CandidateSet*> by_key;
        for (const auto& cs : sets) by_key.emplace(cs.key(), &cs);

        std::vector<std::string> scores_only, candidates_only;
        std::set<std::string> score_keys;
        for (const auto& t : turns) {
            score_keys.insert(t.turn_key);
            if (!by_key.count(t.turn_key)) scores_only.push_back(t.turn_key);
        }
        for (const auto& [key, cs] : by_key)
            if (!score_keys.count(key)) candidates_only.push_back(key);
        if (!scores_only.empty() || !candidates_only.empty())
            throw ValidationError(
                "score and candidate files cover different turns; scores-only: [" +
                detail::join_ids(scores_only) + "]; candidates-only: [" +
                detail::join_ids(candidates_only) + "]");

        // Mean pairwise overlap of the candidates' ranked lists, per turn.
        nlohmann::json per_turn = nlohmann::json::object();
        double total = 0.0;
        for (const auto& [key, cs] : by_key) {
            std::vector<RankedList> lists;
            lists.reserve(cs->candidates.size());
            for (const auto& cand : cs->candidates) {
                RankedList list;
                for (std::size_t r = 0; r < cand.pids.size(); ++r)
                    list.entries.push_back(
                        {cand.pids[r], static_cast<double>(cand.pids.size() - r)});
                lists.push_back(std::move(list));
            }
            double sum = 0.0;
            std::size_t pairs = 0;
            for (std::size_t a = 0; a < lists.size(); ++a)
                for (std::size_t b = a + 1; b < lists.size(); ++b) {
                    sum += intersection_ratio(lists[a], lists[b], opt.depth);
                    ++pairs;
                }
            const double mean = pairs ? sum / static_cast<double>(pairs) : 0.0;
            per_turn[key] = mean;
            total += mean;
        }
        report["retrieval_overlap"] = {
            {"depth", opt.depth},
            {"mean", by_key.empty() ? 0.0 : total / static_cast<double>(by_key.size())},
            {"per_turn", per_turn}};
    }

    if (!opt.rewrites_path.empty()) {
        const auto rows = load_tagged_rewrites(opt.rewrites_path);
        const auto dialogues = load_dialogues(opt.dialogues_path);
        std::map<std::string, const DialogueTurn*> turn_by_key;
        for (const auto& t : dialogues) turn_by_key.emplace(t.key(), &t);

        std::vector<std::string> orphans;
        for (const auto& row : rows)
            if (!turn_by_key.count(row.turn_key)) orphans.push_back(row.turn_key);
        if (!orphans.empty())
            throw ValidationError("rewrites reference turns missing from " +
                                  opt.dialogues_path + ": " + detail::join_ids(orphans));

        struct TagAccum {
            std::size_t count = 0;
            double tokens = 0.0, diversity = 0.0, edits = 0.0;
        };
        std::array<TagAccum, 3> accum;
        const IndexConfig text_config;  // plain lowercased tokens
        for (const auto& row : rows) {
            auto& a = accum[static_cast<std::size_t>(row.tag)];
            const auto rq_tokens = tokenize(row.rewrite, text_config);
            const auto q_tokens = tokenize(turn_by_key[row.turn_key]->query, text_config);
            ++a.count;
            a.tokens += static_cast<double>(rq_tokens.size());
            a.diversity += ngram_diversity(row.rewrite, 2, text_config);
            a.edits += static_cast<double>(levenshtein(q_tokens, rq_tokens));
        }
        nlohmann::json tags = nlohmann::json::object();
        for (std::size_t d = 0; d < kPreferenceTags.size(); ++d) {
            const auto& a = accum[d];
            if (!a.count) continue;
            const auto n = static_cast<double>(a.count);
            tags[std::string(to_string(kPreferenceTags[d]))] = {
                {"count", a.count},
                {"mean_tokens", a.tokens / n},
                {"mean_bigram_diversity", a.diversity / n},
                {"mean_edit_distance", a.edits / n}};
        }
        report["tags"] = tags;
    }

    if (!opt.report_path.empty())
        detail::write_text_atomic(opt.report_path, report.dump(2) + "\n");
    return report;
}

}  // namespace cqr
