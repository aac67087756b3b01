#pragma once

#include <cmath>
#include <cstdlib>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "cqr/common.hpp"
#include "cqr/tokenizer.hpp"

namespace cqr {

/// Pairwise semantic-similarity scorer. All outputs lie in [0,1] and are
/// symmetric under argument swap.
class SimilarityBackend {
public:
    virtual ~SimilarityBackend() = default;

    virtual double sim(const std::string& a, const std::string& b) = 0;

    /// K×K symmetric matrix over texts. Each unordered pair is evaluated once
    /// and mirrored; errors from a pair are rethrown naming the pair.
    virtual std::vector<std::vector<double>> sim_matrix(const std::vector<std::string>& texts) {
        require_pair_count(texts.size());
        const std::size_t k = texts.size();
        std::vector<std::vector<double>> m(k, std::vector<double>(k, 0.0));
        for (std::size_t i = 0; i < k; ++i) m[i][i] = diagonal(texts[i]);
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = i + 1; j < k; ++j) {
                double s;
                try {
                    s = sim(texts[i], texts[j]);
                } catch (const BackendError& e) {
                    throw BackendError(pair_context(i, j) + e.what());
                } catch (const ValidationError& e) {
                    throw ValidationError(pair_context(i, j) + e.what());
                }
                m[i][j] = s;
                m[j][i] = s;
            }
        return m;
    }

protected:
    virtual double diagonal(const std::string& text) = 0;

    static void require_pair_count(std::size_t k) {
        if (k < 2) throw ValidationError("sim_matrix requires at least 2 texts");
    }

    static std::string pair_context(std::size_t i, std::size_t j) {
        return "similarity of pair (" + std::to_string(i) + ", " + std::to_string(j) + "): ";
    }
};

/// Token-multiset F1 over tokenized strings: 2·overlap / (|A| + |B|), which
/// equals 2PR/(P+R). Runs entirely offline.
class LexicalSimilarity final : public SimilarityBackend {
public:
    explicit LexicalSimilarity(IndexConfig config = {}) : config_(config) { config_.validate(); }

    double sim(const std::string& a, const std::string& b) override {
        if (a.empty() && b.empty()) {
            log::warn("similarity of two empty strings; returning 0");
            return 0.0;
        }
        if (a == b) return 1.0;
        const auto ta = tokenize(a, config_);
        const auto tb = tokenize(b, config_);
        if (ta.empty() || tb.empty()) return 0.0;

        std::unordered_map<std::string, int> counts;
        for (const auto& t : ta) ++counts[t];
        std::size_t overlap = 0;
        for (const auto& t : tb) {
            auto it = counts.find(t);
            if (it != counts.end() && it->second > 0) {
                --it->second;
                ++overlap;
            }
        }
        return 2.0 * static_cast<double>(overlap) / static_cast<double>(ta.size() + tb.size());
    }

    const IndexConfig& config() const { return config_; }

protected:
    double diagonal(const std::string& text) override {
        return text.empty() ? 0.0 : 1.0;
    }

private:
    IndexConfig config_;
};

struct EmbeddingConfig {
    std::string base_url;                 // e.g. "http://127.0.0.1:8900"
    std::string model;                    // optional, forwarded when non-empty
    std::string api_key_env;              // env var holding the bearer token
    int timeout_sec = 30;

    void validate() const {
        if (base_url.empty()) throw ValidationError("embedding backend requires a base_url");
        if (timeout_sec < 1) throw ValidationError("embedding timeout_sec must be >= 1");
    }
};

inline constexpr std::size_t kEmbedBatchMax = 64;

/// Sentence-embedding cosine similarity against an HTTP service. Cosines are
/// clamped into [0,1] so downstream consistency scores stay non-negative.
class EmbeddingSimilarity final : public SimilarityBackend {
public:
    explicit EmbeddingSimilarity(EmbeddingConfig config) : config_(std::move(config)) {
        config_.validate();
    }

    double sim(const std::string& a, const std::string& b) override {
        auto vecs = embed({a, b});
        return clamped_cosine(vecs[0], vecs[1]);
    }

    std::vector<std::vector<double>> sim_matrix(const std::vector<std::string>& texts) override {
        require_pair_count(texts.size());
        auto vecs = embed(texts);
        const std::size_t k = texts.size();
        std::vector<std::vector<double>> m(k, std::vector<double>(k, 0.0));
        for (std::size_t i = 0; i < k; ++i) m[i][i] = clamped_cosine(vecs[i], vecs[i]);
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = i + 1; j < k; ++j) {
                double s = clamped_cosine(vecs[i], vecs[j]);
                m[i][j] = s;
                m[j][i] = s;
            }
        return m;
    }

    /// One vector per text, preserving order; requests are split into batches
    /// of at most kEmbedBatchMax texts.
    std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) {
        std::vector<std::vector<double>> out;
        out.reserve(texts.size());
        for (std::size_t lo = 0; lo < texts.size(); lo += kEmbedBatchMax) {
            const std::size_t hi = std::min(texts.size(), lo + kEmbedBatchMax);
            auto batch = embed_batch(texts, lo, hi);
            for (auto& v : batch) out.push_back(std::move(v));
        }
        return out;
    }

    const EmbeddingConfig& config() const { return config_; }

protected:
    double diagonal(const std::string& text) override {
        auto vecs = embed({text});
        return clamped_cosine(vecs[0], vecs[0]);
    }

private:
    std::vector<std::vector<double>> embed_batch(const std::vector<std::string>& texts,
                                                 std::size_t lo, std::size_t hi) {
        nlohmann::json body;
        body["texts"] = nlohmann::json::array();
        for (std::size_t i = lo; i < hi; ++i) body["texts"].push_back(texts[i]);
        if (!config_.model.empty()) body["model"] = config_.model;

        // fresh client per call; httplib clients are not safe to share
        httplib::Client client(config_.base_url);
        client.set_connection_timeout(config_.timeout_sec, 0);
        client.set_read_timeout(config_.timeout_sec, 0);
        httplib::Headers headers;
        if (!config_.api_key_env.empty()) {
            const char* key = std::getenv(config_.api_key_env.c_str());
            if (key && *key) headers.emplace("Authorization", std::string("Bearer ") + key);
        }

        auto res = client.Post("/embed", headers, body.dump(), "application/json");
        const std::string where =
            "embedding texts [" + std::to_string(lo) + ", " + std::to_string(hi) + ") via " +
            config_.base_url;
        if (!res) throw BackendError(where + ": " + httplib::to_string(res.error()));
        if (res->status != 200)
            throw BackendError(where + ": HTTP " + std::to_string(res->status));

        nlohmann::json reply;
        try {
            reply = nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception& e) {
            throw BackendError(where + ": unparseable response: " + e.what());
        }
        if (!reply.contains("embeddings") || !reply["embeddings"].is_array() ||
            reply["embeddings"].size() != hi - lo)
            throw BackendError(where + ": response must hold one embedding per text");

        std::vector<std::vector<double>> vecs;
        vecs.reserve(hi - lo);
        for (const auto& row : reply["embeddings"]) {
            if (!row.is_array() || row.empty())
                throw BackendError(where + ": empty embedding vector in response");
            vecs.push_back(row.get<std::vector<double>>());
        }
        return vecs;
    }

    static double clamped_cosine(const std::vector<double>& a, const std::vector<double>& b) {
        if (a.size() != b.size())
            throw BackendError("embedding vectors of unequal dimension (" +
                               std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            dot += a[i] * b[i];
            na += a[i] * a[i];
            nb += b[i] * b[i];
        }
        if (na == 0.0 || nb == 0.0) {
            log::warn("zero-norm embedding vector; similarity set to 0");
            return 0.0;
        }
        double c = dot / (std::sqrt(na) * std::sqrt(nb));
        return std::min(1.0, std::max(0.0, c));
    }

    EmbeddingConfig config_;
};

}  // namespace cqr
