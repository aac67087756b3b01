#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "cqr/common.hpp"
#include "cqr/corpus.hpp"
#include "cqr/preference.hpp"

namespace cqr {

struct GenerationRequest {
    std::string prompt;
    double temperature = 0.0;
    int max_tokens = 256;
    std::optional<std::uint64_t> seed;

    void validate() const {
        if (temperature < 0.0) throw ValidationError("temperature must be >= 0");
        if (max_tokens < 1) throw ValidationError("max_tokens must be >= 1");
    }
};

/// Few-shot examples: input rendering paired with the expected output text.
struct DemoPool {
    std::vector<std::pair<std::string, std::string>> examples;

    void validate() const {
        if (examples.size() < 5)
            throw ValidationError("demo pool needs at least 5 examples, has " +
                                  std::to_string(examples.size()));
    }
};

inline DemoPool load_demo_pool(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open demo file: " + path);
    DemoPool pool;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto j = detail::parse_line(line, path, lineno);
        std::string input, output;
        try {
            input = j.at("input").get<std::string>();
            output = j.at("output").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (input.empty() || output.empty())
            throw ValidationError(path + ":" + std::to_string(lineno) +
                                  ": demo input and output must be non-empty");
        pool.examples.emplace_back(std::move(input), std::move(output));
    }
    pool.validate();
    return pool;
}

/// Text-generation service. Implementations must tolerate concurrent calls.
class LlmBackend {
public:
    virtual ~LlmBackend() = default;

    virtual std::string generate(const GenerationRequest& request) = 0;

    /// Runs requests with at most max_concurrency in flight. Results are
    /// positioned by request index, so output order never depends on
    /// completion order. If several requests fail, the lowest-index failure
    /// is the one rethrown.
    virtual std::vector<std::string> generate_many(const std::vector<GenerationRequest>& requests,
                                                   unsigned max_concurrency) {
        if (max_concurrency < 1) throw ValidationError("max_concurrency must be >= 1");
        std::vector<std::string> results(requests.size());
        if (requests.empty()) return results;

        const unsigned workers =
            static_cast<unsigned>(std::min<std::size_t>(max_concurrency, requests.size()));
        if (workers == 1) {
            for (std::size_t i = 0; i < requests.size(); ++i) results[i] = generate(requests[i]);
            return results;
        }

        std::atomic<std::size_t> next{0};
        std::vector<std::exception_ptr> errors(requests.size());
        std::vector<std::thread> threads;
        threads.reserve(workers);
        for (unsigned w = 0; w < workers; ++w) {
            threads.emplace_back([&] {
                for (;;) {
                    const std::size_t i = next.fetch_add(1);
                    if (i >= requests.size()) return;
                    try {
                        results[i] = generate(requests[i]);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                }
            });
        }
        for (auto& t : threads) t.join();
        for (const auto& e : errors)
            if (e) std::rethrow_exception(e);
        return results;
    }
};

struct LlmConfig {
    std::string base_url;        // "mock:<file>" selects the offline mock backend
    std::string model;
    std::string api_key_env;
    double temperature = 1.0;    // candidate sampling; responses and inference use 0
    int max_tokens = 256;
    unsigned max_concurrency = 4;
    int retry_limit = 3;
    int retry_backoff_ms = 200;
    int timeout_sec = 60;

    void validate() const {
        if (base_url.empty()) throw ValidationError("llm backend requires a base_url");
        if (temperature < 0.0) throw ValidationError("temperature must be >= 0");
        if (max_tokens < 1) throw ValidationError("max_tokens must be >= 1");
        if (max_concurrency < 1) throw ValidationError("max_concurrency must be >= 1");
        if (retry_limit < 0) throw ValidationError("retry_limit must be >= 0");
        if (retry_backoff_ms < 0) throw ValidationError("retry_backoff_ms must be >= 0");
        if (timeout_sec < 1) throw ValidationError("timeout_sec must be >= 1");
    }
};

/// Chat-completion HTTP backend. Connection failures and 429/5xx responses
/// are retried with exponential backoff; other failures surface immediately.
class HttpChatBackend final : public LlmBackend {
public:
    explicit HttpChatBackend(LlmConfig config) : config_(std::move(config)) {
        config_.validate();
    }

    std::string generate(const GenerationRequest& request) override {
        request.validate();
        nlohmann::json body;
        body["model"] = config_.model;
        body["messages"] = nlohmann::json::array({
            {{"role", "user"}, {"content", request.prompt}},
        });
        body["temperature"] = request.temperature;
        body["max_tokens"] = request.max_tokens;
        if (request.seed) body["seed"] = *request.seed;
        const std::string payload = body.dump();

        std::string last_error;
        for (int attempt = 0; attempt <= config_.retry_limit; ++attempt) {
            if (attempt > 0) {
                const auto delay = std::chrono::milliseconds(config_.retry_backoff_ms)
                                   * (1 << (attempt - 1));
                std::this_thread::sleep_for(delay);
            }
            httplib::Client client(config_.base_url);
            client.set_connection_timeout(config_.timeout_sec, 0);
            client.set_read_timeout(config_.timeout_sec, 0);
            httplib::Headers headers;
            if (!config_.api_key_env.empty()) {
                const char* key = std::getenv(config_.api_key_env.c_str());
                if (key && *key) headers.emplace("Authorization", std::string("Bearer ") + key);
            }

            auto res = client.Post("/v1/chat/completions", headers, payload, "application/json");
            if (!res) {
                last_error = httplib::to_string(res.error());
                continue;
            }
            if (res->status == 429 || res->status >= 500) {
                last_error = "HTTP " + std::to_string(res->status);
                continue;
            }
            if (res->status != 200)
                throw BackendError("generation via " + config_.base_url + ": HTTP " +
                                   std::to_string(res->status));
            return extract_content(res->body);
        }
        throw BackendError("generation via " + config_.base_url + " failed after " +
                           std::to_string(config_.retry_limit + 1) + " attempts: " + last_error);
    }

    const LlmConfig& config() const { return config_; }

private:
    std::string extract_content(const std::string& body) const {
        nlohmann::json reply;
        try {
            reply = nlohmann::json::parse(body);
            return reply.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw BackendError("generation via " + config_.base_url +
                               ": malformed response: " + e.what());
        }
    }

    LlmConfig config_;
};

/// Offline stand-in driven by a canned-response file: a JSON array of
/// entries {"contains": [substrings], "responses": [strings]}. The first
/// entry whose substrings all occur in the prompt answers the request with
/// responses[seed % count] (seed defaults to 0). Pure function of
/// (prompt, seed), so runs are bit-reproducible.
class MockBackend final : public LlmBackend {
public:
    explicit MockBackend(const std::string& canned_path) {
        std::ifstream in(canned_path);
        if (!in) throw ValidationError("cannot open canned-response file: " + canned_path);
        nlohmann::json doc;
        try {
            in >> doc;
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError("canned-response file " + canned_path + ": " + e.what());
        }
        if (!doc.is_array())
            throw ValidationError("canned-response file " + canned_path + " must be a JSON array");
        for (const auto& entry : doc) {
            Entry e;
            try {
                for (const auto& s : entry.at("contains")) e.contains.push_back(s.get<std::string>());
                for (const auto& s : entry.at("responses")) e.responses.push_back(s.get<std::string>());
            } catch (const nlohmann::json::exception& ex) {
                throw ValidationError("canned-response file " + canned_path + ": " + ex.what());
            }
            if (e.responses.empty())
                throw ValidationError("canned-response file " + canned_path +
                                      ": entry with empty responses list");
            entries_.push_back(std::move(e));
        }
        if (entries_.empty())
            throw ValidationError("canned-response file " + canned_path + " has no entries");
    }

    std::string generate(const GenerationRequest& request) override {
        request.validate();
        for (const auto& entry : entries_) {
            bool all = true;
            for (const auto& needle : entry.contains)
                if (request.prompt.find(needle) == std::string::npos) {
                    all = false;
                    break;
                }
            if (all)
                return entry.responses[request.seed.value_or(0) % entry.responses.size()];
        }
        throw BackendError("mock backend has no canned entry matching the prompt (first 80 chars: " +
                           request.prompt.substr(0, 80) + ")");
    }

private:
    struct Entry {
        std::vector<std::string> contains;
        std::vector<std::string> responses;
    };
    std::vector<Entry> entries_;
};

inline std::unique_ptr<LlmBackend> make_backend(const LlmConfig& config) {
    constexpr std::string_view mock_scheme = "mock:";
    if (config.base_url.rfind(mock_scheme, 0) == 0)
        return std::make_unique<MockBackend>(config.base_url.substr(mock_scheme.size()));
    return std::make_unique<HttpChatBackend>(config);
}

inline constexpr std::string_view kSamplingInstruction =
    "Please rewrite the last statement of the following dialogue to make it more complete. "
    "Just provide the rewritten sentence without any additional content.";

inline constexpr std::string_view kResponseInstruction =
    "Given a question, please answer the question in a sentence. "
    "The answer should be as informative as possible.";

inline constexpr std::string_view kGroundedInstruction =
    "Given the following conversation history, the current query, and three passages related to "
    "the current query, please generate a response for the current query. You only need to "
    "output the response, please do not output any extra content.";

/// Draws `count` distinct examples from the pool in a seed-determined order
/// (partial Fisher-Yates; the modulo draw keeps the sequence reproducible
/// from the seed alone, independent of library distribution internals).
inline std::vector<std::pair<std::string, std::string>> select_demos(const DemoPool& pool,
                                                                     std::size_t count,
                                                                     std::uint64_t seed) {
    pool.validate();
    const std::size_t n = pool.examples.size();
    if (count > n) throw ValidationError("cannot draw more demos than the pool holds");
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::mt19937_64 rng(seed);
    std::vector<std::pair<std::string, std::string>> out;
    out.reserve(count);
    for (std::size_t j = 0; j < count; ++j) {
        const std::size_t pick = j + static_cast<std::size_t>(rng() % (n - j));
        std::swap(idx[j], idx[pick]);
        out.push_back(pool.examples[idx[j]]);
    }
    return out;
}

inline std::string build_sampling_prompt(
    const DialogueTurn& turn, const std::vector<std::pair<std::string, std::string>>& demos) {
    std::string p;
    p += kSamplingInstruction;
    p += "\nDemonstrations:\n";
    for (const auto& [input, output] : demos) {
        p += "Dialogue:\n";
        p += input;
        p += "\nRewritten Sentence: ";
        p += output;
        p += '\n';
    }
    p += "Annotated Sample:\nDialogue:\n";
    p += serialize_history(turn);
    p += "\nRewritten Sentence:";
    return p;
}

inline std::string build_direct_response_prompt(const std::string& rq, const DemoPool& pool) {
    pool.validate();
    std::string p;
    p += kResponseInstruction;
    p += "\nDemonstrations:\n";
    // fixed demonstration set: always the first five, so every candidate
    // rewrite is answered under an identical prompt prefix
    for (std::size_t i = 0; i < 5; ++i) {
        p += "Question:\n";
        p += pool.examples[i].first;
        p += "\nAnswer: ";
        p += pool.examples[i].second;
        p += '\n';
    }
    p += "Annotated Sample:\nQuestion:\n";
    p += rq;
    p += "\nAnswer:";
    return p;
}

inline std::string build_grounded_response_prompt(const DialogueTurn& turn, const std::string& rq,
                                                  const std::vector<std::string>& passages) {
    if (passages.size() != 3)
        throw ValidationError("grounded response needs exactly 3 passages, got " +
                              std::to_string(passages.size()));
    std::string p;
    p += kGroundedInstruction;
    p += "\nConversation History:\n";
    for (const auto& [q, a] : turn.history) {
        p += "Q: " + q + '\n';
        p += "A: " + a + '\n';
    }
    p += "Current Query: ";
    p += rq;
    p += "\nRelevant Passages:\n";
    for (std::size_t i = 0; i < 3; ++i) {
        p += "Passage " + std::to_string(i + 1) + ":\n";
        p += passages[i];
        p += '\n';
    }
    p += "Response:";
    return p;
}

struct SamplingOptions {
    double temperature = 1.0;
    int max_tokens = 256;
    unsigned max_concurrency = 4;
};

inline constexpr int kEmptyGenerationRetries = 3;

/// Samples K candidate rewrites for one turn. Each request gets its own
/// 5-demo draw keyed by (seed, turn, index); empty generations are retried
/// with a shifted request seed so a sampling service can produce a fresh
/// completion. Results keep request order.
inline std::vector<std::string> sample_rewrites(LlmBackend& backend, const DialogueTurn& turn,
                                                std::size_t k, const DemoPool& pool,
                                                std::uint64_t seed,
                                                const SamplingOptions& options = {}) {
    if (k < 2) throw ValidationError("turn " + turn.key() + ": K must be >= 2, got " +
                                     std::to_string(k));
    pool.validate();

    std::vector<std::string> prompts(k);
    for (std::size_t i = 0; i < k; ++i) {
        auto demos = select_demos(pool, 5, derive_seed(seed, turn.conv_id, turn.turn_id,
                                                       "rewrite-demos", i));
        prompts[i] = build_sampling_prompt(turn, demos);
    }

    std::vector<std::string> results(k);
    std::vector<std::size_t> pending(k);
    for (std::size_t i = 0; i < k; ++i) pending[i] = i;

    for (int attempt = 0; attempt <= kEmptyGenerationRetries && !pending.empty(); ++attempt) {
        std::vector<GenerationRequest> requests;
        requests.reserve(pending.size());
        for (auto i : pending) {
            GenerationRequest req;
            req.prompt = prompts[i];
            req.temperature = options.temperature;
            req.max_tokens = options.max_tokens;
            req.seed = static_cast<std::uint64_t>(i) + k * static_cast<std::uint64_t>(attempt);
            requests.push_back(std::move(req));
        }
        std::vector<std::string> generated;
        try {
            generated = backend.generate_many(requests, options.max_concurrency);
        } catch (const BackendError& e) {
            throw BackendError("turn " + turn.key() + ": " + e.what());
        }
        std::vector<std::size_t> still_pending;
        for (std::size_t r = 0; r < pending.size(); ++r) {
            std::string text(trim(generated[r]));
            if (text.empty())
                still_pending.push_back(pending[r]);
            else
                results[pending[r]] = std::move(text);
        }
        pending = std::move(still_pending);
    }
    if (!pending.empty())
        throw BackendError("turn " + turn.key() + ": candidate " + std::to_string(pending.front()) +
                           " still empty after " + std::to_string(kEmptyGenerationRetries + 1) +
                           " attempts");
    return results;
}

enum class ResponseMode { direct, grounded };

inline ResponseMode response_mode_from_string(std::string_view s) {
    if (s == "direct") return ResponseMode::direct;
    if (s == "grounded") return ResponseMode::grounded;
    throw ValidationError("unknown response mode: " + std::string(s) +
                          " (expected direct or grounded)");
}

namespace detail {

// retries whitespace-only completions with a bumped seed before giving up
inline std::string generate_nonempty(LlmBackend& backend, GenerationRequest request,
                                     const std::string& context) {
    for (int attempt = 0; attempt <= kEmptyGenerationRetries; ++attempt) {
        if (attempt > 0) request.seed = static_cast<std::uint64_t>(attempt);
        std::string text;
        try {
            text = backend.generate(request);
        } catch (const BackendError& e) {
            throw BackendError(context + ": " + e.what());
        }
        std::string trimmed(trim(text));
        if (!trimmed.empty()) return trimmed;
    }
    throw BackendError(context + ": empty generation after " +
                       std::to_string(kEmptyGenerationRetries + 1) + " attempts");
}

}  // namespace detail

/// One response for a candidate rewrite. Direct mode answers the rewrite as
/// a standalone question under a fixed 5-demo prompt; grounded mode adds the
/// dialogue history and exactly three retrieved passages.
inline std::string generate_response(LlmBackend& backend, const DialogueTurn& turn,
                                     const std::string& rq, ResponseMode mode,
                                     const std::vector<std::string>& passages,
                                     const DemoPool& pool, int max_tokens = 256) {
    GenerationRequest req;
    req.temperature = 0.0;
    req.max_tokens = max_tokens;
    if (mode == ResponseMode::direct) {
        req.prompt = build_direct_response_prompt(rq, pool);
    } else {
        req.prompt = build_grounded_response_prompt(turn, rq, passages);
    }
    return detail::generate_nonempty(backend, std::move(req),
                                     "turn " + turn.key() + " response");
}

/// Inference-side rewrite conditioned on one preference tag.
inline std::string generate_prefixed_rewrite(LlmBackend& backend, const DialogueTurn& turn,
                                             PreferenceTag tag, int max_tokens = 256) {
    GenerationRequest req;
    req.prompt = build_prompt(tag, turn);
    req.temperature = 0.0;
    req.max_tokens = max_tokens;
    return detail::generate_nonempty(backend, std::move(req),
                                     "turn " + turn.key() + " rewrite " +
                                         std::string(to_string(tag)));
}

}  // namespace cqr
