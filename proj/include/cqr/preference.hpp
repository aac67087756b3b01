#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cqr/common.hpp"
#include "cqr/corpus.hpp"
#include "cqr/scoring.hpp"

namespace cqr {

enum class PreferenceTag { rewrite, retrieval, response };

inline constexpr std::array<PreferenceTag, 3> kPreferenceTags = {
    PreferenceTag::rewrite, PreferenceTag::retrieval, PreferenceTag::response};

inline std::string_view to_string(PreferenceTag tag) {
    switch (tag) {
        case PreferenceTag::rewrite: return "[REWRITE]";
        case PreferenceTag::retrieval: return "[RETRIEVAL]";
        case PreferenceTag::response: return "[RESPONSE]";
    }
    throw ValidationError("invalid preference tag value");
}

inline PreferenceTag preference_tag_from_string(std::string_view s) {
    for (auto tag : kPreferenceTags)
        if (s == to_string(tag)) return tag;
    throw ValidationError("unknown preference tag: " + std::string(s) +
                          " (expected [REWRITE], [RETRIEVAL], or [RESPONSE])");
}

inline constexpr std::string_view kRewriteInstruction =
    "Please rewrite the last query of the following conversation to make it more complete.";

/// Training/inference prompt: tag, instruction, then the rendered dialogue,
/// one block per line.
inline std::string build_prompt(PreferenceTag tag, const DialogueTurn& turn) {
    std::string out;
    out += to_string(tag);
    out += '\n';
    out += kRewriteInstruction;
    out += '\n';
    out += serialize_history(turn);
    return out;
}

struct PreferenceRecord {
    PreferenceTag prefix;
    std::string prompt;
    std::string chosen;
    std::string rejected;
    std::string turn_key;  // provenance only; not exported
};

inline nlohmann::json preference_record_to_json(const PreferenceRecord& rec) {
    return {{"prefix", to_string(rec.prefix)},
            {"prompt", rec.prompt},
            {"chosen", rec.chosen},
            {"rejected", rec.rejected}};
}

inline PreferenceRecord preference_record_from_json(const nlohmann::json& j) {
    PreferenceRecord rec;
    try {
        rec.prefix = preference_tag_from_string(j.at("prefix").get<std::string>());
        rec.prompt = j.at("prompt").get<std::string>();
        rec.chosen = j.at("chosen").get<std::string>();
        rec.rejected = j.at("rejected").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("bad preference record: ") + e.what());
    }
    if (rec.chosen == rec.rejected)
        throw ValidationError("preference record with identical chosen and rejected text");
    return rec;
}

/// Builds up to three records for one scored candidate set, in tag order
/// [REWRITE], [RETRIEVAL], [RESPONSE]. A dimension is skipped when its scores
/// are all equal or when the argmax and argmin rewrites are the same string
/// (such a pair carries no preference signal); skips are counted into
/// `degenerate_count` when provided.
inline std::vector<PreferenceRecord> emit_preference_records(const CandidateSet& cs,
                                                             const ConsistencyScores& scores,
                                                             const DialogueTurn& turn,
                                                             std::size_t* degenerate_count = nullptr) {
    if (cs.key() != turn.key())
        throw ValidationError("candidate set " + cs.key() + " does not match turn " + turn.key());
    const std::size_t k = cs.candidates.size();
    const std::array<const std::vector<double>*, 3> dims = {&scores.rw, &scores.rt, &scores.rp};

    std::vector<PreferenceRecord> records;
    for (std::size_t d = 0; d < kPreferenceTags.size(); ++d) {
        auto sel = select_pair(*dims[d], k);
        const std::string& chosen = cs.candidates[sel.chosen].rq;
        const std::string& rejected = cs.candidates[sel.rejected].rq;
        if (sel.degenerate || chosen == rejected) {
            if (degenerate_count) ++*degenerate_count;
            continue;
        }
        records.push_back({kPreferenceTags[d], build_prompt(kPreferenceTags[d], turn), chosen,
                           rejected, turn.key()});
    }
    return records;
}

inline void save_preference_records(const std::vector<PreferenceRecord>& records,
                                    const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write preference file: " + path);
    for (const auto& rec : records) out << preference_record_to_json(rec).dump() << '\n';
    if (!out) throw ValidationError("failed writing preference file: " + path);
}

inline std::vector<PreferenceRecord> load_preference_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open preference file: " + path);
    std::vector<PreferenceRecord> records;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto j = detail::parse_line(line, path, lineno);
        try {
            records.push_back(preference_record_from_json(j));
        } catch (const ValidationError& e) {
            throw ValidationError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return records;
}

struct MdpoInputs {
    double logp_theta_pos = 0.0;
    double logp_ref_pos = 0.0;
    double logp_theta_neg = 0.0;
    double logp_ref_neg = 0.0;
    double beta = 0.1;
};

namespace detail {

inline void require_finite(double v, const char* name) {
    if (!std::isfinite(v)) throw ValidationError(std::string(name) + " must be finite");
}

// -log sigma(z), stable for |z| up to at least 700
inline double neg_log_sigmoid(double z) {
    return z >= 0.0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
}

inline double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

}  // namespace detail

/// r̂ = beta * (logp_theta - logp_ref).
inline double implicit_reward(double logp_theta, double logp_ref, double beta) {
    detail::require_finite(logp_theta, "logp_theta");
    detail::require_finite(logp_ref, "logp_ref");
    detail::require_finite(beta, "beta");
    if (beta <= 0.0) throw ValidationError("beta must be > 0");
    return beta * (logp_theta - logp_ref);
}

/// Preference-pair logistic loss over the beta-scaled log-ratio margin:
/// -log sigma(beta * [(logp_theta_pos - logp_ref_pos) - (logp_theta_neg - logp_ref_neg)]).
inline double mdpo_loss(const MdpoInputs& in) {
    detail::require_finite(in.logp_theta_pos, "logp_theta_pos");
    detail::require_finite(in.logp_ref_pos, "logp_ref_pos");
    detail::require_finite(in.logp_theta_neg, "logp_theta_neg");
    detail::require_finite(in.logp_ref_neg, "logp_ref_neg");
    detail::require_finite(in.beta, "beta");
    if (in.beta <= 0.0) throw ValidationError("beta must be > 0");
    const double margin =
        (in.logp_theta_pos - in.logp_ref_pos) - (in.logp_theta_neg - in.logp_ref_neg);
    return detail::neg_log_sigmoid(in.beta * margin);
}

/// d(mdpo_loss)/d(margin) = -beta * sigma(-beta * margin).
inline double mdpo_margin_gradient(double margin, double beta) {
    detail::require_finite(margin, "margin");
    detail::require_finite(beta, "beta");
    if (beta <= 0.0) throw ValidationError("beta must be > 0");
    return -beta * detail::sigmoid(-beta * margin);
}

}  // namespace cqr
