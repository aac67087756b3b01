#pragma once

#include <algorithm>
#include <array>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "cqr/common.hpp"

namespace cqr {

/// Tokenizer + BM25 parameters. The same struct is embedded in a persisted
/// index so that queries are always tokenized the way the index was built.
struct IndexConfig {
    double k1 = 0.9;
    double b = 0.4;
    bool lowercase = true;
    int min_token_len = 1;
    bool remove_stopwords = false;
    bool stem = false;

    void validate() const {
        if (!(k1 > 0.0)) throw ValidationError("IndexConfig: k1 must be > 0");
        if (b < 0.0 || b > 1.0) throw ValidationError("IndexConfig: b must be in [0,1]");
        if (min_token_len < 1) throw ValidationError("IndexConfig: min_token_len must be >= 1");
    }

    bool tokenizer_equal(const IndexConfig& o) const {
        return lowercase == o.lowercase && min_token_len == o.min_token_len &&
               remove_stopwords == o.remove_stopwords && stem == o.stem;
    }
};

namespace detail {

inline bool is_token_char(unsigned char c) {
    // ASCII alphanumerics plus any non-ASCII byte; everything else splits.
    return std::isalnum(c) || c >= 0x80;
}

inline const std::unordered_set<std::string>& english_stopwords() {
    // Lucene's classic 33-word English list.
    static const std::unordered_set<std::string> words = {
        "a",     "an",   "and",  "are", "as",   "at",   "be",   "but",  "by",
        "for",   "if",   "in",   "into", "is",  "it",   "no",   "not",  "of",
        "on",    "or",   "such", "that", "the", "their", "then", "there", "these",
        "they",  "this", "to",   "was",  "will", "with"};
    return words;
}

// Porter (1980) stemmer over lowercase ASCII words. Non-ASCII tokens are
// returned unchanged.
class PorterStemmer {
public:
    static std::string stem(std::string w) {
        if (w.size() <= 2) return w;
        for (unsigned char c : w)
            if (c >= 0x80) return w;
        PorterStemmer p(std::move(w));
        p.step1a();
        p.step1b();
        p.step1c();
        p.step2();
        p.step3();
        p.step4();
        p.step5();
        return std::move(p.word_);
    }

private:
    explicit PorterStemmer(std::string w) : word_(std::move(w)) {}

    std::string word_;

    bool is_consonant(std::size_t i) const {
        char c = word_[i];
        if (c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u') return false;
        if (c == 'y') return i == 0 ? true : !is_consonant(i - 1);
        return true;
    }

    // Number of VC sequences in word_[0, end).
    int measure(std::size_t end) const {
        int m = 0;
        std::size_t i = 0;
        while (i < end && is_consonant(i)) ++i;
        while (i < end) {
            while (i < end && !is_consonant(i)) ++i;
            if (i >= end) break;
            ++m;
            while (i < end && is_consonant(i)) ++i;
        }
        return m;
    }

    bool has_vowel(std::size_t end) const {
        for (std::size_t i = 0; i < end; ++i)
            if (!is_consonant(i)) return true;
        return false;
    }

    bool double_consonant_at_end() const {
        std::size_t n = word_.size();
        return n >= 2 && word_[n - 1] == word_[n - 2] && is_consonant(n - 1);
    }

    // consonant-vowel-consonant ending where the final consonant is not w, x, y.
    bool cvc_at_end(std::size_t end) const {
        if (end < 3) return false;
        if (!is_consonant(end - 3) || is_consonant(end - 2) || !is_consonant(end - 1)) return false;
        char c = word_[end - 1];
        return c != 'w' && c != 'x' && c != 'y';
    }

    bool ends_with(std::string_view suf) const {
        return word_.size() >= suf.size() &&
               std::string_view(word_).substr(word_.size() - suf.size()) == suf;
    }

    std::size_t stem_len(std::string_view suf) const { return word_.size() - suf.size(); }

    bool replace_if_measure(std::string_view suf, std::string_view repl, int min_m) {
        if (!ends_with(suf)) return false;
        std::size_t k = stem_len(suf);
        if (measure(k) > min_m) {
            word_.resize(k);
            word_.append(repl);
            return true;
        }
        return true;  // suffix matched; rule chain stops either way
    }

    void step1a() {
        if (ends_with("sses")) {
            word_.resize(word_.size() - 2);
        } else if (ends_with("ies")) {
            word_.resize(word_.size() - 2);
        } else if (ends_with("ss")) {
        } else if (ends_with("s")) {
            word_.resize(word_.size() - 1);
        }
    }

    void step1b() {
        if (ends_with("eed")) {
            if (measure(stem_len("eed")) > 0) word_.resize(word_.size() - 1);
            return;
        }
        bool removed = false;
        if (ends_with("ed") && has_vowel(stem_len("ed"))) {
            word_.resize(word_.size() - 2);
            removed = true;
        } else if (ends_with("ing") && has_vowel(stem_len("ing"))) {
            word_.resize(word_.size() - 3);
            removed = true;
        }
        if (!removed) return;
        if (ends_with("at") || ends_with("bl") || ends_with("iz")) {
            word_.push_back('e');
        } else if (double_consonant_at_end()) {
            char c = word_.back();
            if (c != 'l' && c != 's' && c != 'z') word_.pop_back();
        } else if (measure(word_.size()) == 1 && cvc_at_end(word_.size())) {
            word_.push_back('e');
        }
    }

    void step1c() {
        if (ends_with("y") && has_vowel(word_.size() - 1)) word_.back() = 'i';
    }

    void step2() {
        static const std::pair<std::string_view, std::string_view> rules[] = {
            {"ational", "ate"}, {"tional", "tion"}, {"enci", "ence"}, {"anci", "ance"},
            {"izer", "ize"},    {"abli", "able"},   {"alli", "al"},   {"entli", "ent"},
            {"eli", "e"},       {"ousli", "ous"},   {"ization", "ize"}, {"ation", "ate"},
            {"ator", "ate"},    {"alism", "al"},    {"iveness", "ive"}, {"fulness", "ful"},
            {"ousness", "ous"}, {"aliti", "al"},    {"iviti", "ive"},  {"biliti", "ble"}};
        for (const auto& [suf, repl] : rules)
            if (ends_with(suf)) {
                replace_if_measure(suf, repl, 0);
                return;
            }
    }

    void step3() {
        static const std::pair<std::string_view, std::string_view> rules[] = {
            {"icate", "ic"}, {"ative", ""}, {"alize", "al"}, {"iciti", "ic"},
            {"ical", "ic"},  {"ful", ""},   {"ness", ""}};
        for (const auto& [suf, repl] : rules)
            if (ends_with(suf)) {
                replace_if_measure(suf, repl, 0);
                return;
            }
    }

    void step4() {
        static const std::string_view sufs[] = {"al",    "ance", "ence", "er",  "ic",  "able",
                                                "ible",  "ant",  "ement", "ment", "ent", "ou",
                                                "ism",   "ate",  "iti",  "ous", "ive", "ize"};
        if (ends_with("ion")) {
            std::size_t k = stem_len("ion");
            if (k >= 1 && (word_[k - 1] == 's' || word_[k - 1] == 't') && measure(k) > 1)
                word_.resize(k);
            return;
        }
        for (auto suf : sufs)
            if (ends_with(suf)) {
                if (measure(stem_len(suf)) > 1) word_.resize(stem_len(suf));
                return;
            }
    }

    void step5() {
        if (ends_with("e")) {
            std::size_t k = word_.size() - 1;
            int m = measure(k);
            if (m > 1 || (m == 1 && !cvc_at_end(k))) word_.resize(k);
        }
        if (word_.size() >= 2 && word_.back() == 'l' && double_consonant_at_end() &&
            measure(word_.size()) > 1)
            word_.pop_back();
    }
};

}  // namespace detail

/// Split on any character that is not an ASCII alphanumeric (non-ASCII bytes
/// stay inside tokens), lowercase when configured, drop tokens shorter than
/// min_token_len, then apply the optional stopword and stemming passes.
inline std::vector<std::string> tokenize(std::string_view text, const IndexConfig& config = {}) {
    std::vector<std::string> tokens;
    std::string cur;
    auto flush = [&] {
        if (static_cast<int>(cur.size()) >= config.min_token_len &&
            (!config.remove_stopwords || !detail::english_stopwords().count(cur))) {
            if (config.stem)
                tokens.push_back(detail::PorterStemmer::stem(std::move(cur)));
            else
                tokens.push_back(std::move(cur));
        }
        cur.clear();
    };
    for (unsigned char c : text) {
        if (detail::is_token_char(c)) {
            cur.push_back(config.lowercase ? static_cast<char>(std::tolower(c)) : static_cast<char>(c));
        } else if (!cur.empty()) {
            flush();
        }
    }
    if (!cur.empty()) flush();
    return tokens;
}

inline std::size_t token_count(std::string_view text, const IndexConfig& config = {}) {
    return tokenize(text, config).size();
}

}  // namespace cqr
