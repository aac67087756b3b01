#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include "cqr/common.hpp"
#include "cqr/corpus.hpp"
#include "cqr/ranked_list.hpp"
#include "cqr/tokenizer.hpp"

namespace cqr {

struct Posting {
    std::uint32_t doc;  // ordinal
    std::uint32_t tf;
};

/// Immutable inverted index over a passage collection. Built once (optionally
/// sharded across threads with a deterministic merge), then safe to share
/// across concurrent searches.
class InvertedIndex {
public:
    const IndexConfig& config() const { return config_; }
    IndexConfig& config() { return config_; }

    std::size_t doc_count() const { return doc_ids_.size(); }
    double avg_doc_len() const { return avg_doc_len_; }
    std::uint32_t doc_length(std::uint32_t ordinal) const { return doc_lengths_.at(ordinal); }
    const std::string& doc_id(std::uint32_t ordinal) const { return doc_ids_.at(ordinal); }

    const std::vector<Posting>* postings(const std::string& term) const {
        auto it = postings_.find(term);
        return it == postings_.end() ? nullptr : &it->second;
    }

    const std::unordered_map<std::string, std::vector<Posting>>& postings_map() const {
        return postings_;
    }

    std::size_t term_count() const { return postings_.size(); }

    /// Inverse document frequency, Lucene-style: ln(1 + (N - df + 0.5) / (df + 0.5)).
    /// Never negative, so a matching term always contributes a positive score.
    double idf(std::size_t df) const {
        double n = static_cast<double>(doc_count());
        return std::log(1.0 + (n - static_cast<double>(df) + 0.5) / (static_cast<double>(df) + 0.5));
    }

    friend InvertedIndex build_index(const PassageCollection&, const IndexConfig&, unsigned);
    friend InvertedIndex load_index(const std::string&);

private:
    std::unordered_map<std::string, std::vector<Posting>> postings_;
    std::vector<std::uint32_t> doc_lengths_;
    std::vector<std::string> doc_ids_;
    double avg_doc_len_ = 0.0;
    IndexConfig config_;
};

/// Tokenizes every passage and accumulates term frequencies. `threads` = 0
/// picks a thread count from the hardware; the shard merge is in ordinal
/// order, so the result is identical for any thread count.
inline InvertedIndex build_index(const PassageCollection& corpus, const IndexConfig& config = {},
                                 unsigned threads = 0) {
    config.validate();
    if (corpus.empty()) throw ValidationError("cannot build index over empty corpus");

    InvertedIndex index;
    index.config_ = config;
    const std::size_t n = corpus.size();
    index.doc_ids_.resize(n);
    index.doc_lengths_.resize(n);

    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));

    using ShardMap = std::unordered_map<std::string, std::vector<Posting>>;
    std::vector<ShardMap> shards(threads);
    std::vector<std::thread> workers;
    const std::size_t chunk = (n + threads - 1) / threads;

    for (unsigned s = 0; s < threads; ++s) {
        workers.emplace_back([&, s] {
            const std::size_t lo = s * chunk;
            const std::size_t hi = std::min(n, lo + chunk);
            ShardMap& local = shards[s];
            std::unordered_map<std::string, std::uint32_t> tf;
            for (std::size_t i = lo; i < hi; ++i) {
                const Passage& p = corpus.at(i);
                index.doc_ids_[i] = p.id;
                auto tokens = tokenize(p.text, config);
                index.doc_lengths_[i] = static_cast<std::uint32_t>(tokens.size());
                tf.clear();
                for (auto& t : tokens) ++tf[t];
                for (auto& [term, freq] : tf)
                    local[term].push_back({static_cast<std::uint32_t>(i), freq});
            }
            // postings within a shard must be ordinal-sorted for the merge
            for (auto& [term, list] : local)
                std::sort(list.begin(), list.end(),
                          [](const Posting& a, const Posting& b) { return a.doc < b.doc; });
        });
    }
    for (auto& w : workers) w.join();

    // shards cover disjoint ascending ordinal ranges; appending in shard order
    // keeps every postings list sorted by ordinal
    for (auto& shard : shards) {
        for (auto& [term, list] : shard) {
            auto& dst = index.postings_[term];
            dst.insert(dst.end(), list.begin(), list.end());
        }
    }

    std::uint64_t total = 0;
    for (auto len : index.doc_lengths_) total += len;
    index.avg_doc_len_ = static_cast<double>(total) / static_cast<double>(n);
    return index;
}

/// BM25 score of one document for a token list. Duplicate query tokens
/// contribute once per occurrence. Terms absent from the document add 0.
inline double bm25_score(const InvertedIndex& index, const std::vector<std::string>& query_tokens,
                         std::uint32_t ordinal) {
    const IndexConfig& cfg = index.config();
    const double norm = 1.0 - cfg.b + cfg.b * index.doc_length(ordinal) / index.avg_doc_len();
    double score = 0.0;
    for (const auto& token : query_tokens) {
        const auto* list = index.postings(token);
        if (!list) continue;
        auto it = std::lower_bound(list->begin(), list->end(), ordinal,
                                   [](const Posting& p, std::uint32_t d) { return p.doc < d; });
        if (it == list->end() || it->doc != ordinal) continue;
        // same expression shape as search() so both give bit-identical sums
        const double w = index.idf(list->size()) * (cfg.k1 + 1.0);
        score += w * it->tf / (it->tf + cfg.k1 * norm);
    }
    return score;
}

/// Top-k search by BM25. Only documents with score > 0 are returned; ties
/// break by ascending passage id so that rankings are reproducible.
inline RankedList search(const InvertedIndex& index, const std::string& query, std::size_t k) {
    if (k < 1) throw ValidationError("search: k must be >= 1");
    const IndexConfig& cfg = index.config();
    const auto query_tokens = tokenize(query, cfg);

    // term-at-a-time accumulation; per-document addition order equals query
    // token order, which keeps scores bit-identical with per-doc rescoring
    std::vector<double> acc(index.doc_count(), 0.0);
    std::vector<std::uint32_t> touched;
    for (const auto& token : query_tokens) {
        const auto* list = index.postings(token);
        if (!list) continue;
        const double w = index.idf(list->size()) * (cfg.k1 + 1.0);
        for (const Posting& p : *list) {
            const double norm = 1.0 - cfg.b + cfg.b * index.doc_length(p.doc) / index.avg_doc_len();
            if (acc[p.doc] == 0.0) touched.push_back(p.doc);
            acc[p.doc] += w * p.tf / (p.tf + cfg.k1 * norm);
        }
    }

    auto better = [&](std::uint32_t a, std::uint32_t b) {
        if (acc[a] != acc[b]) return acc[a] > acc[b];
        return index.doc_id(a) < index.doc_id(b);
    };

    // bounded selection: with `better` as the ordering, the heap front is the
    // worst of the kept k, which is the eviction candidate
    std::vector<std::uint32_t> heap;
    heap.reserve(std::min(k, touched.size()) + 1);
    for (auto d : touched) {
        if (heap.size() < k) {
            heap.push_back(d);
            std::push_heap(heap.begin(), heap.end(), better);
        } else if (better(d, heap.front())) {
            std::pop_heap(heap.begin(), heap.end(), better);
            heap.back() = d;
            std::push_heap(heap.begin(), heap.end(), better);
        }
    }
    std::sort(heap.begin(), heap.end(), better);

    RankedList out;
    out.entries.reserve(heap.size());
    for (auto d : heap) out.entries.push_back({index.doc_id(d), acc[d]});
    return out;
}

namespace detail {

struct ByteWriter {
    std::string buf;
    void u8(std::uint8_t v) { buf.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        u64(bits);
    }
    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        buf.append(s);
    }
};

struct ByteReader {
    const std::string& buf;
    std::size_t pos = 0;
    explicit ByteReader(const std::string& b) : buf(b) {}
    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw ValidationError("index file truncated");
    }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(buf[pos++]);
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
        return v;
    }
    double f64() {
        std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, sizeof(v));
        return v;
    }
    std::string str() {
        auto n = u32();
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace detail

inline constexpr char kIndexMagic[8] = {'C', 'Q', 'R', 'I', 'D', 'X', '0', '1'};

namespace detail {

// terms are emitted in sorted order so equal indexes serialize to equal bytes
inline std::string serialize_index_payload(const InvertedIndex& index);

}  // namespace detail

inline void save_index(const InvertedIndex& index, const std::string& path) {
    const std::string payload = detail::serialize_index_payload(index);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write index file: " + path);
    out.write(kIndexMagic, sizeof(kIndexMagic));
    std::uint64_t fp = fnv1a(payload.data(), payload.size());
    char fpbuf[8];
    for (int i = 0; i < 8; ++i) fpbuf[i] = static_cast<char>((fp >> (8 * i)) & 0xff);
    out.write(fpbuf, 8);
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw ValidationError("failed writing index file: " + path);
}

inline std::string detail::serialize_index_payload(const InvertedIndex& index) {
    ByteWriter w;
    const IndexConfig& cfg = index.config();
    w.f64(cfg.k1);
    w.f64(cfg.b);
    w.u8(cfg.lowercase ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(cfg.min_token_len));
    w.u8(cfg.remove_stopwords ? 1 : 0);
    w.u8(cfg.stem ? 1 : 0);

    w.u32(static_cast<std::uint32_t>(index.doc_count()));
    for (std::uint32_t d = 0; d < index.doc_count(); ++d) {
        w.str(index.doc_id(d));
        w.u32(index.doc_length(d));
    }

    const auto& map = index.postings_map();
    std::vector<const std::string*> terms;
    terms.reserve(map.size());
    for (const auto& [term, list] : map) terms.push_back(&term);
    std::sort(terms.begin(), terms.end(), [](const auto* a, const auto* b) { return *a < *b; });

    w.u64(terms.size());
    for (const auto* term : terms) {
        const auto& list = map.at(*term);
        w.str(*term);
        w.u64(list.size());
        for (const Posting& p : list) {
            w.u32(p.doc);
            w.u32(p.tf);
        }
    }
    return w.buf;
}

inline InvertedIndex load_index(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open index file: " + path);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (data.size() < 16 || std::memcmp(data.data(), kIndexMagic, 8) != 0)
        throw ValidationError("not an index file: " + path);

    std::uint64_t stored_fp = 0;
    for (int i = 0; i < 8; ++i)
        stored_fp |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[8 + i])) << (8 * i);
    std::string payload = data.substr(16);
    if (fnv1a(payload.data(), payload.size()) != stored_fp)
        throw ValidationError("index file fingerprint mismatch (corrupt?): " + path);

    detail::ByteReader r(payload);
    InvertedIndex index;
    index.config_.k1 = r.f64();
    index.config_.b = r.f64();
    index.config_.lowercase = r.u8() != 0;
    index.config_.min_token_len = static_cast<int>(r.u32());
    index.config_.remove_stopwords = r.u8() != 0;
    index.config_.stem = r.u8() != 0;

    std::uint32_t docs = r.u32();
    index.doc_ids_.resize(docs);
    index.doc_lengths_.resize(docs);
    std::uint64_t total = 0;
    for (std::uint32_t d = 0; d < docs; ++d) {
        index.doc_ids_[d] = r.str();
        index.doc_lengths_[d] = r.u32();
        total += index.doc_lengths_[d];
    }
    index.avg_doc_len_ = docs ? static_cast<double>(total) / docs : 0.0;

    std::uint64_t terms = r.u64();
    index.postings_.reserve(terms);
    for (std::uint64_t t = 0; t < terms; ++t) {
        std::string term = r.str();
        std::uint64_t len = r.u64();
        std::vector<Posting> list(len);
        for (auto& p : list) {
            p.doc = r.u32();
            p.tf = r.u32();
        }
        index.postings_.emplace(std::move(term), std::move(list));
    }
    return index;
}

/// Loads an index and checks its tokenizer settings against `expected`. The
/// stored postings were produced under the stored tokenizer, so a mismatch
/// there is unrecoverable; k1 and b only affect scoring and are taken from
/// `expected` instead.
inline InvertedIndex load_index(const std::string& path, const IndexConfig& expected) {
    InvertedIndex index = load_index(path);
    if (!index.config().tokenizer_equal(expected))
        throw ValidationError("index tokenizer settings do not match requested configuration: " +
                              path);
    index.config().k1 = expected.k1;
    index.config().b = expected.b;
    index.config().validate();
    return index;
}

/// Fingerprint of the serialized form; equal indexes give equal fingerprints.
inline std::uint64_t index_fingerprint(const InvertedIndex& index) {
    const std::string payload = detail::serialize_index_payload(index);
    return fnv1a(payload.data(), payload.size());
}

}  // namespace cqr
