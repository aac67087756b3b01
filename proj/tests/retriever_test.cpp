#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

#include "cqr/retriever.hpp"

using cqr::IndexConfig;
using cqr::InvertedIndex;
using cqr::PassageCollection;

namespace {

PassageCollection small_corpus() {
    PassageCollection corpus;
    corpus.add({"d1", "the quick brown fox"});
    corpus.add({"d2", "the lazy dog"});
    corpus.add({"d3", "quick quick fox"});
    corpus.add({"d4", "an unrelated passage about cats"});
    return corpus;
}

// per-document rescoring; ranks every doc, sorts, truncates
cqr::RankedList brute_force_search(const InvertedIndex& index, const PassageCollection& corpus,
                                   const std::string& query, std::size_t k) {
    auto tokens = cqr::tokenize(query, index.config());
    std::vector<std::pair<std::string, double>> scored;
    for (std::uint32_t d = 0; d < index.doc_count(); ++d) {
        double s = cqr::bm25_score(index, tokens, d);
        if (s > 0.0) scored.emplace_back(index.doc_id(d), s);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (scored.size() > k) scored.resize(k);
    cqr::RankedList out;
    for (auto& [pid, s] : scored) out.entries.push_back({pid, s});
    return out;
}

std::string random_doc(std::mt19937_64& rng, const std::vector<std::string>& vocab,
                       std::size_t max_len) {
    std::size_t len = 1 + rng() % max_len;
    std::string text;
    for (std::size_t i = 0; i < len; ++i) {
        if (i) text += ' ';
        text += vocab[rng() % vocab.size()];
    }
    return text;
}

}  // namespace

TEST_CASE("idf follows the non-negative formulation") {
    auto corpus = small_corpus();
    auto index = cqr::build_index(corpus);
    // 4 docs, "quick" appears in 2: ln(1 + (4 - 2 + 0.5) / (2 + 0.5)) = ln(2)
    CHECK(index.idf(2) == Catch::Approx(std::log(2.0)).epsilon(1e-12));
    // 3 docs with df 1 gives ln(1 + 2.5/1.5) = ln(8/3)
    cqr::PassageCollection three;
    for (int i = 0; i < 3; ++i) three.add({"p" + std::to_string(i), "filler"});
    auto idx3 = cqr::build_index(three);
    CHECK(idx3.idf(1) == Catch::Approx(0.9808292530117262).epsilon(1e-12));
    // a term present in every document still scores positive
    CHECK(index.idf(4) > 0.0);
}

TEST_CASE("index statistics") {
    auto corpus = small_corpus();
    auto index = cqr::build_index(corpus);
    CHECK(index.doc_count() == 4);
    CHECK(index.doc_length(0) == 4);
    CHECK(index.doc_length(2) == 3);
    CHECK(index.avg_doc_len() == Catch::Approx((4 + 3 + 3 + 5) / 4.0));
    REQUIRE(index.postings("quick") != nullptr);
    CHECK(index.postings("quick")->size() == 2);
    CHECK(index.postings("quick")->at(1).tf == 2);
    CHECK(index.postings("zebra") == nullptr);
}

TEST_CASE("empty corpus is rejected") {
    PassageCollection corpus;
    CHECK_THROWS_AS(cqr::build_index(corpus), cqr::ValidationError);
}

TEST_CASE("search returns only matching docs, best first") {
    auto corpus = small_corpus();
    auto index = cqr::build_index(corpus);
    auto hits = cqr::search(index, "quick fox", 10);
    REQUIRE(hits.size() == 2);
    CHECK(hits[0].pid == "d3");  // higher tf for "quick", shorter doc
    CHECK(hits[1].pid == "d1");
    CHECK(hits[0].score > hits[1].score);
}

TEST_CASE("k truncates the result list") {
    auto corpus = small_corpus();
    auto index = cqr::build_index(corpus);
    auto hits = cqr::search(index, "the quick lazy fox dog", 1);
    REQUIRE(hits.size() == 1);
    CHECK_THROWS_AS(cqr::search(index, "fox", 0), cqr::ValidationError);
}

TEST_CASE("score ties break by ascending passage id") {
    PassageCollection corpus;
    corpus.add({"z", "common term"});
    corpus.add({"a", "common term"});
    corpus.add({"m", "common term"});
    auto index = cqr::build_index(corpus);
    auto hits = cqr::search(index, "common", 3);
    REQUIRE(hits.size() == 3);
    CHECK(hits[0].pid == "a");
    CHECK(hits[1].pid == "m");
    CHECK(hits[2].pid == "z");
    CHECK(hits[0].score == hits[2].score);
}

TEST_CASE("duplicate query tokens contribute per occurrence") {
    auto corpus = small_corpus();
    auto index = cqr::build_index(corpus);
    auto once = cqr::search(index, "fox", 10);
    auto twice = cqr::search(index, "fox fox", 10);
    REQUIRE(once.size() == twice.size());
    for (std::size_t i = 0; i < once.size(); ++i) {
        CHECK(twice[i].pid == once[i].pid);
        CHECK(twice[i].score == Catch::Approx(2.0 * once[i].score).epsilon(1e-12));
    }
}

TEST_CASE("single-term score never decreases when the doc gains an occurrence") {
    std::mt19937_64 rng(7);
    std::vector<std::string> vocab = {"alpha", "beta", "gamma", "delta", "epsilon"};
    for (int trial = 0; trial < 50; ++trial) {
        PassageCollection base;
        std::string text = random_doc(rng, vocab, 12);
        base.add({"target", text + " alpha"});
        base.add({"other", random_doc(rng, vocab, 12)});
        PassageCollection more;
        more.add({"target", text + " alpha alpha"});
        more.add({"other", base.at(1).text});
        auto i1 = cqr::build_index(base);
        auto i2 = cqr::build_index(more);
        auto t1 = cqr::tokenize("alpha", i1.config());
        CHECK(cqr::bm25_score(i2, t1, 0) >= cqr::bm25_score(i1, t1, 0));
    }
}

TEST_CASE("search agrees with per-document rescoring on random corpora") {
    std::mt19937_64 rng(42);
    std::vector<std::string> vocab;
    for (int i = 0; i < 40; ++i) vocab.push_back("w" + std::to_string(i));
    for (int trial = 0; trial < 10; ++trial) {
        PassageCollection corpus;
        std::size_t n = 50 + rng() % 150;
        for (std::size_t d = 0; d < n; ++d)
            corpus.add({"doc" + std::to_string(d), random_doc(rng, vocab, 30)});
        auto index = cqr::build_index(corpus);
        for (int q = 0; q < 20; ++q) {
            std::string query = random_doc(rng, vocab, 4);
            auto fast = cqr::search(index, query, 15);
            auto slow = brute_force_search(index, corpus, query, 15);
            REQUIRE(fast.size() == slow.size());
            for (std::size_t i = 0; i < fast.size(); ++i) {
                CHECK(fast[i].pid == slow[i].pid);
                CHECK(fast[i].score == slow[i].score);  // bitwise, not approximate
            }
        }
    }
}

TEST_CASE("build is deterministic across thread counts") {
    std::mt19937_64 rng(9);
    std::vector<std::string> vocab;
    for (int i = 0; i < 30; ++i) vocab.push_back("t" + std::to_string(i));
    PassageCollection corpus;
    for (int d = 0; d < 200; ++d)
        corpus.add({"d" + std::to_string(d), random_doc(rng, vocab, 25)});
    auto i1 = cqr::build_index(corpus, {}, 1);
    auto i4 = cqr::build_index(corpus, {}, 4);
    auto i9 = cqr::build_index(corpus, {}, 9);
    CHECK(cqr::index_fingerprint(i1) == cqr::index_fingerprint(i4));
    CHECK(cqr::index_fingerprint(i1) == cqr::index_fingerprint(i9));
}

TEST_CASE("index round-trips through its binary file") {
    namespace fs = std::filesystem;
    auto corpus = small_corpus();
    IndexConfig cfg;
    cfg.remove_stopwords = true;
    cfg.stem = true;
    auto index = cqr::build_index(corpus, cfg);
    fs::path p = fs::temp_directory_path() / ("cqr_idx_" + std::to_string(::getpid()) + ".bin");
    cqr::save_index(index, p.string());
    auto loaded = cqr::load_index(p.string());
    CHECK(loaded.doc_count() == index.doc_count());
    CHECK(loaded.avg_doc_len() == index.avg_doc_len());
    CHECK(loaded.config().stem == true);
    CHECK(cqr::index_fingerprint(loaded) == cqr::index_fingerprint(index));
    auto q1 = cqr::search(index, "quick foxes", 5);
    auto q2 = cqr::search(loaded, "quick foxes", 5);
    REQUIRE(q1.size() == q2.size());
    for (std::size_t i = 0; i < q1.size(); ++i) {
        CHECK(q1[i].pid == q2[i].pid);
        CHECK(q1[i].score == q2[i].score);
    }
    fs::remove(p);
}

TEST_CASE("loading checks tokenizer settings but allows new scoring params") {
    namespace fs = std::filesystem;
    auto corpus = small_corpus();
    auto index = cqr::build_index(corpus);
    fs::path p = fs::temp_directory_path() / ("cqr_idx2_" + std::to_string(::getpid()) + ".bin");
    cqr::save_index(index, p.string());

    IndexConfig rescored;
    rescored.k1 = 0.82;
    rescored.b = 0.68;
    auto loaded = cqr::load_index(p.string(), rescored);
    CHECK(loaded.config().k1 == 0.82);
    CHECK(loaded.config().b == 0.68);

    IndexConfig mismatched;
    mismatched.stem = true;
    CHECK_THROWS_AS(cqr::load_index(p.string(), mismatched), cqr::ValidationError);
    fs::remove(p);
}

TEST_CASE("corrupt index files are detected") {
    namespace fs = std::filesystem;
    auto corpus = small_corpus();
    auto index = cqr::build_index(corpus);
    fs::path p = fs::temp_directory_path() / ("cqr_idx3_" + std::to_string(::getpid()) + ".bin");
    cqr::save_index(index, p.string());

    std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(40);
    f.put('\x7f');
    f.close();
    CHECK_THROWS_AS(cqr::load_index(p.string()), cqr::ValidationError);

    CHECK_THROWS_AS(cqr::load_index("/nonexistent/idx.bin"), cqr::ValidationError);
    fs::remove(p);
}
