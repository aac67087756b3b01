#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "cqr/fusion.hpp"

TEST_CASE("concat_queries trims parts and joins with single spaces") {
    auto fq = cqr::concat_queries({" a b ", "c"});
    REQUIRE(fq.text == "a b c");
    REQUIRE(fq.parts == std::vector<std::string>{"a b", "c"});
    REQUIRE(cqr::concat_queries({"solo"}).text == "solo");
    REQUIRE(cqr::concat_queries({"\tx\t", "  y  ", "z"}).text == "x y z");
    REQUIRE_THROWS_WITH(cqr::concat_queries({"ok", "   "}),
                        Catch::Matchers::ContainsSubstring("part 1"));
    REQUIRE_THROWS_AS(cqr::concat_queries({}), cqr::ValidationError);
}

TEST_CASE("concatenation is associative in effect") {
    const std::string a = "first part", b = "second", c = "third bit";
    auto nested = cqr::concat_queries({cqr::concat_queries({a, b}).text, c});
    auto flat = cqr::concat_queries({a, b, c});
    REQUIRE(nested.text == flat.text);
}

TEST_CASE("expand_query appends the pseudo-response when it has content") {
    REQUIRE(cqr::expand_query("who won", " the 1998 final was won by France ") ==
            "who won the 1998 final was won by France");
    REQUIRE(cqr::expand_query("who won", "") == "who won");
    REQUIRE(cqr::expand_query("who won", "  \t ") == "who won");
    REQUIRE_THROWS_AS(cqr::expand_query("  ", "text"), cqr::ValidationError);
}

namespace {

cqr::RankedList make_list(const std::vector<std::string>& pids) {
    cqr::RankedList list;
    for (std::size_t i = 0; i < pids.size(); ++i)
        list.entries.push_back({pids[i], 100.0 - static_cast<double>(i)});
    return list;
}

}  // namespace

TEST_CASE("rrf sums reciprocal ranks and breaks ties by passage id") {
    auto fused = cqr::rrf({make_list({"pA", "pB", "pC"}), make_list({"pB", "pA", "pD"})});
    REQUIRE(fused.size() == 4);
    // pA and pB both score 1/61 + 1/62; the id decides their order
    REQUIRE(fused[0].pid == "pA");
    REQUIRE(fused[1].pid == "pB");
    REQUIRE(fused[0].score == 1.0 / 61.0 + 1.0 / 62.0);
    REQUIRE(fused[1].score == fused[0].score);
    // pC and pD both score 1/63
    REQUIRE(fused[2].pid == "pC");
    REQUIRE(fused[3].pid == "pD");
    REQUIRE(fused[2].score == 1.0 / 63.0);
}

TEST_CASE("rrf with a single list is a monotone rescoring") {
    auto fused = cqr::rrf({make_list({"x", "y", "z"})}, 60);
    REQUIRE(fused[0].pid == "x");
    REQUIRE(fused[0].score == 1.0 / 61.0);
    REQUIRE(fused[1].pid == "y");
    REQUIRE(fused[1].score == 1.0 / 62.0);
    REQUIRE(fused[2].pid == "z");
}

TEST_CASE("rrf agrees with a brute-force accumulation") {
    std::mt19937_64 rng(404);
    for (int trial = 0; trial < 25; ++trial) {
        std::vector<cqr::RankedList> lists;
        const std::size_t n_lists = 2 + rng() % 3;
        for (std::size_t l = 0; l < n_lists; ++l) {
            std::vector<std::string> pool;
            for (int p = 0; p < 40; ++p) pool.push_back("p" + std::to_string(p));
            std::shuffle(pool.begin(), pool.end(), rng);
            pool.resize(1 + rng() % 30);
            lists.push_back(make_list(pool));
        }

        std::map<std::string, double> expect;
        for (const auto& list : lists)
            for (std::size_t i = 0; i < list.size(); ++i)
                expect[list[i].pid] += 1.0 / (60.0 + static_cast<double>(i) + 1.0);

        auto fused = cqr::rrf(lists);
        REQUIRE(fused.size() == expect.size());
        for (std::size_t i = 0; i < fused.size(); ++i) {
            REQUIRE(fused[i].score == Catch::Approx(expect.at(fused[i].pid)).epsilon(1e-14));
            if (i > 0) {
                const bool ordered =
                    fused[i - 1].score > fused[i].score ||
                    (fused[i - 1].score == fused[i].score && fused[i - 1].pid < fused[i].pid);
                REQUIRE(ordered);
            }
        }
    }
}

TEST_CASE("rrf ranking does not depend on list order") {
    auto a = make_list({"p1", "p2", "p3", "p4"});
    auto b = make_list({"p5", "p3", "p1"});
    auto ab = cqr::rrf({a, b});
    auto ba = cqr::rrf({b, a});
    REQUIRE(ab.size() == ba.size());
    for (std::size_t i = 0; i < ab.size(); ++i) {
        REQUIRE(ab[i].pid == ba[i].pid);
        REQUIRE(ab[i].score == Catch::Approx(ba[i].score).epsilon(1e-15));
    }
}

TEST_CASE("rrf validates its inputs") {
    REQUIRE_THROWS_AS(cqr::rrf({}), cqr::ValidationError);
    REQUIRE_THROWS_AS(cqr::rrf({make_list({"p"})}, 0), cqr::ValidationError);
    // an empty constituent list is legal and contributes nothing
    auto fused = cqr::rrf({make_list({"p"}), cqr::RankedList{}});
    REQUIRE(fused.size() == 1);
}

TEST_CASE("query rows round-trip through the two-column file") {
    const std::string path = "/tmp/cqr_fusion_test_" + std::to_string(::getpid()) + ".tsv";
    std::vector<cqr::QueryRow> rows = {
        {"conv1_1", "who wrote Dune"},
        {"conv1_2", "when did Frank Herbert die"},
    };
    cqr::save_query_file(rows, path);
    auto loaded = cqr::load_query_file(path);
    REQUIRE(loaded.size() == 2);
    REQUIRE(loaded[0].qid == "conv1_1");
    REQUIRE(loaded[0].text == "who wrote Dune");
    REQUIRE(loaded[1].qid == "conv1_2");
    REQUIRE(loaded[1].text == "when did Frank Herbert die");
    std::remove(path.c_str());

    REQUIRE_THROWS_AS(cqr::save_query_file({{"id", "bad\ttext"}}, path), cqr::ValidationError);
    REQUIRE_THROWS_AS(cqr::save_query_file({{"", "text"}}, path), cqr::ValidationError);
    std::remove(path.c_str());

    const std::string bad = "/tmp/cqr_fusion_bad_" + std::to_string(::getpid()) + ".tsv";
    {
        std::ofstream out(bad);
        out << "no_tab_here\n";
    }
    REQUIRE_THROWS_WITH(cqr::load_query_file(bad), Catch::Matchers::ContainsSubstring(":1:"));
    std::remove(bad.c_str());
    REQUIRE_THROWS_AS(cqr::load_query_file("/nonexistent/queries.tsv"), cqr::ValidationError);
}
