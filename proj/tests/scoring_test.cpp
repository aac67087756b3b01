#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "cqr/scoring.hpp"
#include "cqr/similarity.hpp"

namespace {

std::vector<std::vector<double>> random_sym_matrix(std::size_t k, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    std::vector<std::vector<double>> m(k, std::vector<double>(k, 1.0));
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = i + 1; j < k; ++j) {
            m[i][j] = dist(rng);
            m[j][i] = m[i][j];
        }
    return m;
}

std::vector<std::size_t> random_permutation(std::size_t k, std::mt19937_64& rng) {
    std::vector<std::size_t> p(k);
    std::iota(p.begin(), p.end(), 0);
    std::shuffle(p.begin(), p.end(), rng);
    return p;
}

}  // namespace

TEST_CASE("rewrite score is mean off-diagonal similarity plus length ratio") {
    // K=2: RW_0 = 0.8 + 10/10, RW_1 = 0.8 + 8/10
    {
        std::vector<std::vector<double>> simm = {{1.0, 0.8}, {0.8, 1.0}};
        auto rw = cqr::rewrite_score({"q0", "q1"}, simm, {10, 8});
        REQUIRE(rw[0] == Catch::Approx(1.8).epsilon(1e-15));
        REQUIRE(rw[1] == Catch::Approx(1.6).epsilon(1e-15));
    }
    // K=3: RW = ((.6+.2)/2 + 4/8, (.6+.4)/2 + 8/8, (.2+.4)/2 + 8/8)
    {
        std::vector<std::vector<double>> simm = {
            {1.0, 0.6, 0.2}, {0.6, 1.0, 0.4}, {0.2, 0.4, 1.0}};
        auto rw = cqr::rewrite_score({"a", "b", "c"}, simm, {4, 8, 8});
        REQUIRE(rw[0] == Catch::Approx(0.9).epsilon(1e-15));
        REQUIRE(rw[1] == Catch::Approx(1.5).epsilon(1e-15));
        REQUIRE(rw[2] == Catch::Approx(1.3).epsilon(1e-15));
    }
}

TEST_CASE("rewrite score validates shapes and token lengths") {
    std::vector<std::vector<double>> simm = {{1.0, 0.5}, {0.5, 1.0}};
    REQUIRE_THROWS_AS(cqr::rewrite_score({"only"}, {{1.0}}, {3}), cqr::ValidationError);
    REQUIRE_THROWS_AS(cqr::rewrite_score({"a", "b"}, simm, {3}), cqr::ValidationError);
    REQUIRE_THROWS_WITH(cqr::rewrite_score({"a", "b"}, simm, {3, 0}),
                        Catch::Matchers::ContainsSubstring("candidate 1"));
    std::vector<std::vector<double>> ragged = {{1.0, 0.5}, {0.5}};
    REQUIRE_THROWS_AS(cqr::rewrite_score({"a", "b"}, ragged, {3, 3}), cqr::ValidationError);
}

TEST_CASE("rewrite score stays within (0, 2]") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t k = 2 + rng() % 5;
        auto simm = random_sym_matrix(k, rng);
        std::vector<std::string> rqs(k, "q");
        std::vector<std::size_t> lens(k);
        for (auto& l : lens) l = 1 + rng() % 20;
        auto rw = cqr::rewrite_score(rqs, simm, lens);
        for (double v : rw) {
            REQUIRE(v > 0.0);
            REQUIRE(v <= 2.0);
        }
        // the longest candidate gets the full +1 length bonus
        const std::size_t longest = static_cast<std::size_t>(
            std::max_element(lens.begin(), lens.end()) - lens.begin());
        double mean_sim = 0.0;
        for (std::size_t j = 0; j < k; ++j)
            if (j != longest) mean_sim += simm[longest][j];
        mean_sim /= static_cast<double>(k - 1);
        REQUIRE(rw[longest] == Catch::Approx(mean_sim + 1.0).epsilon(1e-12));
    }
}

TEST_CASE("retrieval score is mean pairwise overlap count") {
    // lists sharing 2, 1, 1 passages across the three pairs
    std::vector<std::vector<std::string>> lists = {
        {"p1", "p2", "p3", "p4"}, {"p1", "p2", "p5"}, {"p2", "p9"}};
    auto rt = cqr::retrieval_score(lists);
    REQUIRE(rt[0] == 1.5);
    REQUIRE(rt[1] == 1.5);
    REQUIRE(rt[2] == 1.0);
}

TEST_CASE("retrieval score on block-structured overlaps") {
    // c0 = A+B, c1 = A+C, c2 = B+C with |A|=40, |B|=10, |C|=20:
    // pairwise overlaps 40, 10, 20 give means (25, 30, 15)
    std::vector<std::string> a, b, c;
    for (int i = 0; i < 40; ++i) a.push_back("a" + std::to_string(i));
    for (int i = 0; i < 10; ++i) b.push_back("b" + std::to_string(i));
    for (int i = 0; i < 20; ++i) c.push_back("c" + std::to_string(i));
    auto cat = [](std::vector<std::string> x, const std::vector<std::string>& y) {
        x.insert(x.end(), y.begin(), y.end());
        return x;
    };
    auto rt = cqr::retrieval_score({cat(a, b), cat(a, c), cat(b, c)});
    REQUIRE(rt == std::vector<double>{25.0, 30.0, 15.0});
}

TEST_CASE("retrieval score handles disjoint lists and validates K") {
    REQUIRE(cqr::retrieval_score({{"x"}, {"y"}}) == std::vector<double>{0.0, 0.0});
    REQUIRE_THROWS_AS(cqr::retrieval_score({{"x"}}), cqr::ValidationError);
}

TEST_CASE("response score is mean off-diagonal similarity") {
    std::vector<std::vector<double>> simm = {
        {1.0, 0.9, 0.0}, {0.9, 1.0, 0.0}, {0.0, 0.0, 1.0}};
    auto rp = cqr::response_score({"r0", "r1", "r2"}, simm);
    REQUIRE(rp[0] == Catch::Approx(0.45).epsilon(1e-15));
    REQUIRE(rp[1] == Catch::Approx(0.45).epsilon(1e-15));
    REQUIRE(rp[2] == 0.0);
}

TEST_CASE("consistency scores are exactly permutation equivariant") {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t k = 2 + rng() % 5;
        auto simm = random_sym_matrix(k, rng);
        std::vector<std::size_t> lens(k);
        for (auto& l : lens) l = 1 + rng() % 30;
        std::vector<std::string> rqs(k, "q");
        std::vector<std::vector<std::string>> lists(k);
        for (auto& list : lists) {
            const std::size_t n = 1 + rng() % 12;
            for (std::size_t i = 0; i < n; ++i) list.push_back("p" + std::to_string(rng() % 20));
        }

        auto perm = random_permutation(k, rng);
        auto simm_p = simm;
        std::vector<std::size_t> lens_p(k);
        std::vector<std::vector<std::string>> lists_p(k);
        for (std::size_t i = 0; i < k; ++i) {
            lens_p[i] = lens[perm[i]];
            lists_p[i] = lists[perm[i]];
            for (std::size_t j = 0; j < k; ++j) simm_p[i][j] = simm[perm[i]][perm[j]];
        }

        auto rw = cqr::rewrite_score(rqs, simm, lens);
        auto rw_p = cqr::rewrite_score(rqs, simm_p, lens_p);
        auto rt = cqr::retrieval_score(lists);
        auto rt_p = cqr::retrieval_score(lists_p);
        auto rp = cqr::response_score(rqs, simm);
        auto rp_p = cqr::response_score(rqs, simm_p);
        for (std::size_t i = 0; i < k; ++i) {
            // bitwise equality: the summation order is value-sorted, not index-sorted
            REQUIRE(rw_p[i] == rw[perm[i]]);
            REQUIRE(rt_p[i] == rt[perm[i]]);
            REQUIRE(rp_p[i] == rp[perm[i]]);
        }
    }
}

TEST_CASE("select_pair takes the first argmax and first argmin") {
    auto sel = cqr::select_pair({1.0, 3.0, 3.0, 0.5, 0.5}, 5);
    REQUIRE(sel.chosen == 1);
    REQUIRE(sel.rejected == 3);
    REQUIRE_FALSE(sel.degenerate);

    sel = cqr::select_pair({2.0, 2.0, 2.0}, 3);
    REQUIRE(sel.degenerate);
    REQUIRE(sel.chosen == 0);
    REQUIRE(sel.rejected == 0);

    REQUIRE_THROWS_AS(cqr::select_pair({1.0, 2.0}, 3), cqr::ValidationError);
    REQUIRE_THROWS_AS(cqr::select_pair({1.0}, 1), cqr::ValidationError);
}

TEST_CASE("score_candidate_set composes the three scorers over one set") {
    cqr::CandidateSet cs;
    cs.conv_id = "conv9";
    cs.turn_id = 2;
    cs.candidates = {
        {"red fish swims", "a trout", {"p1", "p2"}},
        {"red fish", "a trout", {"p1", "p3"}},
        {"blue bird", "a robin", {"p4"}},
    };
    cqr::LexicalSimilarity lex;
    auto scores = cqr::score_candidate_set(cs, lex);

    const double s01 = lex.sim("red fish swims", "red fish");  // 2*2/5
    const double s02 = lex.sim("red fish swims", "blue bird");
    const double s12 = lex.sim("red fish", "blue bird");
    REQUIRE(s01 == Catch::Approx(0.8).epsilon(1e-15));
    REQUIRE(s02 == 0.0);
    REQUIRE(s12 == 0.0);

    REQUIRE(scores.rw[0] == Catch::Approx((s01 + s02) / 2.0 + 1.0).epsilon(1e-12));
    REQUIRE(scores.rw[1] == Catch::Approx((s01 + s12) / 2.0 + 2.0 / 3.0).epsilon(1e-12));
    REQUIRE(scores.rw[2] == Catch::Approx(2.0 / 3.0).epsilon(1e-12));
    REQUIRE(scores.rt == std::vector<double>{0.5, 0.5, 0.0});
    const double t01 = lex.sim("a trout", "a trout");
    const double t02 = lex.sim("a trout", "a robin");  // shares the token "a"
    REQUIRE(t02 == Catch::Approx(0.5).epsilon(1e-15));
    REQUIRE(scores.rp[0] == Catch::Approx((t01 + t02) / 2.0).epsilon(1e-12));
    REQUIRE(scores.rp[2] == Catch::Approx(t02).epsilon(1e-12));

    cqr::CandidateSet tiny;
    tiny.conv_id = "c";
    tiny.candidates = {{"one", "r", {}}};
    REQUIRE_THROWS_WITH(cqr::score_candidate_set(tiny, lex),
                        Catch::Matchers::ContainsSubstring("c_1"));
}

TEST_CASE("scored turns round-trip through json lines") {
    cqr::ConsistencyScores scores;
    scores.rw = {1.5, 0.9};
    scores.rt = {3.0, 3.0};
    scores.rp = {0.2, 0.8};
    auto j = cqr::scores_to_json("conv1_4", scores, cqr::select_pair(scores.rw, 2),
                                 cqr::select_pair(scores.rt, 2), cqr::select_pair(scores.rp, 2));
    REQUIRE(j["turn_key"] == "conv1_4");
    REQUIRE(j["selected"]["rewrite"]["chosen"] == 0);
    REQUIRE(j["selected"]["rewrite"]["rejected"] == 1);
    REQUIRE(j["selected"]["retrieval"]["degenerate"] == true);
    REQUIRE(j["selected"]["response"]["chosen"] == 1);

    auto turn = cqr::scored_turn_from_json(j);
    REQUIRE(turn.turn_key == "conv1_4");
    REQUIRE(turn.scores.rw == scores.rw);
    REQUIRE(turn.scores.rt == scores.rt);
    REQUIRE(turn.scores.rp == scores.rp);

    auto bad = j;
    bad["rw"] = {1.0};  // length no longer matches rt/rp
    REQUIRE_THROWS_AS(cqr::scored_turn_from_json(bad), cqr::ValidationError);
}
