#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>

#include "cqr/corpus.hpp"

namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("cqr_corpus_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
    fs::path file(const std::string& name, const std::string& contents) const {
        fs::path p = path / name;
        std::ofstream out(p);
        out << contents;
        return p;
    }
};

}  // namespace

TEST_CASE("corpus loads and indexes passages") {
    TempDir tmp;
    auto p = tmp.file("c.jsonl",
                      R"({"id": "p1", "text": "first passage"})"
                      "\n"
                      R"({"id": "p2", "text": "second passage"})"
                      "\n");
    auto corpus = cqr::load_corpus(p.string());
    REQUIRE(corpus.size() == 2);
    REQUIRE(corpus.at(0).id == "p1");
    REQUIRE(corpus.find("p2") != nullptr);
    REQUIRE(corpus.find("p2")->text == "second passage");
    REQUIRE(corpus.find("p3") == nullptr);
}

TEST_CASE("corpus load skips blank lines and reports the failing line") {
    TempDir tmp;
    auto p = tmp.file("c.jsonl",
                      R"({"id": "p1", "text": "ok"})"
                      "\n\n"
                      R"({"id": "p2")"
                      "\n");
    try {
        cqr::load_corpus(p.string());
        FAIL("expected a parse error");
    } catch (const cqr::ValidationError& e) {
        CHECK(std::string(e.what()).find(":3:") != std::string::npos);
    }
}

TEST_CASE("duplicate passage ids are rejected by id") {
    TempDir tmp;
    auto p = tmp.file("c.jsonl",
                      R"({"id": "p1", "text": "a"})"
                      "\n"
                      R"({"id": "p1", "text": "b"})"
                      "\n");
    try {
        cqr::load_corpus(p.string());
        FAIL("expected duplicate id error");
    } catch (const cqr::ValidationError& e) {
        CHECK(std::string(e.what()).find("p1") != std::string::npos);
    }
}

TEST_CASE("corpus round-trips through save and load") {
    TempDir tmp;
    cqr::PassageCollection corpus;
    corpus.add({"a", "alpha text"});
    corpus.add({"b", "beta \"quoted\" text"});
    auto p = tmp.path / "out.jsonl";
    cqr::save_corpus(corpus, p.string());
    auto loaded = cqr::load_corpus(p.string());
    REQUIRE(loaded.size() == 2);
    CHECK(loaded.at(0).id == "a");
    CHECK(loaded.at(1).text == "beta \"quoted\" text");
}

TEST_CASE("dialogue turns parse with history and optional gold pids") {
    TempDir tmp;
    auto p = tmp.file(
        "d.jsonl",
        R"({"conv_id": "c1", "turn_id": 2, "query": "what about him?", "history": [{"q": "who is X?", "a": "X is a person."}], "gold_pids": ["p7"]})"
        "\n"
        R"({"conv_id": "c1", "turn_id": 1, "query": "who is X?", "history": []})"
        "\n");
    auto turns = cqr::load_dialogues(p.string());
    REQUIRE(turns.size() == 2);
    CHECK(turns[0].key() == "c1_2");
    REQUIRE(turns[0].gold_pids.has_value());
    CHECK(turns[0].gold_pids->count("p7") == 1);
    CHECK(turns[0].history.size() == 1);
    CHECK(turns[0].history[0].first == "who is X?");
    CHECK_FALSE(turns[1].gold_pids.has_value());
}

TEST_CASE("dialogue validation rejects bad turn ids and empty queries") {
    auto bad_turn = nlohmann::json{{"conv_id", "c"}, {"turn_id", 0}, {"query", "q"},
                                   {"history", nlohmann::json::array()}};
    CHECK_THROWS_AS(cqr::dialogue_turn_from_json(bad_turn), cqr::ValidationError);
    auto empty_q = nlohmann::json{{"conv_id", "c"}, {"turn_id", 1}, {"query", ""},
                                  {"history", nlohmann::json::array()}};
    CHECK_THROWS_AS(cqr::dialogue_turn_from_json(empty_q), cqr::ValidationError);
}

TEST_CASE("serialize_history interleaves turns and ends with the current query") {
    cqr::DialogueTurn turn;
    turn.conv_id = "c";
    turn.turn_id = 3;
    turn.query = "where was she born?";
    turn.history = {{"who is Marie Curie?", "A physicist and chemist."},
                    {"what did she win?", "Two Nobel Prizes."}};
    CHECK(cqr::serialize_history(turn) ==
          "Q: who is Marie Curie?\n"
          "A: A physicist and chemist.\n"
          "Q: what did she win?\n"
          "A: Two Nobel Prizes.\n"
          "Q: where was she born?");
}

TEST_CASE("serialize_history of a first turn is just the query") {
    cqr::DialogueTurn turn;
    turn.conv_id = "c";
    turn.turn_id = 1;
    turn.query = "who is X?";
    CHECK(cqr::serialize_history(turn) == "Q: who is X?");
}

TEST_CASE("candidate sets require at least two candidates and distinct pids") {
    auto good = nlohmann::json::parse(R"({
        "conv_id": "c1", "turn_id": 1,
        "candidates": [
            {"rq": "r1", "rs": "s1", "pids": ["a", "b"]},
            {"rq": "r2", "rs": "s2", "pids": ["b", "c"]}
        ]})");
    auto set = cqr::candidate_set_from_json(good);
    CHECK(set.key() == "c1_1");
    CHECK(set.candidates.size() == 2);

    auto one = good;
    one["candidates"].erase(1);
    CHECK_THROWS_AS(cqr::candidate_set_from_json(one), cqr::ValidationError);

    auto dup = good;
    dup["candidates"][0]["pids"] = {"a", "a"};
    CHECK_THROWS_AS(cqr::candidate_set_from_json(dup), cqr::ValidationError);
}

TEST_CASE("candidate sets round-trip") {
    TempDir tmp;
    cqr::CandidateSet set;
    set.conv_id = "c9";
    set.turn_id = 4;
    set.candidates = {{"rq one", "rs one", {"p1", "p2"}}, {"rq two", "rs two", {"p3"}}};
    auto p = tmp.path / "cand.jsonl";
    cqr::save_candidate_sets({set}, p.string());
    auto loaded = cqr::load_candidate_sets(p.string());
    REQUIRE(loaded.size() == 1);
    CHECK(loaded[0].key() == "c9_4");
    CHECK(loaded[0].candidates[1].pids == std::vector<std::string>{"p3"});
}

TEST_CASE("qrels keep only positive judgments and track judged queries") {
    TempDir tmp;
    auto p = tmp.file("q.txt",
                      "c1_1 0 p1 1\n"
                      "c1_1 0 p2 0\n"
                      "c1_2 0 p3 0\n");
    auto qrels = cqr::load_qrels(p.string());
    REQUIRE(qrels.size() == 2);
    CHECK(qrels.at("c1_1") == std::set<std::string>{"p1"});
    CHECK(qrels.at("c1_2").empty());
}

TEST_CASE("qrels reject malformed lines and bad relevance values") {
    TempDir tmp;
    auto short_line = tmp.file("q1.txt", "c1_1 0 p1\n");
    CHECK_THROWS_AS(cqr::load_qrels(short_line.string()), cqr::ValidationError);
    auto bad_rel = tmp.file("q2.txt", "c1_1 0 p1 2\n");
    CHECK_THROWS_AS(cqr::load_qrels(bad_rel.string()), cqr::ValidationError);
}

TEST_CASE("missing files raise errors naming the path") {
    try {
        cqr::load_corpus("/nonexistent/nowhere.jsonl");
        FAIL("expected error");
    } catch (const cqr::ValidationError& e) {
        CHECK(std::string(e.what()).find("nowhere.jsonl") != std::string::npos);
    }
}
