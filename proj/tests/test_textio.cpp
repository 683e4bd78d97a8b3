#include <cstdio>
#include <filesystem>
#include <fstream>

#include <doctest.h>

#include "elib/textio.hpp"

using namespace elib;
namespace fs = std::filesystem;

TEST_CASE("tokenizer vocabulary layout") {
    CHECK(Tokenizer::kVocabSize == 259);
    CHECK(Tokenizer::kBos == 256);
    CHECK(Tokenizer::kEos == 257);
    CHECK(Tokenizer::kPad == 258);
}

TEST_CASE("encode maps bytes to their values") {
    const auto t = Tokenizer::encode("Ab\n");
    CHECK(t == std::vector<int>{65, 98, 10});
    CHECK(Tokenizer::encode("").empty());

    // non-ascii bytes map to 128..255
    const std::string high = "\xc3\xa9";
    const auto ht = Tokenizer::encode(high);
    CHECK(ht == std::vector<int>{0xc3, 0xa9});
}

TEST_CASE("decode round-trips and drops special ids") {
    const std::string text = "hello world";
    CHECK(Tokenizer::decode(Tokenizer::encode(text)) == text);

    std::vector<int> with_specials = {Tokenizer::kBos, 'h', 'i', Tokenizer::kEos, Tokenizer::kPad};
    CHECK(Tokenizer::decode(with_specials) == "hi");

    CHECK_THROWS_AS(Tokenizer::decode({259}), TokenError);
    CHECK_THROWS_AS(Tokenizer::decode({-1}), TokenError);
}

TEST_CASE("corpus windowing") {
    std::vector<int> tokens(10);
    for (int i = 0; i < 10; ++i) tokens[i] = i;

    SUBCASE("non-overlapping") {
        const EvalCorpus c = make_corpus(tokens, 4, 4);
        REQUIRE(c.windows.size() == 2);  // [0..3], [4..7]; tail dropped
        CHECK(c.windows[0] == std::vector<int>{0, 1, 2, 3});
        CHECK(c.windows[1] == std::vector<int>{4, 5, 6, 7});
    }
    SUBCASE("overlapping stride") {
        const EvalCorpus c = make_corpus(tokens, 4, 2);
        REQUIRE(c.windows.size() == 4);  // starts 0,2,4,6
        CHECK(c.windows[3] == std::vector<int>{6, 7, 8, 9});
    }
    SUBCASE("exact fit") {
        const EvalCorpus c = make_corpus(tokens, 10, 10);
        REQUIRE(c.windows.size() == 1);
    }
}

TEST_CASE("corpus construction rejects bad parameters") {
    std::vector<int> tokens(10, 1);
    CHECK_THROWS_AS(make_corpus(tokens, 1, 1), MetricError);
    CHECK_THROWS_AS(make_corpus(tokens, 4, 0), MetricError);
    CHECK_THROWS_AS(make_corpus(tokens, 4, 5), MetricError);
    CHECK_THROWS_AS(make_corpus(std::vector<int>(3, 1), 4, 4), MetricError);
}

TEST_CASE("corpus and prompts load from files") {
    const std::string corpus_path = (fs::temp_directory_path() / "elib_test_corpus.txt").string();
    const std::string prompts_path = (fs::temp_directory_path() / "elib_test_prompts.txt").string();
    {
        std::ofstream f(corpus_path, std::ios::binary);
        f << "abcdefgh";
    }
    {
        std::ofstream f(prompts_path);
        f << "first prompt\n\nsecond prompt\n";
    }

    const EvalCorpus c = load_corpus(corpus_path, 4, 4);
    CHECK(c.windows.size() == 2);
    CHECK(c.windows[0] == Tokenizer::encode("abcd"));

    const auto prompts = load_prompts(prompts_path);
    REQUIRE(prompts.size() == 2);  // blank lines are skipped
    CHECK(prompts[0] == "first prompt");
    CHECK(prompts[1] == "second prompt");

    CHECK_THROWS_AS(load_corpus("/nonexistent/corpus", 4, 4), IoError);
    CHECK_THROWS_AS(load_prompts("/nonexistent/prompts"), IoError);

    std::remove(corpus_path.c_str());
    std::remove(prompts_path.c_str());
}
