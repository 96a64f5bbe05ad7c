#include <doctest.h>

#include "facts2story/align.hpp"
#include "facts2story/neural.hpp"
#include "testutil.hpp"

using namespace f2s;

namespace {

FactSet facts(std::initializer_list<TokenSequence> parts) {
    FactSet fs;
    fs.facts = parts;
    return fs;
}

}  // namespace

TEST_CASE("align_facts identity matching") {
    const TokenSequence story = {1, 2, 3, 4};
    const auto positions = align_facts(facts({{1, 2}, {3, 4}}), story);
    REQUIRE(positions.has_value());
    CHECK(*positions == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("align_facts minimizes the matched span, not the leading offset") {
    const TokenSequence story = {10, 20, 30, 20, 40};
    const auto positions = align_facts(facts({{20, 40}}), story);
    REQUIRE(positions.has_value());
    CHECK(*positions == std::vector<int>{3, 4});  // span 0 beats positions {1,4} with gap 2
}

TEST_CASE("align_facts reports the first unmatchable token") {
    const TokenSequence story = {10, 20};
    std::size_t failed = 99;
    const auto positions = align_facts(facts({{20, 10}}), story, &failed);
    CHECK_FALSE(positions.has_value());
    CHECK(failed == 1);

    const auto missing = align_facts(facts({{77}}), story, &failed);
    CHECK_FALSE(missing.has_value());
    CHECK(failed == 0);
}

TEST_CASE("align_facts matches the exhaustive minimal-gap oracle") {
    neural::Rng rng(2024);
    for (int trial = 0; trial < 300; ++trial) {
        const int t = 1 + rng.uniform_int(12);
        TokenSequence story;
        for (int i = 0; i < t; ++i) story.push_back(rng.uniform_int(4));
        // choose a random ordered subset as the fact tokens (feasible by construction)
        const int f = 1 + rng.uniform_int(std::min(5, t));
        std::vector<int> picks;
        for (int i = 0; i < t; ++i) picks.push_back(i);
        rng.shuffle(picks);
        picks.resize(static_cast<std::size_t>(f));
        std::sort(picks.begin(), picks.end());
        TokenSequence fact_tokens;
        for (int p : picks) fact_tokens.push_back(story[static_cast<std::size_t>(p)]);

        const auto dp = align_facts(facts({fact_tokens}), story);
        const auto oracle = testutil::exhaustive_align(fact_tokens, story);
        REQUIRE(dp.has_value());
        REQUIRE(oracle.ok);
        const int dp_gap = (*dp).back() - (*dp).front() - (f - 1);
        CHECK(dp_gap == oracle.internal_gap);
        CHECK(*dp == oracle.positions);  // leftmost tie-break as well
    }
}

TEST_CASE("positions_to_spacings") {
    CHECK(positions_to_spacings({0, 1, 2}) == std::vector<int>{0, 0, 0});
    CHECK(positions_to_spacings({1, 3}) == std::vector<int>{1, 1});
    CHECK(positions_to_spacings({4, 5, 6, 7, 8, 9}) == std::vector<int>{4, 0, 0, 0, 0, 0});
    CHECK_THROWS_AS(positions_to_spacings({3, 3}), DataError);
    CHECK_THROWS_AS(positions_to_spacings({-1, 2}), DataError);
}

TEST_CASE("spacings_to_template") {
    SUBCASE("degenerate single token") {
        const ClozeTemplate tpl = spacings_to_template(facts({{42}}), {0}, 0);
        CHECK(tpl.length == 1);
        REQUIRE(tpl.known.size() == 1);
        CHECK(tpl.known.at(0) == 42);
    }
    SUBCASE("blanks before tokens plus a tail") {
        const ClozeTemplate tpl =
            spacings_to_template(facts({{1, 2, 3, 4, 5, 6}}), {4, 0, 0, 0, 0, 0}, 3);
        CHECK(tpl.length == 13);
        for (int pos = 4; pos <= 9; ++pos) CHECK(tpl.known.at(pos) == pos - 3);
        CHECK(tpl.known.count(0) == 0);
        CHECK(tpl.known.count(10) == 0);
    }
    SUBCASE("round trip against an aligned example") {
        const TokenSequence story = {9, 1, 9, 2, 3, 9, 9, 4};
        const FactSet fs = facts({{1, 2}, {3, 4}});
        const auto ex = build_aligned_example("d", fs, story);
        REQUIRE(ex.has_value());
        const ClozeTemplate tpl = spacings_to_template(fs, ex->spacings, 0);
        CHECK(tpl.length == ex->positions.back() + 1);
        for (std::size_t j = 0; j < ex->positions.size(); ++j)
            CHECK(tpl.known.at(ex->positions[j]) == ex->fact_tokens[j]);
    }
    SUBCASE("size mismatch is rejected") {
        CHECK_THROWS_AS(spacings_to_template(facts({{1, 2}}), {0}, 0), DataError);
    }
}

TEST_CASE("spacings round-trip positions for random instances") {
    neural::Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<int> positions;
        int p = rng.uniform_int(3);
        const int f = 1 + rng.uniform_int(6);
        for (int j = 0; j < f; ++j) {
            positions.push_back(p);
            p += 1 + rng.uniform_int(4);
        }
        const std::vector<int> spacings = positions_to_spacings(positions);
        int cursor = -1;
        for (std::size_t j = 0; j < spacings.size(); ++j) {
            cursor += spacings[j] + 1;
            CHECK(cursor == positions[j]);
        }
    }
}

TEST_CASE("build_aligned_example fills every field consistently") {
    const TokenSequence story = {5, 1, 2, 5, 3};
    const auto ex = build_aligned_example("doc9", facts({{1, 2}, {3}}), story);
    REQUIRE(ex.has_value());
    CHECK(ex->doc_id == "doc9");
    CHECK(ex->positions == std::vector<int>{1, 2, 4});
    CHECK(ex->spacings == std::vector<int>{1, 0, 1});
    CHECK(ex->fact_index == std::vector<int>{0, 0, 1});
    for (std::size_t j = 0; j < ex->positions.size(); ++j)
        CHECK(ex->story[static_cast<std::size_t>(ex->positions[j])] == ex->fact_tokens[j]);
}

TEST_CASE("aligned dataset JSONL round-trip") {
    const testutil::TempDir tmp("aligned");
    const TokenSequence story = {5, 1, 2, 5, 3};
    const auto ex = build_aligned_example("doc1", facts({{1, 2}, {3}}), story);
    REQUIRE(ex.has_value());
    write_aligned_dataset(tmp.path("data.jsonl"), {*ex, *ex});
    const auto loaded = read_aligned_dataset(tmp.path("data.jsonl"));
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].doc_id == "doc1");
    CHECK(loaded[0].story == story);
    CHECK(loaded[0].positions == ex->positions);
    CHECK(loaded[0].spacings == ex->spacings);
    CHECK(loaded[0].fact_index == ex->fact_index);
}
