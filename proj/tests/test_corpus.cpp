#include <doctest.h>

#include <fstream>

#include "facts2story/corpus.hpp"
#include "facts2story/neural.hpp"
#include "testutil.hpp"

using namespace f2s;

namespace {

std::vector<PlotRecord> plots_from(const std::vector<std::string>& texts) {
    std::vector<PlotRecord> out;
    for (std::size_t i = 0; i < texts.size(); ++i)
        out.push_back({"p" + std::to_string(i), "", texts[i], ""});
    return out;
}

}  // namespace

TEST_CASE("normalize_whitespace collapses runs and trims") {
    CHECK(normalize_whitespace("  a\t\tb \n c  ") == "a b c");
    CHECK(normalize_whitespace("") == "");
    CHECK(normalize_whitespace("   ") == "");
}

TEST_CASE("count_sentences uses the simple terminator splitter") {
    CHECK(count_sentences("one . two ! three ?") == 3);
    CHECK(count_sentences("ends without terminator") == 1);
    CHECK(count_sentences("what ?! no ...") == 2);  // terminator runs end one sentence
    CHECK(count_sentences("") == 0);
    CHECK(count_sentences(" . . ") == 0);
}

TEST_CASE("train_bpe merges the most frequent pair with overlap counting") {
    const Vocabulary vocab = train_bpe(plots_from({"aaab"}), 1);
    REQUIRE(vocab.merges().size() == 1);
    CHECK(vocab.merges()[0] == std::pair<std::string, std::string>{"a", "a"});
    CHECK(vocab.id_of("a").has_value());
    CHECK(vocab.id_of("b").has_value());
    CHECK(vocab.id_of("aa").has_value());
    CHECK(vocab.size() == 3 + 2 + 1);  // specials + {a, b} + {aa}
}

TEST_CASE("train_bpe with zero merges yields a character vocabulary") {
    const Vocabulary vocab = train_bpe(plots_from({"abc ab"}), 0);
    CHECK(vocab.merges().empty());
    // a b c plus the space-marked " a"
    CHECK(vocab.size() == 3 + 4);
}

TEST_CASE("train_bpe rejects an empty corpus") {
    CHECK_THROWS_AS(train_bpe(plots_from({""}), 4), DataError);
    CHECK_THROWS_AS(train_bpe({}, 4), DataError);
}

TEST_CASE("encode applies merges greedily in training order") {
    const Vocabulary vocab = train_bpe(plots_from({"aaab"}), 1);
    const TokenSequence ids = vocab.encode("aaab");
    REQUIRE(ids.size() == 3);
    CHECK(vocab.token(ids[0]) == "aa");
    CHECK(vocab.token(ids[1]) == "a");
    CHECK(vocab.token(ids[2]) == "b");
}

TEST_CASE("encode maps unknown characters to UNK and empty text to nothing") {
    const Vocabulary vocab = train_bpe(plots_from({"abc"}), 0);
    CHECK(vocab.encode("").empty());
    const TokenSequence ids = vocab.encode("axc");
    REQUIRE(ids.size() == 3);
    CHECK(ids[1] == Vocabulary::kUnk);
}

TEST_CASE("decode round-trips encode over known characters") {
    const Vocabulary vocab = train_bpe(plots_from({"hello world", "wold hole"}), 10);
    for (const std::string text : {"hello world", "world  hello ", "hell hole", ""})
        CHECK(vocab.decode(vocab.encode(text)) == normalize_whitespace(text));
}

TEST_CASE("decode rejects out-of-range ids") {
    const Vocabulary vocab = train_bpe(plots_from({"ab"}), 0);
    CHECK_THROWS_AS(vocab.decode({static_cast<TokenId>(vocab.size())}), DataError);
    CHECK_THROWS_AS(vocab.decode({-1}), DataError);
}

TEST_CASE("continuation encoding marks the first word") {
    const Vocabulary vocab = train_bpe(plots_from({"go go gadget"}), 6);
    const TokenSequence plain = vocab.encode("go");
    const TokenSequence cont = vocab.encode("go", /*continuation=*/true);
    CHECK(plain != cont);
    CHECK(vocab.decode(cont) == " go");
}

TEST_CASE("vocabulary save/load round-trips and is byte-stable") {
    const testutil::TempDir tmp("vocab");
    const Vocabulary vocab = train_bpe(plots_from({"the cat sat on the mat", "a cat ate"}), 12);
    vocab.save(tmp.path("v.json"));
    const Vocabulary loaded = Vocabulary::load(tmp.path("v.json"));
    CHECK(loaded.size() == vocab.size());
    CHECK(loaded.merges() == vocab.merges());
    CHECK(loaded.encode("the cat") == vocab.encode("the cat"));

    loaded.save(tmp.path("v2.json"));
    std::ifstream a(tmp.path("v.json")), b(tmp.path("v2.json"));
    const std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    const std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);
}

TEST_CASE("vocabulary training is deterministic") {
    const auto corpus = plots_from({"abra kadabra", "abra abra"});
    const Vocabulary a = train_bpe(corpus, 8);
    const Vocabulary b = train_bpe(corpus, 8);
    CHECK(a.merges() == b.merges());
    CHECK(a.size() == b.size());
}

TEST_CASE("encode/decode round-trip holds for random strings over the corpus alphabet") {
    // The corpus covers every character both word-initial and mid-text.
    const Vocabulary vocab = train_bpe(plots_from({"abcd bcda cdab dabc abcd"}), 16);
    neural::Rng rng(99);
    const std::string alphabet = "abcd ";
    for (int trial = 0; trial < 50; ++trial) {
        std::string text;
        const int len = rng.uniform_int(30);
        for (int i = 0; i < len; ++i)
            text.push_back(alphabet[static_cast<std::size_t>(rng.uniform_int(5))]);
        CHECK(vocab.decode(vocab.encode(text)) == normalize_whitespace(text));
    }
}

TEST_CASE("corpus_stats reports ratios, mask rate and histograms") {
    AlignedExample ex;
    ex.story.assign(60, 5);
    ex.fact_tokens.assign(10, 5);
    ex.fact_index.assign(10, 0);
    for (int i = 0; i < 10; ++i) ex.positions.push_back(i);
    ex.spacings = {0, 0, 0, 0, 0, 0, 0, 0, 0, 0};

    const StatsReport report = corpus_stats({ex});
    CHECK(report.n == 1);
    CHECK(report.mean_token_ratio == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
    CHECK(report.mean_mask_rate == doctest::Approx(1.0 - 10.0 / 60.0).epsilon(1e-12));
    CHECK(report.story_length_hist.at(60) == 1);
    CHECK(report.fact_length_hist.at(10) == 1);
}

TEST_CASE("corpus_stats mask rate is zero when facts cover the story") {
    AlignedExample ex;
    ex.story = {1, 2, 3};
    ex.fact_tokens = {1, 2, 3};
    ex.fact_index = {0, 0, 0};
    ex.positions = {0, 1, 2};
    ex.spacings = {0, 0, 0};
    const StatsReport report = corpus_stats({ex});
    CHECK(report.mean_mask_rate == doctest::Approx(0.0));
    CHECK(report.mean_token_ratio == doctest::Approx(1.0));
}

TEST_CASE("corpus_stats rejects an empty dataset") {
    CHECK_THROWS_AS(corpus_stats({}), DataError);
}

TEST_CASE("corpus_stats mask rate stays in [0, 1] and matches 1 - ratio") {
    neural::Rng rng(7);
    std::vector<AlignedExample> dataset;
    for (int i = 0; i < 20; ++i) {
        AlignedExample ex;
        const int t = 5 + rng.uniform_int(40);
        const int f = 1 + rng.uniform_int(t - 1);
        ex.story.assign(static_cast<std::size_t>(t), 1);
        ex.fact_tokens.assign(static_cast<std::size_t>(f), 1);
        ex.fact_index.assign(static_cast<std::size_t>(f), 0);
        for (int j = 0; j < f; ++j) ex.positions.push_back(j);
        ex.spacings.assign(static_cast<std::size_t>(f), 0);
        dataset.push_back(std::move(ex));
    }
    const StatsReport report = corpus_stats(dataset);
    CHECK(report.mean_mask_rate >= 0.0);
    CHECK(report.mean_mask_rate <= 1.0);
    CHECK(report.mean_mask_rate == doctest::Approx(1.0 - report.mean_token_ratio).epsilon(1e-12));
}

TEST_CASE("malformed JSONL reports the offending line") {
    const testutil::TempDir tmp("badjsonl");
    {
        std::ofstream out(tmp.path("plots.jsonl"));
        out << R"({"id": "ok", "title": "", "plot": "text"})" << "\n";
        out << "{not json\n";
    }
    try {
        read_plots(tmp.path("plots.jsonl"));
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find(":2:") != std::string::npos);
    }
}

TEST_CASE("plots and extractions round-trip through JSONL") {
    const testutil::TempDir tmp("jsonl");
    std::vector<PlotRecord> plots = {{"d1", "One", "a story here", "2020-01-01"},
                                     {"d2", "Two", "another tale", ""}};
    write_plots(tmp.path("plots.jsonl"), plots);
    const auto read = read_plots(tmp.path("plots.jsonl"));
    REQUIRE(read.size() == 2);
    CHECK(read[0].id == "d1");
    CHECK(read[0].published == "2020-01-01");
    CHECK(read[1].plot == "another tale");

    std::vector<ExtractionTuple> tuples = {{"d1", "he", "ran to", "town", 0, {}},
                                           {"d1", "she", "stayed", "", 1, {}}};
    write_extractions(tmp.path("ext.jsonl"), tuples);
    const auto tread = read_extractions(tmp.path("ext.jsonl"));
    REQUIRE(tread.size() == 2);
    CHECK(tread[0].subject == "he");
    CHECK(tread[1].sentence_index == 1);
}
