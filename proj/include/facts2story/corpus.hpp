#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "facts2story/types.hpp"

namespace f2s {

struct PlotRecord {
    std::string id;
    std::string title;
    std::string plot;
    std::string published;  // optional ISO date, used by the --published-after filter
};

struct ExtractionTuple {
    std::string doc_id;
    std::string subject;
    std::string relation;
    std::string object;
    int sentence_index = 0;
    std::optional<std::pair<int, int>> char_span;
};

// Collapses whitespace runs to single spaces and trims the ends.
std::string normalize_whitespace(const std::string& text);

// Sentence count under a simple ./?/! splitter (runs of terminators end one
// sentence; trailing text without a terminator counts too).
std::size_t count_sentences(const std::string& text);

// Trainable byte-pair vocabulary over unicode characters. Words after the
// first in a text carry a leading-space marker merged into their first
// symbol, so " Farm"-style tokens round-trip through plain concatenation.
class Vocabulary {
public:
    static constexpr TokenId kPad = 0;
    static constexpr TokenId kBlank = 1;
    static constexpr TokenId kUnk = 2;

    // `continuation` treats the text as mid-story, marking the first word too.
    TokenSequence encode(const std::string& text, bool continuation = false) const;
    std::string decode(const TokenSequence& seq) const;

    int size() const { return static_cast<int>(id_to_token_.size()); }
    const std::string& token(TokenId id) const;
    std::optional<TokenId> id_of(const std::string& token) const;
    const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }

    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

    friend Vocabulary train_bpe(const std::vector<PlotRecord>&, int);

private:
    TokenId intern(const std::string& token);
    std::vector<std::string> word_symbols(const std::string& marked_word) const;
    std::vector<std::string> encode_word(const std::string& marked_word) const;

    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, TokenId> token_to_id_;
    std::vector<std::pair<std::string, std::string>> merges_;
    std::size_t alphabet_count_ = 0;
};

// Learns up to num_merges merges from the corpus. Deterministic: pair counts
// are corpus-order independent and ties break on lexicographic pair order.
Vocabulary train_bpe(const std::vector<PlotRecord>& corpus, int num_merges);

struct StatsReport {
    int n = 0;
    double mean_token_ratio = 0.0;    // fact tokens / story tokens
    double mean_word_ratio = 0.0;     // fact words / story words, NaN without a vocabulary
    double mean_mask_rate = 0.0;      // 1 - known / T
    double mean_story_tokens = 0.0;
    double mean_fact_tokens = 0.0;
    int histogram_bucket_width = 10;
    std::map<int, long long> story_length_hist;  // bucket start -> count
    std::map<int, long long> fact_length_hist;
};

// Token-level statistics; pass the vocabulary to also get the word-level ratio.
StatsReport corpus_stats(const std::vector<AlignedExample>& dataset,
                         const Vocabulary* vocab = nullptr);

// JSON Lines readers. Unknown keys are ignored; parse failures report the line.
std::vector<PlotRecord> read_plots(const std::string& path);
std::vector<ExtractionTuple> read_extractions(const std::string& path);
void write_plots(const std::string& path, const std::vector<PlotRecord>& plots);
void write_extractions(const std::string& path, const std::vector<ExtractionTuple>& tuples);

}  // namespace f2s
