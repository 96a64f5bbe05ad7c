#include "facts2story/align.hpp"

#include <fstream>
#include <limits>

#include <json.hpp>

namespace f2s {

namespace {

using json = nlohmann::json;

// occ[j][t]: earliest story position >= t holding fact token j, or -1.
std::vector<std::vector<int>> occurrence_table(const TokenSequence& fact_tokens,
                                               const TokenSequence& story) {
    const std::size_t f = fact_tokens.size();
    const std::size_t t = story.size();
    std::vector<std::vector<int>> occ(f, std::vector<int>(t + 1, -1));
    for (std::size_t j = 0; j < f; ++j) {
        int next = -1;
        for (std::size_t p = t; p-- > 0;) {
            if (story[p] == fact_tokens[j]) next = static_cast<int>(p);
            occ[j][p] = next;
        }
    }
    return occ;
}

}  // namespace

std::optional<std::vector<int>> align_facts(const FactSet& fact_set, const TokenSequence& story,
                                            std::size_t* first_unmatched) {
    const TokenSequence fact_tokens = fact_set.concatenated();
    if (fact_tokens.empty()) throw DataError("align_facts requires at least one fact token");
    const std::size_t f = fact_tokens.size();
    const std::size_t t = story.size();
    const auto occ = occurrence_table(fact_tokens, story);

    // Greedy leftmost pass doubles as the feasibility check: the index where
    // it gets stuck is the first unmatchable token.
    {
        int cursor = 0;
        for (std::size_t j = 0; j < f; ++j) {
            const int p = cursor <= static_cast<int>(t) ? occ[j][cursor] : -1;
            if (p < 0) {
                if (first_unmatched != nullptr) *first_unmatched = j;
                return std::nullopt;
            }
            cursor = p + 1;
        }
    }

    // end[j][s]: end position of the greedy leftmost matching of tokens j..F-1
    // starting at story position >= s, or -1. O(F*T) table.
    std::vector<std::vector<int>> end(f, std::vector<int>(t + 1, -1));
    for (std::size_t j = f; j-- > 0;) {
        for (std::size_t s = t + 1; s-- > 0;) {
            const int p = occ[j][s];
            if (p < 0) continue;
            end[j][s] = j + 1 == f ? p : end[j + 1][p + 1];
        }
    }

    // Pick the start minimizing the span; first hit is the leftmost tie-break.
    int best_start = -1;
    int best_span = std::numeric_limits<int>::max();
    int p0 = occ[0][0];
    while (p0 >= 0) {
        const int last = f == 1 ? p0 : end[1][static_cast<std::size_t>(p0) + 1];
        if (last < 0) break;  // later starts leave even fewer positions
        const int span = last - p0;
        if (span < best_span) {
            best_span = span;
            best_start = p0;
        }
        p0 = occ[0][static_cast<std::size_t>(p0) + 1];
    }
    if (best_start < 0) {
        if (first_unmatched != nullptr) *first_unmatched = 0;
        return std::nullopt;
    }

    std::vector<int> positions(f);
    positions[0] = best_start;
    int cursor = best_start + 1;
    for (std::size_t j = 1; j < f; ++j) {
        positions[j] = occ[j][cursor];
        cursor = positions[j] + 1;
    }
    return positions;
}

std::vector<int> positions_to_spacings(const std::vector<int>& positions) {
    std::vector<int> spacings;
    spacings.reserve(positions.size());
    int prev = -1;
    for (int p : positions) {
        if (p <= prev || p < 0) throw DataError("positions must be strictly increasing and non-negative");
        spacings.push_back(p - prev - 1);
        prev = p;
    }
    return spacings;
}

ClozeTemplate spacings_to_template(const FactSet& fact_set, const std::vector<int>& spacings,
                                   int tail_blanks) {
    const TokenSequence fact_tokens = fact_set.concatenated();
    if (spacings.size() != fact_tokens.size())
        throw DataError("one spacing per concatenated fact token required");
    if (tail_blanks < 0) throw DataError("tail_blanks must be non-negative");

    ClozeTemplate tpl;
    int pos = -1;
    for (std::size_t i = 0; i < fact_tokens.size(); ++i) {
        if (spacings[i] < 0) throw DataError("negative spacing");
        pos += spacings[i] + 1;
        tpl.known.emplace(pos, fact_tokens[i]);
    }
    tpl.length = pos + 1 + tail_blanks;
    return tpl;
}

std::optional<AlignedExample> build_aligned_example(const std::string& doc_id,
                                                    const FactSet& fact_set,
                                                    const TokenSequence& story,
                                                    std::size_t* first_unmatched) {
    auto positions = align_facts(fact_set, story, first_unmatched);
    if (!positions) return std::nullopt;
    AlignedExample ex;
    ex.doc_id = doc_id;
    ex.story = story;
    ex.fact_tokens = fact_set.concatenated();
    ex.fact_index = fact_set.fact_index_per_token();
    ex.positions = *positions;
    ex.spacings = positions_to_spacings(*positions);
    return ex;
}

void write_aligned_dataset(const std::string& path, const std::vector<AlignedExample>& dataset) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write aligned dataset: " + path);
    for (const auto& ex : dataset) {
        json j = {{"doc_id", ex.doc_id},    {"story_ids", ex.story},   {"fact_ids", ex.fact_tokens},
                  {"fact_index", ex.fact_index}, {"positions", ex.positions}, {"spacings", ex.spacings}};
        out << j.dump() << "\n";
    }
}

std::vector<AlignedExample> read_aligned_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open aligned dataset: " + path);
    std::vector<AlignedExample> dataset;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object())
            throw DataError(path + ":" + std::to_string(line_no) + ": invalid JSON record");
        AlignedExample ex;
        ex.doc_id = j.value("doc_id", "");
        ex.story = j.at("story_ids").get<TokenSequence>();
        ex.fact_tokens = j.at("fact_ids").get<TokenSequence>();
        ex.fact_index = j.at("fact_index").get<std::vector<int>>();
        ex.positions = j.at("positions").get<std::vector<int>>();
        ex.spacings = j.at("spacings").get<std::vector<int>>();
        if (ex.fact_tokens.size() != ex.positions.size() || ex.positions.size() != ex.spacings.size())
            throw DataError(path + ":" + std::to_string(line_no) + ": inconsistent aligned example");
        dataset.push_back(std::move(ex));
    }
    return dataset;
}

}  // namespace f2s
