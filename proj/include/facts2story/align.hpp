#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "facts2story/types.hpp"

namespace f2s {

// Finds the monotonic matching of the concatenated fact tokens into the story
// that minimizes the matched span (the count of story tokens strictly between
// matched fact tokens), breaking ties toward the leftmost positions.
//
// Returns nullopt when no monotonic matching exists; *first_unmatched then
// holds the index of the first fact token that cannot be placed.
std::optional<std::vector<int>> align_facts(const FactSet& fact_set, const TokenSequence& story,
                                            std::size_t* first_unmatched = nullptr);

// spacings[0] = positions[0]; spacings[j] = positions[j] - positions[j-1] - 1.
std::vector<int> positions_to_spacings(const std::vector<int>& positions);

// Lays out each fact token after its spacing worth of blanks, then appends
// tail_blanks. T = sum(spacings) + F + tail_blanks.
ClozeTemplate spacings_to_template(const FactSet& fact_set, const std::vector<int>& spacings,
                                   int tail_blanks);

// Aligns and labels one story; nullopt when alignment fails.
std::optional<AlignedExample> build_aligned_example(const std::string& doc_id,
                                                    const FactSet& fact_set,
                                                    const TokenSequence& story,
                                                    std::size_t* first_unmatched = nullptr);

void write_aligned_dataset(const std::string& path, const std::vector<AlignedExample>& dataset);
std::vector<AlignedExample> read_aligned_dataset(const std::string& path);

}  // namespace f2s
