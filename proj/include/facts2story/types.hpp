#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace f2s {

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

// Raised for malformed or missing input data (maps to exit code 2 in the CLI).
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Raised when training or inference produces non-finite values (exit code 3).
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Ordered key facts. Fact order is narrative order; each fact is non-empty.
struct FactSet {
    std::vector<TokenSequence> facts;

    std::size_t size() const { return facts.size(); }

    std::size_t total_tokens() const {
        std::size_t n = 0;
        for (const auto& f : facts) n += f.size();
        return n;
    }

    TokenSequence concatenated() const {
        TokenSequence out;
        out.reserve(total_tokens());
        for (const auto& f : facts) out.insert(out.end(), f.begin(), f.end());
        return out;
    }

    // Fact index of every token in the concatenated sequence.
    std::vector<int> fact_index_per_token() const {
        std::vector<int> idx;
        idx.reserve(total_tokens());
        for (std::size_t i = 0; i < facts.size(); ++i)
            idx.insert(idx.end(), facts[i].size(), static_cast<int>(i));
        return idx;
    }
};

// A story together with the located fact tokens, the training unit for the
// planner and the cloze model.
//
// Invariants: positions strictly increasing, story[positions[j]] == fact_tokens[j],
// spacings[0] == positions[0] and spacings[j] == positions[j] - positions[j-1] - 1.
struct AlignedExample {
    std::string doc_id;
    TokenSequence story;
    TokenSequence fact_tokens;
    std::vector<int> fact_index;  // per fact token, 0-based
    std::vector<int> positions;   // indices into story
    std::vector<int> spacings;
};

// Fixed-length token canvas: `known` pins tokens at absolute positions, every
// other position is a blank to be generated.
struct ClozeTemplate {
    int length = 0;
    std::map<int, TokenId> known;
};

}  // namespace f2s
