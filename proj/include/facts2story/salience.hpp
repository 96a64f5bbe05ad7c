#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "facts2story/corpus.hpp"
#include "facts2story/types.hpp"

namespace f2s {

// Word -> dense vector table in GloVe text format: one entry per line,
// the word followed by `dimension` decimal reals.
struct EmbeddingTable {
    int dimension = 0;
    std::unordered_map<std::string, std::vector<double>> vectors;

    static EmbeddingTable load(const std::string& path);
    const std::vector<double>* find(const std::string& word) const;
};

struct SalienceConfig {
    double damping = 0.85;
    double tolerance = 1e-10;
    int max_iterations = 1000;
    int k = 5;
    double diversity_threshold = 0.95;
    bool uniform_prior = false;
};

// Facts as vertices, clamped cosine similarities as edge weights, and a
// position prior proportional to 1/(1 + sentence_index).
struct SalienceGraph {
    std::vector<ExtractionTuple> facts;
    std::vector<std::vector<double>> embeddings;
    std::vector<std::vector<double>> weights;  // symmetric, zero diagonal
    std::vector<double> prior;                 // sums to 1
};

struct PageRankResult {
    std::vector<double> scores;
    bool converged = false;
    int iterations = 0;
};

// Indices into the graph's fact list, reordered by sentence_index ascending.
// `complete` is false when diversity filtering left fewer than k facts.
struct Selection {
    std::vector<int> indices;
    bool complete = true;
};

double cosine(const std::vector<double>& a, const std::vector<double>& b);

// Mean embedding of all whitespace words in subject+relation+object; words
// missing from the table contribute a zero vector but still count.
std::vector<double> embed_fact(const ExtractionTuple& fact, const EmbeddingTable& table);

SalienceGraph build_graph(const std::vector<ExtractionTuple>& facts, const EmbeddingTable& table,
                          bool uniform_prior = false);

// Power iteration on s <- (1-d) * prior + d * What^T s, where What is the
// row-normalized weight matrix and all-zero rows teleport to the prior.
PageRankResult pagerank(const SalienceGraph& graph, const SalienceConfig& cfg);

// Greedy descending-score selection with a pairwise cosine diversity filter.
Selection select_top_k(const SalienceGraph& graph, const std::vector<double>& scores,
                       const SalienceConfig& cfg);

// Single-space join of subject, relation and object (object may be empty).
std::string fact_to_sentence(const ExtractionTuple& fact);

}  // namespace f2s
