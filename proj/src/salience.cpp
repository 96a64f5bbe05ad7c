#include "facts2story/salience.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace f2s {

namespace {

std::vector<std::string> whitespace_words(const std::string& text) {
    std::vector<std::string> words;
    std::istringstream in(text);
    std::string w;
    while (in >> w) words.push_back(w);
    return words;
}

}  // namespace

EmbeddingTable EmbeddingTable::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open embeddings file: " + path);
    EmbeddingTable table;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        std::vector<double> vec;
        double x = 0.0;
        while (ls >> x) vec.push_back(x);
        if (word.empty() || vec.empty())
            throw DataError(path + ":" + std::to_string(line_no) + ": malformed embedding entry");
        if (table.dimension == 0) table.dimension = static_cast<int>(vec.size());
        if (static_cast<int>(vec.size()) != table.dimension)
            throw DataError(path + ":" + std::to_string(line_no) + ": inconsistent embedding dimension");
        table.vectors.emplace(std::move(word), std::move(vec));
    }
    if (table.vectors.empty()) throw DataError("empty embeddings file: " + path);
    return table;
}

const std::vector<double>* EmbeddingTable::find(const std::string& word) const {
    auto it = vectors.find(word);
    return it == vectors.end() ? nullptr : &it->second;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<double> embed_fact(const ExtractionTuple& fact, const EmbeddingTable& table) {
    if (table.vectors.empty()) throw DataError("empty embedding table");
    std::vector<std::string> words = whitespace_words(fact.subject);
    for (const auto& w : whitespace_words(fact.relation)) words.push_back(w);
    for (const auto& w : whitespace_words(fact.object)) words.push_back(w);
    if (words.empty()) throw DataError("empty fact");

    std::vector<double> mean(static_cast<std::size_t>(table.dimension), 0.0);
    for (const auto& w : words) {
        if (const std::vector<double>* v = table.find(w))
            for (std::size_t d = 0; d < mean.size(); ++d) mean[d] += (*v)[d];
    }
    for (double& x : mean) x /= static_cast<double>(words.size());
    return mean;
}

SalienceGraph build_graph(const std::vector<ExtractionTuple>& facts, const EmbeddingTable& table,
                          bool uniform_prior) {
    if (facts.empty()) throw DataError("build_graph requires at least one fact");
    SalienceGraph g;
    g.facts = facts;
    g.embeddings.reserve(facts.size());
    for (const auto& f : facts) g.embeddings.push_back(embed_fact(f, table));

    const std::size_t n = facts.size();
    g.weights.assign(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double w = std::max(0.0, cosine(g.embeddings[i], g.embeddings[j]));
            g.weights[i][j] = w;
            g.weights[j][i] = w;
        }
    }

    g.prior.resize(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        g.prior[i] = uniform_prior ? 1.0 : 1.0 / (1.0 + static_cast<double>(facts[i].sentence_index));
        total += g.prior[i];
    }
    for (double& p : g.prior) p /= total;
    return g;
}

PageRankResult pagerank(const SalienceGraph& graph, const SalienceConfig& cfg) {
    const std::size_t n = graph.weights.size();
    PageRankResult result;
    if (n == 0) throw DataError("pagerank on empty graph");

    // Row-normalize; dangling rows teleport to the prior.
    std::vector<std::vector<double>> transition(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        const double row_sum = std::accumulate(graph.weights[i].begin(), graph.weights[i].end(), 0.0);
        for (std::size_t j = 0; j < n; ++j)
            transition[i][j] = row_sum > 0.0 ? graph.weights[i][j] / row_sum : graph.prior[j];
    }

    std::vector<double> scores = graph.prior;
    std::vector<double> next(n, 0.0);
    const double d = cfg.damping;
    for (int it = 1; it <= cfg.max_iterations; ++it) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) acc += transition[i][j] * scores[i];
            next[j] = (1.0 - d) * graph.prior[j] + d * acc;
        }
        double delta = 0.0;
        for (std::size_t j = 0; j < n; ++j) delta += std::abs(next[j] - scores[j]);
        scores.swap(next);
        result.iterations = it;
        if (delta < cfg.tolerance) {
            result.converged = true;
            break;
        }
    }
    result.scores = std::move(scores);
    return result;
}

Selection select_top_k(const SalienceGraph& graph, const std::vector<double>& scores,
                       const SalienceConfig& cfg) {
    if (cfg.k < 1) throw DataError("k must be at least 1");
    if (scores.size() != graph.facts.size()) throw DataError("score count does not match graph");

    std::vector<int> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });

    std::vector<int> picked;
    for (int candidate : order) {
        if (static_cast<int>(picked.size()) == cfg.k) break;
        bool redundant = false;
        for (int chosen : picked) {
            if (cosine(graph.embeddings[candidate], graph.embeddings[chosen]) > cfg.diversity_threshold) {
                redundant = true;
                break;
            }
        }
        if (!redundant) picked.push_back(candidate);
    }

    Selection sel;
    sel.complete = static_cast<int>(picked.size()) == cfg.k;
    // Narrative order: the task contract wants input order == story order.
    std::sort(picked.begin(), picked.end(), [&](int a, int b) {
        if (graph.facts[a].sentence_index != graph.facts[b].sentence_index)
            return graph.facts[a].sentence_index < graph.facts[b].sentence_index;
        return a < b;
    });
    sel.indices = std::move(picked);
    return sel;
}

std::string fact_to_sentence(const ExtractionTuple& fact) {
    if (fact.subject.empty() || fact.relation.empty())
        throw DataError("fact needs a subject and a relation");
    std::string out = fact.subject + " " + fact.relation;
    if (!fact.object.empty()) out += " " + fact.object;
    return out;
}

}  // namespace f2s
