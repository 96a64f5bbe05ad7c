#include "facts2story/eval.hpp"

#include <json.hpp>

namespace f2s::eval {

namespace {

// Smallest-span in-order match of `fact` into `story` starting at or after
// `from`. For a fixed start the greedy leftmost continuation minimizes the
// end, so the first start whose greedy span fits is the answer.
std::optional<std::pair<int, int>> find_match(const TokenSequence& story, const TokenSequence& fact,
                                              int from, int max_span) {
    const int t = static_cast<int>(story.size());
    const int f = static_cast<int>(fact.size());
    for (int start = from; start + f <= t; ++start) {
        if (story[static_cast<std::size_t>(start)] != fact[0]) continue;
        int cursor = start + 1;
        int end = start;
        bool ok = true;
        for (int j = 1; j < f; ++j) {
            while (cursor < t && story[static_cast<std::size_t>(cursor)] != fact[static_cast<std::size_t>(j)])
                ++cursor;
            if (cursor >= t) {
                ok = false;
                break;
            }
            end = cursor;
            ++cursor;
        }
        if (ok && end - start + 1 <= max_span) return std::make_pair(start, end);
    }
    return std::nullopt;
}

}  // namespace

namespace {

// Maximizes the number of facts matched in order (match starts non-decreasing),
// preferring to take the current fact on ties. Pure greedy would let a newly
// affordable early fact displace several later ones, breaking monotonicity in
// window_slack; one step of lookahead per fact restores it.
int best_from(const TokenSequence& story, const FactSet& fact_set, int window_slack,
              std::size_t i, int from, std::vector<std::optional<std::pair<int, int>>>* taken) {
    if (i == fact_set.size()) return 0;
    const TokenSequence& fact = fact_set.facts[i];
    if (fact.empty()) throw DataError("empty fact");
    const int max_span = static_cast<int>(fact.size()) + window_slack;

    const int skip = best_from(story, fact_set, window_slack, i + 1, from, nullptr);
    const auto match = find_match(story, fact, from, max_span);
    if (!match) {
        if (taken != nullptr) best_from(story, fact_set, window_slack, i + 1, from, taken);
        return skip;
    }
    const int take = 1 + best_from(story, fact_set, window_slack, i + 1, match->first, nullptr);
    if (take >= skip) {
        if (taken != nullptr) {
            (*taken)[i] = match;
            best_from(story, fact_set, window_slack, i + 1, match->first, taken);
        }
        return take;
    }
    if (taken != nullptr) best_from(story, fact_set, window_slack, i + 1, from, taken);
    return skip;
}

}  // namespace

AdherenceResult fact_adherence(const TokenSequence& story, const FactSet& fact_set,
                               int window_slack) {
    if (window_slack < 0) throw DataError("window_slack must be non-negative");
    AdherenceResult result;
    result.per_fact.resize(fact_set.size(), false);
    result.spans.resize(fact_set.size());

    best_from(story, fact_set, window_slack, 0, 0, &result.spans);
    for (std::size_t i = 0; i < fact_set.size(); ++i) {
        if (result.spans[i]) {
            result.per_fact[i] = true;
            result.count += 1;
        }
    }
    return result;
}

EvalReport aggregate_report(const std::vector<AdherenceResult>& results, const std::string& model) {
    if (results.empty()) throw DataError("aggregate_report needs at least one result");
    EvalReport report;
    report.model = model;
    report.n = static_cast<int>(results.size());
    double total = 0.0;
    for (const auto& r : results) total += static_cast<double>(r.count);
    report.mean_facts_found = total / static_cast<double>(report.n);
    report.per_story = results;
    return report;
}

std::string report_to_json(const EvalReport& report) {
    nlohmann::json j;
    j["model"] = report.model;
    j["mean_facts_found"] = report.mean_facts_found;
    j["n"] = report.n;
    nlohmann::json stories = nlohmann::json::array();
    for (const auto& r : report.per_story) {
        nlohmann::json s;
        s["count"] = r.count;
        s["per_fact"] = r.per_fact;
        nlohmann::json spans = nlohmann::json::array();
        for (const auto& span : r.spans) {
            if (span)
                spans.push_back(nlohmann::json::array({span->first, span->second}));
            else
                spans.push_back(nullptr);
        }
        s["spans"] = spans;
        stories.push_back(s);
    }
    j["per_story"] = stories;
    j["paper_reference"] = {{"gpt2_psa", kReferenceMeans.gpt2_psa},
                            {"bart", kReferenceMeans.bart},
                            {"xlnet_plan_cloze", kReferenceMeans.xlnet_plan_cloze}};
    return j.dump(2);
}

}  // namespace f2s::eval
