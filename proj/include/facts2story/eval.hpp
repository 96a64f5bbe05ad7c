#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "facts2story/types.hpp"

namespace f2s::eval {

struct AdherenceResult {
    std::vector<bool> per_fact;
    int count = 0;
    std::vector<std::optional<std::pair<int, int>>> spans;  // [start, end] per found fact
};

struct EvalReport {
    std::string model;
    double mean_facts_found = 0.0;
    int n = 0;
    std::vector<AdherenceResult> per_story;
};

// A fact counts as found when its tokens occur in-order in the story within a
// span of at most |fact| + window_slack, starting at or after the previous
// found fact's match start. Among the in-order matchings the largest set of
// facts wins (ties prefer earlier facts), which keeps the count monotone in
// window_slack. Verbatim matching only; rephrasings do not count.
AdherenceResult fact_adherence(const TokenSequence& story, const FactSet& fact_set,
                               int window_slack = 10);

EvalReport aggregate_report(const std::vector<AdherenceResult>& results, const std::string& model);

// Reference facts-found means printed alongside every report for orientation;
// they are human judgments of large fine-tuned models and are never asserted.
struct ReferenceMeans {
    double gpt2_psa = 0.75;
    double bart = 1.61;
    double xlnet_plan_cloze = 4.39;
};
inline constexpr ReferenceMeans kReferenceMeans{};

std::string report_to_json(const EvalReport& report);

}  // namespace f2s::eval
