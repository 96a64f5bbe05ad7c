#pragma once

#include <string>
#include <vector>

#include "facts2story/neural.hpp"
#include "facts2story/training.hpp"
#include "facts2story/types.hpp"

namespace f2s::planner {

// Encoder plus a d_model x 1 regression head ("head.w", "head.b" in store).
struct PlannerParams {
    neural::EncoderConfig config;
    neural::ParamStore store;
};

struct SpacingPrediction {
    std::vector<double> raw;  // post-ReLU, non-negative
    std::vector<int> rounded;  // floor(raw)
};

// Tail blanks appended after the last fact token. The ratio mode sizes the
// story to story_ratio times the fact token count; max_len is the hard cap
// of the downstream cloze model.
struct LengthPolicy {
    enum class Mode { kRatio, kFixed };
    Mode mode = Mode::kRatio;
    double story_ratio = 6.0;
    int fixed_tail = 0;
    int max_len = 256;
};

PlannerParams init_planner(const neural::EncoderConfig& cfg, neural::Rng& rng);

// Per-token spacing regression: encoder over the concatenated fact tokens
// (positions 1..F, per-token fact ids), head projection, ReLU.
std::vector<double> planner_forward(const PlannerParams& params, const FactSet& fact_set);

SpacingPrediction predict_spacings(const PlannerParams& params, const FactSet& fact_set);

// (y - y')^2 / ln(y + e). The +e smoothing keeps the denominator >= 1 and
// defined at y = 0 while preserving the small-target emphasis.
double spacing_loss(double y_true, double y_pred);

struct PlannerTrainResult {
    PlannerParams params;  // best-validation parameters
    neural::TrainState state;
    std::vector<neural::TrainLogRow> log;
};

PlannerTrainResult train_planner(const std::vector<AlignedExample>& dataset,
                                 const neural::EncoderConfig& enc_cfg,
                                 const neural::TrainConfig& train_cfg);

// Resumable variant; `state` carries parameters, optimizer moments and the
// epoch counter from a previous call.
PlannerTrainResult train_planner_from(const std::vector<AlignedExample>& dataset,
                                      neural::TrainState state,
                                      const neural::EncoderConfig& enc_cfg,
                                      const neural::TrainConfig& train_cfg);

// Floors the raw predictions and lays out the template; throws when the fact
// tokens cannot fit within policy.max_len.
ClozeTemplate plan(const PlannerParams& params, const FactSet& fact_set, const LengthPolicy& policy);

// The loss builder used by training; exposed for gradient checking.
neural::Var planner_example_loss(neural::Tape& tape, const std::map<std::string, neural::Var>& pv,
                                 const neural::EncoderConfig& cfg, const AlignedExample& example);

}  // namespace f2s::planner
