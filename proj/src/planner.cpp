#include "facts2story/planner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "facts2story/align.hpp"

namespace f2s::planner {

using neural::Tape;
using neural::Var;

namespace {

struct PlannerInputs {
    std::vector<int> tokens;
    std::vector<int> positions;  // 1..F
    std::vector<int> fact_ids;
    std::vector<std::uint8_t> mask;  // fully visible
};

PlannerInputs make_inputs(const std::vector<int>& tokens, const std::vector<int>& fact_index,
                          const neural::EncoderConfig& cfg) {
    PlannerInputs in;
    in.tokens = tokens;
    const std::size_t f = tokens.size();
    if (f + 1 > static_cast<std::size_t>(cfg.max_len))
        throw DataError("fact sequence longer than planner max_len");
    in.positions.resize(f);
    std::iota(in.positions.begin(), in.positions.end(), 1);
    in.fact_ids = fact_index;
    for (int fi : in.fact_ids)
        if (fi > cfg.n_fact_rows - 2)  // last row is reserved for "none"
            throw DataError("fact index exceeds the configured fact embedding rows");
    in.mask.assign(f * f, 1);
    return in;
}

Var head_projection(Tape& tape, const std::map<std::string, Var>& pv, Var hidden) {
    return tape.relu(tape.add_rowvec(tape.matmul(hidden, pv.at("head.w")), pv.at("head.b")));
}

}  // namespace

PlannerParams init_planner(const neural::EncoderConfig& cfg, neural::Rng& rng) {
    PlannerParams params;
    params.config = cfg;
    params.store = neural::init_encoder_params(cfg, rng);
    neural::Tensor w(static_cast<std::size_t>(cfg.d_model), 1);
    for (double& x : w.data) x = 0.02 * rng.normal();
    params.store["head.w"] = std::move(w);
    params.store["head.b"] = neural::Tensor(1, 1, 0.0);
    return params;
}

std::vector<double> planner_forward(const PlannerParams& params, const FactSet& fact_set) {
    const TokenSequence tokens = fact_set.concatenated();
    if (tokens.empty()) throw DataError("planner_forward: empty fact set");
    const PlannerInputs in = make_inputs(std::vector<int>(tokens.begin(), tokens.end()),
                                         fact_set.fact_index_per_token(), params.config);
    Tape tape;
    auto pv = neural::make_param_vars(tape, params.store);
    Var hidden = neural::encoder_forward(tape, pv, params.config, in.tokens, in.positions,
                                         in.fact_ids, in.mask);
    Var raw = head_projection(tape, pv, hidden);
    const neural::Tensor& t = tape.value(raw);
    std::vector<double> out(t.rows());
    for (std::size_t i = 0; i < t.rows(); ++i) out[i] = t.at(i, 0);
    return out;
}

SpacingPrediction predict_spacings(const PlannerParams& params, const FactSet& fact_set) {
    SpacingPrediction pred;
    pred.raw = planner_forward(params, fact_set);
    pred.rounded.reserve(pred.raw.size());
    for (double r : pred.raw) pred.rounded.push_back(static_cast<int>(std::floor(r)));
    return pred;
}

double spacing_loss(double y_true, double y_pred) {
    const double diff = y_true - y_pred;
    return diff * diff / std::log(y_true + std::exp(1.0));
}

Var planner_example_loss(Tape& tape, const std::map<std::string, Var>& pv,
                         const neural::EncoderConfig& cfg, const AlignedExample& example) {
    const PlannerInputs in = make_inputs(
        std::vector<int>(example.fact_tokens.begin(), example.fact_tokens.end()),
        example.fact_index, cfg);
    Var hidden = neural::encoder_forward(tape, pv, cfg, in.tokens, in.positions, in.fact_ids, in.mask);
    Var raw = head_projection(tape, pv, hidden);
    std::vector<double> labels(example.spacings.begin(), example.spacings.end());
    return tape.spacing_loss(raw, labels);
}

PlannerTrainResult train_planner_from(const std::vector<AlignedExample>& dataset,
                                      neural::TrainState state,
                                      const neural::EncoderConfig& enc_cfg,
                                      const neural::TrainConfig& train_cfg) {
    auto builder = [&enc_cfg](Tape& tape, const std::map<std::string, Var>& pv,
                              const AlignedExample& ex) {
        return planner_example_loss(tape, pv, enc_cfg, ex);
    };
    neural::TrainResult core = neural::train_loop(dataset, std::move(state), train_cfg, builder);

    PlannerTrainResult result;
    result.params.config = enc_cfg;
    result.params.store = core.state.best_params;
    result.state = std::move(core.state);
    result.log = std::move(core.log);
    return result;
}

PlannerTrainResult train_planner(const std::vector<AlignedExample>& dataset,
                                 const neural::EncoderConfig& enc_cfg,
                                 const neural::TrainConfig& train_cfg) {
    neural::Rng rng(train_cfg.seed);
    neural::TrainState state;
    state.params = init_planner(enc_cfg, rng).store;
    return train_planner_from(dataset, std::move(state), enc_cfg, train_cfg);
}

ClozeTemplate plan(const PlannerParams& params, const FactSet& fact_set, const LengthPolicy& policy) {
    const SpacingPrediction pred = predict_spacings(params, fact_set);
    const int f = static_cast<int>(pred.rounded.size());
    const int body = std::accumulate(pred.rounded.begin(), pred.rounded.end(), 0) + f;
    if (body > policy.max_len) throw DataError("facts exceed max length");

    int tail = 0;
    if (policy.mode == LengthPolicy::Mode::kRatio)
        tail = std::max(0, static_cast<int>(std::llround(policy.story_ratio * f)) - body);
    else
        tail = std::max(0, policy.fixed_tail);
    if (body + tail > policy.max_len) tail = policy.max_len - body;

    return spacings_to_template(fact_set, pred.rounded, tail);
}

}  // namespace f2s::planner
