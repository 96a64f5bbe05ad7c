#include "facts2story/cloze.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "facts2story/corpus.hpp"

namespace f2s::cloze {

using neural::Tape;
using neural::Var;

namespace {

struct StepInputs {
    std::vector<int> tokens;
    std::vector<int> positions;
    std::vector<int> fact_ids;
    std::vector<std::uint8_t> mask;
};

// Inputs for predicting position i: committed content everywhere visible,
// BLANK at i and at every unfilled blank, and a key-visibility mask shared by
// all query rows so nothing downstream of i can leak in.
StepInputs make_step_inputs(const TemplateState& state, int i, const neural::EncoderConfig& cfg) {
    const int t = state.length();
    if (t > cfg.max_len) throw DataError("template longer than max_len");
    StepInputs in;
    in.tokens.resize(static_cast<std::size_t>(t));
    in.positions.resize(static_cast<std::size_t>(t));
    in.fact_ids.assign(static_cast<std::size_t>(t), cfg.n_fact_rows - 1);  // "none" row
    std::vector<std::uint8_t> visible(static_cast<std::size_t>(t), 0);
    for (int pos = 0; pos < t; ++pos) {
        const bool committed = state.is_known(pos) || (state.is_filled(pos) && pos < i);
        in.tokens[static_cast<std::size_t>(pos)] =
            committed ? state.token(pos) : Vocabulary::kBlank;
        in.positions[static_cast<std::size_t>(pos)] = pos;
        visible[static_cast<std::size_t>(pos)] = committed || pos == i ? 1 : 0;
    }
    in.mask.resize(static_cast<std::size_t>(t) * static_cast<std::size_t>(t));
    for (int q = 0; q < t; ++q)
        for (int k = 0; k < t; ++k)
            in.mask[static_cast<std::size_t>(q) * static_cast<std::size_t>(t) +
                    static_cast<std::size_t>(k)] = visible[static_cast<std::size_t>(k)];
    return in;
}

Var step_logits_var(Tape& tape, const std::map<std::string, Var>& pv,
                    const neural::EncoderConfig& cfg, const TemplateState& state, int i) {
    const StepInputs in = make_step_inputs(state, i, cfg);
    Var hidden = neural::encoder_forward(tape, pv, cfg, in.tokens, in.positions, in.fact_ids, in.mask);
    Var row = tape.pick_row(hidden, static_cast<std::size_t>(i));
    return tape.add_rowvec(tape.matmul(row, pv.at("out.w")), pv.at("out.b"));
}

TemplateState state_from_example(const AlignedExample& example) {
    ClozeTemplate tpl;
    tpl.length = static_cast<int>(example.story.size());
    for (int pos : example.positions) tpl.known.emplace(pos, example.story[static_cast<std::size_t>(pos)]);
    return TemplateState(tpl);
}

void check_blank_step(const TemplateState& state, int i) {
    if (i < 0 || i >= state.length()) throw DataError("cloze_logits: position out of range");
    if (state.is_known(i) || state.is_filled(i)) throw DataError("cloze_logits: position is not a blank");
    for (int pos : state.blanks()) {
        if (pos >= i) break;
        if (!state.is_filled(pos)) throw DataError("cloze_logits: earlier blank not yet filled");
    }
}

std::vector<double> softmax_probs(std::span<const double> logits, double temperature) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double l : logits) mx = std::max(mx, l);
    std::vector<double> probs(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        probs[i] = std::exp((logits[i] - mx) / temperature);
        z += probs[i];
    }
    for (double& p : probs) p /= z;
    return probs;
}

TokenId sample_from(const std::vector<double>& weights, neural::Rng& rng) {
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    const double u = rng.uniform() * total;
    double cum = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        cum += weights[i];
        if (u < cum) return static_cast<TokenId>(i);
    }
    for (std::size_t i = weights.size(); i-- > 0;)
        if (weights[i] > 0.0) return static_cast<TokenId>(i);
    return 0;
}

}  // namespace

TemplateState::TemplateState(const ClozeTemplate& tpl) {
    if (tpl.length <= 0) throw DataError("template length must be positive");
    if (tpl.known.empty()) throw DataError("template needs at least one known token");
    tokens_.assign(static_cast<std::size_t>(tpl.length), Vocabulary::kBlank);
    known_.assign(static_cast<std::size_t>(tpl.length), false);
    filled_.assign(static_cast<std::size_t>(tpl.length), false);
    for (const auto& [pos, id] : tpl.known) {
        if (pos < 0 || pos >= tpl.length) throw DataError("known position outside template");
        tokens_[static_cast<std::size_t>(pos)] = id;
        known_[static_cast<std::size_t>(pos)] = true;
        filled_[static_cast<std::size_t>(pos)] = true;
    }
    for (int pos = 0; pos < tpl.length; ++pos)
        if (!known_[static_cast<std::size_t>(pos)]) blanks_.push_back(pos);
}

void TemplateState::set(int pos, TokenId id) {
    if (pos < 0 || pos >= length()) throw DataError("position outside template");
    if (known_[static_cast<std::size_t>(pos)]) throw DataError("cannot overwrite a known position");
    tokens_[static_cast<std::size_t>(pos)] = id;
    filled_[static_cast<std::size_t>(pos)] = true;
}

ClozeLMParams init_cloze(const neural::EncoderConfig& cfg, neural::Rng& rng) {
    ClozeLMParams params;
    params.config = cfg;
    params.store = neural::init_encoder_params(cfg, rng);
    neural::Tensor w(static_cast<std::size_t>(cfg.d_model), static_cast<std::size_t>(cfg.vocab_size));
    for (double& x : w.data) x = 0.02 * rng.normal();
    params.store["out.w"] = std::move(w);
    params.store["out.b"] = neural::Tensor(1, static_cast<std::size_t>(cfg.vocab_size), 0.0);
    return params;
}

std::vector<double> cloze_logits(const ClozeLMParams& params, const TemplateState& state, int i) {
    check_blank_step(state, i);
    Tape tape;
    auto pv = neural::make_param_vars(tape, params.store);
    Var logits = step_logits_var(tape, pv, params.config, state, i);
    return tape.value(logits).data;
}

Var cloze_example_loss(Tape& tape, const std::map<std::string, Var>& pv,
                       const neural::EncoderConfig& cfg, const AlignedExample& example) {
    TemplateState state = state_from_example(example);
    if (state.blanks().empty()) throw DataError("nothing to predict");
    std::vector<Var> losses;
    losses.reserve(state.blanks().size());
    for (int pos : state.blanks()) {
        Var logits = step_logits_var(tape, pv, cfg, state, pos);
        losses.push_back(tape.cross_entropy(logits, example.story[static_cast<std::size_t>(pos)]));
        state.set(pos, example.story[static_cast<std::size_t>(pos)]);  // teacher forcing
    }
    return tape.mean_scalars(losses);
}

double cloze_loss(const ClozeLMParams& params, const AlignedExample& example) {
    Tape tape;
    auto pv = neural::make_param_vars(tape, params.store);
    return tape.value(cloze_example_loss(tape, pv, params.config, example)).at(0, 0);
}

double sequence_log_prob(const ClozeLMParams& params, const TokenSequence& story,
                         const std::set<int>& known_positions) {
    ClozeTemplate tpl;
    tpl.length = static_cast<int>(story.size());
    for (int pos : known_positions) {
        if (pos < 0 || pos >= tpl.length) throw DataError("known position outside story");
        tpl.known.emplace(pos, story[static_cast<std::size_t>(pos)]);
    }
    TemplateState state(tpl);
    if (state.blanks().empty()) throw DataError("nothing to predict");

    double log_prob = 0.0;
    for (int pos : state.blanks()) {
        const std::vector<double> logits = cloze_logits(params, state, pos);
        const TokenId truth = story[static_cast<std::size_t>(pos)];
        double mx = -std::numeric_limits<double>::infinity();
        for (double l : logits) mx = std::max(mx, l);
        double z = 0.0;
        for (double l : logits) z += std::exp(l - mx);
        log_prob += (logits[static_cast<std::size_t>(truth)] - mx) - std::log(z);
        state.set(pos, truth);
    }
    return log_prob;
}

double blank_accuracy(const ClozeLMParams& params, const AlignedExample& example) {
    TemplateState state = state_from_example(example);
    if (state.blanks().empty()) throw DataError("nothing to predict");
    std::size_t hits = 0;
    for (int pos : state.blanks()) {
        const std::vector<double> logits = cloze_logits(params, state, pos);
        const TokenId truth = example.story[static_cast<std::size_t>(pos)];
        if (argmax(logits) == truth) ++hits;
        state.set(pos, truth);
    }
    return static_cast<double>(hits) / static_cast<double>(state.blanks().size());
}

ClozeTrainResult train_cloze_from(const std::vector<AlignedExample>& dataset,
                                  neural::TrainState state, const neural::EncoderConfig& enc_cfg,
                                  const neural::TrainConfig& train_cfg) {
    auto builder = [&enc_cfg](Tape& tape, const std::map<std::string, Var>& pv,
                              const AlignedExample& ex) {
        return cloze_example_loss(tape, pv, enc_cfg, ex);
    };
    neural::TrainResult core = neural::train_loop(dataset, std::move(state), train_cfg, builder);

    ClozeTrainResult result;
    result.params.config = enc_cfg;
    result.params.store = core.state.best_params;
    result.state = std::move(core.state);
    result.log = std::move(core.log);
    return result;
}

ClozeTrainResult train_cloze(const std::vector<AlignedExample>& dataset,
                             const neural::EncoderConfig& enc_cfg,
                             const neural::TrainConfig& train_cfg) {
    neural::Rng rng(train_cfg.seed);
    neural::TrainState state;
    state.params = init_cloze(enc_cfg, rng).store;
    return train_cloze_from(dataset, std::move(state), enc_cfg, train_cfg);
}

TokenSequence fill(const ClozeLMParams& params, const ClozeTemplate& tpl, const DecodingConfig& dec) {
    TemplateState state(tpl);
    neural::Rng rng(dec.seed);
    std::vector<TokenId> history;
    for (int pos : state.blanks()) {
        std::vector<double> logits = cloze_logits(params, state, pos);
        // generated text never contains the pad/blank/unk placeholders
        if (params.config.vocab_size > Vocabulary::kUnk + 1)
            for (TokenId special : {Vocabulary::kPad, Vocabulary::kBlank, Vocabulary::kUnk})
                logits[static_cast<std::size_t>(special)] = -std::numeric_limits<double>::infinity();
        if (dec.repetition_penalty > 1.0)
            logits = apply_repetition_penalty(std::move(logits), history, dec.repetition_penalty);
        TokenId next = 0;
        switch (dec.strategy) {
            case DecodingConfig::Strategy::kGreedy:
                next = argmax(logits);
                break;
            case DecodingConfig::Strategy::kTopK:
                next = sample_top_k(logits, dec.k, dec.temperature, rng);
                break;
            case DecodingConfig::Strategy::kNucleus:
                next = sample_nucleus(logits, dec.p, dec.temperature, rng);
                break;
        }
        state.set(pos, next);
        history.push_back(next);
    }
    return state.tokens();
}

TokenId argmax(std::span<const double> logits) {
    if (logits.empty()) throw DataError("argmax over empty logits");
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i)
        if (logits[i] > logits[best]) best = i;
    return static_cast<TokenId>(best);
}

TokenId sample_top_k(std::span<const double> logits, int k, double temperature, neural::Rng& rng) {
    if (k < 1) throw DataError("top-k requires k >= 1");
    if (temperature <= 0.0) throw DataError("temperature must be positive");
    const std::size_t kk = std::min(static_cast<std::size_t>(k), logits.size());

    std::vector<std::size_t> order(logits.size());
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(kk), order.end(),
                      [&](std::size_t a, std::size_t b) {
                          if (logits[a] != logits[b]) return logits[a] > logits[b];
                          return a < b;
                      });
    order.resize(kk);
    std::sort(order.begin(), order.end());  // deterministic cumulative walk

    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i : order) mx = std::max(mx, logits[i]);
    std::vector<double> weights(logits.size(), 0.0);
    for (std::size_t i : order) weights[i] = std::exp((logits[i] - mx) / temperature);
    return sample_from(weights, rng);
}

TokenId sample_nucleus(std::span<const double> logits, double p, double temperature,
                       neural::Rng& rng) {
    if (p <= 0.0 || p > 1.0) throw DataError("nucleus p must be in (0, 1]");
    if (temperature <= 0.0) throw DataError("temperature must be positive");
    const std::vector<double> probs = softmax_probs(logits, temperature);

    std::vector<std::size_t> order(probs.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (probs[a] != probs[b]) return probs[a] > probs[b];
        return a < b;
    });

    std::vector<double> weights(probs.size(), 0.0);
    double cum = 0.0;
    for (std::size_t i : order) {
        weights[i] = probs[i];  // the top token is always in the nucleus
        cum += probs[i];
        if (cum >= p) break;
    }
    return sample_from(weights, rng);
}

std::vector<double> apply_repetition_penalty(std::vector<double> logits,
                                             const std::vector<TokenId>& history, double penalty) {
    if (penalty < 1.0) throw DataError("repetition penalty must be >= 1");
    std::set<TokenId> seen(history.begin(), history.end());
    for (TokenId id : seen) {
        if (id < 0 || static_cast<std::size_t>(id) >= logits.size()) continue;
        double& l = logits[static_cast<std::size_t>(id)];
        l = l > 0.0 ? l / penalty : l * penalty;
    }
    return logits;
}

}  // namespace f2s::cloze
