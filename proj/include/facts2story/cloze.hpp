#pragma once

#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "facts2story/neural.hpp"
#include "facts2story/training.hpp"
#include "facts2story/types.hpp"

namespace f2s::cloze {

// Encoder plus a d_model x vocab_size output head ("out.w", "out.b").
struct ClozeLMParams {
    neural::EncoderConfig config;
    neural::ParamStore store;
};

struct DecodingConfig {
    enum class Strategy { kGreedy, kTopK, kNucleus };
    Strategy strategy = Strategy::kTopK;
    int k = 40;
    double p = 0.9;
    double temperature = 0.85;
    double repetition_penalty = 1.0;
    std::uint64_t seed = 0;
};

// Working canvas during generation: known positions are fixed, blanks start
// as BLANK tokens and are committed left to right.
class TemplateState {
public:
    explicit TemplateState(const ClozeTemplate& tpl);

    int length() const { return static_cast<int>(tokens_.size()); }
    bool is_known(int pos) const { return known_[static_cast<std::size_t>(pos)]; }
    bool is_filled(int pos) const { return filled_[static_cast<std::size_t>(pos)]; }
    TokenId token(int pos) const { return tokens_[static_cast<std::size_t>(pos)]; }
    const TokenSequence& tokens() const { return tokens_; }
    const std::vector<int>& blanks() const { return blanks_; }

    void set(int pos, TokenId id);  // commits a blank

private:
    TokenSequence tokens_;
    std::vector<bool> known_;
    std::vector<bool> filled_;
    std::vector<int> blanks_;
};

ClozeLMParams init_cloze(const neural::EncoderConfig& cfg, neural::Rng& rng);

// Logits for blank position i, conditioned on the known tokens and every
// committed blank before i. Unfilled blanks enter the encoder as BLANK tokens
// and are masked out of attention entirely.
std::vector<double> cloze_logits(const ClozeLMParams& params, const TemplateState& state, int i);

// Teacher-forced mean cross-entropy over the blanks in ascending order.
double cloze_loss(const ClozeLMParams& params, const AlignedExample& example);

// Sum of log-probabilities of the true tokens at the blanks; equals
// -(number of blanks) * cloze_loss.
double sequence_log_prob(const ClozeLMParams& params, const TokenSequence& story,
                         const std::set<int>& known_positions);

// Fraction of blanks whose teacher-forced argmax matches the story.
double blank_accuracy(const ClozeLMParams& params, const AlignedExample& example);

struct ClozeTrainResult {
    ClozeLMParams params;
    neural::TrainState state;
    std::vector<neural::TrainLogRow> log;
};

ClozeTrainResult train_cloze(const std::vector<AlignedExample>& dataset,
                             const neural::EncoderConfig& enc_cfg,
                             const neural::TrainConfig& train_cfg);

ClozeTrainResult train_cloze_from(const std::vector<AlignedExample>& dataset,
                                  neural::TrainState state, const neural::EncoderConfig& enc_cfg,
                                  const neural::TrainConfig& train_cfg);

// Fills every blank left to right with the configured sampling strategy.
// Known positions come through verbatim for any seed and strategy.
TokenSequence fill(const ClozeLMParams& params, const ClozeTemplate& tpl, const DecodingConfig& dec);

TokenId sample_top_k(std::span<const double> logits, int k, double temperature, neural::Rng& rng);
TokenId sample_nucleus(std::span<const double> logits, double p, double temperature,
                       neural::Rng& rng);
TokenId argmax(std::span<const double> logits);

// Discount rule: logits of already-generated tokens are divided by the
// penalty when positive, multiplied when non-positive. Applied once per
// distinct token; penalty 1 is the identity.
std::vector<double> apply_repetition_penalty(std::vector<double> logits,
                                             const std::vector<TokenId>& history, double penalty);

// Loss builder used by training; exposed for gradient checking.
neural::Var cloze_example_loss(neural::Tape& tape, const std::map<std::string, neural::Var>& pv,
                               const neural::EncoderConfig& cfg, const AlignedExample& example);

}  // namespace f2s::cloze
