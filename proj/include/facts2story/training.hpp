#pragma once

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "facts2story/neural.hpp"
#include "facts2story/types.hpp"

namespace f2s::neural {

struct TrainConfig {
    int epochs = 50;
    int batch_size = 8;
    AdamConfig adam;
    std::uint64_t seed = 0;
    double validation_fraction = 1.0 / 9.0;
};

struct TrainLogRow {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = std::numeric_limits<double>::quiet_NaN();
};

// Builds the scalar loss of one example on the given tape, reusing the shared
// parameter leaves so gradients accumulate across a batch.
using ExampleLossBuilder =
    std::function<Var(Tape&, const std::map<std::string, Var>&, const AlignedExample&)>;

// Everything needed to continue training bit-exactly. Epoch shuffles are
// derived from (seed, epoch), so no RNG state needs to survive a resume.
struct TrainState {
    ParamStore params;
    AdamState adam;
    int epochs_done = 0;
    double best_val_loss = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    ParamStore best_params;
};

struct TrainResult {
    TrainState state;
    std::vector<TrainLogRow> log;  // rows for the epochs run by this call
};

// Adam training over a deterministic shuffle. The validation split is
// recomputed from cfg.seed, so resuming from a TrainState continues the exact
// run. Returns the state after cfg.epochs total epochs; best_params holds the
// parameters at the lowest validation loss (training loss when the dataset is
// too small to hold out anything).
TrainResult train_loop(const std::vector<AlignedExample>& dataset, TrainState init,
                       const TrainConfig& cfg, const ExampleLossBuilder& build_loss);

// Mean loss without gradient bookkeeping.
double dataset_loss(const std::vector<AlignedExample>& dataset, const ParamStore& params,
                    const ExampleLossBuilder& build_loss);

}  // namespace f2s::neural
