#include "facts2story/training.hpp"

#include <cmath>
#include <numeric>

namespace f2s::neural {

namespace {

// Validation indices come first in the seeded shuffle; floor() keeps tiny
// datasets fully in training.
void split_dataset(std::size_t n, std::uint64_t seed, double fraction,
                   std::vector<std::size_t>& train_idx, std::vector<std::size_t>& val_idx) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(order);
    const auto val_count = static_cast<std::size_t>(std::floor(static_cast<double>(n) * fraction));
    val_idx.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(val_count));
    train_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(val_count), order.end());
}

// Epoch ordering depends only on (seed, epoch), never on history, so a
// resumed run shuffles exactly like the uninterrupted one.
std::vector<std::size_t> epoch_order(const std::vector<std::size_t>& train_idx, std::uint64_t seed,
                                     int epoch) {
    std::vector<std::size_t> order = train_idx;
    Rng rng(seed + 1 + static_cast<std::uint64_t>(epoch));
    rng.shuffle(order);
    return order;
}

double batch_step(const std::vector<AlignedExample>& dataset, const std::vector<std::size_t>& batch,
                  TrainState& state, const TrainConfig& cfg, const ExampleLossBuilder& build_loss) {
    Tape tape;
    auto pv = make_param_vars(tape, state.params);
    std::vector<Var> losses;
    losses.reserve(batch.size());
    for (std::size_t idx : batch) losses.push_back(build_loss(tape, pv, dataset[idx]));
    Var loss = tape.mean_scalars(losses);
    const double loss_value = tape.value(loss).at(0, 0);
    if (!std::isfinite(loss_value)) throw NumericError("non-finite training loss");

    tape.backward(loss);
    GradStore grads;
    for (const auto& [name, var] : pv) grads[name] = tape.grad(var);
    adam_step(state.adam, state.params, grads, cfg.adam);
    return loss_value;
}

}  // namespace

double dataset_loss(const std::vector<AlignedExample>& dataset, const ParamStore& params,
                    const ExampleLossBuilder& build_loss) {
    if (dataset.empty()) throw DataError("empty dataset");
    double total = 0.0;
    for (const auto& ex : dataset) {
        Tape tape;
        auto pv = make_param_vars(tape, params);
        total += tape.value(build_loss(tape, pv, ex)).at(0, 0);
    }
    return total / static_cast<double>(dataset.size());
}

TrainResult train_loop(const std::vector<AlignedExample>& dataset, TrainState init,
                       const TrainConfig& cfg, const ExampleLossBuilder& build_loss) {
    if (dataset.empty()) throw DataError("empty dataset");
    if (cfg.batch_size < 1 || cfg.epochs < 0) throw DataError("invalid training config");
    if (cfg.validation_fraction < 0.0 || cfg.validation_fraction >= 1.0)
        throw DataError("validation fraction must be in [0, 1)");

    std::vector<std::size_t> train_idx, val_idx;
    split_dataset(dataset.size(), cfg.seed, cfg.validation_fraction, train_idx, val_idx);
    if (train_idx.empty()) throw DataError("validation split leaves no training data");

    std::vector<AlignedExample> val_set;
    val_set.reserve(val_idx.size());
    for (std::size_t i : val_idx) val_set.push_back(dataset[i]);

    TrainResult result;
    result.state = std::move(init);
    TrainState& state = result.state;
    if (state.best_params.empty()) {
        state.best_params = state.params;
        state.best_val_loss = std::numeric_limits<double>::infinity();
    }

    for (int epoch = state.epochs_done + 1; epoch <= cfg.epochs; ++epoch) {
        const std::vector<std::size_t> order = epoch_order(train_idx, cfg.seed, epoch);
        double train_loss_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(stop));
            const double batch_loss = batch_step(dataset, batch, state, cfg, build_loss);
            train_loss_sum += batch_loss * static_cast<double>(batch.size());
            seen += batch.size();
        }

        TrainLogRow row;
        row.epoch = epoch;
        row.train_loss = train_loss_sum / static_cast<double>(seen);
        const double selection_loss =
            val_set.empty() ? row.train_loss : dataset_loss(val_set, state.params, build_loss);
        if (!val_set.empty()) row.val_loss = selection_loss;
        if (selection_loss < state.best_val_loss) {
            state.best_val_loss = selection_loss;
            state.best_epoch = epoch;
            state.best_params = state.params;
        }
        state.epochs_done = epoch;
        result.log.push_back(row);
    }
    return result;
}

}  // namespace f2s::neural
