#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bpshift/dataset.hpp"
#include "bpshift/evaluation.hpp"
#include "bpshift/models.hpp"

namespace bpshift {

struct TrainConfig {
    std::size_t epochs = 200;
    std::size_t batch_size = 500;
    double lr = 1e-3;
    std::size_t patience = 20; // epochs without validation improvement; 0 disables
    std::uint64_t seed = 1;
};

struct EpochStats {
    std::size_t epoch = 0; // 1-based
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> history;
    std::size_t best_epoch = 0; // epoch whose weights the model keeps
    double best_val_accuracy = 0.0;
    double best_val_loss = 0.0;
};

// Mini-batch Adam over cross-entropy with per-batch gradient averaging.
// Records train/val loss and accuracy each epoch, restores the weights of
// the best validation epoch (highest accuracy, ties to the lower loss and
// then the earlier epoch), and stops early after `patience` stale epochs.
// Non-finite loss raises DivergedLoss.
TrainResult train_model(Model& model, const std::vector<Example>& train,
                        const std::vector<Example>& val, const TrainConfig& cfg);

// One NDJSON line per epoch, then a summary line; byte-identical for
// identical runs.
void write_history_ndjson(const std::string& path, const TrainResult& result);

struct FoldResult {
    std::size_t fold = 0;
    TrainResult result;
    EvalReport val_report;
};

// k disjoint validation folds over the pool; each fold trains a fresh model
// (fold-derived init seed) on the remainder and is scored on the fold.
std::vector<FoldResult> cross_validate(const ModelSpec& spec, const std::vector<Example>& pool,
                                       std::size_t k, const TrainConfig& cfg);

} // namespace bpshift
