#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mmret/eval.hpp"
#include "mmret/optim.hpp"
#include "mmret/regimes.hpp"

namespace mmret {

struct TrainConfig {
    int batch_size = 64;
    int epochs_intent = 10;
    int epochs_text = 10;
    int epochs_image = 20;
    int epochs_joint = 20;
    double base_lr = 1e-3;  // toy default; the "paper" lr preset is 5e-5
    double lr_decay_fraction = 0.001;
    int lr_decay_interval = 1000;
    double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
    uint64_t seed = 0;
    int eval_every = 200;
    bool mask_duplicates = false;
    std::optional<double> joint_image_ratio;  // MDR batch mix override

    void validate() const;
};

/// One metrics-log line; serialized as JSON to keep run logs diffable.
struct MetricsLine {
    std::string phase;
    int64_t step = 0;
    double loss = 0.0;
    double lr = 0.0;
    std::optional<EvalReport> dev;  // present on evaluation steps

    std::string to_json() const;
};

struct SubtaskTrail {
    std::string name;  // "dr.intent" | "dr.text" | "dr.image" | "sdr.unified" | "mdr.joint"
    std::vector<CheckpointRecord> records;
    size_t selected = 0;
    int64_t final_step = 0;
};

struct TrainResult {
    ModelBundle best;          // composed best-dev model
    EvalReport best_report;    // dev report of `best` (recomputed for DR composition)
    int64_t best_step = 0;     // selected step (max over subtasks for DR)
    std::vector<SubtaskTrail> trails;
    std::vector<MetricsLine> log;
    // DR only: the per-subtask best snapshots that were composed
    std::vector<std::pair<std::string, ModelBundle>> subtask_bests;
    // Set when a non-finite loss aborted training; `best` then holds the
    // last good (best-so-far) checkpoint.
    bool aborted = false;
    std::string abort_reason;
};

/// Trains a bundle in place and returns the best-dev composition.
/// DR runs three independent optimizations (intent / text / image), each
/// selecting its own best checkpoint by its own dev metric; SDR takes one
/// optimizer step per combined intent+image+text loss over one batch of
/// each objective; MDR minimizes the joint loss over mixed batches.
/// Throws NumericError on a non-finite loss, with the phase and step in the
/// message.
TrainResult train(ModelBundle& bundle, const Dataset& train_split, const Dataset& dev_split,
                  const CandidatePools& dev_pools, const TrainConfig& config);

}  // namespace mmret
