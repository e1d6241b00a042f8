#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "mmret/eval.hpp"
#include "mmret/regimes.hpp"

namespace mmret {

/// Checkpoint container: an 8-byte little-endian manifest length, a JSON
/// manifest (regime, model config, named parameter table with shapes and
/// byte offsets, seed, step, dev metrics, payload checksum), then the raw
/// little-endian f64 parameter payload. Round-trips bit-exactly.
struct CheckpointMeta {
    int64_t step = 0;
    uint64_t seed = 0;
    std::optional<EvalReport> dev_metrics;
    std::string subtask;  // "" for whole-model checkpoints
};

void save_checkpoint(const std::string& path, const ModelBundle& bundle, const CheckpointMeta& meta);

struct LoadedCheckpoint {
    ModelBundle bundle;
    CheckpointMeta meta;
};

/// Verifies the payload checksum (corrupt files raise DataError) and
/// rebuilds the bundle with its sharing topology before overwriting every
/// named buffer bit-exactly.
LoadedCheckpoint load_checkpoint(const std::string& path);

/// Partial save used for DR subcomponents: only the named parameter subset.
void save_checkpoint_subset(const std::string& path, const ModelBundle& bundle,
                            const CheckpointMeta& meta, const std::vector<NamedParam>& subset);

}  // namespace mmret
