#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mmret/data.hpp"
#include "mmret/regimes.hpp"

namespace mmret {

enum class Protocol { Text, Image, Multimodal };

std::string protocol_name(Protocol p);
Protocol protocol_from_name(const std::string& s);

struct RecallTriple {
    double r1 = 0.0, r5 = 0.0, r10 = 0.0;
    bool operator==(const RecallTriple&) const = default;
};

struct EvalReport {
    std::map<std::string, RecallTriple> protocols;  // "text" | "image" | "multimodal"
    std::map<std::string, int> counts;              // examples per protocol
    std::optional<double> intent_accuracy;          // absent for MDR / unimodal-only runs
    int cascade_misses = 0;  // gold-unreachable examples under gated inference

    std::string to_json() const;
    static EvalReport from_json(const std::string& text);
    std::string to_table() const;
    bool operator==(const EvalReport&) const = default;
};

/// 1 iff gold_id occurs in the first k entries of the ranked id list.
int recall_at_k(const std::vector<std::string>& ranked_ids, const std::string& gold_id, int k);

struct EvalOptions {
    std::set<Protocol> protocols = {Protocol::Text, Protocol::Image, Protocol::Multimodal};
    int threads = 1;  // >1 parallelizes over examples; reduction stays index-ordered
};

/// Runs the requested protocols on a split. Text/Image rank the gold's
/// modality pool directly (oracle intent, same code path for every regime);
/// Multimodal routes through gated or joint inference depending on the
/// bundle. Pure function of (bundle, split, pools).
EvalReport evaluate(const ModelBundle& bundle, const Dataset& split, const CandidatePools& pools,
                    const EvalOptions& options = {});

struct CheckpointRecord {
    int64_t step = 0;
    EvalReport report;
};

/// Best dev checkpoint: maximize multimodal R@1, ties by R@5, R@10, then
/// earliest step.
size_t select_checkpoint(const std::vector<CheckpointRecord>& trail);

/// Subtask variants used when composing a DR model.
size_t select_by_intent_accuracy(const std::vector<CheckpointRecord>& trail);
size_t select_by_protocol_r1(const std::vector<CheckpointRecord>& trail, Protocol protocol);

}  // namespace mmret
