#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmret/encoders.hpp"

namespace mmret {

enum class Modality { Text, Image };

std::string modality_name(Modality m);
Modality modality_from_name(const std::string& s);

struct DialogueExample {
    std::string id;
    std::vector<std::vector<int>> context;
    Modality gold_modality = Modality::Text;
    std::optional<std::vector<int>> text_response;
    std::optional<ImageResponse> image_response;
    int topic = -1;  // generator metadata, never fed to models

    const std::string& response_id() const { return id; }  // responses are keyed by their example
};

struct Dataset {
    std::vector<DialogueExample> examples;

    size_t size() const { return examples.size(); }
    int count_modality(Modality m) const;
};

/// Synthetic dialogue generation. Token 0 is the separator; the remaining
/// vocabulary is partitioned into disjoint per-topic shards. Every dialogue
/// draws a topic and a two-token signature from its shard (unique within a
/// split+topic while pairs last); utterances and the gold response open with
/// the signature followed by shard tokens, so the gold stays identifiable
/// among same-topic distractors. alignment_noise sigma corrupts context
/// tokens toward other shards and blurs image grids; intent_ambiguity
/// epsilon flips the response modality.
struct SyntheticGenConfig {
    int n_topics = 8;
    int vocab_size = 256;
    int train_dialogues = 2000;
    int dev_dialogues = 400;
    int test_dialogues = 400;
    int context_utterances_min = 2, context_utterances_max = 6;
    int utterance_len_min = 3, utterance_len_max = 10;
    int img_h = 8, img_w = 8, img_c = 3;
    std::vector<double> intent_prior;  // per-topic P(image); empty = parity default
    double alignment_noise = 0.05;
    double intent_ambiguity = 0.0;
    uint64_t seed = 0;

    double prior_for_topic(int topic) const;
    void validate() const;
    int shard_size() const { return (vocab_size - 1) / n_topics; }
    int shard_begin(int topic) const { return 1 + topic * shard_size(); }
};

struct GeneratedData {
    Dataset train, dev, test;
};

GeneratedData generate(const SyntheticGenConfig& config);

/// Expands each dialogue with l context utterances into l examples over the
/// context prefixes of length 1..l, all keeping the original gold response.
/// Ids get a "#p<len>" suffix.
Dataset prefix_augment(const Dataset& dataset);

/// Per-example fixed candidate pools: the gold plus seeded distinct
/// distractors per modality, drawn from the split's own responses.
struct PerExamplePool {
    std::vector<std::string> text_ids;
    std::vector<std::string> image_ids;
};

struct CandidatePools {
    std::vector<PerExamplePool> by_example;  // aligned with split example order
    // global candidate store for the split
    std::vector<std::string> text_ids;
    std::vector<const std::vector<int>*> text_tokens;
    std::vector<std::string> image_ids;
    std::vector<const ImageResponse*> images;
    std::unordered_map<std::string, size_t> text_index;
    std::unordered_map<std::string, size_t> image_index;
    int pool_size = 50;
};

/// pool_size candidates per modality per example; gold included once in its
/// modality's pool. shared=true uses one split-wide base pool with the gold
/// swapped into the last slot where absent. Pointers in the store alias
/// `split`, which must outlive the pools.
CandidatePools build_pools(const Dataset& split, uint64_t seed, int pool_size = 50, bool shared = false);

enum class Objective { Intent, Text, Image, Joint };

/// Seeded epoch of batches (vectors of example indices). Text/Image filter
/// to their gold modality, Intent and Joint use every example; a short
/// final batch is kept. image_ratio forces the per-batch image fraction for
/// Joint batches (default: plain shuffle, i.e. dataset proportion).
std::vector<std::vector<size_t>> make_batches(const Dataset& dataset, Objective objective,
                                              int batch_size, uint64_t seed,
                                              std::optional<double> image_ratio = std::nullopt);

void save_jsonl(const Dataset& dataset, const std::string& path);
Dataset load_jsonl(const std::string& path);

}  // namespace mmret
