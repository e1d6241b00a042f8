#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mmret/data.hpp"
#include "mmret/encoders.hpp"

namespace mmret {

/// The three integration architectures. DR keeps three independent context
/// encoders (text retrieval, image retrieval, intent); SDR shares a single
/// context encoder across all three roles; MDR shares one context encoder
/// and drops the intent predictor entirely.
enum class Regime { DR, SDR, MDR };

std::string regime_name(Regime r);
Regime regime_from_name(const std::string& s);

struct ModelConfig {
    DimsPreset dims;
    int vocab_size = 256;
    int max_len = 128;
    int img_h = 8, img_w = 8, img_c = 3, patch = 4;
    double tau = 0.01;
    double dropout = 0.2;
};

/// One regime's full parameter set. Sharing is expressed through shared_ptr
/// identity: in SDR ctx_text == ctx_image == ctx_intent, in MDR
/// ctx_text == ctx_image and there is no intent path. The text response
/// encoder is ctx_text itself in every regime (tied weights).
struct ModelBundle {
    Regime regime = Regime::SDR;
    ModelConfig config;
    uint64_t init_seed = 0;
    std::shared_ptr<TextEncoderParams> ctx_text;
    std::shared_ptr<TextEncoderParams> ctx_image;
    std::shared_ptr<TextEncoderParams> ctx_intent;  // null for MDR
    std::shared_ptr<ImageResponseEncoderParams> image_encoder;
    std::shared_ptr<IntentHeadParams> intent_head;  // null for MDR

    bool gated() const { return intent_head != nullptr; }
    const IntentHeadParams& require_intent_head() const;
};

ModelBundle build_model(Regime regime, const ModelConfig& config, uint64_t seed);

/// Distinct trainable tensors, canonical order, shared objects listed once.
std::vector<NamedParam> named_parameters(const ModelBundle& bundle);

/// Deep copy preserving the sharing topology.
ModelBundle clone_bundle(const ModelBundle& bundle);

struct ParamCounts {
    std::map<std::string, long long> per_component;
    long long total = 0;
};

/// Exact parameter counts; tensors shared between components are counted
/// once, under the first component that owns them.
ParamCounts count_parameters(const ModelBundle& bundle);

struct RankedCandidate {
    std::string id;
    Modality modality = Modality::Text;
    double score = 0.0;
};

struct TextCandidate {
    std::string id;
    std::vector<int> tokens;
};

struct ImageCandidate {
    std::string id;
    ImageResponse image;
};

/// Candidates with precomputed unit embeddings (flat, aligned with ids).
struct EmbeddedPool {
    std::vector<std::string> ids;
    std::vector<std::vector<double>> embs;
};

/// Full descending ranking of one pool against a context embedding.
/// Ties break by candidate index.
std::vector<RankedCandidate> rank_pool(const std::vector<double>& ctx_emb, const EmbeddedPool& pool, Modality modality);

/// Joint ranking over both pools; ties break score-desc, text-before-image,
/// index-asc, so the result is independent of pool concatenation order.
std::vector<RankedCandidate> rank_union(const std::vector<double>& ctx_text_emb,
                                        const std::vector<double>& ctx_image_emb,
                                        const EmbeddedPool& text_pool, const EmbeddedPool& image_pool);

/// Two-step inference: the intent head picks a modality, then only that
/// modality's pool is ranked (the other pool is unreachable). Probability
/// exactly 0.5 takes the text branch. Requires an intent head.
std::vector<RankedCandidate> infer_gated(const ModelBundle& bundle,
                                         const std::vector<std::vector<int>>& context,
                                         const std::vector<TextCandidate>& text_pool,
                                         const std::vector<ImageCandidate>& image_pool);

/// End-to-end inference: every candidate of both pools is scored and ranked
/// in one list.
std::vector<RankedCandidate> infer_joint(const ModelBundle& bundle,
                                         const std::vector<std::vector<int>>& context,
                                         const std::vector<TextCandidate>& text_pool,
                                         const std::vector<ImageCandidate>& image_pool);

/// Eval-mode embedding helpers (pure functions of the bundle parameters).
std::vector<double> embed_context_eval(const TextEncoderParams& enc, const std::vector<std::vector<int>>& context);
EmbeddedPool embed_text_pool(const ModelBundle& bundle, const std::vector<TextCandidate>& pool);
EmbeddedPool embed_image_pool(const ModelBundle& bundle, const std::vector<ImageCandidate>& pool);

/// sigma(intent logit) for a context, eval mode.
double intent_probability(const ModelBundle& bundle, const std::vector<std::vector<int>>& context);

}  // namespace mmret
