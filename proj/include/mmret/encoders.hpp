#pragma once

#include <random>
#include <vector>

#include "mmret/ops.hpp"
#include "mmret/optim.hpp"
#include "mmret/presets.hpp"
#include "mmret/tensor.hpp"

namespace mmret {

/// Forward-pass context: tape + rng present and train=true during training,
/// all defaults for pure-function eval encoding.
struct FwdCtx {
    Tape* tape = nullptr;
    std::mt19937_64* rng = nullptr;
    bool train = false;
};

/// Token-sequence encoder: embedding lookup, masked mean pool, two-layer
/// tanh MLP with dropout between the layers. The same parameter object
/// serves as context encoder and text response encoder (the weights are
/// tied by construction).
struct TextEncoderParams {
    Tensor embedding;  // [V x d_tok]
    Tensor mlp_w1;     // [d_tok x d_h]
    Tensor mlp_b1;     // [d_h]
    Tensor mlp_w2;     // [d_h x d_out]
    Tensor mlp_b2;     // [d_out]
    double dropout_rate = 0.2;
    int max_len = 128;

    int vocab() const { return embedding.rows(); }
    int out_dim() const { return mlp_w2.cols(); }
};

/// An image response: H x W x C value grid plus the object-label tokens
/// attached to every image.
struct ImageResponse {
    int h = 0, w = 0, c = 0;
    std::vector<double> grid;  // flat, row-major [h][w][c]
    std::vector<int> labels;
};

/// Image response encoder: non-overlapping P x P x C patches are linearly
/// embedded, mean-pooled and passed through a tanh MLP into a visual
/// feature; labels run through a separate token encoder; both features are
/// concatenated and projected to the joint space.
struct ImageResponseEncoderParams {
    Tensor patch_proj;  // [(P*P*C) x d_h]
    Tensor patch_w1;    // [d_h x d_h]
    Tensor patch_b1;    // [d_h]
    Tensor patch_w2;    // [d_h x d_vis]
    Tensor patch_b2;    // [d_vis]
    TextEncoderParams label_encoder;  // separate weights, output d_lab
    Tensor fusion_proj;               // [(d_vis+d_lab) x d_joint]
    int patch = 4;
};

struct IntentHeadParams {
    Tensor w;  // [d_joint x 1]
    Tensor b;  // [1]
};

// Seeded construction. Matrices are filled uniform(-a, a) with
// a = sqrt(6/(fan_in+fan_out)); bias vectors start at zero.
TextEncoderParams make_text_encoder(int vocab, int d_tok, int d_h, int d_out,
                                    double dropout_rate, int max_len, std::mt19937_64& rng);
ImageResponseEncoderParams make_image_encoder(int patch, int channels, int d_h, int d_vis,
                                              int vocab, int d_tok, int d_lab, int d_joint,
                                              double dropout_rate, int max_len, std::mt19937_64& rng);
IntentHeadParams make_intent_head(int d_joint, std::mt19937_64& rng);

/// Joins utterances with the separator token and keeps the trailing
/// max_len tokens (most recent turns win).
std::vector<int> join_and_truncate(const std::vector<std::vector<int>>& utterances, int max_len);

/// Embedding -> pool -> tanh MLP, without the final normalization.
Tensor encode_token_features(const TextEncoderParams& p, const std::vector<int>& tokens, const FwdCtx& ctx);

/// Unit-norm context embedding from one or more utterances.
Tensor encode_context(const TextEncoderParams& p, const std::vector<std::vector<int>>& utterances, const FwdCtx& ctx);

/// Unit-norm response embedding; same pipeline and same parameters as the
/// context side.
Tensor encode_text_response(const TextEncoderParams& p, const std::vector<int>& tokens, const FwdCtx& ctx);

/// Unit-norm joint-space embedding of an image response.
Tensor encode_image_response(const ImageResponseEncoderParams& p, const ImageResponse& img, const FwdCtx& ctx);

/// w^T x + b as a [1] tensor. Positive logit means predicted modality
/// image (sigma(logit) > 0.5).
Tensor intent_logit(const IntentHeadParams& h, const Tensor& context_embedding, const FwdCtx& ctx);

/// Collects the distinct parameter tensors of one encoder, prefixed names.
void append_params(std::vector<NamedParam>& out, const std::string& prefix, const TextEncoderParams& p);
void append_params(std::vector<NamedParam>& out, const std::string& prefix, const ImageResponseEncoderParams& p);
void append_params(std::vector<NamedParam>& out, const std::string& prefix, const IntentHeadParams& p);

}  // namespace mmret
