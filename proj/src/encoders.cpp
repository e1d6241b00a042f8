#include "mmret/encoders.hpp"

#include <cmath>

namespace mmret {

namespace {

Tensor glorot_matrix(int rows, int cols, std::mt19937_64& rng) {
    const double a = std::sqrt(6.0 / (rows + cols));
    std::uniform_real_distribution<double> uni(-a, a);
    Tensor t = Tensor::zeros({rows, cols}, true);
    for (size_t i = 0; i < t.numel(); ++i) t[i] = uni(rng);
    return t;
}

Tensor zero_bias(int n) { return Tensor::zeros({n}, true); }

// row [1 x d] -> MLP -> flat [d_out]
Tensor mlp_forward(const TextEncoderParams& p, const Tensor& pooled, const FwdCtx& ctx) {
    Tensor h = ops::matmul(ctx.tape, pooled.reshaped({1, static_cast<int>(pooled.numel())}), p.mlp_w1);
    h = ops::add_bias(ctx.tape, h, p.mlp_b1);
    h = ops::tanh_act(ctx.tape, h);
    h = ops::dropout(ctx.tape, h, p.dropout_rate, ctx.train, ctx.rng);
    h = ops::matmul(ctx.tape, h, p.mlp_w2);
    h = ops::add_bias(ctx.tape, h, p.mlp_b2);
    return h.reshaped({h.cols()});
}

}  // namespace

TextEncoderParams make_text_encoder(int vocab, int d_tok, int d_h, int d_out,
                                    double dropout_rate, int max_len, std::mt19937_64& rng) {
    if (vocab <= 0 || d_tok <= 0 || d_h <= 0 || d_out <= 0)
        throw ConfigError("text encoder dimensions must be positive");
    TextEncoderParams p;
    p.embedding = glorot_matrix(vocab, d_tok, rng);
    p.mlp_w1 = glorot_matrix(d_tok, d_h, rng);
    p.mlp_b1 = zero_bias(d_h);
    p.mlp_w2 = glorot_matrix(d_h, d_out, rng);
    p.mlp_b2 = zero_bias(d_out);
    p.dropout_rate = dropout_rate;
    p.max_len = max_len;
    return p;
}

ImageResponseEncoderParams make_image_encoder(int patch, int channels, int d_h, int d_vis,
                                              int vocab, int d_tok, int d_lab, int d_joint,
                                              double dropout_rate, int max_len, std::mt19937_64& rng) {
    if (patch <= 0 || channels <= 0) throw ConfigError("invalid image geometry");
    ImageResponseEncoderParams p;
    p.patch_proj = glorot_matrix(patch * patch * channels, d_h, rng);
    p.patch_w1 = glorot_matrix(d_h, d_h, rng);
    p.patch_b1 = zero_bias(d_h);
    p.patch_w2 = glorot_matrix(d_h, d_vis, rng);
    p.patch_b2 = zero_bias(d_vis);
    p.label_encoder = make_text_encoder(vocab, d_tok, d_h, d_lab, dropout_rate, max_len, rng);
    p.fusion_proj = glorot_matrix(d_vis + d_lab, d_joint, rng);
    p.patch = patch;
    return p;
}

IntentHeadParams make_intent_head(int d_joint, std::mt19937_64& rng) {
    IntentHeadParams h;
    h.w = glorot_matrix(d_joint, 1, rng);
    h.b = zero_bias(1);
    return h;
}

std::vector<int> join_and_truncate(const std::vector<std::vector<int>>& utterances, int max_len) {
    std::vector<int> flat;
    for (size_t i = 0; i < utterances.size(); ++i) {
        if (i) flat.push_back(kSeparatorToken);
        flat.insert(flat.end(), utterances[i].begin(), utterances[i].end());
    }
    if (static_cast<int>(flat.size()) > max_len)
        flat.erase(flat.begin(), flat.end() - max_len);
    return flat;
}

Tensor encode_token_features(const TextEncoderParams& p, const std::vector<int>& tokens, const FwdCtx& ctx) {
    if (tokens.empty()) throw DegenerateInputError("cannot encode an empty token sequence");
    Tensor rows = ops::embedding_lookup(ctx.tape, p.embedding, tokens);
    std::vector<int> mask(tokens.size(), 1);
    Tensor pooled = ops::mean_pool_masked(ctx.tape, rows, mask);
    return mlp_forward(p, pooled, ctx);
}

Tensor encode_context(const TextEncoderParams& p, const std::vector<std::vector<int>>& utterances, const FwdCtx& ctx) {
    if (utterances.empty()) throw DegenerateInputError("empty context: at least one utterance required");
    std::vector<int> tokens = join_and_truncate(utterances, p.max_len);
    return ops::l2_normalize(ctx.tape, encode_token_features(p, tokens, ctx));
}

Tensor encode_text_response(const TextEncoderParams& p, const std::vector<int>& tokens, const FwdCtx& ctx) {
    return encode_context(p, {tokens}, ctx);
}

Tensor encode_image_response(const ImageResponseEncoderParams& p, const ImageResponse& img, const FwdCtx& ctx) {
    const int patch = p.patch;
    if (img.h <= 0 || img.w <= 0 || img.c <= 0 || img.h % patch != 0 || img.w % patch != 0)
        throw DimensionError("image grid " + std::to_string(img.h) + "x" + std::to_string(img.w) +
                             " not divisible into " + std::to_string(patch) + "-patches");
    if (img.grid.size() != static_cast<size_t>(img.h) * img.w * img.c)
        throw DimensionError("image grid buffer does not match its dims");
    if (static_cast<size_t>(patch) * patch * img.c != static_cast<size_t>(p.patch_proj.rows()))
        throw DimensionError("patch size does not match patch projection input");
    if (img.labels.empty()) throw DegenerateInputError("image response carries no object labels");

    const int ph = img.h / patch, pw = img.w / patch;
    const int n_patches = ph * pw;
    const int patch_dim = patch * patch * img.c;
    Tensor patches = Tensor::zeros({n_patches, patch_dim});
    for (int pi = 0; pi < ph; ++pi)
        for (int pj = 0; pj < pw; ++pj) {
            double* dst = patches.ptr() + static_cast<size_t>(pi * pw + pj) * patch_dim;
            for (int di = 0; di < patch; ++di)
                for (int dj = 0; dj < patch; ++dj)
                    for (int ch = 0; ch < img.c; ++ch)
                        *dst++ = img.grid[(static_cast<size_t>(pi * patch + di) * img.w + (pj * patch + dj)) * img.c + ch];
        }

    Tensor embedded = ops::matmul(ctx.tape, patches, p.patch_proj);
    std::vector<int> mask(n_patches, 1);
    Tensor pooled = ops::mean_pool_masked(ctx.tape, embedded, mask);
    Tensor h = ops::matmul(ctx.tape, pooled.reshaped({1, static_cast<int>(pooled.numel())}), p.patch_w1);
    h = ops::add_bias(ctx.tape, h, p.patch_b1);
    h = ops::tanh_act(ctx.tape, h);
    h = ops::matmul(ctx.tape, h, p.patch_w2);
    h = ops::add_bias(ctx.tape, h, p.patch_b2);
    Tensor visual = h.reshaped({h.cols()});

    Tensor label_feat = encode_token_features(p.label_encoder, img.labels, ctx);
    Tensor fused = ops::concat_vec(ctx.tape, visual, label_feat);
    Tensor joint = ops::matmul(ctx.tape, fused.reshaped({1, static_cast<int>(fused.numel())}), p.fusion_proj);
    return ops::l2_normalize(ctx.tape, joint.reshaped({joint.cols()}));
}

Tensor intent_logit(const IntentHeadParams& h, const Tensor& context_embedding, const FwdCtx& ctx) {
    if (static_cast<int>(context_embedding.numel()) != h.w.rows())
        throw DimensionError("intent head expects dim " + std::to_string(h.w.rows()) +
                             ", got " + shape_str(context_embedding.shape));
    Tensor row = context_embedding.reshaped({1, static_cast<int>(context_embedding.numel())});
    Tensor logit = ops::matmul(ctx.tape, row, h.w);
    logit = ops::add_bias(ctx.tape, logit, h.b);
    return logit.reshaped({1});
}

void append_params(std::vector<NamedParam>& out, const std::string& prefix, const TextEncoderParams& p) {
    out.push_back({prefix + ".embedding", p.embedding});
    out.push_back({prefix + ".mlp_w1", p.mlp_w1});
    out.push_back({prefix + ".mlp_b1", p.mlp_b1});
    out.push_back({prefix + ".mlp_w2", p.mlp_w2});
    out.push_back({prefix + ".mlp_b2", p.mlp_b2});
}

void append_params(std::vector<NamedParam>& out, const std::string& prefix, const ImageResponseEncoderParams& p) {
    out.push_back({prefix + ".patch_proj", p.patch_proj});
    out.push_back({prefix + ".patch_w1", p.patch_w1});
    out.push_back({prefix + ".patch_b1", p.patch_b1});
    out.push_back({prefix + ".patch_w2", p.patch_w2});
    out.push_back({prefix + ".patch_b2", p.patch_b2});
    append_params(out, prefix + ".label_encoder", p.label_encoder);
    out.push_back({prefix + ".fusion_proj", p.fusion_proj});
}

void append_params(std::vector<NamedParam>& out, const std::string& prefix, const IntentHeadParams& p) {
    out.push_back({prefix + ".w", p.w});
    out.push_back({prefix + ".b", p.b});
}

}  // namespace mmret
