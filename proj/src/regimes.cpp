#include "mmret/regimes.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace mmret {

std::string regime_name(Regime r) {
    switch (r) {
        case Regime::DR: return "dr";
        case Regime::SDR: return "sdr";
        case Regime::MDR: return "mdr";
    }
    throw StructureError("unreachable regime");
}

Regime regime_from_name(const std::string& s) {
    if (s == "dr") return Regime::DR;
    if (s == "sdr") return Regime::SDR;
    if (s == "mdr") return Regime::MDR;
    throw ConfigError("unknown regime '" + s + "' (expected dr|sdr|mdr)");
}

const IntentHeadParams& ModelBundle::require_intent_head() const {
    if (!intent_head)
        throw StructureError(regime_name(regime) + " bundle has no intent head");
    return *intent_head;
}

ModelBundle build_model(Regime regime, const ModelConfig& config, uint64_t seed) {
    if (config.img_h % config.patch != 0 || config.img_w % config.patch != 0)
        throw ConfigError("image geometry not divisible by patch size");
    ModelBundle b;
    b.regime = regime;
    b.config = config;
    b.init_seed = seed;
    std::mt19937_64 rng(derive_seed(seed, "init"));
    const DimsPreset& d = config.dims;

    auto new_text_encoder = [&] {
        return std::make_shared<TextEncoderParams>(make_text_encoder(
            config.vocab_size, d.d_tok, d.d_h, d.d_joint, config.dropout, config.max_len, rng));
    };

    b.ctx_text = new_text_encoder();
    switch (regime) {
        case Regime::DR:
            b.ctx_image = new_text_encoder();
            b.ctx_intent = new_text_encoder();
            break;
        case Regime::SDR:
            b.ctx_image = b.ctx_text;
            b.ctx_intent = b.ctx_text;
            break;
        case Regime::MDR:
            b.ctx_image = b.ctx_text;
            b.ctx_intent = nullptr;
            break;
    }
    b.image_encoder = std::make_shared<ImageResponseEncoderParams>(make_image_encoder(
        config.patch, config.img_c, d.d_h, d.d_vis, config.vocab_size, d.d_tok, d.d_lab,
        d.d_joint, config.dropout, config.max_len, rng));
    if (regime != Regime::MDR)
        b.intent_head = std::make_shared<IntentHeadParams>(make_intent_head(d.d_joint, rng));
    return b;
}

std::vector<NamedParam> named_parameters(const ModelBundle& b) {
    std::vector<NamedParam> all;
    append_params(all, "ctx_text", *b.ctx_text);
    if (b.ctx_image != b.ctx_text) append_params(all, "ctx_image", *b.ctx_image);
    if (b.ctx_intent && b.ctx_intent != b.ctx_text && b.ctx_intent != b.ctx_image)
        append_params(all, "ctx_intent", *b.ctx_intent);
    append_params(all, "image_encoder", *b.image_encoder);
    if (b.intent_head) append_params(all, "intent_head", *b.intent_head);
    return all;
}

namespace {

Tensor deep_copy(const Tensor& t) {
    Tensor out = t;
    out.data = std::make_shared<std::vector<double>>(*t.data);
    out.grad = nullptr;
    if (t.requires_grad) out.ensure_grad();
    out.node = -1;
    return out;
}

TextEncoderParams copy_text_encoder(const TextEncoderParams& p) {
    TextEncoderParams c = p;
    c.embedding = deep_copy(p.embedding);
    c.mlp_w1 = deep_copy(p.mlp_w1);
    c.mlp_b1 = deep_copy(p.mlp_b1);
    c.mlp_w2 = deep_copy(p.mlp_w2);
    c.mlp_b2 = deep_copy(p.mlp_b2);
    return c;
}

}  // namespace

ModelBundle clone_bundle(const ModelBundle& b) {
    ModelBundle c;
    c.regime = b.regime;
    c.config = b.config;
    c.init_seed = b.init_seed;
    c.ctx_text = std::make_shared<TextEncoderParams>(copy_text_encoder(*b.ctx_text));
    c.ctx_image = b.ctx_image == b.ctx_text
                      ? c.ctx_text
                      : std::make_shared<TextEncoderParams>(copy_text_encoder(*b.ctx_image));
    if (b.ctx_intent) {
        if (b.ctx_intent == b.ctx_text) c.ctx_intent = c.ctx_text;
        else if (b.ctx_intent == b.ctx_image) c.ctx_intent = c.ctx_image;
        else c.ctx_intent = std::make_shared<TextEncoderParams>(copy_text_encoder(*b.ctx_intent));
    }
    {
        ImageResponseEncoderParams ie = *b.image_encoder;
        ie.patch_proj = deep_copy(ie.patch_proj);
        ie.patch_w1 = deep_copy(ie.patch_w1);
        ie.patch_b1 = deep_copy(ie.patch_b1);
        ie.patch_w2 = deep_copy(ie.patch_w2);
        ie.patch_b2 = deep_copy(ie.patch_b2);
        ie.label_encoder = copy_text_encoder(ie.label_encoder);
        ie.fusion_proj = deep_copy(ie.fusion_proj);
        c.image_encoder = std::make_shared<ImageResponseEncoderParams>(std::move(ie));
    }
    if (b.intent_head) {
        IntentHeadParams h;
        h.w = deep_copy(b.intent_head->w);
        h.b = deep_copy(b.intent_head->b);
        c.intent_head = std::make_shared<IntentHeadParams>(std::move(h));
    }
    return c;
}

ParamCounts count_parameters(const ModelBundle& b) {
    ParamCounts counts;
    std::set<const std::vector<double>*> seen;
    auto count_group = [&](const std::string& component, const std::vector<NamedParam>& group) {
        long long n = 0;
        for (const auto& p : group) {
            if (!seen.insert(p.tensor.data.get()).second) continue;
            n += static_cast<long long>(p.tensor.numel());
        }
        counts.per_component[component] = n;
        counts.total += n;
    };

    std::vector<NamedParam> g;
    if (b.regime == Regime::DR) {
        g.clear(); append_params(g, "ctx_text", *b.ctx_text); count_group("context_encoder_text", g);
        g.clear(); append_params(g, "ctx_image", *b.ctx_image); count_group("context_encoder_image", g);
        g.clear(); append_params(g, "ctx_intent", *b.ctx_intent); count_group("context_encoder_intent", g);
    } else {
        g.clear(); append_params(g, "ctx", *b.ctx_text); count_group("context_encoder_shared", g);
    }
    g.clear(); append_params(g, "image_encoder", *b.image_encoder); count_group("image_response_encoder", g);
    if (b.intent_head) {
        g.clear(); append_params(g, "intent_head", *b.intent_head); count_group("intent_head", g);
    }
    return counts;
}

std::vector<double> embed_context_eval(const TextEncoderParams& enc, const std::vector<std::vector<int>>& context) {
    FwdCtx ctx;  // eval mode
    Tensor e = encode_context(enc, context, ctx);
    return *e.data;
}

EmbeddedPool embed_text_pool(const ModelBundle& bundle, const std::vector<TextCandidate>& pool) {
    EmbeddedPool out;
    FwdCtx ctx;
    for (const auto& cand : pool) {
        out.ids.push_back(cand.id);
        out.embs.push_back(*encode_text_response(*bundle.ctx_text, cand.tokens, ctx).data);
    }
    return out;
}

EmbeddedPool embed_image_pool(const ModelBundle& bundle, const std::vector<ImageCandidate>& pool) {
    EmbeddedPool out;
    FwdCtx ctx;
    for (const auto& cand : pool) {
        out.ids.push_back(cand.id);
        out.embs.push_back(*encode_image_response(*bundle.image_encoder, cand.image, ctx).data);
    }
    return out;
}

double intent_probability(const ModelBundle& bundle, const std::vector<std::vector<int>>& context) {
    const IntentHeadParams& head = bundle.require_intent_head();
    FwdCtx ctx;
    Tensor emb = encode_context(*bundle.ctx_intent, context, ctx);
    Tensor logit = intent_logit(head, emb, ctx);
    return 1.0 / (1.0 + std::exp(-logit[0]));
}

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

struct ScoredEntry {
    double score;
    int modality_rank;  // text = 0, image = 1
    size_t index;       // position within its own modality pool
    const std::string* id;
};

void sort_entries(std::vector<ScoredEntry>& entries) {
    std::sort(entries.begin(), entries.end(), [](const ScoredEntry& a, const ScoredEntry& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.modality_rank != b.modality_rank) return a.modality_rank < b.modality_rank;
        return a.index < b.index;
    });
}

std::vector<RankedCandidate> to_ranked(const std::vector<ScoredEntry>& entries) {
    std::vector<RankedCandidate> out;
    out.reserve(entries.size());
    for (const auto& e : entries)
        out.push_back({*e.id, e.modality_rank == 0 ? Modality::Text : Modality::Image, e.score});
    return out;
}

}  // namespace

std::vector<RankedCandidate> rank_pool(const std::vector<double>& ctx_emb, const EmbeddedPool& pool, Modality modality) {
    std::vector<ScoredEntry> entries;
    entries.reserve(pool.ids.size());
    const int mrank = modality == Modality::Text ? 0 : 1;
    for (size_t i = 0; i < pool.ids.size(); ++i)
        entries.push_back({dot(ctx_emb, pool.embs[i]), mrank, i, &pool.ids[i]});
    sort_entries(entries);
    return to_ranked(entries);
}

std::vector<RankedCandidate> rank_union(const std::vector<double>& ctx_text_emb,
                                        const std::vector<double>& ctx_image_emb,
                                        const EmbeddedPool& text_pool, const EmbeddedPool& image_pool) {
    std::vector<ScoredEntry> entries;
    entries.reserve(text_pool.ids.size() + image_pool.ids.size());
    for (size_t i = 0; i < text_pool.ids.size(); ++i)
        entries.push_back({dot(ctx_text_emb, text_pool.embs[i]), 0, i, &text_pool.ids[i]});
    for (size_t i = 0; i < image_pool.ids.size(); ++i)
        entries.push_back({dot(ctx_image_emb, image_pool.embs[i]), 1, i, &image_pool.ids[i]});
    sort_entries(entries);
    return to_ranked(entries);
}

std::vector<RankedCandidate> infer_gated(const ModelBundle& bundle,
                                         const std::vector<std::vector<int>>& context,
                                         const std::vector<TextCandidate>& text_pool,
                                         const std::vector<ImageCandidate>& image_pool) {
    if (text_pool.empty() || image_pool.empty())
        throw DataError("gated inference needs non-empty pools of both modalities");
    const double p_image = intent_probability(bundle, context);
    if (p_image > 0.5) {
        EmbeddedPool pool = embed_image_pool(bundle, image_pool);
        return rank_pool(embed_context_eval(*bundle.ctx_image, context), pool, Modality::Image);
    }
    EmbeddedPool pool = embed_text_pool(bundle, text_pool);
    return rank_pool(embed_context_eval(*bundle.ctx_text, context), pool, Modality::Text);
}

std::vector<RankedCandidate> infer_joint(const ModelBundle& bundle,
                                         const std::vector<std::vector<int>>& context,
                                         const std::vector<TextCandidate>& text_pool,
                                         const std::vector<ImageCandidate>& image_pool) {
    if (text_pool.empty() || image_pool.empty())
        throw DataError("joint inference needs non-empty pools of both modalities");
    const std::vector<double> ctx_t = embed_context_eval(*bundle.ctx_text, context);
    const std::vector<double> ctx_i = bundle.ctx_image == bundle.ctx_text
                                          ? ctx_t
                                          : embed_context_eval(*bundle.ctx_image, context);
    return rank_union(ctx_t, ctx_i, embed_text_pool(bundle, text_pool), embed_image_pool(bundle, image_pool));
}

}  // namespace mmret
