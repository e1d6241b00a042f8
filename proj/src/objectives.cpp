#include "mmret/objectives.hpp"

#include <numeric>

#include "mmret/ops.hpp"

namespace mmret {

Tensor contrastive_loss(Tape* tape, const ContrastiveBatch& batch, bool mask_duplicates) {
    const Tensor& c = batch.context_embs;
    const Tensor& r = batch.response_embs;
    if (c.shape.size() != 2 || r.shape.size() != 2 || c.rows() == 0)
        throw DegenerateInputError("contrastive_loss needs non-empty [B x d] embeddings");
    if (c.rows() != r.rows())
        throw DimensionError("contrastive batch pairing broken: " + shape_str(c.shape) + " vs " + shape_str(r.shape));
    if (!(batch.temperature > 0.0))
        throw ConfigError("temperature must be positive");
    const int b = c.rows();

    Tensor scores = ops::cosine_sim_matrix(tape, c, r);
    scores = ops::div_scalar(tape, scores, batch.temperature);

    if (mask_duplicates && !batch.response_group.empty()) {
        if (static_cast<int>(batch.response_group.size()) != b)
            throw DimensionError("response_group length does not match batch");
        // suppress off-diagonal entries whose response duplicates row i's gold
        Tensor mask = Tensor::zeros({b, b});
        for (int i = 0; i < b; ++i)
            for (int j = 0; j < b; ++j)
                if (i != j && batch.response_group[i] == batch.response_group[j])
                    mask[static_cast<size_t>(i) * b + j] = -1e9;
        scores = ops::add(tape, scores, mask);
    }

    std::vector<int> diag(b);
    std::iota(diag.begin(), diag.end(), 0);
    Tensor fwd = ops::softmax_cross_entropy_rows(tape, scores, diag);
    Tensor bwd = ops::softmax_cross_entropy_rows(tape, ops::transpose(tape, scores), diag);
    return ops::add(tape, fwd, bwd);
}

Tensor intent_loss(Tape* tape, const IntentBatch& batch, const IntentHeadParams& head) {
    const Tensor& c = batch.context_embs;
    if (c.shape.size() != 2 || c.rows() == 0)
        throw DegenerateInputError("intent_loss needs non-empty [B x d] embeddings");
    if (static_cast<int>(batch.labels.size()) != c.rows())
        throw DimensionError("intent label count does not match batch");
    Tensor logits = ops::matmul(tape, c, head.w);       // [B x 1]
    logits = ops::add_bias(tape, logits, head.b);
    return ops::bce_with_logits(tape, logits, batch.labels);
}

Tensor joint_loss(Tape* tape, const ContrastiveBatch& batch, bool mask_duplicates) {
    // the modality mix is invisible at the loss level
    return contrastive_loss(tape, batch, mask_duplicates);
}

}  // namespace mmret
