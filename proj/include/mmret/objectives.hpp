#pragma once

#include <vector>

#include "mmret/encoders.hpp"
#include "mmret/tensor.hpp"

namespace mmret {

/// Paired contexts/responses for in-batch-negative training: row i of
/// context_embs goes with row i of response_embs. response_group, when
/// non-empty, carries a per-row response identity used only when duplicate
/// masking is switched on.
struct ContrastiveBatch {
    Tensor context_embs;   // [B x d], unit rows
    Tensor response_embs;  // [B x d], unit rows
    double temperature = 0.01;
    std::vector<int> response_group;
};

struct IntentBatch {
    Tensor context_embs;      // [B x d]
    std::vector<int> labels;  // 1 = image, 0 = text
};

/// Bidirectional in-batch cross entropy over temperature-scaled cosine
/// scores: mean row-wise CE (context -> response) plus mean column-wise CE
/// (response -> context). Zero for B == 1.
Tensor contrastive_loss(Tape* tape, const ContrastiveBatch& batch, bool mask_duplicates = false);

/// Mean BCE of the intent head's logits against the modality labels.
Tensor intent_loss(Tape* tape, const IntentBatch& batch, const IntentHeadParams& head);

/// Same arithmetic as contrastive_loss; the batch may mix response
/// modalities (each row embedded by its own modality's encoder upstream),
/// so text golds see image negatives and vice versa.
Tensor joint_loss(Tape* tape, const ContrastiveBatch& batch, bool mask_duplicates = false);

}  // namespace mmret
