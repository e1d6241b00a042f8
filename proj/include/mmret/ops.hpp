#pragma once

#include <random>
#include <span>
#include <vector>

#include "mmret/tensor.hpp"

namespace mmret::ops {

/// C[m x n] = A[m x k] * B[k x n]. Backward: dA += dC*B^T, dB += A^T*dC.
Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b);

/// Row gather from table[V x d]; backward scatter-adds into the table rows.
Tensor embedding_lookup(Tape* tape, const Tensor& table, const std::vector<int>& ids);

/// Mean over the rows of x[len x d] whose mask entry is 1. At least one
/// entry must be set.
Tensor mean_pool_masked(Tape* tape, const Tensor& x, const std::vector<int>& mask);

/// x / ||x||2 for a vector. Backward applies the tangent-space projection
/// (I - y y^T) / ||x||. Throws DegenerateInputError when ||x|| <= 1e-12.
Tensor l2_normalize(Tape* tape, const Tensor& x);

/// S[i][j] = <C_i, R_j> for unit-norm rows; plain row-pair dot products.
Tensor cosine_sim_matrix(Tape* tape, const Tensor& c, const Tensor& r);

/// Mean over rows of -log softmax(logits_i)[target_i], stabilized by
/// row-max subtraction. Backward: (softmax - onehot) / B.
Tensor softmax_cross_entropy_rows(Tape* tape, const Tensor& logits, const std::vector<int>& targets);

/// Mean binary cross entropy on raw logits, computed in the stable
/// max(z,0) - z*y + log1p(exp(-|z|)) form. Labels must be 0/1.
Tensor bce_with_logits(Tape* tape, const Tensor& logits, const std::vector<int>& labels);

// Elementwise / structural plumbing.
Tensor add(Tape* tape, const Tensor& a, const Tensor& b);                // same shape
Tensor add_bias(Tape* tape, const Tensor& x, const Tensor& bias);        // [m x n] + [n], row broadcast
Tensor scale(Tape* tape, const Tensor& x, double s);
Tensor div_scalar(Tape* tape, const Tensor& x, double divisor);          // guards divisor > 0
Tensor tanh_act(Tape* tape, const Tensor& x);
Tensor concat_vec(Tape* tape, const Tensor& a, const Tensor& b);         // 1-D concat
Tensor stack_rows(Tape* tape, std::span<const Tensor> rows);             // n vectors [d] -> [n x d]
Tensor transpose(Tape* tape, const Tensor& x);

/// Inverted dropout: at train time keeps each element with probability
/// 1-rate and scales by 1/(1-rate); in eval mode it is the identity
/// (returns the input handle untouched).
Tensor dropout(Tape* tape, const Tensor& x, double rate, bool train_mode, std::mt19937_64* rng);

}  // namespace mmret::ops
