#pragma once

#include <vector>

#include "cac/nn.hpp"
#include "cac/tensor.hpp"

namespace cac {

/// Q is n_q x d_k, K is n_k x d_k, V is n_k x d_v.
struct AttentionInputs {
  Matrix queries;
  Matrix keys;
  Matrix values;
  int key_dim = 0;
};

/// Throws ShapeError on mismatched dimensions and NumericError on NaN/Inf.
void validate(const AttentionInputs& inputs);

/// Q K^T / sqrt(d_k).
Matrix attention_logits(const Matrix& queries, const Matrix& keys, int key_dim);

/// Row-stochastic weights softmax(Q K^T / sqrt(d_k)).
Matrix attention_weights(const AttentionInputs& inputs);

/// softmax(Q K^T / sqrt(d_k)) V.
Matrix attention(const AttentionInputs& inputs);

struct AttentionGrads {
  Matrix queries;
  Matrix keys;
  Matrix values;
};

AttentionGrads attention_backward(const AttentionInputs& inputs, const Matrix& weights,
                                  const Matrix& grad_out);

/// Per-head query/key/value projections packed into one linear map producing
/// [Q | K | V], each d_m wide and split head-major into d_m / h columns.
struct MultiHeadProjection {
  nn::Linear qkv;
  int heads = 1;

  MultiHeadProjection() = default;
  MultiHeadProjection(const std::string& name, int model_dim, int heads);

  int model_dim() const { return qkv.in_features(); }
  int head_dim() const { return model_dim() / heads; }
};

struct MultiHeadCache {
  Matrix qkv;
  std::vector<Matrix> weights;  // one n x n attention matrix per head
};

/// Self-attention over `tokens` (n x d_m): every head attends with queries and
/// keys projected from the same tokens, and the head outputs are concatenated
/// back into n x d_m.
Matrix multi_head(const Matrix& tokens, const MultiHeadProjection& projection,
                  MultiHeadCache* cache = nullptr);

/// Accumulates gradients into projection.qkv; returns d tokens.
Matrix multi_head_backward(const Matrix& tokens, MultiHeadProjection& projection,
                           const MultiHeadCache& cache, const Matrix& grad_out);

}  // namespace cac
