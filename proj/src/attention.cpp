#include "cac/attention.hpp"

#include <cmath>
#include <string>

#include "cac/errors.hpp"

namespace cac {

void validate(const AttentionInputs& in) {
  if (in.key_dim <= 0) throw ShapeError("attention: d_k must be positive");
  if (in.queries.cols() != in.key_dim || in.keys.cols() != in.key_dim) {
    throw ShapeError("attention: Q has " + std::to_string(in.queries.cols()) + " and K has " +
                     std::to_string(in.keys.cols()) + " columns, d_k is " +
                     std::to_string(in.key_dim));
  }
  if (in.keys.rows() != in.values.rows()) {
    throw ShapeError("attention: K has " + std::to_string(in.keys.rows()) + " rows but V has " +
                     std::to_string(in.values.rows()));
  }
  if (in.keys.rows() == 0) throw ShapeError("attention: no keys");
  if (!in.queries.allFinite() || !in.keys.allFinite() || !in.values.allFinite()) {
    throw NumericError("attention: non-finite input");
  }
}

Matrix attention_logits(const Matrix& queries, const Matrix& keys, int key_dim) {
  return (queries * keys.transpose()) / std::sqrt(static_cast<double>(key_dim));
}

Matrix attention_weights(const AttentionInputs& in) {
  validate(in);
  return nn::softmax_rows(attention_logits(in.queries, in.keys, in.key_dim));
}

Matrix attention(const AttentionInputs& in) { return attention_weights(in) * in.values; }

AttentionGrads attention_backward(const AttentionInputs& in, const Matrix& weights,
                                  const Matrix& grad_out) {
  AttentionGrads g;
  g.values = weights.transpose() * grad_out;
  const Matrix d_weights = grad_out * in.values.transpose();
  // Softmax Jacobian applied row by row: dS = P * (dP - <dP, P>).
  const Matrix row_dot = (d_weights.cwiseProduct(weights)).rowwise().sum();
  Matrix d_logits = weights.cwiseProduct(d_weights - row_dot.replicate(1, weights.cols()));
  d_logits /= std::sqrt(static_cast<double>(in.key_dim));
  g.queries = d_logits * in.keys;
  g.keys = d_logits.transpose() * in.queries;
  return g;
}

MultiHeadProjection::MultiHeadProjection(const std::string& name, int model_dim, int heads_)
    : qkv(name + ".qkv", model_dim, 3 * model_dim), heads(heads_) {
  if (heads_ <= 0 || model_dim % heads_ != 0) {
    throw ConfigError("attention heads (" + std::to_string(heads_) +
                      ") must divide the model dimension (" + std::to_string(model_dim) + ")");
  }
}

Matrix multi_head(const Matrix& tokens, const MultiHeadProjection& projection,
                  MultiHeadCache* cache) {
  const int d = projection.model_dim();
  const int h = projection.heads;
  if (h <= 0 || d % h != 0) {
    throw ConfigError("attention heads must divide the model dimension");
  }
  const int dk = d / h;
  const Matrix qkv = projection.qkv.forward(tokens);
  Matrix out(tokens.rows(), d);
  if (cache) {
    cache->qkv = qkv;
    cache->weights.resize(static_cast<std::size_t>(h));
  }
  for (int head = 0; head < h; ++head) {
    AttentionInputs in{qkv.middleCols(head * dk, dk), qkv.middleCols(d + head * dk, dk),
                       qkv.middleCols(2 * d + head * dk, dk), dk};
    Matrix weights = attention_weights(in);
    out.middleCols(head * dk, dk) = weights * in.values;
    if (cache) cache->weights[static_cast<std::size_t>(head)] = std::move(weights);
  }
  return out;
}

Matrix multi_head_backward(const Matrix& tokens, MultiHeadProjection& projection,
                           const MultiHeadCache& cache, const Matrix& grad_out) {
  const int d = projection.model_dim();
  const int dk = projection.head_dim();
  Matrix d_qkv(tokens.rows(), 3 * d);
  for (int head = 0; head < projection.heads; ++head) {
    AttentionInputs in{cache.qkv.middleCols(head * dk, dk), cache.qkv.middleCols(d + head * dk, dk),
                       cache.qkv.middleCols(2 * d + head * dk, dk), dk};
    const AttentionGrads g = attention_backward(
        in, cache.weights[static_cast<std::size_t>(head)], grad_out.middleCols(head * dk, dk));
    d_qkv.middleCols(head * dk, dk) = g.queries;
    d_qkv.middleCols(d + head * dk, dk) = g.keys;
    d_qkv.middleCols(2 * d + head * dk, dk) = g.values;
  }
  return projection.qkv.backward(tokens, d_qkv);
}

}  // namespace cac
