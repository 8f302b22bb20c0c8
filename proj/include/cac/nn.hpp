#pragma once

#include <string>

#include "cac/rng.hpp"
#include "cac/tensor.hpp"

// Layer building blocks with hand-written backward passes. Layers are
// stateless apart from their parameters: forward is const, and backward takes
// the same inputs that forward saw, accumulates parameter gradients and
// returns the gradient with respect to the input.
//
// Feature maps are stored token-major: an H x W map with C channels is an
// (H*W) x C matrix, row y*W + x.
namespace cac::nn {

struct Linear {
  Parameter weight;  // out x in
  Parameter bias;    // 1 x out
  bool has_bias = true;

  Linear() = default;
  Linear(const std::string& name, int in, int out, bool bias = true);

  int in_features() const { return static_cast<int>(weight.value.cols()); }
  int out_features() const { return static_cast<int>(weight.value.rows()); }

  Matrix forward(const Matrix& x) const;
  Matrix backward(const Matrix& x, const Matrix& grad_out);
  void init(Rng& rng, double stddev);  // truncated normal weights, zero bias
  void init_uniform(Rng& rng);         // U(-1/sqrt(in), 1/sqrt(in))
  void collect(ParamRefs& out);
};

struct LayerNorm {
  Parameter gamma;
  Parameter beta;
  double eps = 1e-6;

  LayerNorm() = default;
  LayerNorm(const std::string& name, int dim, double eps = 1e-6);

  Matrix forward(const Matrix& x) const;
  Matrix backward(const Matrix& x, const Matrix& grad_out);
  void collect(ParamRefs& out);
};

Matrix gelu(const Matrix& x);
Matrix gelu_backward(const Matrix& x, const Matrix& grad_out);
Matrix relu(const Matrix& x);
Matrix relu_backward(const Matrix& x, const Matrix& grad_out);

/// 3x3 convolution, stride 1, zero padding 1. Weight layout matches the
/// usual [out, in, 3, 3] kernel flattened to out x (in*9).
struct Conv3x3 {
  Parameter weight;
  Parameter bias;

  Conv3x3() = default;
  Conv3x3(const std::string& name, int in_channels, int out_channels);

  int in_channels() const { return static_cast<int>(weight.value.cols() / 9); }
  int out_channels() const { return static_cast<int>(weight.value.rows()); }

  Matrix forward(const Matrix& x, int height, int width) const;
  Matrix backward(const Matrix& x, int height, int width, const Matrix& grad_out);
  void init_uniform(Rng& rng);
  void collect(ParamRefs& out);
};

/// Unfolds 3x3 neighbourhoods: (H*W) x (C*9), column c*9 + ky*3 + kx.
Matrix im2col3x3(const Matrix& x, int height, int width);
Matrix col2im3x3(const Matrix& cols, int height, int width, int channels);

/// Bilinear 2x upsampling with half-pixel centres (align_corners = false).
Matrix upsample2x(const Matrix& x, int height, int width);
Matrix upsample2x_backward(const Matrix& grad_out, int height, int width);

Matrix global_avg_pool(const Matrix& x);  // (H*W) x C -> 1 x C
Matrix global_avg_pool_backward(const Matrix& grad_out, Eigen::Index tokens);

/// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& logits);

}  // namespace cac::nn
