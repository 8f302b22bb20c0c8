#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cac/backbone.hpp"
#include "cac/nn.hpp"
#include "cac/rng.hpp"
#include "cac/tensor.hpp"

namespace cac {

enum class HeadKind { projection, simple, complex };

HeadKind parse_head_kind(const std::string& text);
std::string to_string(HeadKind kind);

/// Maps patch features to a scalar count.
///
/// * projection: c = <F, vec(features)> (+ b), F has p * d_m entries.
/// * simple:  Conv3x3 -> ReLU -> pool -> Linear(d, 256) -> ReLU -> Linear(256, 1)
/// * complex: 4 x (Conv3x3 -> ReLU) -> pool -> Linear(d, 256) -> ReLU ->
///            Linear(256, 64) -> ReLU -> Linear(64, 1)
///
/// Convolutions keep d_m channels. Pooling is a spatial mean over the grid.
class CountHead {
 public:
  struct Options {
    HeadKind kind = HeadKind::projection;
    bool bias = true;
    bool clamp_nonneg = false;  // inference only
  };

  CountHead() = default;
  CountHead(const Options& options, int grid_height, int grid_width, int feature_dim);

  HeadKind kind() const { return options_.kind; }
  const Options& options() const { return options_; }
  void set_clamp_nonneg(bool on) { options_.clamp_nonneg = on; }
  int grid_height() const { return grid_h_; }
  int grid_width() const { return grid_w_; }
  int feature_dim() const { return dim_; }

  ParamRefs params();
  ConstParamRefs params() const;
  std::int64_t parameter_count() const { return count_parameters(params()); }

  /// Projection weights reshaped to p x d_m. Throws UsageError for other kinds.
  const Matrix& projection_weights() const;
  Matrix& projection_weights();
  double projection_bias() const;
  void set_projection_bias(double b);

  struct Cache {
    std::vector<Matrix> conv_inputs;
    std::vector<Matrix> conv_outputs;  // before ReLU
    std::vector<Matrix> linear_inputs;
    std::vector<Matrix> linear_outputs;
  };

  /// Raw regression output (never clamped).
  double forward(const PatchFeatures& features, Cache* cache = nullptr) const;
  /// d count / d features, accumulating parameter gradients scaled by grad_out.
  Matrix backward(const PatchFeatures& features, const Cache& cache, double grad_out);

  /// Zero projection weights; uniform fan-in init for the ablation layers.
  void init(Rng& rng);

  /// Layer names in order, e.g. {"conv3x3", "relu", "linear", ...}.
  std::vector<std::string> layer_sequence() const;

 private:
  void check_features(const PatchFeatures& f) const;

  Options options_;
  int grid_h_ = 0;
  int grid_w_ = 0;
  int dim_ = 0;
  Parameter weights_;       // projection: p x d
  Parameter bias_;          // projection: 1 x 1
  std::vector<nn::Conv3x3> convs_;
  std::vector<nn::Linear> linears_;
};

struct CountPrediction {
  std::string image_id;
  double count = 0.0;
};

/// Applies the head, clamping to zero when the head's clamp option is set.
CountPrediction predict_count(const PatchFeatures& features, const CountHead& head,
                              const std::string& image_id = {});

/// |c - c_hat| / c. Throws DomainError when c <= 0.
double ape_loss(double count, double predicted);
/// d ape / d c_hat; zero at c_hat == c.
double ape_loss_grad(double count, double predicted);

/// Deterministically initialised head. Projection weights start at zero.
CountHead make_head(HeadKind kind, int grid_height, int grid_width, int feature_dim,
                    std::uint64_t seed, bool bias = true);

}  // namespace cac
