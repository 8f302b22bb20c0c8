#include "cac/count_head.hpp"

#include <cmath>

#include "cac/errors.hpp"
#include "cac/rng.hpp"

namespace cac {

HeadKind parse_head_kind(const std::string& text) {
  if (text == "projection") return HeadKind::projection;
  if (text == "simple") return HeadKind::simple;
  if (text == "complex") return HeadKind::complex;
  throw ConfigError("unknown head kind '" + text + "' (expected projection, simple or complex)");
}

std::string to_string(HeadKind kind) {
  switch (kind) {
    case HeadKind::projection: return "projection";
    case HeadKind::simple: return "simple";
    case HeadKind::complex: return "complex";
  }
  return "?";
}

CountHead::CountHead(const Options& options, int grid_height, int grid_width, int feature_dim)
    : options_(options), grid_h_(grid_height), grid_w_(grid_width), dim_(feature_dim) {
  if (grid_height <= 0 || grid_width <= 0 || feature_dim <= 0) {
    throw ConfigError("count head needs a positive feature grid");
  }
  const int p = grid_height * grid_width;
  switch (options.kind) {
    case HeadKind::projection:
      weights_ = Parameter("head.weight", {1, static_cast<std::int64_t>(p) * feature_dim}, p,
                           feature_dim);
      bias_ = Parameter("head.bias", {1}, 1, 1);
      break;
    case HeadKind::simple:
      convs_.emplace_back("head.conv0", feature_dim, feature_dim);
      linears_.emplace_back("head.fc0", feature_dim, 256);
      linears_.emplace_back("head.fc1", 256, 1);
      break;
    case HeadKind::complex:
      for (int i = 0; i < 4; ++i) {
        convs_.emplace_back("head.conv" + std::to_string(i), feature_dim, feature_dim);
      }
      linears_.emplace_back("head.fc0", feature_dim, 256);
      linears_.emplace_back("head.fc1", 256, 64);
      linears_.emplace_back("head.fc2", 64, 1);
      break;
  }
}

ParamRefs CountHead::params() {
  ParamRefs out;
  if (options_.kind == HeadKind::projection) {
    out.push_back(&weights_);
    if (options_.bias) out.push_back(&bias_);
    return out;
  }
  for (auto& c : convs_) c.collect(out);
  for (auto& l : linears_) l.collect(out);
  return out;
}

ConstParamRefs CountHead::params() const {
  return const_refs(const_cast<CountHead*>(this)->params());
}

const Matrix& CountHead::projection_weights() const {
  if (options_.kind != HeadKind::projection) {
    throw UsageError("head kind '" + to_string(options_.kind) + "' has no projection weights");
  }
  return weights_.value;
}

Matrix& CountHead::projection_weights() {
  return const_cast<Matrix&>(static_cast<const CountHead*>(this)->projection_weights());
}

double CountHead::projection_bias() const {
  projection_weights();
  return options_.bias ? bias_.value(0, 0) : 0.0;
}

void CountHead::set_projection_bias(double b) {
  projection_weights();
  if (!options_.bias) throw ConfigError("head bias is disabled");
  bias_.value(0, 0) = b;
}

void CountHead::check_features(const PatchFeatures& f) const {
  if (f.grid_height != grid_h_ || f.grid_width != grid_w_ || f.dim() != dim_ ||
      f.values.rows() != static_cast<Eigen::Index>(grid_h_) * grid_w_) {
    throw ShapeError("features are " + std::to_string(f.grid_height) + "x" +
                     std::to_string(f.grid_width) + "x" + std::to_string(f.dim()) +
                     ", head expects " + std::to_string(grid_h_) + "x" + std::to_string(grid_w_) +
                     "x" + std::to_string(dim_));
  }
}

double CountHead::forward(const PatchFeatures& features, Cache* cache) const {
  check_features(features);
  if (options_.kind == HeadKind::projection) {
    double c = weights_.value.cwiseProduct(features.values).sum();
    if (options_.bias) c += bias_.value(0, 0);
    return c;
  }
  Cache local;
  Cache& c = cache ? *cache : local;
  c.conv_inputs.clear();
  c.conv_outputs.clear();
  c.linear_inputs.clear();
  c.linear_outputs.clear();
  Matrix x = features.values;
  for (const auto& conv : convs_) {
    c.conv_inputs.push_back(x);
    c.conv_outputs.push_back(conv.forward(x, grid_h_, grid_w_));
    x = nn::relu(c.conv_outputs.back());
  }
  Matrix h = nn::global_avg_pool(x);
  for (std::size_t i = 0; i < linears_.size(); ++i) {
    c.linear_inputs.push_back(h);
    c.linear_outputs.push_back(linears_[i].forward(h));
    h = i + 1 < linears_.size() ? nn::relu(c.linear_outputs.back()) : c.linear_outputs.back();
  }
  return h(0, 0);
}

Matrix CountHead::backward(const PatchFeatures& features, const Cache& cache, double grad_out) {
  check_features(features);
  if (options_.kind == HeadKind::projection) {
    weights_.grad += grad_out * features.values;
    if (options_.bias) bias_.grad(0, 0) += grad_out;
    return grad_out * weights_.value;
  }
  Matrix g = Matrix::Constant(1, 1, grad_out);
  for (std::size_t i = linears_.size(); i-- > 0;) {
    if (i + 1 < linears_.size()) g = nn::relu_backward(cache.linear_outputs[i], g);
    g = linears_[i].backward(cache.linear_inputs[i], g);
  }
  g = nn::global_avg_pool_backward(g, features.values.rows());
  for (std::size_t i = convs_.size(); i-- > 0;) {
    g = nn::relu_backward(cache.conv_outputs[i], g);
    g = convs_[i].backward(cache.conv_inputs[i], grid_h_, grid_w_, g);
  }
  return g;
}

std::vector<std::string> CountHead::layer_sequence() const {
  if (options_.kind == HeadKind::projection) return {"linear"};
  std::vector<std::string> seq;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    seq.emplace_back("conv3x3");
    seq.emplace_back("relu");
  }
  for (std::size_t i = 0; i < linears_.size(); ++i) {
    seq.emplace_back("linear");
    if (i + 1 < linears_.size()) seq.emplace_back("relu");
  }
  return seq;
}

CountPrediction predict_count(const PatchFeatures& features, const CountHead& head,
                              const std::string& image_id) {
  double c = head.forward(features);
  if (!std::isfinite(c)) throw NumericError("count head produced a non-finite count");
  if (head.options().clamp_nonneg && c < 0.0) c = 0.0;
  return {image_id, c};
}

double ape_loss(double count, double predicted) {
  if (!(count > 0.0)) throw DomainError("absolute percentage error needs a positive count");
  return std::abs(count - predicted) / count;
}

double ape_loss_grad(double count, double predicted) {
  if (!(count > 0.0)) throw DomainError("absolute percentage error needs a positive count");
  if (predicted > count) return 1.0 / count;
  if (predicted < count) return -1.0 / count;
  return 0.0;
}

void CountHead::init(Rng& rng) {
  weights_.value.setZero();
  bias_.value.setZero();
  for (auto& c : convs_) c.init_uniform(rng);
  for (auto& l : linears_) l.init_uniform(rng);
}

CountHead make_head(HeadKind kind, int grid_height, int grid_width, int feature_dim,
                    std::uint64_t seed, bool bias) {
  CountHead::Options opts;
  opts.kind = kind;
  opts.bias = bias;
  CountHead head(opts, grid_height, grid_width, feature_dim);
  Rng rng(seed);
  head.init(rng);
  return head;
}

}  // namespace cac
