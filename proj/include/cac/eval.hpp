#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cac/image.hpp"

namespace cac::eval {

double mae(const std::vector<double>& preds, const std::vector<double>& gts);
double rmse(const std::vector<double>& preds, const std::vector<double>& gts);

struct EvalResult {
  double mae = 0.0;
  double rmse = 0.0;
  std::size_t n_images = 0;
  std::size_t n_excluded = 0;
  double excluded_percent = 0.0;
  std::optional<double> limit;
};

enum class BaselineKind { mean, median };
BaselineKind parse_baseline(const std::string& text);
std::string to_string(BaselineKind kind);

struct BaselinePredictor {
  BaselineKind kind = BaselineKind::mean;
  double value = 0.0;
  double operator()() const { return value; }
};

/// Mean, and the element at index floor(n/2) of the sorted counts.
std::pair<BaselinePredictor, BaselinePredictor> trivial_baselines(std::vector<double> train_counts);

/// Images whose ground truth exceeds `limit` are dropped before scoring.
EvalResult density_limited_eval(const std::vector<double>& preds, const std::vector<double>& gts,
                                std::optional<double> limit = std::nullopt);

/// Maps a preprocessed network-resolution image to a count.
using Counter = std::function<double(const ImageTensor&)>;
/// Resizes and normalizes a raw crop into network input.
using Prepare = std::function<ImageTensor(const Image8&)>;

/// Cuts the image into n x n non-overlapping cells (cell boundaries at
/// floor(k * W / n)), counts each cell independently and sums.
double split_count_inference(const Counter& counter, const Prepare& prepare, const Image8& image,
                             int n);

}  // namespace cac::eval
