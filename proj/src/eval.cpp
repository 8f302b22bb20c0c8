#include "cac/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cac/errors.hpp"

namespace cac::eval {

namespace {

void check_pair(const std::vector<double>& preds, const std::vector<double>& gts) {
  if (preds.size() != gts.size()) {
    throw UsageError("prediction/ground-truth length mismatch (" + std::to_string(preds.size()) +
                     " vs " + std::to_string(gts.size()) + ")");
  }
  if (preds.empty()) throw UsageError("cannot score an empty prediction set");
}

}  // namespace

double mae(const std::vector<double>& preds, const std::vector<double>& gts) {
  check_pair(preds, gts);
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) total += std::fabs(gts[i] - preds[i]);
  return total / static_cast<double>(preds.size());
}

double rmse(const std::vector<double>& preds, const std::vector<double>& gts) {
  check_pair(preds, gts);
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double e = gts[i] - preds[i];
    total += e * e;
  }
  return std::sqrt(total / static_cast<double>(preds.size()));
}

BaselineKind parse_baseline(const std::string& text) {
  if (text == "mean") return BaselineKind::mean;
  if (text == "median") return BaselineKind::median;
  throw UsageError("unknown baseline '" + text + "' (expected mean or median)");
}

std::string to_string(BaselineKind kind) { return kind == BaselineKind::mean ? "mean" : "median"; }

std::pair<BaselinePredictor, BaselinePredictor> trivial_baselines(std::vector<double> train_counts) {
  if (train_counts.empty()) throw UsageError("baselines need at least one training count");
  const double mean = std::accumulate(train_counts.begin(), train_counts.end(), 0.0) /
                      static_cast<double>(train_counts.size());
  std::sort(train_counts.begin(), train_counts.end());
  const double median = train_counts[train_counts.size() / 2];
  return {{BaselineKind::mean, mean}, {BaselineKind::median, median}};
}

EvalResult density_limited_eval(const std::vector<double>& preds, const std::vector<double>& gts,
                                std::optional<double> limit) {
  check_pair(preds, gts);
  if (limit && !(*limit >= 0.0)) throw UsageError("density limit must be non-negative");
  std::vector<double> p, g;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    if (limit && gts[i] > *limit) continue;
    p.push_back(preds[i]);
    g.push_back(gts[i]);
  }
  if (p.empty()) throw UsageError("density limit excludes every image");
  EvalResult r;
  r.mae = mae(p, g);
  r.rmse = rmse(p, g);
  r.n_images = p.size();
  r.n_excluded = gts.size() - p.size();
  r.excluded_percent = 100.0 * static_cast<double>(r.n_excluded) / static_cast<double>(gts.size());
  r.limit = limit;
  return r;
}

double split_count_inference(const Counter& counter, const Prepare& prepare, const Image8& image,
                             int n) {
  if (n < 1) throw UsageError("split grid must be at least 1");
  if (image.width < n || image.height < n) throw ShapeError("image smaller than the split grid");
  double total = 0.0;
  for (int gy = 0; gy < n; ++gy) {
    const int y0 = gy * image.height / n;
    const int y1 = (gy + 1) * image.height / n;
    for (int gx = 0; gx < n; ++gx) {
      const int x0 = gx * image.width / n;
      const int x1 = (gx + 1) * image.width / n;
      const Image8 cell = n == 1 ? image : crop(image, x0, y0, x1 - x0, y1 - y0);
      total += counter(prepare(cell));
    }
  }
  return total;
}

}  // namespace cac::eval
