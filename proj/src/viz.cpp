#include "cac/viz.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <opencv2/imgproc.hpp>

#include "cac/errors.hpp"

namespace cac::viz {

namespace fs = std::filesystem;

Weighting parse_weighting(const std::string& text) {
  if (text == "elementwise") return Weighting::elementwise;
  if (text == "column_norm") return Weighting::column_norm;
  throw ConfigError("unknown viz.weighting '" + text + "' (expected elementwise or column_norm)");
}

std::string to_string(Weighting weighting) {
  return weighting == Weighting::elementwise ? "elementwise" : "column_norm";
}

Matrix weighted_features(const PatchFeatures& features, const Matrix& projection,
                         Weighting weighting) {
  if (projection.rows() != features.values.rows() || projection.cols() != features.values.cols()) {
    throw ShapeError("projection weights do not match the feature matrix");
  }
  if (weighting == Weighting::elementwise) return features.values.cwiseProduct(projection);
  const RowVector norms = projection.colwise().norm();
  return features.values * norms.asDiagonal();
}

SaliencyMap svd_saliency(const PatchFeatures& features, const Matrix& projection,
                         Weighting weighting) {
  const Matrix m = weighted_features(features, projection, weighting);
  SaliencyMap out;
  out.values = Matrix::Zero(features.grid_height, features.grid_width);
  if (!all_finite(m)) throw NumericError("weighted features are not finite");
  if (m.norm() == 0.0) {
    out.degenerate = true;
    return out;
  }
  Eigen::BDCSVD<Eigen::MatrixXd> svd(Eigen::MatrixXd(m), Eigen::ComputeThinU);
  Eigen::VectorXd u = svd.matrixU().col(0);
  Eigen::Index peak = 0;
  u.cwiseAbs().maxCoeff(&peak);
  const double total = u.sum();
  if (total < 0.0 || (total == 0.0 && u(peak) < 0.0)) u = -u;
  for (int i = 0; i < features.num_patches(); ++i) {
    out.values(i / features.grid_width, i % features.grid_width) = u(i);
  }
  return out;
}

SaliencyMap svd_saliency(const PatchFeatures& features, const CountHead& head, Weighting weighting) {
  if (head.kind() != HeadKind::projection) {
    throw UsageError("svd saliency needs a projection head, got " + to_string(head.kind()));
  }
  return svd_saliency(features, head.projection_weights(), weighting);
}

Image8 map_to_image(const Matrix& map) {
  Image8 out(static_cast<int>(map.cols()), static_cast<int>(map.rows()), 1);
  if (map.size() == 0) return out;
  const double lo = map.minCoeff();
  const double hi = map.maxCoeff();
  const double span = hi > lo ? hi - lo : 1.0;
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      out.at(y, x, 0) = static_cast<std::uint8_t>(std::lround(255.0 * (map(y, x) - lo) / span));
    }
  }
  return out;
}

namespace {

cv::Mat to_bgr(const Image8& img) {
  cv::Mat rgb(img.height, img.width, img.channels == 1 ? CV_8UC1 : CV_8UC3,
              const_cast<std::uint8_t*>(img.pixels.data()));
  cv::Mat bgr;
  if (img.channels == 1) {
    cv::cvtColor(rgb, bgr, cv::COLOR_GRAY2BGR);
  } else {
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  }
  return bgr;
}

Image8 from_bgr(const cv::Mat& bgr) {
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  Image8 out(rgb.cols, rgb.rows, 3);
  for (int y = 0; y < rgb.rows; ++y) {
    std::copy(rgb.ptr<std::uint8_t>(y), rgb.ptr<std::uint8_t>(y) + rgb.cols * 3,
              out.pixels.begin() + static_cast<std::ptrdiff_t>(y) * rgb.cols * 3);
  }
  return out;
}

std::string format_count(double v) {
  if (!std::isfinite(v)) return "?";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

void label(cv::Mat& img, const std::string& text, bool right) {
  int base = 0;
  const double scale = 0.5;
  const cv::Size size = cv::getTextSize(text, cv::FONT_HERSHEY_SIMPLEX, scale, 1, &base);
  const cv::Point org(right ? img.cols - size.width - 4 : 4, size.height + 4);
  cv::rectangle(img, org + cv::Point(-2, base), org + cv::Point(size.width + 2, -size.height - 2),
                cv::Scalar(0, 0, 0), cv::FILLED);
  cv::putText(img, text, org, cv::FONT_HERSHEY_SIMPLEX, scale, cv::Scalar(255, 255, 255), 1,
              cv::LINE_AA);
}

}  // namespace

std::vector<fs::path> render_report(const std::vector<Image8>& images,
                                    const std::vector<Matrix>& maps,
                                    const std::vector<double>& counts,
                                    const std::vector<double>& predictions, const fs::path& out_dir,
                                    const ReportOptions& options) {
  if (maps.size() != images.size() || counts.size() != images.size() ||
      predictions.size() != images.size()) {
    throw UsageError("report inputs must be aligned lists");
  }
  if (options.columns < 1 || options.panel_size < 16) throw ConfigError("bad report layout");
  std::vector<fs::path> written;
  if (images.empty()) return written;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  const int s = options.panel_size;
  std::vector<cv::Mat> panels;
  for (std::size_t i = 0; i < images.size(); ++i) {
    cv::Mat base = to_bgr(resize_bilinear_aa(images[i], s, s));
    if (maps[i].size() > 0) {
      const Image8 gray = map_to_image(maps[i]);
      cv::Mat m(gray.height, gray.width, CV_8UC1, const_cast<std::uint8_t*>(gray.pixels.data()));
      cv::Mat up, heat;
      cv::resize(m, up, cv::Size(s, s), 0, 0, cv::INTER_LINEAR);
      cv::applyColorMap(up, heat, cv::COLORMAP_JET);
      cv::addWeighted(base, 1.0 - options.overlay_alpha, heat, options.overlay_alpha, 0.0, base);
    }
    label(base, format_count(counts[i]), false);
    label(base, format_count(predictions[i]), true);
    char name[32];
    std::snprintf(name, sizeof name, "panel_%03zu.png", i);
    write_png(out_dir / name, from_bgr(base));
    written.push_back(out_dir / name);
    panels.push_back(base);
  }
  if (panels.size() > 1) {
    const int cols = std::min<int>(options.columns, static_cast<int>(panels.size()));
    const int rows = (static_cast<int>(panels.size()) + cols - 1) / cols;
    cv::Mat grid(rows * s, cols * s, CV_8UC3, cv::Scalar(255, 255, 255));
    for (std::size_t i = 0; i < panels.size(); ++i) {
      const int r = static_cast<int>(i) / cols;
      const int c = static_cast<int>(i) % cols;
      panels[i].copyTo(grid(cv::Rect(c * s, r * s, s, s)));
    }
    write_png(out_dir / "grid.png", from_bgr(grid));
    written.push_back(out_dir / "grid.png");
  }
  return written;
}

}  // namespace cac::viz
