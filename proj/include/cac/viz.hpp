#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cac/backbone.hpp"
#include "cac/count_head.hpp"
#include "cac/image.hpp"

namespace cac::viz {

enum class Weighting {
  elementwise,  // features * F, entry by entry
  column_norm,  // each feature column scaled by the norm of F's column
};
Weighting parse_weighting(const std::string& text);
std::string to_string(Weighting weighting);

struct SaliencyMap {
  Matrix values;  // grid_height x grid_width
  bool sign_normalized = true;
  bool degenerate = false;  // weighted matrix was zero; values are all zero
};

/// Leading left singular vector of the weighted p x d matrix, reshaped to the
/// patch grid, with the sign chosen so the map sums to a non-negative value.
SaliencyMap svd_saliency(const PatchFeatures& features, const Matrix& projection,
                         Weighting weighting = Weighting::elementwise);
/// Throws UsageError unless the head is a projection head.
SaliencyMap svd_saliency(const PatchFeatures& features, const CountHead& head,
                         Weighting weighting = Weighting::elementwise);

/// Same weighting, exposed for checks and reports.
Matrix weighted_features(const PatchFeatures& features, const Matrix& projection,
                         Weighting weighting);

struct ReportOptions {
  int panel_size = 224;
  int columns = 4;
  double overlay_alpha = 0.5;
};

/// One panel per image (map overlaid, count top left, prediction top right),
/// named panel_000.png, ... plus grid.png when there is more than one image.
/// Returns the files written.
std::vector<std::filesystem::path> render_report(const std::vector<Image8>& images,
                                                 const std::vector<Matrix>& maps,
                                                 const std::vector<double>& counts,
                                                 const std::vector<double>& predictions,
                                                 const std::filesystem::path& out_dir,
                                                 const ReportOptions& options = {});

/// Min-max normalized grayscale rendering of a 2-D map.
Image8 map_to_image(const Matrix& map);

}  // namespace cac::viz
