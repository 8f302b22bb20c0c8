#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cac/image.hpp"
#include "cac/rng.hpp"

namespace cac::augment {

enum class GridMode { fixed_2x2, mixed_2x2_4x4 };

GridMode parse_grid_mode(const std::string& text);
std::string to_string(GridMode mode);

struct TilingConfig {
  double frequency = 0.5;  // probability a sample is tiled
  GridMode grid_mode = GridMode::fixed_2x2;
  bool geometric = true;   // dihedral flips/rotations on images and tiles

  void validate() const;
};

struct AugmentedSample {
  ImageTensor image;
  double count = 0.0;
  std::vector<std::string> ops;  // e.g. {"tile:2", "d4:3", "d4:0", ...}
};

/// Number of dihedral-group elements of the square.
inline constexpr int kDihedralOrder = 8;

/// Element e rotates by 90 * (e % 4) degrees clockwise, then mirrors
/// left-right when e >= 4. Element 0 is the identity. Square images only.
ImageTensor apply_dihedral(const ImageTensor& image, int element);

/// Applies one uniformly drawn dihedral element; the count is unaffected.
ImageTensor geo_augment(const ImageTensor& image, Rng& rng, int* chosen = nullptr);

/// n x n mosaic of the image resized to (W/n) x (H/n); the count scales by
/// n^2. n = 1 returns the image untouched. When `geometric` is set each tile
/// gets its own dihedral element.
AugmentedSample tile(const ImageTensor& image, double count, int n, Rng& rng,
                     bool geometric = true);

/// 1 (no tiling) with probability 1 - frequency, otherwise 2, or 2/4 with
/// equal odds in mixed mode.
int sample_plan(const TilingConfig& config, Rng& rng);

/// Full per-sample policy used by training: draw a plan, tile or
/// geometrically augment the whole image. Never crops.
AugmentedSample augment_sample(const ImageTensor& image, double count,
                               const TilingConfig& config, Rng& rng);

}  // namespace cac::augment
