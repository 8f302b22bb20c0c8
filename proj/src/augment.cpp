#include "cac/augment.hpp"

#include "cac/errors.hpp"

namespace cac::augment {

GridMode parse_grid_mode(const std::string& text) {
  if (text == "fixed_2x2") return GridMode::fixed_2x2;
  if (text == "mixed_2x2_4x4") return GridMode::mixed_2x2_4x4;
  throw ConfigError("unknown tile.grid_mode '" + text + "' (expected fixed_2x2 or mixed_2x2_4x4)");
}

std::string to_string(GridMode mode) {
  return mode == GridMode::fixed_2x2 ? "fixed_2x2" : "mixed_2x2_4x4";
}

void TilingConfig::validate() const {
  if (!(frequency >= 0.0 && frequency <= 1.0)) {
    throw ConfigError("tile.frequency must lie in [0, 1]");
  }
}

ImageTensor apply_dihedral(const ImageTensor& image, int element) {
  if (image.width != image.height) throw ShapeError("dihedral transforms need a square image");
  if (element < 0 || element >= kDihedralOrder) throw UsageError("dihedral element out of range");
  const int n = image.width;
  const int turns = element % 4;
  const bool mirror = element >= 4;
  ImageTensor out(n, n, image.channels);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      // Source of output pixel (y, x) under `turns` clockwise quarter turns.
      int sy = y;
      int sx = mirror ? n - 1 - x : x;
      for (int t = 0; t < turns; ++t) {
        const int ny = n - 1 - sx;
        const int nx = sy;
        sy = ny;
        sx = nx;
      }
      for (int c = 0; c < image.channels; ++c) out.at(y, x, c) = image.at(sy, sx, c);
    }
  }
  return out;
}

ImageTensor geo_augment(const ImageTensor& image, Rng& rng, int* chosen) {
  const int e = static_cast<int>(rng.below(kDihedralOrder));
  if (chosen) *chosen = e;
  return apply_dihedral(image, e);
}

AugmentedSample tile(const ImageTensor& image, double count, int n, Rng& rng, bool geometric) {
  if (n != 1 && n != 2 && n != 4) throw ConfigError("tile grid must be 1, 2 or 4");
  if (!(count > 0.0)) throw DomainError("tiling needs a positive count");
  if (image.width % n != 0 || image.height % n != 0) {
    throw ConfigError("tile grid " + std::to_string(n) + " does not divide the image size");
  }
  AugmentedSample out;
  if (n == 1) {
    out.image = image;
    out.count = count;
    return out;
  }
  const int tw = image.width / n;
  const int th = image.height / n;
  const ImageTensor small = resize_bilinear_aa(image, tw, th);
  out.image = ImageTensor(image.width, image.height, image.channels);
  out.count = count * n * n;
  out.ops.push_back("tile:" + std::to_string(n));
  for (int ty = 0; ty < n; ++ty) {
    for (int tx = 0; tx < n; ++tx) {
      ImageTensor piece = small;
      if (geometric) {
        int e = 0;
        piece = geo_augment(small, rng, &e);
        out.ops.push_back("d4:" + std::to_string(e));
      }
      for (int y = 0; y < th; ++y) {
        for (int x = 0; x < tw; ++x) {
          for (int c = 0; c < image.channels; ++c) {
            out.image.at(ty * th + y, tx * tw + x, c) = piece.at(y, x, c);
          }
        }
      }
    }
  }
  return out;
}

int sample_plan(const TilingConfig& config, Rng& rng) {
  config.validate();
  const double u = rng.uniform();
  if (!(u < config.frequency)) return 1;
  if (config.grid_mode == GridMode::fixed_2x2) return 2;
  return rng.below(2) == 0 ? 2 : 4;
}

AugmentedSample augment_sample(const ImageTensor& image, double count,
                               const TilingConfig& config, Rng& rng) {
  const int n = sample_plan(config, rng);
  if (n > 1) return tile(image, count, n, rng, config.geometric);
  AugmentedSample out;
  out.count = count;
  if (config.geometric) {
    int e = 0;
    out.image = geo_augment(image, rng, &e);
    out.ops.push_back("d4:" + std::to_string(e));
  } else {
    out.image = image;
  }
  return out;
}

}  // namespace cac::augment
