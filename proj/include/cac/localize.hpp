#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cac/backbone.hpp"
#include "cac/data.hpp"
#include "cac/nn.hpp"
#include "cac/optim.hpp"

namespace cac::localize {

/// Three Conv3x3 -> ReLU -> bilinear 2x upsample blocks; a g x g feature grid
/// becomes an 8g x 8g single-channel density map.
struct LocalizationHead {
  std::vector<nn::Conv3x3> convs;

  LocalizationHead() = default;
  /// `channels` lists the output width of each block; the last must be 1.
  LocalizationHead(int feature_dim, const std::vector<int>& channels = {128, 64, 1});

  static constexpr int kScale = 8;
  int feature_dim() const { return convs.front().in_channels(); }

  ParamRefs params();
  ConstParamRefs params() const;
  void init(Rng& rng);
};

struct HeadCache {
  std::vector<Matrix> inputs;  // per block, token-major
  std::vector<Matrix> pre;     // conv outputs before ReLU
  std::vector<int> sizes;      // per block input side length
};

/// Predicted density map, (8 * grid_height) x (8 * grid_width), non-negative.
data::DensityMap localize(const PatchFeatures& features, const LocalizationHead& head,
                          HeadCache* cache = nullptr);

/// Accumulates head gradients for d loss / d map.
void localize_backward(LocalizationHead& head, const HeadCache& cache, const Matrix& grad_map);

/// Mean over pixels of the squared difference.
double loc_loss(const data::DensityMap& pred, const data::DensityMap& gt);
Matrix loc_loss_grad(const data::DensityMap& pred, const data::DensityMap& gt);

struct LocalizerConfig {
  int epochs = 10;
  int batch_size = 2;
  AdamOptions adam;
  double sigma = 4.0;  // at the 8x feature-grid resolution
  std::uint64_t seed = 0;
  double holdout_fraction = 0.1;  // used when there is no val split with points
};

struct LocalizerResult {
  std::vector<double> epoch_losses;
  double heldout_before = 0.0;
  double heldout_after = 0.0;
  std::size_t train_images = 0;
  std::size_t heldout_images = 0;
  std::uint64_t backbone_checksum_before = 0;
  std::uint64_t backbone_checksum_after = 0;
};

/// A prepared (features, target) pair; features come from the frozen backbone.
struct LocSample {
  PatchFeatures features;
  data::DensityMap target;
};

LocSample make_sample(const data::DatasetManifest& manifest, const data::ImageRecord& record,
                      const BackboneParams& backbone, double sigma);

/// Trains `head` with the backbone frozen. Requires point annotations.
LocalizerResult train_localizer(const data::DatasetManifest& manifest,
                                const BackboneParams& backbone, LocalizationHead& head,
                                const LocalizerConfig& config);

void save_localizer(const std::filesystem::path& path, const LocalizationHead& head,
                    const std::string& config_hash);
LocalizationHead load_localizer(const std::filesystem::path& path);

}  // namespace cac::localize
