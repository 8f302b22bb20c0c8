#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cac/attention.hpp"
#include "cac/image.hpp"
#include "cac/nn.hpp"
#include "cac/tensor.hpp"

namespace cac {

/// Architecture of the patch transformer. `small()` is the 8-pixel-patch
/// ViT-S layout the pretrained self-distillation weights use; `tiny()` is a
/// desk-scale variant with the same 28 x 28 patch grid for tests.
struct BackboneConfig {
  int image_size = 224;
  int patch_size = 8;
  int depth = 12;
  int heads = 6;
  int model_dim = 384;
  int mlp_hidden = 1536;
  double layer_norm_eps = 1e-6;
  Normalization normalization;

  int grid() const { return image_size / patch_size; }
  int num_patches() const { return grid() * grid(); }
  int patch_dim() const { return 3 * patch_size * patch_size; }

  static BackboneConfig small();
  static BackboneConfig tiny();

  /// Throws ConfigError when the layout is inconsistent.
  void validate() const;
};

enum class Provenance { pretrained, random };

struct TransformerBlock {
  nn::LayerNorm norm1;
  MultiHeadProjection attn;
  nn::Linear proj;
  nn::LayerNorm norm2;
  nn::Linear fc1;
  nn::Linear fc2;

  TransformerBlock() = default;
  TransformerBlock(const std::string& prefix, const BackboneConfig& config);
  void collect(ParamRefs& out);
};

struct BackboneParams {
  BackboneConfig config;
  Provenance provenance = Provenance::random;
  Parameter cls_token;  // 1 x d
  Parameter pos_embed;  // (1 + p) x d
  nn::Linear patch_embed;
  std::vector<TransformerBlock> blocks;
  nn::LayerNorm norm;

  BackboneParams() = default;
  explicit BackboneParams(const BackboneConfig& config);

  /// Parameters in a fixed order; names follow the common ViT checkpoint
  /// naming (cls_token, pos_embed, patch_embed.proj.*, blocks.N.*, norm.*).
  ParamRefs params();
  ConstParamRefs params() const;

  static BackboneParams random(const BackboneConfig& config, std::uint64_t seed);
};

/// grid_height x grid_width patch tokens, one row per patch (row-major over
/// the grid), model_dim columns.
struct PatchFeatures {
  int grid_height = 0;
  int grid_width = 0;
  Matrix values;

  int num_patches() const { return grid_height * grid_width; }
  int dim() const { return static_cast<int>(values.cols()); }
};

/// Activations kept by a forward pass for the backward pass.
struct BackboneCache {
  Matrix patches;
  struct Block {
    Matrix input;
    Matrix norm1_out;
    MultiHeadCache attn;
    Matrix heads_out;
    Matrix after_attn;
    Matrix norm2_out;
    Matrix fc1_out;
  };
  std::vector<Block> blocks;
  Matrix final_tokens;
};

/// Splits an image into flattened patches ordered channel, row, column.
Matrix patchify(const ImageTensor& image, int patch_size);
ImageTensor unpatchify(const Matrix& patches, int width, int height, int patch_size);

/// Final-layer patch tokens; the class token takes part in attention but is
/// not returned.
PatchFeatures extract_features(const ImageTensor& image, const BackboneParams& params,
                               BackboneCache* cache = nullptr);

/// Backpropagates d(features) through the network, accumulating parameter
/// gradients. Returns the gradient with respect to the input image.
ImageTensor backbone_backward(const ImageTensor& image, BackboneParams& params,
                              const BackboneCache& cache, const Matrix& grad_features);

/// Reads a converted self-distillation checkpoint and checks it against
/// `expected`. Shape mismatches raise IncompatibleCheckpointError naming every
/// offending tensor.
BackboneParams load_pretrained(const std::filesystem::path& weights,
                               const BackboneConfig& expected = BackboneConfig::small());

/// Architecture keys ("arch.*") stored in checkpoint metadata.
std::map<std::string, std::string> config_metadata(const BackboneConfig& config);
BackboneConfig config_from_metadata(const std::map<std::string, std::string>& metadata);

void save_backbone(const std::filesystem::path& path, const BackboneParams& params);

}  // namespace cac
