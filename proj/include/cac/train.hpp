#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cac/augment.hpp"
#include "cac/backbone.hpp"
#include "cac/count_head.hpp"
#include "cac/data.hpp"
#include "cac/eval.hpp"
#include "cac/optim.hpp"

namespace cac::train {

enum class BackboneInit { pretrained, random };
BackboneInit parse_backbone_init(const std::string& text);

struct TrainConfig {
  int batch_size = 2;
  int epochs = 80;
  AdamOptions adam;
  augment::TilingConfig tiling;
  std::uint64_t seed = 0;      // initialization and data order
  std::uint64_t aug_seed = 0;  // augmentation stream
  bool freeze_backbone = false;
  BackboneConfig backbone = BackboneConfig::small();
  BackboneInit backbone_init = BackboneInit::pretrained;
  std::filesystem::path backbone_weights;
  HeadKind head = HeadKind::projection;
  bool head_bias = true;
  bool clamp_nonneg = false;
  int checkpoint_every = 0;  // epochs; 0 keeps only the final checkpoint
  std::string config_hash;   // embedded in every artifact

  void validate() const;
};

/// Backbone plus count head: everything needed to predict a count.
struct Model {
  BackboneParams backbone;
  CountHead head;

  ParamRefs params(bool include_backbone);
  ConstParamRefs params(bool include_backbone) const;
  double predict(const ImageTensor& image) const;  // clamps per head option
  double predict_file(const std::filesystem::path& path) const;
};

Model init_model(const TrainConfig& config);

struct Checkpoint {
  Model model;
  int epoch = 0;
  std::string config_hash;
  std::string rng_state;
  std::optional<TensorFile> optimizer;  // raw optimizer tensors for resuming
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint,
                     const Adam* optimizer = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<std::string> log;  // one JSON object per optimizer step
};

/// Weakly supervised count regression. When `out_dir` is set the step log
/// (steps.jsonl) and checkpoints are written there. `resume` continues from a
/// checkpoint whose config hash must match.
TrainResult train_counter(const data::DatasetManifest& manifest, const TrainConfig& config,
                          const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                          const std::optional<Checkpoint>& resume = std::nullopt);

struct ImagePrediction {
  std::string id;
  double count = 0.0;
  double predicted = 0.0;
};

struct Evaluation {
  eval::EvalResult result;
  std::vector<ImagePrediction> predictions;
};

/// Scores a split. When `predictions_path` is set, per-image predictions are
/// written there as CSV (id,count,predicted).
Evaluation evaluate_checkpoint(const Model& model, const data::DatasetManifest& manifest,
                               data::Split split, std::optional<double> limit = std::nullopt,
                               const std::optional<std::filesystem::path>& predictions_path = std::nullopt);

}  // namespace cac::train
