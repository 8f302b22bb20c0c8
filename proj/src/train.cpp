#include "cac/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "cac/errors.hpp"

namespace cac::train {

namespace fs = std::filesystem;

BackboneInit parse_backbone_init(const std::string& text) {
  if (text == "pretrained") return BackboneInit::pretrained;
  if (text == "random") return BackboneInit::random;
  throw ConfigError("unknown backbone.init '" + text + "' (expected pretrained or random)");
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
  if (epochs < 0) throw ConfigError("train.epochs must be non-negative");
  if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be non-negative");
  adam.validate();
  tiling.validate();
  backbone.validate();
  if (backbone_init == BackboneInit::pretrained && backbone_weights.empty()) {
    throw ConfigError("backbone.init = pretrained needs backbone.weights");
  }
}

ParamRefs Model::params(bool include_backbone) {
  ParamRefs out;
  if (include_backbone) out = backbone.params();
  for (auto* p : head.params()) out.push_back(p);
  return out;
}

ConstParamRefs Model::params(bool include_backbone) const {
  ConstParamRefs out;
  if (include_backbone) out = backbone.params();
  for (const auto* p : head.params()) out.push_back(p);
  return out;
}

double Model::predict(const ImageTensor& image) const {
  return predict_count(extract_features(image, backbone), head).count;
}

double Model::predict_file(const fs::path& path) const {
  const auto& c = backbone.config;
  return predict(data::preprocess(path, c.image_size, c.normalization));
}

Model init_model(const TrainConfig& config) {
  config.validate();
  Model m;
  m.backbone = config.backbone_init == BackboneInit::pretrained
                   ? load_pretrained(config.backbone_weights, config.backbone)
                   : BackboneParams::random(config.backbone, config.seed);
  m.head = make_head(config.head, config.backbone.grid(), config.backbone.grid(),
                     config.backbone.model_dim, config.seed ^ 0x9e3779b97f4a7c15ULL, config.head_bias);
  m.head.set_clamp_nonneg(config.clamp_nonneg);
  return m;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ck, const Adam* optimizer) {
  TensorFile file;
  file.metadata = config_metadata(ck.model.backbone.config);
  file.metadata["backbone.provenance"] =
      ck.model.backbone.provenance == Provenance::pretrained ? "pretrained" : "random";
  file.metadata["head.kind"] = to_string(ck.model.head.kind());
  file.metadata["head.bias"] = ck.model.head.options().bias ? "1" : "0";
  file.metadata["head.clamp_nonneg"] = ck.model.head.options().clamp_nonneg ? "1" : "0";
  file.metadata["epoch"] = std::to_string(ck.epoch);
  file.metadata["config_hash"] = ck.config_hash;
  file.metadata["rng_state"] = ck.rng_state;
  store_parameters(file, ck.model.backbone.params(), "backbone.");
  store_parameters(file, ck.model.head.params(), "head.");
  if (optimizer) {
    optimizer->save_state(file, "optim.");
  } else if (ck.optimizer) {
    for (const auto& [k, v] : ck.optimizer->tensors) file.tensors[k] = v;
    for (const auto& [k, v] : ck.optimizer->metadata) file.metadata[k] = v;
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_tensor_file(path, file);
}

Checkpoint load_checkpoint(const fs::path& path) {
  const TensorFile file = read_tensor_file(path);
  auto meta = [&](const std::string& key) {
    auto it = file.metadata.find(key);
    if (it == file.metadata.end()) throw LoadError("checkpoint " + path.string() + " lacks " + key);
    return it->second;
  };
  Checkpoint ck;
  const BackboneConfig cfg = config_from_metadata(file.metadata);
  ck.model.backbone = BackboneParams(cfg);
  ck.model.backbone.provenance =
      meta("backbone.provenance") == "pretrained" ? Provenance::pretrained : Provenance::random;
  load_parameters(file, ck.model.backbone.params(), "backbone.");
  ck.model.head = CountHead({parse_head_kind(meta("head.kind")), meta("head.bias") == "1",
                             meta("head.clamp_nonneg") == "1"},
                            cfg.grid(), cfg.grid(), cfg.model_dim);
  load_parameters(file, ck.model.head.params(), "head.");
  ck.epoch = std::stoi(meta("epoch"));
  ck.config_hash = meta("config_hash");
  ck.rng_state = meta("rng_state");
  TensorFile opt;
  for (const auto& [k, v] : file.tensors) {
    if (k.rfind("optim.", 0) == 0) opt.tensors[k] = v;
  }
  for (const auto& [k, v] : file.metadata) {
    if (k.rfind("optim.", 0) == 0) opt.metadata[k] = v;
  }
  if (!opt.metadata.empty()) ck.optimizer = std::move(opt);
  return ck;
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

TrainResult train_counter(const data::DatasetManifest& manifest, const TrainConfig& config,
                          const std::optional<fs::path>& out_dir,
                          const std::optional<Checkpoint>& resume) {
  config.validate();
  const auto records = manifest.split(data::Split::train);
  if (records.empty()) throw UsageError("manifest has no training records");
  for (const auto* r : records) {
    if (r->count <= 0) {
      throw IngestionError("record " + r->id + " with count " + std::to_string(r->count) +
                           " reached the training loop");
    }
  }

  TrainResult result;
  Checkpoint& ck = result.checkpoint;
  if (resume) {
    if (resume->config_hash != config.config_hash) {
      throw ConfigError("resume checkpoint was written under config " + resume->config_hash +
                        ", current config is " + config.config_hash);
    }
    ck = *resume;
  } else {
    ck.model = init_model(config);
    ck.config_hash = config.config_hash;
  }
  Model& model = ck.model;
  const auto& bcfg = model.backbone.config;
  Adam adam(model.params(!config.freeze_backbone), config.adam);
  if (resume && resume->optimizer) adam.load_state(*resume->optimizer, "optim.");

  std::ofstream log_file;
  if (out_dir) {
    fs::create_directories(*out_dir);
    log_file.open(*out_dir / "steps.jsonl", resume ? std::ios::app : std::ios::trunc);
    if (!log_file) throw IoError("cannot write step log in " + out_dir->string());
  }

  std::vector<ImageTensor> images(records.size());
  std::vector<char> loaded(records.size(), 0);
  auto image_of = [&](std::size_t i) -> const ImageTensor& {
    if (!loaded[i]) {
      images[i] = data::preprocess(manifest.resolve(*records[i]), bcfg.image_size, bcfg.normalization);
      loaded[i] = 1;
    }
    return images[i];
  };

  const Rng base(config.seed);
  const Rng aug_base(config.aug_seed ^ 0xa5a5a5a55a5a5a5aULL);
  std::int64_t step = adam.steps();
  std::vector<std::size_t> order(records.size());
  ParamRefs all = model.params(true);
  for (int epoch = ck.epoch; epoch < config.epochs; ++epoch) {
    Rng rng = Rng(base).split(static_cast<std::uint64_t>(epoch));
    Rng aug_rng = Rng(aug_base).split(static_cast<std::uint64_t>(epoch));
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const double scale = 1.0 / static_cast<double>(end - start);
      zero_grads(all);
      double batch_loss = 0.0;
      nlohmann::json samples = nlohmann::json::array();
      for (std::size_t k = start; k < end; ++k) {
        const auto* rec = records[order[k]];
        const auto aug = augment::augment_sample(image_of(order[k]), static_cast<double>(rec->count),
                                                 config.tiling, aug_rng);
        BackboneCache bcache;
        const PatchFeatures feats =
            extract_features(aug.image, model.backbone, config.freeze_backbone ? nullptr : &bcache);
        CountHead::Cache hcache;
        const double pred = model.head.forward(feats, &hcache);
        const double loss = ape_loss(aug.count, pred);
        if (!std::isfinite(loss)) {
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(step) + ", image " + rec->id + " (prediction " +
                             fmt(pred) + ", count " + fmt(aug.count) + ")");
        }
        batch_loss += loss * scale;
        const Matrix dfeat = model.head.backward(feats, hcache, ape_loss_grad(aug.count, pred) * scale);
        if (!config.freeze_backbone) backbone_backward(aug.image, model.backbone, bcache, dfeat);
        samples.push_back({{"id", rec->id}, {"count", aug.count}, {"ops", aug.ops}, {"pred", fmt(pred)}});
      }
      adam.step();
      ++step;
      nlohmann::json line;
      line["epoch"] = epoch;
      line["step"] = step;
      line["loss"] = fmt(batch_loss);
      line["lr"] = config.adam.lr;
      line["samples"] = samples;
      result.log.push_back(line.dump());
      if (log_file) log_file << result.log.back() << '\n';
    }
    ck.epoch = epoch + 1;
    ck.rng_state = rng.serialize();
    if (out_dir && config.checkpoint_every > 0 && ck.epoch % config.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04d.safetensors", ck.epoch);
      save_checkpoint(*out_dir / name, ck, &adam);
    }
  }
  if (ck.rng_state.empty()) ck.rng_state = base.serialize();
  TensorFile opt;
  adam.save_state(opt, "optim.");
  ck.optimizer = std::move(opt);
  if (out_dir) save_checkpoint(*out_dir / "final.safetensors", ck);
  return result;
}

Evaluation evaluate_checkpoint(const Model& model, const data::DatasetManifest& manifest,
                               data::Split split, std::optional<double> limit,
                               const std::optional<fs::path>& predictions_path) {
  const auto records = manifest.split(split);
  if (records.empty()) throw UsageError("split " + data::to_string(split) + " is empty");
  Evaluation out;
  std::vector<double> preds, gts;
  for (const auto* r : records) {
    const double p = model.predict_file(manifest.resolve(*r));
    out.predictions.push_back({r->id, static_cast<double>(r->count), p});
    preds.push_back(p);
    gts.push_back(static_cast<double>(r->count));
  }
  out.result = eval::density_limited_eval(preds, gts, limit);
  if (predictions_path) {
    if (predictions_path->has_parent_path()) fs::create_directories(predictions_path->parent_path());
    std::ofstream f(*predictions_path);
    if (!f) throw IoError("cannot write " + predictions_path->string());
    f << "id,count,predicted\n";
    for (const auto& p : out.predictions) f << p.id << ',' << fmt(p.count) << ',' << fmt(p.predicted) << '\n';
    if (!f) throw IoError("failed writing " + predictions_path->string());
  }
  return out;
}

}  // namespace cac::train
