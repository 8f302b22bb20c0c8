#include "cac/localize.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cac/errors.hpp"
#include "cac/tensor_file.hpp"

namespace cac::localize {

LocalizationHead::LocalizationHead(int feature_dim, const std::vector<int>& channels) {
  if (channels.size() != 3 || channels.back() != 1) {
    throw ConfigError("localization head needs three blocks ending in one channel");
  }
  int in = feature_dim;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    if (channels[i] < 1) throw ConfigError("localization channels must be positive");
    convs.emplace_back("loc.blocks." + std::to_string(i) + ".conv", in, channels[i]);
    in = channels[i];
  }
}

ParamRefs LocalizationHead::params() {
  ParamRefs out;
  for (auto& c : convs) c.collect(out);
  return out;
}

ConstParamRefs LocalizationHead::params() const {
  return const_refs(const_cast<LocalizationHead*>(this)->params());
}

void LocalizationHead::init(Rng& rng) {
  for (auto& c : convs) c.init_uniform(rng);
}

data::DensityMap localize(const PatchFeatures& features, const LocalizationHead& head,
                          HeadCache* cache) {
  if (head.convs.empty()) throw UsageError("localization head is empty");
  if (features.dim() != head.feature_dim()) {
    throw ShapeError("features have " + std::to_string(features.dim()) +
                     " channels, localization head expects " + std::to_string(head.feature_dim()));
  }
  if (features.values.rows() != features.num_patches()) throw ShapeError("feature grid mismatch");
  int h = features.grid_height;
  int w = features.grid_width;
  Matrix x = features.values;
  if (cache) *cache = HeadCache{};
  for (const auto& conv : head.convs) {
    Matrix pre = conv.forward(x, h, w);
    if (cache) {
      cache->inputs.push_back(x);
      cache->pre.push_back(pre);
      cache->sizes.push_back(h);
      cache->sizes.push_back(w);
    }
    x = nn::upsample2x(nn::relu(pre), h, w);
    h *= 2;
    w *= 2;
  }
  data::DensityMap out;
  out.values = Eigen::Map<const Matrix>(x.data(), h, w);
  return out;
}

void localize_backward(LocalizationHead& head, const HeadCache& cache, const Matrix& grad_map) {
  const std::size_t n = head.convs.size();
  if (cache.pre.size() != n) throw UsageError("localization cache does not match the head");
  const int h_last = cache.sizes[2 * (n - 1)] * 2;
  const int w_last = cache.sizes[2 * (n - 1) + 1] * 2;
  if (grad_map.rows() != h_last || grad_map.cols() != w_last) {
    throw ShapeError("density gradient has the wrong shape");
  }
  Matrix g = Eigen::Map<const Matrix>(grad_map.data(), grad_map.size(), 1);
  for (std::size_t k = n; k-- > 0;) {
    const int h = cache.sizes[2 * k];
    const int w = cache.sizes[2 * k + 1];
    g = nn::upsample2x_backward(g, h, w);
    g = nn::relu_backward(cache.pre[k], g);
    g = head.convs[k].backward(cache.inputs[k], h, w, g);
  }
}

double loc_loss(const data::DensityMap& pred, const data::DensityMap& gt) {
  if (pred.values.rows() != gt.values.rows() || pred.values.cols() != gt.values.cols()) {
    throw ShapeError("density maps differ in shape");
  }
  if (pred.values.size() == 0) throw ShapeError("empty density map");
  return (pred.values - gt.values).squaredNorm() / static_cast<double>(pred.values.size());
}

Matrix loc_loss_grad(const data::DensityMap& pred, const data::DensityMap& gt) {
  if (pred.values.rows() != gt.values.rows() || pred.values.cols() != gt.values.cols()) {
    throw ShapeError("density maps differ in shape");
  }
  return 2.0 * (pred.values - gt.values) / static_cast<double>(pred.values.size());
}

LocSample make_sample(const data::DatasetManifest& manifest, const data::ImageRecord& record,
                      const BackboneParams& backbone, double sigma) {
  if (!record.points) throw UsageError("record " + record.id + " has no point annotations");
  const auto& cfg = backbone.config;
  const Image8 img = read_image(manifest.resolve(record));
  LocSample s;
  s.features = extract_features(data::preprocess(img, cfg.image_size, cfg.normalization), backbone);
  const int mh = s.features.grid_height * LocalizationHead::kScale;
  const int mw = s.features.grid_width * LocalizationHead::kScale;
  auto pts = data::rescale_points(*record.points, img.width, img.height, mw, mh);
  for (auto& p : pts) {
    p.x = std::clamp(p.x, 0.0, static_cast<double>(mw));
    p.y = std::clamp(p.y, 0.0, static_cast<double>(mh));
  }
  s.target = data::gaussian_density(pts, mw, mh, sigma);
  return s;
}

namespace {

double mean_loss(const std::vector<LocSample>& samples, const LocalizationHead& head) {
  if (samples.empty()) return 0.0;
  double total = 0.0;
  for (const auto& s : samples) total += loc_loss(localize(s.features, head), s.target);
  return total / static_cast<double>(samples.size());
}

}  // namespace

LocalizerResult train_localizer(const data::DatasetManifest& manifest,
                                const BackboneParams& backbone, LocalizationHead& head,
                                const LocalizerConfig& config) {
  if (config.epochs < 0) throw ConfigError("localizer epochs must be non-negative");
  if (config.batch_size < 1) throw ConfigError("localizer batch size must be at least 1");
  if (!(config.sigma > 0.0)) throw ConfigError("localizer sigma must be positive");

  std::vector<const data::ImageRecord*> train, held;
  for (const auto* r : manifest.split(data::Split::train)) {
    if (r->points) train.push_back(r);
  }
  for (const auto* r : manifest.split(data::Split::val)) {
    if (r->points) held.push_back(r);
  }
  if (train.empty()) throw UsageError("manifest has no training records with point annotations");
  if (held.empty()) {
    const auto n_held = static_cast<std::size_t>(
        std::max(1.0, std::floor(config.holdout_fraction * static_cast<double>(train.size()))));
    if (train.size() > n_held) {
      held.assign(train.end() - static_cast<std::ptrdiff_t>(n_held), train.end());
      train.resize(train.size() - n_held);
    }
  }

  LocalizerResult result;
  const auto params_before = backbone.params();
  result.backbone_checksum_before = checksum(params_before);

  std::vector<LocSample> train_samples, held_samples;
  for (const auto* r : train) train_samples.push_back(make_sample(manifest, *r, backbone, config.sigma));
  for (const auto* r : held) held_samples.push_back(make_sample(manifest, *r, backbone, config.sigma));
  result.train_images = train_samples.size();
  result.heldout_images = held_samples.size();
  result.heldout_before = mean_loss(held_samples, head);

  Adam adam(head.params(), config.adam);
  Rng rng(config.seed);
  std::vector<std::size_t> order(train_samples.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng erng = rng.split(static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[erng.below(i)]);
    }
    double epoch_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      zero_grads(head.params());
      for (std::size_t k = start; k < end; ++k) {
        const auto& s = train_samples[order[k]];
        HeadCache cache;
        const auto pred = localize(s.features, head, &cache);
        const double loss = loc_loss(pred, s.target);
        if (!std::isfinite(loss)) throw NumericError("non-finite localization loss");
        epoch_total += loss;
        localize_backward(head, cache, loc_loss_grad(pred, s.target) / static_cast<double>(end - start));
      }
      adam.step();
    }
    result.epoch_losses.push_back(epoch_total / static_cast<double>(order.size()));
  }
  result.heldout_after = mean_loss(held_samples, head);
  result.backbone_checksum_after = checksum(backbone.params());
  return result;
}

void save_localizer(const std::filesystem::path& path, const LocalizationHead& head,
                    const std::string& config_hash) {
  TensorFile file;
  std::string channels;
  for (const auto& c : head.convs) channels += (channels.empty() ? "" : ",") + std::to_string(c.out_channels());
  file.metadata["loc.feature_dim"] = std::to_string(head.feature_dim());
  file.metadata["loc.channels"] = channels;
  file.metadata["config_hash"] = config_hash;
  store_parameters(file, head.params(), "");
  write_tensor_file(path, file);
}

LocalizationHead load_localizer(const std::filesystem::path& path) {
  const TensorFile file = read_tensor_file(path);
  auto dim = file.metadata.find("loc.feature_dim");
  auto ch = file.metadata.find("loc.channels");
  if (dim == file.metadata.end() || ch == file.metadata.end()) {
    throw LoadError(path.string() + " is not a localization head checkpoint");
  }
  std::vector<int> channels;
  std::size_t start = 0;
  const std::string& text = ch->second;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    channels.push_back(std::stoi(text.substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  LocalizationHead head(std::stoi(dim->second), channels);
  load_parameters(file, head.params(), "");
  return head;
}

}  // namespace cac::localize
