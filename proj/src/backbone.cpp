#include "cac/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "cac/errors.hpp"
#include "cac/tensor_file.hpp"

namespace cac {

BackboneConfig BackboneConfig::small() { return BackboneConfig{}; }

BackboneConfig BackboneConfig::tiny() {
  BackboneConfig c;
  c.image_size = 56;
  c.patch_size = 2;
  c.depth = 2;
  c.heads = 2;
  c.model_dim = 16;
  c.mlp_hidden = 64;
  return c;
}

void BackboneConfig::validate() const {
  if (patch_size <= 0 || image_size <= 0 || image_size % patch_size != 0) {
    throw ConfigError("backbone.patch_size must divide backbone.image_size");
  }
  if (depth < 0) throw ConfigError("backbone.depth must be non-negative");
  if (heads <= 0 || model_dim <= 0 || model_dim % heads != 0) {
    throw ConfigError("backbone.heads (" + std::to_string(heads) +
                      ") must divide backbone.d_m (" + std::to_string(model_dim) + ")");
  }
  if (mlp_hidden <= 0) throw ConfigError("backbone.mlp_hidden must be positive");
  for (double s : normalization.stddev) {
    if (!(s > 0.0)) throw ConfigError("normalization std must be positive");
  }
}

TransformerBlock::TransformerBlock(const std::string& prefix, const BackboneConfig& c)
    : norm1(prefix + ".norm1", c.model_dim, c.layer_norm_eps),
      attn(prefix + ".attn", c.model_dim, c.heads),
      proj(prefix + ".attn.proj", c.model_dim, c.model_dim),
      norm2(prefix + ".norm2", c.model_dim, c.layer_norm_eps),
      fc1(prefix + ".mlp.fc1", c.model_dim, c.mlp_hidden),
      fc2(prefix + ".mlp.fc2", c.mlp_hidden, c.model_dim) {}

void TransformerBlock::collect(ParamRefs& out) {
  norm1.collect(out);
  attn.qkv.collect(out);
  proj.collect(out);
  norm2.collect(out);
  fc1.collect(out);
  fc2.collect(out);
}

BackboneParams::BackboneParams(const BackboneConfig& c)
    : config(c),
      cls_token("cls_token", {1, 1, c.model_dim}, 1, c.model_dim),
      pos_embed("pos_embed", {1, c.num_patches() + 1, c.model_dim}, c.num_patches() + 1,
                c.model_dim),
      patch_embed("patch_embed.proj", c.patch_dim(), c.model_dim),
      norm("norm", c.model_dim, c.layer_norm_eps) {
  c.validate();
  // The patch embedding is a stride-P convolution; record its kernel shape.
  patch_embed.weight.shape = {c.model_dim, 3, c.patch_size, c.patch_size};
  blocks.reserve(static_cast<std::size_t>(c.depth));
  for (int i = 0; i < c.depth; ++i) blocks.emplace_back("blocks." + std::to_string(i), c);
}

ParamRefs BackboneParams::params() {
  ParamRefs out{&cls_token, &pos_embed};
  patch_embed.collect(out);
  for (auto& b : blocks) b.collect(out);
  norm.collect(out);
  return out;
}

ConstParamRefs BackboneParams::params() const {
  return const_refs(const_cast<BackboneParams*>(this)->params());
}

BackboneParams BackboneParams::random(const BackboneConfig& config, std::uint64_t seed) {
  BackboneParams p(config);
  Rng rng(seed);
  for (Eigen::Index i = 0; i < p.cls_token.value.size(); ++i) {
    p.cls_token.value.data()[i] = rng.truncated_normal(0.02);
  }
  for (Eigen::Index i = 0; i < p.pos_embed.value.size(); ++i) {
    p.pos_embed.value.data()[i] = rng.truncated_normal(0.02);
  }
  p.patch_embed.init_uniform(rng);
  for (auto& b : p.blocks) {
    b.attn.qkv.init(rng, 0.02);
    b.proj.init(rng, 0.02);
    b.fc1.init(rng, 0.02);
    b.fc2.init(rng, 0.02);
  }
  p.provenance = Provenance::random;
  return p;
}

Matrix patchify(const ImageTensor& image, int patch_size) {
  const int gw = image.width / patch_size;
  const int gh = image.height / patch_size;
  const int per = image.channels * patch_size * patch_size;
  Matrix patches(static_cast<Eigen::Index>(gw) * gh, per);
  for (int gy = 0; gy < gh; ++gy) {
    for (int gx = 0; gx < gw; ++gx) {
      const Eigen::Index row = static_cast<Eigen::Index>(gy) * gw + gx;
      for (int c = 0; c < image.channels; ++c) {
        for (int ky = 0; ky < patch_size; ++ky) {
          for (int kx = 0; kx < patch_size; ++kx) {
            patches(row, (c * patch_size + ky) * patch_size + kx) =
                image.at(gy * patch_size + ky, gx * patch_size + kx, c);
          }
        }
      }
    }
  }
  return patches;
}

ImageTensor unpatchify(const Matrix& patches, int width, int height, int patch_size) {
  const int channels = static_cast<int>(patches.cols()) / (patch_size * patch_size);
  const int gw = width / patch_size;
  ImageTensor image(width, height, channels);
  for (Eigen::Index row = 0; row < patches.rows(); ++row) {
    const int gy = static_cast<int>(row) / gw;
    const int gx = static_cast<int>(row) % gw;
    for (int c = 0; c < channels; ++c) {
      for (int ky = 0; ky < patch_size; ++ky) {
        for (int kx = 0; kx < patch_size; ++kx) {
          image.at(gy * patch_size + ky, gx * patch_size + kx, c) =
              patches(row, (c * patch_size + ky) * patch_size + kx);
        }
      }
    }
  }
  return image;
}

PatchFeatures extract_features(const ImageTensor& image, const BackboneParams& params,
                               BackboneCache* cache) {
  const BackboneConfig& cfg = params.config;
  if (image.width != cfg.image_size || image.height != cfg.image_size || image.channels != 3) {
    throw ShapeError("backbone expects a " + std::to_string(cfg.image_size) + "x" +
                     std::to_string(cfg.image_size) + "x3 image, got " +
                     std::to_string(image.width) + "x" + std::to_string(image.height) + "x" +
                     std::to_string(image.channels));
  }
  if (!image.all_finite()) throw NumericError("backbone input contains non-finite values");

  const int p = cfg.num_patches();
  Matrix patches = patchify(image, cfg.patch_size);
  Matrix x(p + 1, cfg.model_dim);
  x.row(0) = params.cls_token.value.row(0);
  x.bottomRows(p) = params.patch_embed.forward(patches);
  x += params.pos_embed.value;

  if (cache) {
    cache->patches = std::move(patches);
    cache->blocks.assign(params.blocks.size(), {});
  }
  for (std::size_t i = 0; i < params.blocks.size(); ++i) {
    const TransformerBlock& b = params.blocks[i];
    Matrix n1 = b.norm1.forward(x);
    MultiHeadCache attn_cache;
    Matrix heads = multi_head(n1, b.attn, cache ? &attn_cache : nullptr);
    Matrix after_attn = x + b.proj.forward(heads);
    Matrix n2 = b.norm2.forward(after_attn);
    Matrix h1 = b.fc1.forward(n2);
    Matrix out = after_attn + b.fc2.forward(nn::gelu(h1));
    if (cache) {
      auto& c = cache->blocks[i];
      c.input = std::move(x);
      c.norm1_out = std::move(n1);
      c.attn = std::move(attn_cache);
      c.heads_out = std::move(heads);
      c.after_attn = std::move(after_attn);
      c.norm2_out = std::move(n2);
      c.fc1_out = std::move(h1);
    }
    x = std::move(out);
  }
  PatchFeatures features;
  features.grid_height = cfg.grid();
  features.grid_width = cfg.grid();
  features.values = params.norm.forward(x).bottomRows(p);
  if (cache) cache->final_tokens = std::move(x);
  if (!features.values.allFinite()) throw NumericError("backbone produced non-finite features");
  return features;
}

ImageTensor backbone_backward(const ImageTensor& image, BackboneParams& params,
                              const BackboneCache& cache, const Matrix& grad_features) {
  const BackboneConfig& cfg = params.config;
  const int p = cfg.num_patches();
  if (grad_features.rows() != p || grad_features.cols() != cfg.model_dim) {
    throw ShapeError("feature gradient shape does not match the backbone");
  }
  Matrix d_norm = Matrix::Zero(p + 1, cfg.model_dim);
  d_norm.bottomRows(p) = grad_features;
  Matrix dx = params.norm.backward(cache.final_tokens, d_norm);

  for (std::size_t i = params.blocks.size(); i-- > 0;) {
    TransformerBlock& b = params.blocks[i];
    const auto& c = cache.blocks[i];
    // out = after_attn + fc2(gelu(fc1(norm2(after_attn))))
    Matrix d_gelu = b.fc2.backward(nn::gelu(c.fc1_out), dx);
    Matrix d_h1 = nn::gelu_backward(c.fc1_out, d_gelu);
    Matrix d_n2 = b.fc1.backward(c.norm2_out, d_h1);
    Matrix d_after = dx + b.norm2.backward(c.after_attn, d_n2);
    // after_attn = input + proj(multi_head(norm1(input)))
    Matrix d_heads = b.proj.backward(c.heads_out, d_after);
    Matrix d_n1 = multi_head_backward(c.norm1_out, b.attn, c.attn, d_heads);
    dx = d_after + b.norm1.backward(c.input, d_n1);
  }

  params.pos_embed.grad += dx;
  params.cls_token.grad.row(0) += dx.row(0);
  const Matrix d_patches = params.patch_embed.backward(cache.patches, dx.bottomRows(p));
  return unpatchify(d_patches, image.width, image.height, cfg.patch_size);
}

std::map<std::string, std::string> config_metadata(const BackboneConfig& c) {
  return {{"arch.image_size", std::to_string(c.image_size)},
          {"arch.patch_size", std::to_string(c.patch_size)},
          {"arch.depth", std::to_string(c.depth)},
          {"arch.heads", std::to_string(c.heads)},
          {"arch.d_m", std::to_string(c.model_dim)},
          {"arch.mlp_hidden", std::to_string(c.mlp_hidden)}};
}

BackboneConfig config_from_metadata(const std::map<std::string, std::string>& meta) {
  auto get = [&](const char* key) {
    auto it = meta.find(key);
    if (it == meta.end()) throw LoadError(std::string("checkpoint metadata lacks ") + key);
    try {
      return std::stoi(it->second);
    } catch (const std::exception&) {
      throw LoadError(std::string("bad checkpoint metadata ") + key);
    }
  };
  BackboneConfig c;
  c.image_size = get("arch.image_size");
  c.patch_size = get("arch.patch_size");
  c.depth = get("arch.depth");
  c.heads = get("arch.heads");
  c.model_dim = get("arch.d_m");
  c.mlp_hidden = get("arch.mlp_hidden");
  c.validate();
  return c;
}

BackboneParams load_pretrained(const std::filesystem::path& weights,
                               const BackboneConfig& expected) {
  expected.validate();
  const TensorFile file = read_tensor_file(weights);
  BackboneParams params(expected);
  ParamRefs refs = params.params();

  // Blocks beyond the declared depth indicate a deeper architecture.
  std::set<std::string> known;
  for (const Parameter* p : refs) known.insert(p->name);
  std::vector<std::string> unexpected;
  for (const auto& [name, t] : file.tensors) {
    if (name.rfind("blocks.", 0) == 0 && !known.count(name)) unexpected.push_back(name);
  }
  try {
    load_parameters(file, refs, "");
  } catch (const IncompatibleCheckpointError& e) {
    std::string msg = e.what();
    for (const auto& n : unexpected) msg += "\n  " + n + ": not part of the declared architecture";
    throw IncompatibleCheckpointError(msg);
  }
  if (!unexpected.empty()) {
    std::string msg = "checkpoint incompatible with architecture:";
    for (const auto& n : unexpected) msg += "\n  " + n + ": not part of the declared architecture";
    throw IncompatibleCheckpointError(msg);
  }
  for (const Parameter* p : refs) {
    if (!p->value.allFinite()) throw LoadError("checkpoint tensor " + p->name + " is not finite");
  }
  params.provenance = Provenance::pretrained;
  return params;
}

void save_backbone(const std::filesystem::path& path, const BackboneParams& params) {
  TensorFile file;
  file.metadata = config_metadata(params.config);
  file.metadata["provenance"] = params.provenance == Provenance::pretrained ? "pretrained" : "random";
  store_parameters(file, params.params(), "");
  write_tensor_file(path, file);
}

}  // namespace cac
