#include "cac/config.hpp"

#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cac/errors.hpp"

#ifndef CAC_DATA_DIR
#define CAC_DATA_DIR "data"
#endif

namespace cac {

RunConfig RunConfig::defaults() {
  RunConfig c;
  const std::string data_dir = CAC_DATA_DIR;
  c.values_ = {
      {"backbone.arch", "small"},
      {"backbone.init", "pretrained"},
      {"backbone.weights", ""},
      {"head.kind", "projection"},
      {"head.bias", "true"},
      {"head.clamp_nonneg", "false"},
      {"train.batch_size", "2"},
      {"train.epochs", "80"},
      {"train.lr", "3e-5"},
      {"train.beta1", "0.9"},
      {"train.beta2", "0.999"},
      {"train.eps", "1e-8"},
      {"train.weight_decay", "0"},
      {"train.seed", "0"},
      {"train.freeze_backbone", "false"},
      {"train.checkpoint_every", "0"},
      {"tile.frequency", "0.5"},
      {"tile.grid_mode", "fixed_2x2"},
      {"aug.seed", "0"},
      {"aug.geometric", "true"},
      {"curate.threshold", "9400"},
      {"curate.resolution", "224"},
      {"curate.threads", "1"},
      {"curate.clusters", "reviewed"},
      {"curate.duplicate_sets", data_dir + "/fsc133/duplicate_sets.txt"},
      {"curate.merges", data_dir + "/fsc133/merges.csv"},
      {"curate.kept", data_dir + "/fsc133/kept.csv"},
      {"density.sigma", "4"},
      {"localize.epochs", "10"},
      {"localize.batch_size", "2"},
      {"localize.lr", "3e-5"},
      {"localize.channels", "128,64,1"},
      {"localize.seed", "0"},
      {"viz.weighting", "elementwise"},
      {"viz.columns", "4"},
      {"synth.n_images", "500"},
      {"synth.size", "56"},
      {"synth.min_dots", "1"},
      {"synth.max_dots", "20"},
      {"synth.radius", "1.5"},
      {"synth.seed", "0"},
  };
  return c;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = value;
}

void RunConfig::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      set_assignment(line);
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

std::string env_key(const std::string& key) {
  std::string out = "CAC_SET_";
  for (char ch : key) {
    if (ch == '.') {
      out += "__";
    } else {
      out += static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    }
  }
  return out;
}

void RunConfig::apply_env(char** envp) {
  if (!envp) return;
  std::map<std::string, std::string> by_env;
  for (const auto& [key, value] : values_) by_env[env_key(key)] = key;
  for (char** e = envp; *e; ++e) {
    const std::string entry = *e;
    if (entry.rfind("CAC_SET_", 0) != 0) continue;
    const auto eq = entry.find('=');
    const std::string name = entry.substr(0, eq);
    auto it = by_env.find(name);
    if (it == by_env.end()) throw ConfigError("environment override " + name + " names no config key");
    values_[it->second] = eq == std::string::npos ? "" : entry.substr(eq + 1);
  }
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

int RunConfig::get_int(const std::string& key) const {
  const std::string& v = get(key);
  int out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(key + " must be an integer, got '" + v + "'");
  }
  return out;
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  const std::string& v = get(key);
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(key + " must be a non-negative integer, got '" + v + "'");
  }
  return out;
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used == v.size()) return out;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + " must be a number, got '" + v + "'");
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + " must be a boolean, got '" + v + "'");
}

std::string RunConfig::dump() const {
  std::ostringstream os;
  for (const auto& [k, v] : values_) os << k << '=' << v << '\n';
  return os.str();
}

std::string RunConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

BackboneConfig backbone_config(const RunConfig& config) {
  const std::string& arch = config.get("backbone.arch");
  if (arch == "small") return BackboneConfig::small();
  if (arch == "tiny") return BackboneConfig::tiny();
  throw ConfigError("unknown backbone.arch '" + arch + "' (expected small or tiny)");
}

train::TrainConfig train_config(const RunConfig& c) {
  train::TrainConfig t;
  t.batch_size = c.get_int("train.batch_size");
  t.epochs = c.get_int("train.epochs");
  t.adam.lr = c.get_double("train.lr");
  t.adam.beta1 = c.get_double("train.beta1");
  t.adam.beta2 = c.get_double("train.beta2");
  t.adam.eps = c.get_double("train.eps");
  t.adam.weight_decay = c.get_double("train.weight_decay");
  t.tiling.frequency = c.get_double("tile.frequency");
  t.tiling.grid_mode = augment::parse_grid_mode(c.get("tile.grid_mode"));
  t.tiling.geometric = c.get_bool("aug.geometric");
  t.seed = c.get_u64("train.seed");
  t.aug_seed = c.get_u64("aug.seed");
  t.freeze_backbone = c.get_bool("train.freeze_backbone");
  t.checkpoint_every = c.get_int("train.checkpoint_every");
  t.backbone = backbone_config(c);
  t.backbone_init = train::parse_backbone_init(c.get("backbone.init"));
  t.backbone_weights = c.get("backbone.weights");
  t.head = parse_head_kind(c.get("head.kind"));
  t.head_bias = c.get_bool("head.bias");
  t.clamp_nonneg = c.get_bool("head.clamp_nonneg");
  t.config_hash = c.hash();
  t.validate();
  return t;
}

curate::DiffMetric diff_metric(const RunConfig& c) {
  curate::DiffMetric m;
  m.threshold_near = c.get_double("curate.threshold");
  m.resolution = c.get_int("curate.resolution");
  if (!(m.threshold_near >= 0.0)) throw ConfigError("curate.threshold must be non-negative");
  if (m.resolution < 1) throw ConfigError("curate.resolution must be positive");
  return m;
}

std::vector<int> localizer_channels(const RunConfig& c) {
  std::vector<int> out;
  std::stringstream ss(c.get("localize.channels"));
  std::string field;
  while (std::getline(ss, field, ',')) {
    try {
      out.push_back(std::stoi(trim(field)));
    } catch (const std::exception&) {
      throw ConfigError("localize.channels must be a comma-separated list of integers");
    }
  }
  return out;
}

localize::LocalizerConfig localizer_config(const RunConfig& c) {
  localize::LocalizerConfig l;
  l.epochs = c.get_int("localize.epochs");
  l.batch_size = c.get_int("localize.batch_size");
  l.adam.lr = c.get_double("localize.lr");
  l.adam.beta1 = c.get_double("train.beta1");
  l.adam.beta2 = c.get_double("train.beta2");
  l.adam.eps = c.get_double("train.eps");
  l.sigma = c.get_double("density.sigma");
  l.seed = c.get_u64("localize.seed");
  l.adam.validate();
  return l;
}

data::SyntheticConfig synthetic_config(const RunConfig& c) {
  data::SyntheticConfig s;
  s.n_images = c.get_int("synth.n_images");
  s.size = c.get_int("synth.size");
  s.min_dots = c.get_int("synth.min_dots");
  s.max_dots = c.get_int("synth.max_dots");
  s.radius = c.get_double("synth.radius");
  s.seed = c.get_u64("synth.seed");
  return s;
}

}  // namespace cac
