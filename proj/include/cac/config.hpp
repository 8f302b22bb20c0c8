#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cac/curate.hpp"
#include "cac/localize.hpp"
#include "cac/train.hpp"
#include "cac/viz.hpp"

namespace cac {

/// Flat key=value settings with dotted namespaces. Every key has a default;
/// unknown keys are rejected at every layer.
class RunConfig {
 public:
  static RunConfig defaults();

  /// '#' starts a comment; blank lines are ignored.
  void load_file(const std::filesystem::path& path);
  /// CAC_SET_<KEY> with '.' written as "__", e.g. CAC_SET_TRAIN__EPOCHS=3.
  void apply_env(char** envp);
  void set(const std::string& key, const std::string& value);
  /// "key=value" form, as given on the command line.
  void set_assignment(const std::string& assignment);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  int get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  /// Sorted "key=value\n" lines.
  std::string dump() const;
  /// FNV-1a 64 of dump(), as 16 hex digits.
  std::string hash() const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

std::string env_key(const std::string& key);

BackboneConfig backbone_config(const RunConfig& config);
train::TrainConfig train_config(const RunConfig& config);
curate::DiffMetric diff_metric(const RunConfig& config);
localize::LocalizerConfig localizer_config(const RunConfig& config);
std::vector<int> localizer_channels(const RunConfig& config);
data::SyntheticConfig synthetic_config(const RunConfig& config);

}  // namespace cac
