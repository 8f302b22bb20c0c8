#pragma once

#include <cstdint>
#include <string>

#include "cac/tensor.hpp"
#include "cac/tensor_file.hpp"

namespace cac {

struct AdamOptions {
  double lr = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled

  void validate() const;
};

/// Adaptive-moment optimizer with bias correction and a constant step size.
class Adam {
 public:
  Adam() = default;
  Adam(ParamRefs params, const AdamOptions& options);

  /// Applies one update from the accumulated gradients. Gradients are left
  /// untouched; callers zero them.
  void step();
  std::int64_t steps() const { return t_; }
  const AdamOptions& options() const { return options_; }

  void save_state(TensorFile& file, const std::string& prefix) const;
  void load_state(const TensorFile& file, const std::string& prefix);

 private:
  ParamRefs params_;
  AdamOptions options_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  std::int64_t t_ = 0;
};

}  // namespace cac
