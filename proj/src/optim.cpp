#include "cac/optim.hpp"

#include <cmath>

#include "cac/errors.hpp"

namespace cac {

void AdamOptions::validate() const {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("Adam eps must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
}

Adam::Adam(ParamRefs params, const AdamOptions& options)
    : params_(std::move(params)), options_(options) {
  options_.validate();
  for (const auto* p : params_) {
    m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    m_[i] = options_.beta1 * m_[i] + (1.0 - options_.beta1) * p.grad;
    v_[i] = options_.beta2 * v_[i] + (1.0 - options_.beta2) * p.grad.cwiseProduct(p.grad);
    if (options_.weight_decay > 0.0) p.value *= 1.0 - options_.lr * options_.weight_decay;
    p.value.array() -= options_.lr * (m_[i].array() / c1) /
                       ((v_[i].array() / c2).sqrt() + options_.eps);
  }
}

void Adam::save_state(TensorFile& file, const std::string& prefix) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& p = *params_[i];
    for (const auto& [tag, mat] : {std::pair{"m", &m_[i]}, std::pair{"v", &v_[i]}}) {
      StoredTensor t;
      t.shape = p.shape;
      t.dtype = DType::f64;
      t.data.assign(mat->data(), mat->data() + mat->size());
      file.tensors[prefix + tag + "." + p.name] = std::move(t);
    }
  }
  file.metadata[prefix + "step"] = std::to_string(t_);
}

void Adam::load_state(const TensorFile& file, const std::string& prefix) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& p = *params_[i];
    for (auto [tag, mat] : {std::pair{"m", &m_[i]}, std::pair{"v", &v_[i]}}) {
      const std::string key = prefix + tag + "." + p.name;
      auto it = file.tensors.find(key);
      if (it == file.tensors.end() || static_cast<Eigen::Index>(it->second.data.size()) != mat->size()) {
        throw IncompatibleCheckpointError("optimizer state '" + key + "' missing or mis-shaped");
      }
      std::copy(it->second.data.begin(), it->second.data.end(), mat->data());
    }
  }
  auto step = file.metadata.find(prefix + "step");
  if (step == file.metadata.end()) throw IncompatibleCheckpointError("optimizer step count missing");
  t_ = std::stoll(step->second);
}

}  // namespace cac
