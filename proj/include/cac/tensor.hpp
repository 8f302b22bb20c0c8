#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cac {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Vector = Eigen::VectorXd;

/// A learnable tensor. `value` holds the data in a 2-D layout convenient for
/// the math; `shape` is the logical shape written to checkpoints (so a patch
/// embedding kernel is stored as [d, 3, 8, 8] but computed as d x 192).
struct Parameter {
  std::string name;
  std::vector<std::int64_t> shape;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, std::vector<std::int64_t> s, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), shape(std::move(s)), value(Matrix::Zero(rows, cols)),
        grad(Matrix::Zero(rows, cols)) {}

  std::int64_t numel() const { return value.size(); }
  void zero_grad() { grad.setZero(); }
};

/// Non-owning ordered view of a model's parameters.
using ParamRefs = std::vector<Parameter*>;
using ConstParamRefs = std::vector<const Parameter*>;

std::int64_t count_parameters(const ConstParamRefs& params);
void zero_grads(const ParamRefs& params);

/// FNV-1a over the raw bytes of every parameter, in order. Used to prove a
/// frozen model was not touched.
std::uint64_t checksum(const ConstParamRefs& params);

inline ConstParamRefs const_refs(const ParamRefs& params) {
  return ConstParamRefs(params.begin(), params.end());
}

inline std::uint64_t checksum(const ParamRefs& params) { return checksum(const_refs(params)); }

bool all_finite(const Matrix& m);

}  // namespace cac
