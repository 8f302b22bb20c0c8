#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cac/tensor.hpp"

namespace cac {

enum class DType { f32, f64 };

struct StoredTensor {
  std::vector<std::int64_t> shape;
  DType dtype = DType::f64;
  std::vector<double> data;  // widened on load; narrowed on save for f32
};

/// Contents of a checkpoint file. The on-disk layout is the safetensors
/// container: an 8-byte little-endian header length, a JSON header mapping
/// tensor names to {dtype, shape, data_offsets}, then the raw tensor bytes.
/// String metadata lives under the "__metadata__" header key.
struct TensorFile {
  std::map<std::string, StoredTensor> tensors;
  std::map<std::string, std::string> metadata;

  bool contains(const std::string& name) const { return tensors.count(name) != 0; }
};

TensorFile read_tensor_file(const std::filesystem::path& path);
void write_tensor_file(const std::filesystem::path& path, const TensorFile& file);

/// Copies parameters into `file` under `prefix + name`.
void store_parameters(TensorFile& file, const ConstParamRefs& params, const std::string& prefix,
                      DType dtype = DType::f64);

/// Loads every parameter from `file`. Shape disagreements and missing tensors
/// are collected and reported together in one IncompatibleCheckpointError.
void load_parameters(const TensorFile& file, const ParamRefs& params, const std::string& prefix);

}  // namespace cac
