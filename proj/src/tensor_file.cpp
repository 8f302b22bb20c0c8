#include "cac/tensor_file.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cac/errors.hpp"

namespace cac {
namespace {

static_assert(std::endian::native == std::endian::little, "tensor files assume little-endian");

const char* dtype_name(DType d) { return d == DType::f32 ? "F32" : "F64"; }

std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 8; }

std::string shape_string(const std::vector<std::int64_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

}  // namespace

TensorFile read_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open tensor file: " + path.string());
  std::uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), 8);
  if (!in || header_len == 0 || header_len > (1ULL << 30)) {
    throw LoadError("corrupt tensor file header: " + path.string());
  }
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw LoadError("truncated tensor file header: " + path.string());

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("tensor file header is not JSON (" + path.string() + "): " + e.what());
  }
  std::vector<char> body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  TensorFile file;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() == "__metadata__") {
      for (auto m = it->begin(); m != it->end(); ++m) file.metadata[m.key()] = m->get<std::string>();
      continue;
    }
    StoredTensor t;
    const std::string dtype = it->at("dtype").get<std::string>();
    if (dtype == "F32") {
      t.dtype = DType::f32;
    } else if (dtype == "F64") {
      t.dtype = DType::f64;
    } else {
      throw LoadError("unsupported dtype " + dtype + " for tensor " + it.key());
    }
    t.shape = it->at("shape").get<std::vector<std::int64_t>>();
    const auto offsets = it->at("data_offsets").get<std::vector<std::uint64_t>>();
    const std::int64_t n = shape_numel(t.shape);
    if (offsets.size() != 2 || offsets[1] < offsets[0] || offsets[1] > body.size() ||
        offsets[1] - offsets[0] != static_cast<std::uint64_t>(n) * dtype_size(t.dtype)) {
      throw LoadError("bad data offsets for tensor " + it.key() + " in " + path.string());
    }
    t.data.resize(static_cast<std::size_t>(n));
    const char* src = body.data() + offsets[0];
    if (t.dtype == DType::f64) {
      std::memcpy(t.data.data(), src, static_cast<std::size_t>(n) * 8);
    } else {
      for (std::int64_t i = 0; i < n; ++i) {
        float f;
        std::memcpy(&f, src + i * 4, 4);
        t.data[static_cast<std::size_t>(i)] = f;
      }
    }
    file.tensors.emplace(it.key(), std::move(t));
  }
  return file;
}

void write_tensor_file(const std::filesystem::path& path, const TensorFile& file) {
  nlohmann::json header = nlohmann::json::object();
  if (!file.metadata.empty()) header["__metadata__"] = file.metadata;
  std::uint64_t offset = 0;
  for (const auto& [name, t] : file.tensors) {
    const std::uint64_t bytes = static_cast<std::uint64_t>(t.data.size()) * dtype_size(t.dtype);
    header[name] = {{"dtype", dtype_name(t.dtype)},
                    {"shape", t.shape},
                    {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  std::string text = header.dump();
  // Pad so the data section starts 8-byte aligned, as safetensors recommends.
  while (text.size() % 8 != 0) text.push_back(' ');

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write tensor file: " + path.string());
  const std::uint64_t header_len = text.size();
  out.write(reinterpret_cast<const char*>(&header_len), 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : file.tensors) {
    if (t.dtype == DType::f64) {
      out.write(reinterpret_cast<const char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * 8));
    } else {
      for (double v : t.data) {
        const float f = static_cast<float>(v);
        out.write(reinterpret_cast<const char*>(&f), 4);
      }
    }
  }
  if (!out) throw IoError("short write to tensor file: " + path.string());
}

void store_parameters(TensorFile& file, const ConstParamRefs& params, const std::string& prefix,
                      DType dtype) {
  for (const Parameter* p : params) {
    StoredTensor t;
    t.shape = p->shape;
    t.dtype = dtype;
    t.data.assign(p->value.data(), p->value.data() + p->value.size());
    file.tensors[prefix + p->name] = std::move(t);
  }
}

void load_parameters(const TensorFile& file, const ParamRefs& params, const std::string& prefix) {
  std::vector<std::string> problems;
  for (const Parameter* p : params) {
    const auto it = file.tensors.find(prefix + p->name);
    if (it == file.tensors.end()) {
      problems.push_back(prefix + p->name + ": missing (expected " + shape_string(p->shape) + ")");
    } else if (it->second.shape != p->shape) {
      problems.push_back(prefix + p->name + ": file has " + shape_string(it->second.shape) +
                         ", architecture expects " + shape_string(p->shape));
    }
  }
  if (!problems.empty()) {
    std::string msg = "checkpoint incompatible with architecture:";
    for (const auto& s : problems) msg += "\n  " + s;
    throw IncompatibleCheckpointError(msg);
  }
  for (Parameter* p : params) {
    const auto& t = file.tensors.at(prefix + p->name);
    std::copy(t.data.begin(), t.data.end(), p->value.data());
  }
}

}  // namespace cac
