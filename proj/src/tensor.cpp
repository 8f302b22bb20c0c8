#include "cac/tensor.hpp"

#include <cmath>
#include <cstring>

namespace cac {

std::int64_t count_parameters(const ConstParamRefs& params) {
  std::int64_t total = 0;
  for (const Parameter* p : params) total += p->numel();
  return total;
}

void zero_grads(const ParamRefs& params) {
  for (Parameter* p : params) p->zero_grad();
}

std::uint64_t checksum(const ConstParamRefs& params) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (const Parameter* p : params) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p->value.data());
    const std::size_t n = static_cast<std::size_t>(p->value.size()) * sizeof(double);
    for (std::size_t i = 0; i < n; ++i) {
      hash ^= bytes[i];
      hash *= 0x100000001b3ULL;
    }
  }
  return hash;
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace cac
