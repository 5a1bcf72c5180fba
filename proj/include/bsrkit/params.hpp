#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "bsrkit/tensor.hpp"

namespace bsrkit {

// Ordered (name, leaf) list. Tensors are shared handles, so writing through
// an entry updates the owning parameter struct.
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// Uniform(-bound, bound) leaf with requires_grad set.
inline Tensor uniform_param(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

inline std::size_t parameter_count(const NamedTensors& p) {
  std::size_t n = 0;
  for (const auto& [name, t] : p) n += t.size();
  return n;
}

}  // namespace bsrkit
