// SPDX-License-Identifier: Apache-2.0
#include "tds/params.hpp"

#include <cmath>
#include <algorithm>
#include <stdexcept>
#include <unordered_map>

namespace tds {

Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  if (fan_in == 0) throw std::invalid_argument("init_uniform: fan_in must be positive");
  const double bound = std::sqrt(4.0 / static_cast<double>(fan_in));
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from(std::move(shape), std::move(v), true);
}

std::size_t count_parameters(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

void assign_parameters(const ParamList& target, const ParamList& source) {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : source) by_name[name] = &t;
  for (const auto& [name, t] : target) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error("missing parameter '" + name + "'");
    const Tensor& src = *it->second;
    if (src.shape() != t.shape()) {
      throw std::runtime_error("parameter '" + name + "' has shape " + shape_str(src.shape()) +
                               ", expected " + shape_str(t.shape()));
    }
    Tensor dst = t;
    auto out = dst.mutable_data();
    std::copy(src.data().begin(), src.data().end(), out.begin());
  }
}

}  // namespace tds
