// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tds/rng.hpp"
#include "tds/tensor.hpp"

namespace tds {

/// Parameter handles keyed by dotted path ("encoder.block0.conv.weight").
/// Handles share storage with the owning module.
using ParamList = std::vector<std::pair<std::string, Tensor>>;

/// Leaf tensor drawn from U(-sqrt(4 / fan_in), +sqrt(4 / fan_in)).
Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng);

std::size_t count_parameters(const ParamList& params);

/// Copies values from `source` into the matching handles of `target`.
/// Throws std::runtime_error on a missing name or a shape mismatch.
void assign_parameters(const ParamList& target, const ParamList& source);

}  // namespace tds
