// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "tds/beam_search.hpp"
#include "tds/frontend.hpp"
#include "tds/model.hpp"
#include "tds/train.hpp"

namespace tds {

struct DataConfig {
  std::optional<std::filesystem::path> train_manifest;
  std::optional<std::filesystem::path> dev_manifest;
  std::optional<std::filesystem::path> vocab;
  std::optional<std::filesystem::path> lm;
};

/// Everything a run needs. Defaults describe the full-size LibriSpeech
/// model.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  OptimConfig optim;
  BeamConfig beam;
  SyntheticConfig synthetic;
  FeatureConfig features;
  DataConfig data;
};

/// Parses "key = value" lines grouped under [section] headers; '#' and ';'
/// start comments. Sections: encoder, decoder, train, optim, beam,
/// synthetic, features, data. Optional beam rules accept "off". Relative
/// paths in [data] resolve against `base_dir`. Unknown sections or keys and
/// malformed values throw std::runtime_error naming the line.
RunConfig parse_config(std::istream& in, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);

/// Round-trippable text form of every key.
std::string format_config(const RunConfig& cfg);

}  // namespace tds
