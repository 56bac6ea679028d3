// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <memory>

#include "json.hpp"
#include "tds/checkpoint.hpp"
#include "tds/decoder.hpp"
#include "tds/encoder.hpp"

namespace tds {

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;

  /// Fills decoder.attention_dim from the encoder and validates both.
  void validate();
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Encoder and decoder with shared checkpoint plumbing.
class Seq2Seq {
 public:
  Seq2Seq(ModelConfig cfg, Rng& init_rng);

  const ModelConfig& config() const { return cfg_; }
  const Encoder& encoder() const { return encoder_; }
  const Decoder& decoder() const { return decoder_; }

  ParamList parameters() const;

  /// Records every parameter and writes the architecture into
  /// header["model"]; other header fields are kept.
  Checkpoint to_checkpoint(nlohmann::json header = nlohmann::json::object()) const;
  /// Builds the model described by header["model"] and copies its values.
  static std::unique_ptr<Seq2Seq> from_checkpoint(const Checkpoint& ckpt);
  void load_values(const Checkpoint& ckpt);

 private:
  ModelConfig cfg_;
  Encoder encoder_;
  Decoder decoder_;
};

}  // namespace tds
