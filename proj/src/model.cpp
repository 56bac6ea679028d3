// SPDX-License-Identifier: Apache-2.0
#include "tds/model.hpp"

#include <stdexcept>

namespace tds {

void ModelConfig::validate() {
  encoder.validate();
  decoder.attention_dim = encoder.attention_dim;
  decoder.validate();
}

nlohmann::json ModelConfig::to_json() const {
  return {{"encoder", encoder.to_json()}, {"decoder", decoder.to_json()}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c{EncoderConfig::from_json(j.at("encoder")), DecoderConfig::from_json(j.at("decoder"))};
  if (c.decoder.attention_dim != c.encoder.attention_dim) {
    throw std::runtime_error("model config: encoder and decoder attention dims differ");
  }
  return c;
}

namespace {
ModelConfig validated(ModelConfig cfg) {
  cfg.validate();
  return cfg;
}
}  // namespace

Seq2Seq::Seq2Seq(ModelConfig cfg, Rng& init_rng)
    : cfg_(validated(std::move(cfg))), encoder_(cfg_.encoder, init_rng), decoder_(cfg_.decoder, init_rng) {}

ParamList Seq2Seq::parameters() const {
  ParamList all = encoder_.parameters();
  for (auto& p : decoder_.parameters()) all.push_back(std::move(p));
  return all;
}

Checkpoint Seq2Seq::to_checkpoint(nlohmann::json header) const {
  Checkpoint ckpt;
  ckpt.header = std::move(header);
  ckpt.header["model"] = cfg_.to_json();
  for (const auto& [name, t] : parameters()) ckpt.put(name, t.detach());
  return ckpt;
}

std::unique_ptr<Seq2Seq> Seq2Seq::from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.header.contains("model")) throw std::runtime_error("checkpoint has no model header");
  Rng unused(0);
  auto model = std::make_unique<Seq2Seq>(ModelConfig::from_json(ckpt.header.at("model")), unused);
  model->load_values(ckpt);
  return model;
}

void Seq2Seq::load_values(const Checkpoint& ckpt) { assign_parameters(parameters(), ckpt.records); }

}  // namespace tds
