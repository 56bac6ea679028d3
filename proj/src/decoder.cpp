// SPDX-License-Identifier: Apache-2.0
#include "tds/decoder.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace tds {

Tensor window_matrix(std::size_t encoded_length, std::size_t target_length) {
  if (encoded_length < 1 || target_length < 1) {
    throw std::invalid_argument("window_matrix: lengths must be >= 1");
  }
  const double ratio = static_cast<double>(encoded_length) / static_cast<double>(target_length);
  std::vector<double> w(encoded_length * target_length);
  for (std::size_t i = 0; i < encoded_length; ++i) {
    for (std::size_t j = 0; j < target_length; ++j) {
      const double diff = static_cast<double>(i) - ratio * static_cast<double>(j);
      w[i * target_length + j] = diff * diff;
    }
  }
  return Tensor::from({encoded_length, target_length}, std::move(w));
}

Attention attend(const Tensor& queries, const Tensor& keys, const Tensor& values,
                 std::optional<double> window_sigma) {
  if (queries.rank() != 2 || keys.rank() != 2 || values.rank() != 2 ||
      queries.dim(1) != keys.dim(1) || keys.dim(0) != values.dim(0)) {
    throw ShapeError("attend: queries " + shape_str(queries.shape()) + ", keys " +
                     shape_str(keys.shape()) + ", values " + shape_str(values.shape()));
  }
  const double d = static_cast<double>(queries.dim(1));
  Tensor logits = scale(matmul(queries, transpose(keys)), 1.0 / std::sqrt(d));
  if (window_sigma) {
    if (!(*window_sigma > 0.0)) throw std::invalid_argument("attend: sigma must be positive");
    const std::size_t T = keys.dim(0), U = queries.dim(0);
    const Tensor w = window_matrix(T, U);
    const double inv = 1.0 / (2.0 * *window_sigma * *window_sigma);
    std::vector<double> penalty(U * T);
    for (std::size_t u = 0; u < U; ++u)
      for (std::size_t t = 0; t < T; ++t) penalty[u * T + t] = w[t * U + u] * inv;
    logits = sub(logits, Tensor::from({U, T}, std::move(penalty)));
  }
  Tensor a = softmax(logits, -1);
  return {matmul(a, values), a};
}

void DecoderConfig::validate() const {
  if (n_tokens < 2) throw std::invalid_argument("decoder: need at least two output tokens");
  if (attention_dim < 1) throw std::invalid_argument("decoder: attention_dim must be >= 1");
  if (eos_id < 0 || static_cast<std::size_t>(eos_id) >= n_tokens) {
    throw std::invalid_argument("decoder: eos_id out of range");
  }
}

nlohmann::json DecoderConfig::to_json() const {
  return {{"n_tokens", n_tokens}, {"attention_dim", attention_dim}, {"eos_id", eos_id}};
}

DecoderConfig DecoderConfig::from_json(const nlohmann::json& j) {
  DecoderConfig c;
  c.n_tokens = j.at("n_tokens");
  c.attention_dim = j.at("attention_dim");
  c.eos_id = j.at("eos_id");
  c.validate();
  return c;
}

Decoder::Decoder(DecoderConfig cfg, Rng& init_rng) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const std::size_t d = cfg_.attention_dim, V = cfg_.n_tokens;
  embed_ = init_uniform({V + 1, d}, d, init_rng);
  gru_.w_x = init_uniform({d, 3 * d}, d, init_rng);
  gru_.b = init_uniform({3 * d}, d, init_rng);
  gru_.w_hzr = init_uniform({d, 2 * d}, d, init_rng);
  gru_.w_hn = init_uniform({d, d}, d, init_rng);
  out_w_ = init_uniform({2 * d, V}, 2 * d, init_rng);
  out_b_ = init_uniform({V}, 2 * d, init_rng);
}

DecoderState Decoder::initial_state() const {
  return {Tensor::zeros({cfg_.attention_dim}), cfg_.start_id()};
}

void Decoder::check_encoder(const EncoderOutput& enc) const {
  if (enc.dim() != cfg_.attention_dim) {
    throw ShapeError("decoder: encoder dim " + std::to_string(enc.dim()) + " vs attention dim " +
                     std::to_string(cfg_.attention_dim));
  }
}

Tensor Decoder::output_layer(const Tensor& context, const Tensor& queries) const {
  return log_softmax(linear(concat({context, queries}, 1), out_w_, out_b_));
}

StepOutput Decoder::decode_step(const DecoderState& state, const EncoderOutput& enc) const {
  BatchStepOutput b = step_batch({state}, enc);
  return {reshape(b.log_probs, {cfg_.n_tokens}), b.states.front(),
          reshape(b.attention, {enc.length()})};
}

BatchStepOutput Decoder::step_batch(const std::vector<DecoderState>& states,
                                    const EncoderOutput& enc) const {
  check_encoder(enc);
  if (states.empty()) throw std::invalid_argument("step_batch: no states");
  ++step_calls_;
  const std::size_t B = states.size(), d = cfg_.attention_dim;
  std::vector<int> prev;
  std::vector<Tensor> queries;
  for (const auto& s : states) {
    if (s.query.rank() != 1 || s.query.dim(0) != d) {
      throw ShapeError("step_batch: state query " + shape_str(s.query.shape()));
    }
    prev.push_back(s.prev_token);
    queries.push_back(reshape(s.query, {1, d}));
  }
  const Tensor h_prev = B == 1 ? queries.front() : concat(queries, 0);
  const Tensor x_proj = linear(embedding(embed_, prev), gru_.w_x, gru_.b);
  const Tensor q = gru_recurrence(x_proj, h_prev, gru_.w_hzr, gru_.w_hn);
  Attention att = attend(q, enc.keys, enc.values);

  BatchStepOutput out{output_layer(att.context, q), {}, att.weights};
  for (std::size_t b = 0; b < B; ++b) {
    out.states.push_back({reshape(slice(q, 0, b, 1), {d}), -1});
  }
  return out;
}

TeacherForcedOutput Decoder::forward_teacher_forced(const EncoderOutput& enc,
                                                    std::span<const int> inputs,
                                                    std::optional<double> window_sigma) const {
  check_encoder(enc);
  if (inputs.empty()) throw std::invalid_argument("forward_teacher_forced: empty target");
  const std::size_t U = inputs.size(), d = cfg_.attention_dim;
  const Tensor x_proj = linear(embedding(embed_, inputs), gru_.w_x, gru_.b);
  Tensor h = Tensor::zeros({1, d});
  std::vector<Tensor> rows;
  rows.reserve(U);
  for (std::size_t u = 0; u < U; ++u) {
    h = gru_recurrence(slice(x_proj, 0, u, 1), h, gru_.w_hzr, gru_.w_hn);
    rows.push_back(h);
  }
  const Tensor q = U == 1 ? rows.front() : concat(rows, 0);
  Attention att = attend(q, enc.keys, enc.values, window_sigma);
  return {output_layer(att.context, q), att.weights};
}

TokenSequence Decoder::shift_right(std::span<const int> targets) const {
  TokenSequence in{cfg_.start_id()};
  if (!targets.empty()) in.insert(in.end(), targets.begin(), targets.end() - 1);
  return in;
}

ParamList Decoder::parameters() const {
  return {{"decoder.embedding", embed_},     {"decoder.gru.w_x", gru_.w_x},
          {"decoder.gru.bias", gru_.b},      {"decoder.gru.w_hzr", gru_.w_hzr},
          {"decoder.gru.w_hn", gru_.w_hn},   {"decoder.output.weight", out_w_},
          {"decoder.output.bias", out_b_}};
}

TokenSequence random_sample_targets(std::span<const int> targets, double p_rs,
                                    std::size_t n_tokens, int eos_id, Rng& rng) {
  if (!(p_rs >= 0.0 && p_rs <= 1.0)) throw std::invalid_argument("random sampling: p_rs in [0, 1]");
  if (n_tokens < 2) throw std::invalid_argument("random sampling: need a non-EOS token");
  TokenSequence out(targets.begin(), targets.end());
  for (auto& y : out) {
    const bool replace = rng.uniform() < p_rs;
    int z = static_cast<int>(rng.uniform_int(n_tokens - 1));
    if (z >= eos_id) ++z;
    if (replace && y != eos_id) y = z;
  }
  return out;
}

}  // namespace tds
