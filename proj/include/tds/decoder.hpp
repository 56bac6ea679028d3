// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstddef>
#include <optional>
#include <vector>

#include "json.hpp"
#include "tds/encoder.hpp"
#include "tds/ops.hpp"
#include "tds/params.hpp"
#include "tds/wordpiece.hpp"

namespace tds {

/// T' x U matrix with W[i][j] = (i - (T'/U) j)^2, zero-based, real ratio.
Tensor window_matrix(std::size_t encoded_length, std::size_t target_length);

struct Attention {
  Tensor context;  // [U, d]
  Tensor weights;  // [U, T'], rows sum to one
};

/// Scaled inner-product attention for all queries at once:
///
///   A = softmax_rows(Q K^T / sqrt(d) - W^T / (2 sigma^2)),   S = A V
///
/// queries: [U, d]; keys, values: [T', d]. The window term is applied when
/// `window_sigma` is set, with W = window_matrix(T', U).
Attention attend(const Tensor& queries, const Tensor& keys, const Tensor& values,
                 std::optional<double> window_sigma = std::nullopt);

struct DecoderConfig {
  /// Output classes, end-of-sentence included. The start symbol is one
  /// extra embedding row (id == n_tokens) that is never predicted.
  std::size_t n_tokens = 0;
  std::size_t attention_dim = 512;
  int eos_id = WordPieceVocab::kEos;

  void validate() const;
  int start_id() const { return static_cast<int>(n_tokens); }

  nlohmann::json to_json() const;
  static DecoderConfig from_json(const nlohmann::json& j);
};

/// Input to one decoding step. Steps return states whose prev_token is -1;
/// the caller fills in the token it commits to before the next step.
struct DecoderState {
  Tensor query;  // [d]
  int prev_token = 0;
};

struct StepOutput {
  Tensor log_probs;  // [V]
  DecoderState state;
  Tensor attention;  // [T']
};

struct BatchStepOutput {
  Tensor log_probs;  // [B, V]
  std::vector<DecoderState> states;
  Tensor attention;  // [B, T']
};

struct TeacherForcedOutput {
  Tensor log_probs;  // [U, V]
  Tensor attention;  // [U, T']
};

/// GRU query generator, attention and output layer over [S; Q].
class Decoder {
 public:
  Decoder(DecoderConfig cfg, Rng& init_rng);

  const DecoderConfig& config() const { return cfg_; }
  DecoderState initial_state() const;

  StepOutput decode_step(const DecoderState& state, const EncoderOutput& enc) const;
  /// Advances several hypotheses that share one encoder output in a single
  /// batched call.
  BatchStepOutput step_batch(const std::vector<DecoderState>& states,
                             const EncoderOutput& enc) const;

  /// One recurrence over the whole input sequence followed by a single
  /// batched attention and output layer. `inputs` starts with start_id().
  TeacherForcedOutput forward_teacher_forced(
      const EncoderOutput& enc, std::span<const int> inputs,
      std::optional<double> window_sigma = std::nullopt) const;

  /// [start, y_0, ..., y_{U-2}] for targets y.
  TokenSequence shift_right(std::span<const int> targets) const;

  ParamList parameters() const;

  /// Number of step_batch / decode_step invocations so far.
  std::size_t step_calls() const { return step_calls_.load(); }

 private:
  Tensor output_layer(const Tensor& context, const Tensor& queries) const;
  void check_encoder(const EncoderOutput& enc) const;

  DecoderConfig cfg_;
  Tensor embed_;
  GruParams gru_;
  Tensor out_w_, out_b_;
  mutable std::atomic<std::size_t> step_calls_{0};
};

/// Replaces each non-EOS position with probability p_rs by a token drawn
/// uniformly from the n_tokens - 1 non-EOS classes. EOS positions are kept.
TokenSequence random_sample_targets(std::span<const int> targets, double p_rs,
                                    std::size_t n_tokens, int eos_id, Rng& rng);

}  // namespace tds
