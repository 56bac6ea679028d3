// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "tds/decoder.hpp"
#include "tds/ngram.hpp"

namespace tds {

/// Search settings. Unset optionals disable the corresponding rule.
struct BeamConfig {
  std::size_t beam_size = 80;
  double lm_weight = 0.0;     // weight on log P_LM
  double token_bonus = 0.0;   // added once per emitted token
  /// EOS is proposed only when log P(EOS) > eos_factor * max_c log P(c).
  std::optional<double> eos_factor = 1.5;
  /// Tokens are proposed only when log P(y) > max_c log P(c) - candidate_gap.
  std::optional<double> candidate_gap = 10.0;
  /// A hypothesis whose attention peak moves more than this many encoded
  /// frames in one step is dropped.
  std::optional<std::size_t> attention_limit = 30;
  /// Expansions scoring more than this below the best expansion are pruned.
  std::optional<double> beam_threshold = 25.0;
  /// Maximum emitted tokens; defaults to the encoded length.
  std::optional<std::size_t> max_out_len;
  bool count_eos_in_length = true;
  bool lm_scores_eos = true;

  void validate() const;
  /// All stabilizers and the beam threshold off.
  static BeamConfig unconstrained(std::size_t beam_size);
};

struct Hypothesis {
  TokenSequence tokens;
  double s2s_logp = 0.0;
  double lm_logp = 0.0;
  DecoderState state;
  LmContext lm_context;
  /// Attention argmax of the latest step, -1 before the first step.
  long last_peak = -1;
  std::vector<std::size_t> peaks;
  bool finished = false;
};

/// s2s + lm_weight * lm + token_bonus * |Y|.
double combined_score(const Hypothesis& h, const BeamConfig& cfg, int eos_id);

/// Candidates one step could propose from a distribution over tokens,
/// ascending by id. Applies the candidate gap and the EOS factor.
std::vector<int> propose_candidates(std::span<const double> log_probs, const BeamConfig& cfg,
                                    int eos_id);

/// True when a peak move from `previous` to `peak` violates the limit.
bool exceeds_attention_limit(long previous, std::size_t peak, const BeamConfig& cfg);

struct BeamResult {
  /// Finished hypotheses, best first. When none finished this holds the
  /// best unfinished hypothesis and `complete` is false.
  std::vector<Hypothesis> hypotheses;
  bool complete = true;
  std::size_t steps = 0;
  std::size_t model_calls = 0;

  const Hypothesis& best() const { return hypotheses.front(); }
};

/// Beam search for argmax_Y log P_s2s(Y|X) + a log P_LM(Y) + b |Y| with one
/// batched decoder call per step. `lm` may be null.
BeamResult beam_decode(const EncoderOutput& enc, const Decoder& decoder, const TokenScorer* lm,
                       const BeamConfig& cfg);

/// Argmax token per step (lowest id on ties) until EOS or `max_out_len`.
TokenSequence greedy_decode(const EncoderOutput& enc, const Decoder& decoder,
                            std::optional<std::size_t> max_out_len = std::nullopt);

}  // namespace tds
