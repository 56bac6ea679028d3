// SPDX-License-Identifier: Apache-2.0
#include "tds/beam_search.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace tds {

namespace {

std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace

void BeamConfig::validate() const {
  if (beam_size < 1) throw std::invalid_argument("beam: beam_size must be >= 1");
  if (candidate_gap && !(*candidate_gap > 0.0)) throw std::invalid_argument("beam: candidate gap must be > 0");
  if (attention_limit && *attention_limit < 1) throw std::invalid_argument("beam: attention_limit must be >= 1");
  if (beam_threshold && !(*beam_threshold >= 0.0)) throw std::invalid_argument("beam: threshold must be >= 0");
  if (max_out_len && *max_out_len < 1) throw std::invalid_argument("beam: max_out_len must be >= 1");
}

BeamConfig BeamConfig::unconstrained(std::size_t beam_size) {
  BeamConfig c;
  c.beam_size = beam_size;
  c.eos_factor.reset();
  c.candidate_gap.reset();
  c.attention_limit.reset();
  c.beam_threshold.reset();
  return c;
}

double combined_score(const Hypothesis& h, const BeamConfig& cfg, int eos_id) {
  double length = static_cast<double>(h.tokens.size());
  if (!cfg.count_eos_in_length && !h.tokens.empty() && h.tokens.back() == eos_id) length -= 1.0;
  return h.s2s_logp + cfg.lm_weight * h.lm_logp + cfg.token_bonus * length;
}

std::vector<int> propose_candidates(std::span<const double> log_probs, const BeamConfig& cfg,
                                    int eos_id) {
  const double best = log_probs[argmax(log_probs)];
  std::vector<int> out;
  for (std::size_t c = 0; c < log_probs.size(); ++c) {
    const double lp = log_probs[c];
    if (cfg.candidate_gap && !(lp > best - *cfg.candidate_gap)) continue;
    if (static_cast<int>(c) == eos_id && cfg.eos_factor && !(lp > *cfg.eos_factor * best)) continue;
    out.push_back(static_cast<int>(c));
  }
  return out;
}

bool exceeds_attention_limit(long previous, std::size_t peak, const BeamConfig& cfg) {
  if (!cfg.attention_limit || previous < 0) return false;
  const long jump = std::labs(static_cast<long>(peak) - previous);
  return static_cast<std::size_t>(jump) > *cfg.attention_limit;
}

BeamResult beam_decode(const EncoderOutput& enc, const Decoder& decoder, const TokenScorer* lm,
                       const BeamConfig& cfg) {
  cfg.validate();
  NoGradGuard no_grad;
  const int eos = decoder.config().eos_id;
  const std::size_t max_len = cfg.max_out_len.value_or(enc.length());
  const std::size_t V = decoder.config().n_tokens, T = enc.length();

  auto better = [&](const Hypothesis& a, const Hypothesis& b) {
    const double sa = combined_score(a, cfg, eos), sb = combined_score(b, cfg, eos);
    if (sa != sb) return sa > sb;
    return a.tokens < b.tokens;
  };

  Hypothesis root;
  root.state = decoder.initial_state();
  if (lm) root.lm_context = lm->start();
  std::vector<Hypothesis> beam{root};

  BeamResult result;
  const std::size_t calls_before = decoder.step_calls();
  while (!beam.empty() && result.steps < max_len) {
    ++result.steps;
    std::vector<DecoderState> states;
    for (const auto& h : beam) states.push_back(h.state);
    BatchStepOutput out = decoder.step_batch(states, enc);

    std::vector<Hypothesis> pool;
    for (std::size_t b = 0; b < beam.size(); ++b) {
      const Hypothesis& h = beam[b];
      const std::span<const double> lp = out.log_probs.data().subspan(b * V, V);
      const std::size_t peak = argmax(out.attention.data().subspan(b * T, T));
      if (exceeds_attention_limit(h.last_peak, peak, cfg)) continue;
      for (int c : propose_candidates(lp, cfg, eos)) {
        Hypothesis n;
        n.tokens = h.tokens;
        n.tokens.push_back(c);
        n.s2s_logp = h.s2s_logp + lp[static_cast<std::size_t>(c)];
        n.lm_logp = h.lm_logp;
        if (lm) {
          const double s = lm->score(h.lm_context, c, n.lm_context);
          if (c != eos || cfg.lm_scores_eos) n.lm_logp += s;
        }
        n.state = {out.states[b].query, c};
        n.last_peak = static_cast<long>(peak);
        n.peaks = h.peaks;
        n.peaks.push_back(peak);
        n.finished = c == eos;
        pool.push_back(std::move(n));
      }
    }
    if (pool.empty()) {
      beam.clear();
      break;
    }
    std::sort(pool.begin(), pool.end(), better);
    if (cfg.beam_threshold) {
      const double floor = combined_score(pool.front(), cfg, eos) - *cfg.beam_threshold;
      auto keep = std::find_if(pool.begin(), pool.end(),
                               [&](const Hypothesis& h) { return combined_score(h, cfg, eos) < floor; });
      pool.erase(keep, pool.end());
    }
    if (pool.size() > cfg.beam_size) pool.resize(cfg.beam_size);

    beam.clear();
    for (auto& h : pool) {
      if (h.finished) {
        result.hypotheses.push_back(std::move(h));
      } else {
        beam.push_back(std::move(h));
      }
    }
  }
  result.model_calls = decoder.step_calls() - calls_before;

  if (result.hypotheses.empty()) {
    result.complete = false;
    if (!beam.empty()) result.hypotheses.push_back(*std::min_element(beam.begin(), beam.end(), better));
    else result.hypotheses.push_back(root);
  }
  std::stable_sort(result.hypotheses.begin(), result.hypotheses.end(), better);
  return result;
}

TokenSequence greedy_decode(const EncoderOutput& enc, const Decoder& decoder,
                            std::optional<std::size_t> max_out_len) {
  NoGradGuard no_grad;
  const int eos = decoder.config().eos_id;
  const std::size_t max_len = max_out_len.value_or(enc.length());
  TokenSequence out;
  DecoderState state = decoder.initial_state();
  while (out.size() < max_len) {
    StepOutput s = decoder.decode_step(state, enc);
    const int token = static_cast<int>(argmax(s.log_probs.data()));
    out.push_back(token);
    if (token == eos) break;
    state = s.state;
    state.prev_token = token;
  }
  return out;
}

}  // namespace tds
