// SPDX-License-Identifier: Apache-2.0
// Enumerable decoding instances and a brute-force objective maximizer that
// scores every sequence with one teacher-forced pass, independently of the
// beam's incremental bookkeeping.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "support/random_tensor.hpp"
#include "tds/beam_search.hpp"

namespace tds::testing {

struct ToyInstance {
  std::unique_ptr<Decoder> decoder;
  EncoderOutput enc;
};

/// Small random decoder; `spread` scales encoder outputs so attention and
/// token distributions are peaked enough to be interesting.
inline ToyInstance make_toy(Rng& rng, std::size_t n_tokens, std::size_t encoded_length,
                            std::size_t dim = 4, double spread = 2.0) {
  ToyInstance t;
  t.decoder = std::make_unique<Decoder>(DecoderConfig{n_tokens, dim, 1}, rng);
  Tensor kv = random_tensor({encoded_length, 2 * dim}, rng, -spread, spread);
  t.enc.keys = slice(kv, 1, 0, dim);
  t.enc.values = slice(kv, 1, dim, dim);
  for (std::size_t i = 0; i < encoded_length; ++i) t.enc.frame_positions.push_back(i);
  return t;
}

struct ScoredSequence {
  TokenSequence tokens;
  double s2s = 0.0;
  double lm = 0.0;
};

/// Every EOS-terminated sequence of at most `max_len` tokens with its
/// sequence log-probability and LM score.
inline std::vector<ScoredSequence> enumerate_sequences(const ToyInstance& toy, std::size_t max_len,
                                                       const TokenScorer* lm) {
  const int eos = toy.decoder->config().eos_id;
  const int V = static_cast<int>(toy.decoder->config().n_tokens);
  std::vector<ScoredSequence> out;
  std::vector<TokenSequence> prefixes{{}};
  NoGradGuard guard;
  for (std::size_t len = 1; len <= max_len; ++len) {
    std::vector<TokenSequence> next;
    for (const auto& p : prefixes) {
      for (int c = 0; c < V; ++c) {
        TokenSequence y = p;
        y.push_back(c);
        if (c != eos) {
          next.push_back(y);
          continue;
        }
        ScoredSequence s{y, 0.0, 0.0};
        Tensor lp = toy.decoder->forward_teacher_forced(toy.enc, toy.decoder->shift_right(y)).log_probs;
        for (std::size_t u = 0; u < y.size(); ++u) s.s2s += lp.at(u, static_cast<std::size_t>(y[u]));
        if (lm) {
          LmContext ctx = lm->start(), nxt;
          for (int tok : y) {
            s.lm += lm->score(ctx, tok, nxt);
            ctx = nxt;
          }
        }
        out.push_back(std::move(s));
      }
    }
    prefixes = std::move(next);
  }
  return out;
}

inline double objective(const ScoredSequence& s, double lm_weight, double token_bonus) {
  return s.s2s + lm_weight * s.lm + token_bonus * static_cast<double>(s.tokens.size());
}

/// Objective argmax with the beam's tie-break (lexicographically smaller).
inline const ScoredSequence& best_sequence(const std::vector<ScoredSequence>& all, double lm_weight,
                                           double token_bonus) {
  const ScoredSequence* best = &all.front();
  for (const auto& s : all) {
    const double a = objective(s, lm_weight, token_bonus), b = objective(*best, lm_weight, token_bonus);
    if (a > b || (a == b && s.tokens < best->tokens)) best = &s;
  }
  return *best;
}

}  // namespace tds::testing
