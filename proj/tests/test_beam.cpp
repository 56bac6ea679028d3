// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <vector>

#include "doctest.h"
#include "support/toy_search.hpp"

using namespace tds;
using namespace tds::testing;

TEST_CASE("combined score arithmetic") {
  BeamConfig cfg;
  Hypothesis h;
  h.tokens = {2, 3, 1};
  h.s2s_logp = -2.0;
  h.lm_logp = -4.0;
  cfg.lm_weight = 0.5;
  cfg.token_bonus = 0.1;
  CHECK(combined_score(h, cfg, 1) == doctest::Approx(-3.7).epsilon(1e-15));
  cfg.count_eos_in_length = false;
  CHECK(combined_score(h, cfg, 1) == doctest::Approx(-3.8).epsilon(1e-15));
  cfg.lm_weight = cfg.token_bonus = 0.0;
  CHECK(combined_score(h, cfg, 1) == -2.0);

  // equal s2s + lm, the bonus favors the longer hypothesis
  BeamConfig bonus;
  bonus.token_bonus = 0.2;
  Hypothesis shorter, longer;
  shorter.tokens = {2, 1};
  longer.tokens = {2, 2, 1};
  shorter.s2s_logp = longer.s2s_logp = -1.0;
  CHECK(combined_score(longer, bonus, 1) > combined_score(shorter, bonus, 1));
}

TEST_CASE("eos factor on crafted distributions") {
  BeamConfig cfg = BeamConfig::unconstrained(4);
  cfg.eos_factor = 1.5;
  // token 0 best at -1, EOS (1) at -2: -2 < -1.5 so EOS is blocked
  std::vector<double> lp{-1.0, -2.0, -3.0};
  CHECK(propose_candidates(lp, cfg, 1) == std::vector<int>{0, 2});
  lp[1] = -1.2;
  CHECK(propose_candidates(lp, cfg, 1) == std::vector<int>{0, 1, 2});
  // boundary: equality is not greater
  lp[1] = -1.5;
  CHECK(propose_candidates(lp, cfg, 1) == std::vector<int>{0, 2});
}

TEST_CASE("candidate gap") {
  BeamConfig cfg = BeamConfig::unconstrained(4);
  cfg.candidate_gap = 10.0;
  std::vector<double> lp{-0.5, -9.0, -10.5, -11.0, -30.0};
  // -10.5 sits exactly on the gap and is excluded
  CHECK(propose_candidates(lp, cfg, 4) == std::vector<int>{0, 1});
  lp[2] = -10.49;
  CHECK(propose_candidates(lp, cfg, 4) == std::vector<int>{0, 1, 2});
  cfg.candidate_gap.reset();
  CHECK(propose_candidates(lp, cfg, 4) == std::vector<int>{0, 1, 2, 3, 4});
}

TEST_CASE("attention limit") {
  BeamConfig cfg;
  cfg.attention_limit = 30;
  CHECK_FALSE(exceeds_attention_limit(-1, 100, cfg));
  CHECK_FALSE(exceeds_attention_limit(10, 40, cfg));
  CHECK(exceeds_attention_limit(10, 50, cfg));
  CHECK(exceeds_attention_limit(60, 20, cfg));
  cfg.attention_limit.reset();
  CHECK_FALSE(exceeds_attention_limit(0, 1000, cfg));
}

TEST_CASE("returned hypotheses respect the attention limit") {
  Rng rng(1);
  int constrained = 0;
  for (int trial = 0; trial < 20; ++trial) {
    ToyInstance toy = make_toy(rng, 4, 40, 4, 4.0);
    BeamConfig cfg = BeamConfig::unconstrained(16);
    cfg.max_out_len = 6;
    BeamResult free_run = beam_decode(toy.enc, *toy.decoder, nullptr, cfg);
    std::size_t max_jump = 0;
    TokenSequence jumper;
    for (const auto& h : free_run.hypotheses) {
      for (std::size_t i = 1; i < h.peaks.size(); ++i) {
        const std::size_t jump =
            std::labs(static_cast<long>(h.peaks[i]) - static_cast<long>(h.peaks[i - 1]));
        if (jump > max_jump) {
          max_jump = jump;
          jumper = h.tokens;
        }
      }
    }
    if (max_jump < 2) continue;
    ++constrained;
    cfg.attention_limit = max_jump - 1;
    BeamResult limited = beam_decode(toy.enc, *toy.decoder, nullptr, cfg);
    for (const auto& h : limited.hypotheses) {
      for (std::size_t i = 1; i < h.peaks.size(); ++i)
        CHECK(std::labs(static_cast<long>(h.peaks[i]) - static_cast<long>(h.peaks[i - 1])) <=
              static_cast<long>(*cfg.attention_limit));
      CHECK(h.tokens != jumper);
    }
  }
  CHECK(constrained > 0);
}

TEST_CASE("beam size one reduces to greedy") {
  Rng rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    ToyInstance toy = make_toy(rng, 3 + rng.uniform_int(6), 2 + rng.uniform_int(6));
    BeamResult r = beam_decode(toy.enc, *toy.decoder, nullptr, BeamConfig::unconstrained(1));
    CHECK(r.best().tokens == greedy_decode(toy.enc, *toy.decoder));
  }
}

TEST_CASE("wide beam finds the exhaustive optimum") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    ToyInstance toy = make_toy(rng, 2 + rng.uniform_int(3), 1 + rng.uniform_int(3));
    BeamConfig cfg = BeamConfig::unconstrained(256);
    cfg.max_out_len = 4;
    cfg.token_bonus = rng.uniform(-1, 1);
    auto all = enumerate_sequences(toy, 4, nullptr);
    BeamResult r = beam_decode(toy.enc, *toy.decoder, nullptr, cfg);
    REQUIRE(r.complete);
    const auto& best = best_sequence(all, 0.0, cfg.token_bonus);
    CHECK(r.best().tokens == best.tokens);
    CHECK(std::abs(r.best().s2s_logp - best.s2s) < 1e-9);
  }
}

TEST_CASE("one model call per step regardless of width") {
  Rng rng(4);
  ToyInstance toy = make_toy(rng, 6, 8);
  for (std::size_t width : {1u, 4u, 32u}) {
    BeamResult r = beam_decode(toy.enc, *toy.decoder, nullptr, BeamConfig::unconstrained(width));
    CHECK(r.model_calls == r.steps);
  }
}

TEST_CASE("returned hypotheses end with exactly one eos and are sorted") {
  Rng rng(5);
  ToyInstance toy = make_toy(rng, 5, 6);
  BeamConfig cfg;
  cfg.beam_size = 8;
  cfg.eos_factor.reset();
  BeamResult r = beam_decode(toy.enc, *toy.decoder, nullptr, cfg);
  REQUIRE(r.complete);
  for (std::size_t i = 0; i < r.hypotheses.size(); ++i) {
    const auto& t = r.hypotheses[i].tokens;
    CHECK(t.back() == 1);
    CHECK(std::count(t.begin(), t.end(), 1) == 1);
    if (i > 0) CHECK(combined_score(r.hypotheses[i - 1], cfg, 1) >= combined_score(r.hypotheses[i], cfg, 1));
  }
  BeamResult again = beam_decode(toy.enc, *toy.decoder, nullptr, cfg);
  CHECK(again.best().tokens == r.best().tokens);
}

TEST_CASE("unfinished search is flagged") {
  Rng rng(6);
  ToyInstance toy = make_toy(rng, 4, 3);
  BeamConfig cfg = BeamConfig::unconstrained(2);
  cfg.max_out_len = 1;
  cfg.eos_factor = 1e9;  // EOS can never pass
  BeamResult r = beam_decode(toy.enc, *toy.decoder, nullptr, cfg);
  CHECK_FALSE(r.complete);
  CHECK(r.best().tokens.size() == 1);
}

TEST_CASE("beam score is nondecreasing in width on enumerable toys") {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    ToyInstance toy = make_toy(rng, 4, 3);
    double previous = -std::numeric_limits<double>::infinity();
    for (std::size_t width : {1u, 2u, 4u, 16u, 256u}) {
      BeamConfig cfg = BeamConfig::unconstrained(width);
      cfg.max_out_len = 4;
      BeamResult r = beam_decode(toy.enc, *toy.decoder, nullptr, cfg);
      if (!r.complete) continue;
      const double s = combined_score(r.best(), cfg, 1);
      CHECK(s >= previous - 1e-12);
      previous = s;
    }
  }
}
