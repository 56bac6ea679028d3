// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <functional>
#include <vector>

#include "doctest.h"
#include "tds/rng.hpp"
#include "tds/wer.hpp"

using namespace tds;

namespace {

// Enumerates every alignment path and keeps the lexicographically smallest
// (cost, deletions); returns the counts of that path.
ErrorCounts brute_force(const std::vector<int>& ref, const std::vector<int>& hyp) {
  ErrorCounts best;
  std::size_t best_cost = SIZE_MAX, best_del = SIZE_MAX;
  std::function<void(std::size_t, std::size_t, ErrorCounts)> walk = [&](std::size_t i, std::size_t j,
                                                                         ErrorCounts acc) {
    if (i == ref.size() && j == hyp.size()) {
      const std::size_t cost = acc.errors();
      if (cost < best_cost || (cost == best_cost && acc.deletions < best_del)) {
        best = acc;
        best_cost = cost;
        best_del = acc.deletions;
      }
      return;
    }
    if (i < ref.size() && j < hyp.size()) {
      ErrorCounts d = acc;
      if (ref[i] != hyp[j]) ++d.substitutions;
      walk(i + 1, j + 1, d);
    }
    if (i < ref.size()) {
      ErrorCounts d = acc;
      ++d.deletions;
      walk(i + 1, j, d);
    }
    if (j < hyp.size()) {
      ErrorCounts d = acc;
      ++d.insertions;
      walk(i, j + 1, d);
    }
  };
  walk(0, 0, {0, 0, 0, ref.size()});
  return best;
}

}  // namespace

TEST_CASE("hand cases") {
  CHECK(word_errors("a b c", "a b c").rate() == 0.0);
  ErrorCounts e = word_errors("a b c", "a x c");
  CHECK(e.substitutions == 1);
  CHECK(e.rate() == doctest::Approx(1.0 / 3));
  ErrorCounts ins = word_errors("", "a b");
  CHECK(ins.insertions == 2);
  CHECK(ins.rate() == 2.0);
  ErrorCounts del = word_errors("a b c d", "a d");
  CHECK(del.deletions == 2);
  CHECK(del.rate() == 0.5);
  CHECK(word_errors("", "").rate() == 0.0);
}

TEST_CASE("dynamic programme matches exhaustive alignment") {
  Rng rng(1);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<int> ref(rng.uniform_int(6)), hyp(rng.uniform_int(6));
    for (auto& t : ref) t = static_cast<int>(rng.uniform_int(3));
    for (auto& t : hyp) t = static_cast<int>(rng.uniform_int(3));
    const ErrorCounts dp = token_errors(ref, hyp), bf = brute_force(ref, hyp);
    CHECK(dp.substitutions == bf.substitutions);
    CHECK(dp.insertions == bf.insertions);
    CHECK(dp.deletions == bf.deletions);
  }
}

TEST_CASE("counts accumulate") {
  ErrorCounts total = word_errors("a b", "a c");
  total += word_errors("x", "");
  CHECK(total.errors() == 2);
  CHECK(total.reference_length == 3);
}
