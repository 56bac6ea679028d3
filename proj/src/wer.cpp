// SPDX-License-Identifier: Apache-2.0
#include "tds/wer.hpp"

#include <tuple>

#include "tds/wordpiece.hpp"

namespace tds {

ErrorCounts& ErrorCounts::operator+=(const ErrorCounts& o) {
  substitutions += o.substitutions;
  insertions += o.insertions;
  deletions += o.deletions;
  reference_length += o.reference_length;
  return *this;
}

template <typename T>
ErrorCounts align_errors(std::span<const T> ref, std::span<const T> hyp) {
  struct Cell {
    std::size_t cost = 0, del = 0, ins = 0, sub = 0;
    bool operator<(const Cell& o) const { return std::tie(cost, del) < std::tie(o.cost, o.del); }
  };
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<Cell> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = {j, 0, j, 0};
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = {i, i, 0, 0};
    for (std::size_t j = 1; j <= m; ++j) {
      Cell diag = prev[j - 1];
      if (!(ref[i - 1] == hyp[j - 1])) {
        ++diag.cost;
        ++diag.sub;
      }
      Cell del = prev[j];
      ++del.cost;
      ++del.del;
      Cell ins = cur[j - 1];
      ++ins.cost;
      ++ins.ins;
      cur[j] = std::min({diag, del, ins});
    }
    std::swap(prev, cur);
  }
  const Cell& c = prev[m];
  return {c.sub, c.ins, c.del, n};
}

template ErrorCounts align_errors<int>(std::span<const int>, std::span<const int>);
template ErrorCounts align_errors<std::string>(std::span<const std::string>,
                                               std::span<const std::string>);

ErrorCounts word_errors(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
  return align_errors<std::string>(ref, hyp);
}

ErrorCounts word_errors(const std::string& ref, const std::string& hyp) {
  return word_errors(split_words(ref), split_words(hyp));
}

ErrorCounts token_errors(std::span<const int> ref, std::span<const int> hyp) {
  return align_errors<int>(ref, hyp);
}

}  // namespace tds
