// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace tds {

struct ErrorCounts {
  std::size_t substitutions = 0;
  std::size_t insertions = 0;
  std::size_t deletions = 0;
  std::size_t reference_length = 0;

  std::size_t errors() const { return substitutions + insertions + deletions; }
  /// errors / max(1, reference_length).
  double rate() const {
    return static_cast<double>(errors()) / static_cast<double>(std::max<std::size_t>(1, reference_length));
  }
  ErrorCounts& operator+=(const ErrorCounts& o);
};

/// Unit-cost Levenshtein alignment. Among minimum-cost alignments the one
/// with the fewest deletions is reported, so the split between error kinds
/// is deterministic.
template <typename T>
ErrorCounts align_errors(std::span<const T> ref, std::span<const T> hyp);

ErrorCounts word_errors(const std::vector<std::string>& ref, const std::vector<std::string>& hyp);
ErrorCounts word_errors(const std::string& ref, const std::string& hyp);
ErrorCounts token_errors(std::span<const int> ref, std::span<const int> hyp);

}  // namespace tds
