// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace tds {

/// Carried history for incremental scoring: the most recent max_order - 1
/// word ids, oldest first.
using LmContext = std::vector<int>;

/// Interface the beam search uses for fusion. Scores are natural logs.
class TokenScorer {
 public:
  virtual ~TokenScorer() = default;
  virtual LmContext start() const = 0;
  /// log P(token | context); `next` receives the context after `token`.
  virtual double score(const LmContext& context, int token, LmContext& next) const = 0;
};

struct ArpaOptions {
  /// Score for words the model does not know when it has no <unk> unigram.
  double unk_floor = std::log(1e-10);
  /// Start every sentence from the <s> context instead of an empty one.
  bool sentence_start_context = false;
  /// Whether score_sequence counts </s>.
  bool score_eos = true;
};

/// Backoff n-gram model loaded from ARPA text. Log10 values are kept for
/// dumping; every scoring method returns natural logs.
class ArpaModel {
 public:
  static constexpr const char* kUnk = "<unk>";
  static constexpr const char* kBos = "<s>";
  static constexpr const char* kEos = "</s>";

  struct Entry {
    double log10_prob = 0.0;
    double log10_backoff = 0.0;
    bool has_backoff = false;
  };

  /// Throws std::runtime_error naming the offending line.
  static ArpaModel parse(std::istream& in, ArpaOptions options = {});
  static ArpaModel load(const std::filesystem::path& path, ArpaOptions options = {});
  static ArpaModel parse_string(const std::string& text, ArpaOptions options = {});

  /// Add-one estimate over whitespace-tokenized sentences, with backoff
  /// weights that keep every context normalized. For toy experiments.
  static ArpaModel estimate_add_one(const std::vector<std::vector<std::string>>& sentences,
                                    std::size_t order, ArpaOptions options = {});

  void dump(std::ostream& out) const;

  std::size_t max_order() const { return tables_.size(); }
  const ArpaOptions& options() const { return options_; }
  std::size_t vocab_size() const { return words_.size(); }
  /// -1 for unknown words.
  int word_id(const std::string& word) const;
  const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& words() const { return words_; }
  std::size_t count(std::size_t order) const { return tables_.at(order - 1).size(); }
  /// Listed entry for the n-gram, or nullptr.
  const Entry* find(std::span<const int> ngram) const;
  /// Every listed n-gram of one order.
  std::vector<std::vector<int>> ngrams(std::size_t order) const;

  /// Natural-log backoff score of `word` after `context` (older words
  /// beyond max_order - 1 are ignored). Unknown words (id -1) get the
  /// <unk> unigram or the floor.
  double score(int word, std::span<const int> context) const;
  double score(const std::string& word, const std::vector<std::string>& context) const;

  LmContext start() const;
  /// Scores `word` after `context` and writes the truncated new context.
  double advance(const LmContext& context, int word, LmContext& next) const;

  /// Sum of scores over a word sequence starting from start().
  double score_sequence(std::span<const int> words) const;
  double score_sequence(const std::vector<std::string>& words) const;

 private:
  struct KeyHash {
    std::size_t operator()(const std::vector<int>& k) const noexcept;
  };
  using Table = std::unordered_map<std::vector<int>, Entry, KeyHash>;

  int intern(const std::string& word);

  ArpaOptions options_;
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
  std::vector<Table> tables_;
  int unk_id_ = -1;
  int eos_id_ = -1;
  int bos_id_ = -1;
};

/// Adapts an ArpaModel to decoder token ids through their surface strings.
/// `token_strings[i]` is the LM word for decoder token i; strings the model
/// does not know score as unknown words.
class ArpaTokenScorer : public TokenScorer {
 public:
  ArpaTokenScorer(const ArpaModel& model, const std::vector<std::string>& token_strings);

  LmContext start() const override { return model_.start(); }
  double score(const LmContext& context, int token, LmContext& next) const override;

 private:
  const ArpaModel& model_;
  std::vector<int> word_of_token_;
};

}  // namespace tds
