// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <istream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tds/rng.hpp"

namespace tds {

using TokenSequence = std::vector<int>;

/// U+2581, prefixed to the first piece of every word.
inline constexpr std::string_view kWordBoundary = "\xE2\x96\x81";

/// Unigram word-piece vocabulary.
///
/// Ids 0 and 1 are reserved for <unk> and </s>; file pieces follow in file
/// order. A "<unk>" or "</s>" line in the file maps onto the reserved id and
/// "<s>" lines are ignored (the decoder's start symbol lives outside the
/// output vocabulary).
class WordPieceVocab {
 public:
  static constexpr int kUnk = 0;
  static constexpr int kEos = 1;
  /// Score of the <unk> edge used for characters no piece covers.
  static constexpr double kUnkLogProb = -100.0;

  WordPieceVocab();
  /// Pieces with their log probabilities; every log prob must be <= 0.
  static WordPieceVocab from_pieces(const std::vector<std::pair<std::string, double>>& pieces);
  /// "piece<TAB>log_prob" per line. Errors carry the line number.
  static WordPieceVocab parse(std::istream& in);
  static WordPieceVocab load(const std::filesystem::path& path);

  std::size_t size() const { return pieces_.size(); }
  /// -1 when absent.
  int id(std::string_view piece) const;
  const std::string& piece(int id) const;
  double log_prob(int id) const;
  std::size_t max_piece_chars() const { return max_piece_chars_; }

  const std::vector<std::string>& pieces() const { return pieces_; }
  const std::vector<double>& log_probs() const { return log_probs_; }

 private:
  void add(std::string piece, double log_prob);

  std::vector<std::string> pieces_;
  std::vector<double> log_probs_;
  std::unordered_map<std::string, int> index_;
  std::size_t max_piece_chars_ = 1;
};

struct Segmentation {
  TokenSequence ids;
  double score = 0.0;
};

/// Highest scoring split of `word` into pieces (sum of piece log probs).
/// Ties go to fewer pieces, then to the lexicographically smaller piece
/// sequence. Characters no piece covers become <unk>.
TokenSequence segment_best(std::string_view word, const WordPieceVocab& vocab);

/// The n best distinct segmentations, best first, under the same ordering.
std::vector<Segmentation> segment_nbest(std::string_view word, const WordPieceVocab& vocab,
                                        std::size_t n);

/// With probability 1 - p_wp the best segmentation; otherwise a uniform draw
/// from the ten best.
TokenSequence sample_word(std::string_view word, const WordPieceVocab& vocab, double p_wp,
                          Rng& rng);

/// Whitespace-split words, each prefixed with the boundary marker and
/// segmented independently.
TokenSequence encode_transcript(std::string_view text, const WordPieceVocab& vocab, double p_wp,
                                Rng& rng);

/// Concatenates pieces and turns boundary markers back into spaces. </s>
/// ends the text; <unk> renders as "<unk>".
std::string decode(std::span<const int> ids, const WordPieceVocab& vocab);

/// Single spaces between words, no leading or trailing space.
std::string normalize_text(std::string_view text);
std::vector<std::string> split_words(std::string_view text);

}  // namespace tds
