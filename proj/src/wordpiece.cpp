// SPDX-License-Identifier: Apache-2.0
#include "tds/wordpiece.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace tds {

namespace {

// Byte offsets of UTF-8 code point boundaries, including 0 and size.
std::vector<std::size_t> char_boundaries(std::string_view s) {
  std::vector<std::size_t> b;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if ((static_cast<unsigned char>(s[i]) & 0xC0) != 0x80) b.push_back(i);
  }
  b.push_back(s.size());
  return b;
}

std::size_t count_chars(std::string_view s) { return char_boundaries(s).size() - 1; }

struct Partial {
  TokenSequence ids;
  double score = 0.0;
};

// Best first: higher score, then fewer pieces, then lexicographic pieces.
bool better(const Partial& a, const Partial& b, const WordPieceVocab& vocab) {
  if (a.score != b.score) return a.score > b.score;
  if (a.ids.size() != b.ids.size()) return a.ids.size() < b.ids.size();
  return std::lexicographical_compare(
      a.ids.begin(), a.ids.end(), b.ids.begin(), b.ids.end(),
      [&](int x, int y) { return vocab.piece(x) < vocab.piece(y); });
}

}  // namespace

WordPieceVocab::WordPieceVocab() {
  add("<unk>", kUnkLogProb);
  add("</s>", 0.0);
}

void WordPieceVocab::add(std::string piece, double log_prob) {
  if (piece.empty()) throw std::invalid_argument("vocab: empty piece");
  if (!(log_prob <= 0.0)) {
    throw std::invalid_argument("vocab: log prob of '" + piece + "' must be <= 0");
  }
  if (index_.count(piece)) throw std::invalid_argument("vocab: duplicate piece '" + piece + "'");
  index_.emplace(piece, static_cast<int>(pieces_.size()));
  max_piece_chars_ = std::max(max_piece_chars_, count_chars(piece));
  pieces_.push_back(std::move(piece));
  log_probs_.push_back(log_prob);
}

WordPieceVocab WordPieceVocab::from_pieces(
    const std::vector<std::pair<std::string, double>>& pieces) {
  WordPieceVocab v;
  for (const auto& [p, lp] : pieces) {
    if (p == "<unk>" || p == "</s>" || p == "<s>") continue;
    v.add(p, lp);
  }
  return v;
}

WordPieceVocab WordPieceVocab::parse(std::istream& in) {
  std::vector<std::pair<std::string, double>> pieces;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw std::runtime_error("vocab line " + std::to_string(lineno) +
                               ": expected piece<TAB>log_prob");
    }
    double lp = 0.0;
    try {
      std::size_t used = 0;
      lp = std::stod(line.substr(tab + 1), &used);
      if (used != line.size() - tab - 1) throw std::invalid_argument("trailing text");
    } catch (const std::exception&) {
      throw std::runtime_error("vocab line " + std::to_string(lineno) + ": bad log prob");
    }
    pieces.emplace_back(line.substr(0, tab), lp);
  }
  try {
    return from_pieces(pieces);
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(e.what());
  }
}

WordPieceVocab WordPieceVocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocab " + path.string());
  return parse(in);
}

int WordPieceVocab::id(std::string_view piece) const {
  auto it = index_.find(std::string(piece));
  return it == index_.end() ? -1 : it->second;
}

const std::string& WordPieceVocab::piece(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= pieces_.size()) {
    throw std::out_of_range("token id " + std::to_string(id) + " outside vocab");
  }
  return pieces_[id];
}

double WordPieceVocab::log_prob(int id) const {
  piece(id);
  return log_probs_[id];
}

std::vector<Segmentation> segment_nbest(std::string_view word, const WordPieceVocab& vocab,
                                        std::size_t n) {
  if (n < 1) throw std::invalid_argument("segment_nbest: n must be >= 1");
  if (word.empty()) throw std::invalid_argument("segment: empty word");
  const auto cuts = char_boundaries(word);
  const std::size_t L = cuts.size() - 1;
  const auto order = [&](const Partial& a, const Partial& b) { return better(a, b, vocab); };

  // beams[i]: the n best segmentations of the first i characters. The
  // ordering is preserved by appending a common piece, so truncating each
  // prefix list to n keeps the global top n exact.
  std::vector<std::vector<Partial>> beams(L + 1);
  beams[0].push_back({});
  for (std::size_t end = 1; end <= L; ++end) {
    std::vector<Partial> cands;
    const std::size_t first = end > vocab.max_piece_chars() ? end - vocab.max_piece_chars() : 0;
    for (std::size_t start = first; start < end; ++start) {
      if (beams[start].empty()) continue;
      const auto piece = word.substr(cuts[start], cuts[end] - cuts[start]);
      int id = vocab.id(piece);
      double lp = 0.0;
      if (id > WordPieceVocab::kEos) {
        lp = vocab.log_prob(id);
      } else if (end - start == 1) {
        id = WordPieceVocab::kUnk;
        lp = WordPieceVocab::kUnkLogProb;
      } else {
        continue;
      }
      for (const auto& p : beams[start]) {
        Partial q = p;
        q.ids.push_back(id);
        q.score += lp;
        cands.push_back(std::move(q));
      }
    }
    std::sort(cands.begin(), cands.end(), order);
    if (cands.size() > n) cands.resize(n);
    beams[end] = std::move(cands);
  }
  std::vector<Segmentation> out;
  for (auto& p : beams[L]) out.push_back({std::move(p.ids), p.score});
  return out;
}

TokenSequence segment_best(std::string_view word, const WordPieceVocab& vocab) {
  return segment_nbest(word, vocab, 1).front().ids;
}

TokenSequence sample_word(std::string_view word, const WordPieceVocab& vocab, double p_wp,
                          Rng& rng) {
  if (!(p_wp >= 0.0 && p_wp <= 1.0)) {
    throw std::invalid_argument("sample_word: p_wp must be in [0, 1]");
  }
  if (p_wp > 0.0 && rng.uniform() < p_wp) {
    auto alts = segment_nbest(word, vocab, 10);
    return alts[rng.uniform_int(alts.size())].ids;
  }
  return segment_best(word, vocab);
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::istringstream is{std::string(text)};
  std::string w;
  while (is >> w) words.push_back(w);
  return words;
}

std::string normalize_text(std::string_view text) {
  std::string out;
  for (const auto& w : split_words(text)) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

TokenSequence encode_transcript(std::string_view text, const WordPieceVocab& vocab, double p_wp,
                                Rng& rng) {
  TokenSequence ids;
  for (const auto& w : split_words(text)) {
    const auto seg = sample_word(std::string(kWordBoundary) + w, vocab, p_wp, rng);
    ids.insert(ids.end(), seg.begin(), seg.end());
  }
  return ids;
}

std::string decode(std::span<const int> ids, const WordPieceVocab& vocab) {
  std::string raw;
  for (int id : ids) {
    if (id == WordPieceVocab::kEos) break;
    raw += vocab.piece(id);
  }
  std::string out;
  std::size_t pos = 0;
  while (true) {
    const auto hit = raw.find(kWordBoundary, pos);
    out.append(raw, pos, hit == std::string::npos ? std::string::npos : hit - pos);
    if (hit == std::string::npos) break;
    out += ' ';
    pos = hit + kWordBoundary.size();
  }
  return normalize_text(out);
}

}  // namespace tds
