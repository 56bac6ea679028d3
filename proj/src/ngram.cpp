// SPDX-License-Identifier: Apache-2.0
#include "tds/ngram.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace tds {

namespace {

constexpr double kLn10 = std::numbers::ln10;

[[noreturn]] void fail(std::size_t line, const std::string& what) {
  throw std::runtime_error("ARPA line " + std::to_string(line) + ": " + what);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> fields(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  std::string f;
  while (in >> f) out.push_back(f);
  return out;
}

bool parse_double(const std::string& s, double& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

// "\3-grams:" -> 3, otherwise 0.
std::size_t section_order(const std::string& line) {
  if (line.size() < 9 || line.front() != '\\' || line.substr(line.size() - 7) != "-grams:") return 0;
  std::size_t n = 0;
  const auto digits = line.substr(1, line.size() - 8);
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), n);
  if (ec != std::errc() || ptr != digits.data() + digits.size()) return 0;
  return n;
}

}  // namespace

std::size_t ArpaModel::KeyHash::operator()(const std::vector<int>& k) const noexcept {
  std::size_t h = 0xcbf29ce484222325ULL;
  for (int v : k) h = (h ^ static_cast<std::size_t>(static_cast<unsigned>(v))) * 0x100000001b3ULL;
  return h;
}

int ArpaModel::intern(const std::string& word) {
  auto [it, inserted] = ids_.emplace(word, static_cast<int>(words_.size()));
  if (inserted) {
    words_.push_back(word);
    if (word == kUnk) unk_id_ = it->second;
    if (word == kEos) eos_id_ = it->second;
    if (word == kBos) bos_id_ = it->second;
  }
  return it->second;
}

int ArpaModel::word_id(const std::string& word) const {
  auto it = ids_.find(word);
  return it == ids_.end() ? -1 : it->second;
}

ArpaModel ArpaModel::parse(std::istream& in, ArpaOptions options) {
  ArpaModel m;
  m.options_ = options;
  std::vector<std::size_t> declared;
  std::string raw;
  std::size_t line_no = 0;

  enum class Where { Preamble, Data, Section, End } where = Where::Preamble;
  std::size_t order = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (where == Where::End) {
      if (!line.empty()) fail(line_no, "content after \\end\\");
      continue;
    }
    if (line.empty()) continue;
    if (where == Where::Preamble) {
      if (line == "\\data\\") where = Where::Data;
      continue;
    }
    if (where == Where::Data && line.rfind("ngram ", 0) == 0) {
      const auto eq = line.find('=');
      std::size_t n = 0, c = 0;
      if (eq == std::string::npos) fail(line_no, "malformed count line '" + line + "'");
      const std::string ns = trim(line.substr(6, eq - 6)), cs = trim(line.substr(eq + 1));
      auto r1 = std::from_chars(ns.data(), ns.data() + ns.size(), n);
      auto r2 = std::from_chars(cs.data(), cs.data() + cs.size(), c);
      if (r1.ec != std::errc() || r1.ptr != ns.data() + ns.size() || r2.ec != std::errc() ||
          r2.ptr != cs.data() + cs.size() || n != declared.size() + 1) {
        fail(line_no, "malformed count line '" + line + "'");
      }
      declared.push_back(c);
      continue;
    }
    if (line.front() == '\\') {
      if (where == Where::Section && m.tables_[order - 1].size() != declared[order - 1]) {
        fail(line_no, std::to_string(order) + "-grams: declared " +
                          std::to_string(declared[order - 1]) + " entries, found " +
                          std::to_string(m.tables_[order - 1].size()));
      }
      if (line == "\\end\\") {
        if (declared.empty()) fail(line_no, "no n-gram counts in \\data\\");
        if (m.tables_.size() != declared.size()) {
          fail(line_no, "missing \\" + std::to_string(m.tables_.size() + 1) + "-grams: section");
        }
        where = Where::End;
        continue;
      }
      const std::size_t n = section_order(line);
      if (n == 0 || n != order + 1 || n > declared.size()) {
        fail(line_no, "unexpected section header '" + line + "'");
      }
      order = n;
      m.tables_.emplace_back();
      where = Where::Section;
      continue;
    }
    if (where != Where::Section) fail(line_no, "unexpected line '" + line + "'");

    const auto f = fields(line);
    if (f.size() != order + 1 && f.size() != order + 2) {
      fail(line_no, "expected " + std::to_string(order) + " words, got '" + line + "'");
    }
    Entry e;
    if (!parse_double(f[0], e.log10_prob)) fail(line_no, "bad probability '" + f[0] + "'");
    if (f.size() == order + 2) {
      if (!parse_double(f.back(), e.log10_backoff)) fail(line_no, "bad backoff '" + f.back() + "'");
      e.has_backoff = true;
    }
    std::vector<int> key;
    for (std::size_t i = 1; i <= order; ++i) {
      if (order > 1 && m.word_id(f[i]) < 0) fail(line_no, "word '" + f[i] + "' has no unigram");
      key.push_back(m.intern(f[i]));
    }
    if (order > 1 && !m.find(std::span<const int>(key).first(order - 1))) {
      fail(line_no, "history of '" + line + "' is not listed");
    }
    if (!m.tables_[order - 1].emplace(key, e).second) fail(line_no, "duplicate n-gram");
  }
  if (where == Where::Preamble) throw std::runtime_error("ARPA: missing \\data\\ header");
  if (where != Where::End) throw std::runtime_error("ARPA: missing \\end\\ marker");
  return m;
}

ArpaModel ArpaModel::load(const std::filesystem::path& path, ArpaOptions options) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open ARPA file " + path.string());
  return parse(in, options);
}

ArpaModel ArpaModel::parse_string(const std::string& text, ArpaOptions options) {
  std::istringstream in(text);
  return parse(in, options);
}

const ArpaModel::Entry* ArpaModel::find(std::span<const int> ngram) const {
  if (ngram.empty() || ngram.size() > tables_.size()) return nullptr;
  const auto& table = tables_[ngram.size() - 1];
  auto it = table.find(std::vector<int>(ngram.begin(), ngram.end()));
  return it == table.end() ? nullptr : &it->second;
}

std::vector<std::vector<int>> ArpaModel::ngrams(std::size_t order) const {
  std::vector<std::vector<int>> out;
  for (const auto& [k, e] : tables_.at(order - 1)) out.push_back(k);
  std::sort(out.begin(), out.end());
  return out;
}

double ArpaModel::score(int word, std::span<const int> context) const {
  if (word < 0 || word >= static_cast<int>(words_.size())) {
    if (unk_id_ >= 0) return find(std::span<const int>(&unk_id_, 1))->log10_prob * kLn10;
    return options_.unk_floor;
  }
  const std::size_t keep = std::min(context.size(), tables_.size() - 1);
  std::vector<int> key(context.end() - static_cast<std::ptrdiff_t>(keep), context.end());
  key.push_back(word);
  double backoff = 0.0;
  for (;;) {
    if (const Entry* e = find(key)) return (backoff + e->log10_prob) * kLn10;
    const std::span<const int> history(key.data(), key.size() - 1);
    if (const Entry* h = find(history)) backoff += h->log10_backoff;
    key.erase(key.begin());
  }
}

double ArpaModel::score(const std::string& word, const std::vector<std::string>& context) const {
  std::vector<int> ids;
  for (const auto& w : context) ids.push_back(word_id(w));
  return score(word_id(word), ids);
}

LmContext ArpaModel::start() const {
  if (options_.sentence_start_context && bos_id_ >= 0) return {bos_id_};
  return {};
}

double ArpaModel::advance(const LmContext& context, int word, LmContext& next) const {
  const double s = score(word, context);
  LmContext updated = context;
  updated.push_back(word >= 0 && word < static_cast<int>(words_.size()) ? word : unk_id_);
  const std::size_t keep = tables_.size() - 1;
  if (updated.size() > keep) updated.erase(updated.begin(), updated.end() - static_cast<std::ptrdiff_t>(keep));
  next = std::move(updated);
  return s;
}

double ArpaModel::score_sequence(std::span<const int> words) const {
  LmContext context = start();
  double total = 0.0;
  for (int w : words) {
    LmContext next;
    const double s = advance(context, w, next);
    if (options_.score_eos || w != eos_id_ || eos_id_ < 0) total += s;
    context = std::move(next);
  }
  return total;
}

double ArpaModel::score_sequence(const std::vector<std::string>& words) const {
  std::vector<int> ids;
  for (const auto& w : words) ids.push_back(word_id(w));
  return score_sequence(ids);
}

void ArpaModel::dump(std::ostream& out) const {
  out << "\\data\\\n";
  for (std::size_t n = 1; n <= tables_.size(); ++n) out << "ngram " << n << '=' << count(n) << '\n';
  for (std::size_t n = 1; n <= tables_.size(); ++n) {
    out << "\n\\" << n << "-grams:\n";
    for (const auto& key : ngrams(n)) {
      const Entry& e = tables_[n - 1].at(key);
      out << format_double(e.log10_prob);
      for (std::size_t i = 0; i < key.size(); ++i) out << (i == 0 ? '\t' : ' ') << words_[key[i]];
      if (e.has_backoff) out << '\t' << format_double(e.log10_backoff);
      out << '\n';
    }
  }
  out << "\n\\end\\\n";
}

ArpaModel ArpaModel::estimate_add_one(const std::vector<std::vector<std::string>>& sentences,
                                      std::size_t order, ArpaOptions options) {
  if (order < 1) throw std::invalid_argument("add-one estimate: order must be >= 1");
  ArpaModel m;
  m.options_ = options;
  m.tables_.resize(order);

  // Padded sentences; <s> only serves as context.
  std::vector<std::vector<int>> padded;
  const int eos = m.intern(kEos);
  const int bos = order > 1 ? m.intern(kBos) : -1;
  for (const auto& s : sentences) {
    std::vector<int> p;
    if (order > 1) p.push_back(bos);
    for (const auto& w : s) p.push_back(m.intern(w));
    p.push_back(eos);
    padded.push_back(std::move(p));
  }
  std::vector<int> successors;
  for (int id = 0; id < static_cast<int>(m.words_.size()); ++id)
    if (id != bos) successors.push_back(id);
  const double V = static_cast<double>(successors.size());

  // order-n counts of (history, word), n-grams never start past <s>
  std::vector<std::map<std::vector<int>, double>> counts(order);
  for (const auto& p : padded) {
    for (std::size_t end = 1; end <= p.size(); ++end) {
      for (std::size_t n = 1; n <= order && n <= end; ++n) {
        std::vector<int> key(p.begin() + static_cast<std::ptrdiff_t>(end - n),
                             p.begin() + static_cast<std::ptrdiff_t>(end));
        if (key.back() == bos) continue;
        counts[n - 1][key] += 1.0;
      }
    }
  }

  double total = 0.0;
  for (const auto& [k, c] : counts[0]) total += c;
  for (int w : successors) {
    const auto it = counts[0].find({w});
    const double c = it == counts[0].end() ? 0.0 : it->second;
    m.tables_[0][{w}] = {std::log10((c + 1.0) / (total + V)), 0.0, false};
  }
  if (bos >= 0) m.tables_[0][{bos}] = {-99.0, 0.0, false};

  for (std::size_t n = 2; n <= order; ++n) {
    std::map<std::vector<int>, double> history_totals;
    for (const auto& [k, c] : counts[n - 1]) history_totals[{k.begin(), k.end() - 1}] += c;
    std::map<std::vector<int>, std::pair<double, double>> mass;  // seen mass here / below
    for (const auto& [k, c] : counts[n - 1]) {
      const std::vector<int> h(k.begin(), k.end() - 1);
      const double p = (c + 1.0) / (history_totals[h] + V);
      m.tables_[n - 1][k] = {std::log10(p), 0.0, false};
      auto& [here, below] = mass[h];
      here += p;
      below += std::exp(m.score(k.back(), std::span<const int>(h).subspan(1)));
    }
    for (auto& [key, entry] : m.tables_[n - 2]) {
      entry.has_backoff = true;
      const auto it = mass.find(key);
      if (it == mass.end()) continue;
      const double num = 1.0 - it->second.first, den = 1.0 - it->second.second;
      entry.log10_backoff = num > 0.0 && den > 0.0 ? std::log10(num / den) : 0.0;
    }
  }
  return m;
}

ArpaTokenScorer::ArpaTokenScorer(const ArpaModel& model,
                                 const std::vector<std::string>& token_strings)
    : model_(model) {
  for (const auto& s : token_strings) word_of_token_.push_back(model.word_id(s));
}

double ArpaTokenScorer::score(const LmContext& context, int token, LmContext& next) const {
  if (token < 0 || static_cast<std::size_t>(token) >= word_of_token_.size()) {
    throw std::out_of_range("LM scorer: token id " + std::to_string(token) + " out of range");
  }
  return model_.advance(context, word_of_token_[static_cast<std::size_t>(token)], next);
}

}  // namespace tds
