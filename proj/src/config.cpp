// SPDX-License-Identifier: Apache-2.0
#include "tds/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace tds {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& v) {
  double out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw std::invalid_argument("expected a number");
  return out;
}

std::uint64_t to_uint(const std::string& v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw std::invalid_argument("expected a non-negative integer");
  return out;
}

int to_int(const std::string& v) {
  int out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw std::invalid_argument("expected an integer");
  return out;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "yes" || v == "on" || v == "1") return true;
  if (v == "false" || v == "no" || v == "off" || v == "0") return false;
  throw std::invalid_argument("expected true or false");
}

bool is_off(const std::string& v) { return v == "off" || v == "none"; }

// "2x10, 3x14" -> {{2, 10}, {3, 14}}
std::vector<std::pair<std::size_t, std::size_t>> to_groups(const std::string& v) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    const auto x = item.find('x');
    if (x == std::string::npos) throw std::invalid_argument("groups are written as blocks x channels");
    out.emplace_back(to_uint(trim(item.substr(0, x))), to_uint(trim(item.substr(x + 1))));
  }
  if (out.empty()) throw std::invalid_argument("no groups");
  return out;
}

std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

using Setter = std::function<void(const std::string&)>;

std::map<std::string, Setter> setters(RunConfig& c, const std::filesystem::path& base) {
  auto path = [base](std::optional<std::filesystem::path>& slot) {
    return [&slot, base](const std::string& v) {
      std::filesystem::path p(v);
      slot = p.is_relative() && !base.empty() ? base / p : p;
    };
  };
  auto& e = c.model.encoder;
  auto& t = c.train;
  auto& o = c.optim;
  auto& b = c.beam;
  auto& s = c.synthetic;
  auto& f = c.features;
  return {
      {"encoder.input_dim", [&](const std::string& v) { e.input_dim = to_uint(v); }},
      {"encoder.groups", [&](const std::string& v) { e.groups = to_groups(v); }},
      {"encoder.kernel", [&](const std::string& v) { e.kernel = to_uint(v); }},
      {"encoder.stride", [&](const std::string& v) { e.stride = to_uint(v); }},
      {"encoder.attention_dim", [&](const std::string& v) { e.attention_dim = to_uint(v); }},
      {"encoder.dropout", [&](const std::string& v) { e.dropout = to_double(v); }},
      {"encoder.subsample_dropout", [&](const std::string& v) { e.subsample_dropout = to_bool(v); }},
      {"encoder.ln_eps", [&](const std::string& v) { e.ln_eps = to_double(v); }},
      {"decoder.n_tokens", [&](const std::string& v) { c.model.decoder.n_tokens = to_uint(v); }},
      {"decoder.eos_id", [&](const std::string& v) { c.model.decoder.eos_id = to_int(v); }},
      {"train.p_rs", [&](const std::string& v) { t.p_rs = to_double(v); }},
      {"train.p_wp", [&](const std::string& v) { t.p_wp = to_double(v); }},
      {"train.label_smoothing", [&](const std::string& v) { t.label_smoothing = to_double(v); }},
      {"train.window_epochs", [&](const std::string& v) { t.window_epochs = to_uint(v); }},
      {"train.window_sigma", [&](const std::string& v) { t.window_sigma = to_double(v); }},
      {"train.seed", [&](const std::string& v) { t.seed = to_uint(v); }},
      {"optim.lr", [&](const std::string& v) { o.lr = to_double(v); }},
      {"optim.lr_decay", [&](const std::string& v) { o.lr_decay = to_double(v); }},
      {"optim.decay_epochs", [&](const std::string& v) { o.decay_epochs = to_uint(v); }},
      {"optim.grad_clip", [&](const std::string& v) { o.grad_clip = to_double(v); }},
      {"optim.batch_size", [&](const std::string& v) { o.batch_size = to_uint(v); }},
      {"optim.epochs", [&](const std::string& v) { o.epochs = to_uint(v); }},
      {"beam.beam_size", [&](const std::string& v) { b.beam_size = to_uint(v); }},
      {"beam.lm_weight", [&](const std::string& v) { b.lm_weight = to_double(v); }},
      {"beam.token_bonus", [&](const std::string& v) { b.token_bonus = to_double(v); }},
      {"beam.eos_factor",
       [&](const std::string& v) { b.eos_factor = is_off(v) ? std::nullopt : std::optional(to_double(v)); }},
      {"beam.candidate_gap",
       [&](const std::string& v) { b.candidate_gap = is_off(v) ? std::nullopt : std::optional(to_double(v)); }},
      {"beam.attention_limit",
       [&](const std::string& v) {
         b.attention_limit = is_off(v) ? std::nullopt : std::optional<std::size_t>(to_uint(v));
       }},
      {"beam.beam_threshold",
       [&](const std::string& v) { b.beam_threshold = is_off(v) ? std::nullopt : std::optional(to_double(v)); }},
      {"beam.max_out_len",
       [&](const std::string& v) {
         b.max_out_len = is_off(v) ? std::nullopt : std::optional<std::size_t>(to_uint(v));
       }},
      {"beam.count_eos_in_length", [&](const std::string& v) { b.count_eos_in_length = to_bool(v); }},
      {"beam.lm_scores_eos", [&](const std::string& v) { b.lm_scores_eos = to_bool(v); }},
      {"synthetic.vocab_size", [&](const std::string& v) { s.vocab_size = to_uint(v); }},
      {"synthetic.pattern_frames", [&](const std::string& v) { s.pattern_frames = to_uint(v); }},
      {"synthetic.noise_std", [&](const std::string& v) { s.noise_std = to_double(v); }},
      {"synthetic.train_utterances", [&](const std::string& v) { s.train_utterances = to_uint(v); }},
      {"synthetic.dev_utterances", [&](const std::string& v) { s.dev_utterances = to_uint(v); }},
      {"synthetic.min_tokens", [&](const std::string& v) { s.min_tokens = to_uint(v); }},
      {"synthetic.max_tokens", [&](const std::string& v) { s.max_tokens = to_uint(v); }},
      {"synthetic.seed", [&](const std::string& v) { s.seed = to_uint(v); }},
      {"features.sample_rate", [&](const std::string& v) { f.sample_rate = to_double(v); }},
      {"features.n_mels", [&](const std::string& v) { f.n_mels = to_uint(v); }},
      {"features.window_ms", [&](const std::string& v) { f.window_ms = to_double(v); }},
      {"features.hop_ms", [&](const std::string& v) { f.hop_ms = to_double(v); }},
      {"features.log_floor", [&](const std::string& v) { f.log_floor = to_double(v); }},
      {"features.pre_emphasis", [&](const std::string& v) { f.pre_emphasis = to_bool(v); }},
      {"features.pre_emphasis_coeff", [&](const std::string& v) { f.pre_emphasis_coeff = to_double(v); }},
      {"features.normalize", [&](const std::string& v) { f.normalize = to_bool(v); }},
      {"data.train_manifest", path(c.data.train_manifest)},
      {"data.dev_manifest", path(c.data.dev_manifest)},
      {"data.vocab", path(c.data.vocab)},
      {"data.lm", path(c.data.lm)},
  };
}

}  // namespace

RunConfig parse_config(std::istream& in, const std::filesystem::path& base_dir) {
  RunConfig cfg;
  const auto table = setters(cfg, base_dir);
  std::string raw, section;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto where = [&] { return "config line " + std::to_string(line_no) + ": "; };
    std::string line = raw;
    if (const auto c = line.find_first_of("#;"); c != std::string::npos) line.resize(c);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw std::runtime_error(where() + "unterminated section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      bool known = false;
      for (const auto& [k, s] : table) known = known || k.rfind(section + ".", 0) == 0;
      if (!known) throw std::runtime_error(where() + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error(where() + "expected key = value");
    if (section.empty()) throw std::runtime_error(where() + "key outside a section");
    const std::string key = section + "." + trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    const auto it = table.find(key);
    if (it == table.end()) throw std::runtime_error(where() + "unknown key '" + key + "'");
    try {
      it->second(value);
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(where() + key + " = '" + value + "': " + e.what());
    }
  }
  try {
    cfg.model.encoder.validate();
    cfg.train.validate();
    cfg.optim.validate();
    cfg.beam.validate();
    cfg.synthetic.validate();
    cfg.features.validate();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("invalid config: ") + e.what());
  }
  cfg.model.decoder.attention_dim = cfg.model.encoder.attention_dim;
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  return parse_config(in, path.parent_path());
}

std::string format_config(const RunConfig& c) {
  std::ostringstream out;
  auto opt = [](const auto& o) { return o ? fmt(static_cast<double>(*o)) : std::string("off"); };
  auto flag = [](bool v) { return v ? "true" : "false"; };
  const auto& e = c.model.encoder;
  std::string groups;
  for (const auto& [n, ch] : e.groups) groups += (groups.empty() ? "" : ", ") + std::to_string(n) + "x" + std::to_string(ch);
  out << "[encoder]\ninput_dim = " << e.input_dim << "\ngroups = " << groups << "\nkernel = " << e.kernel
      << "\nstride = " << e.stride << "\nattention_dim = " << e.attention_dim << "\ndropout = " << fmt(e.dropout)
      << "\nsubsample_dropout = " << flag(e.subsample_dropout) << "\nln_eps = " << fmt(e.ln_eps) << "\n\n";
  out << "[decoder]\nn_tokens = " << c.model.decoder.n_tokens << "\neos_id = " << c.model.decoder.eos_id << "\n\n";
  const auto& t = c.train;
  out << "[train]\np_rs = " << fmt(t.p_rs) << "\np_wp = " << fmt(t.p_wp) << "\nlabel_smoothing = "
      << fmt(t.label_smoothing) << "\nwindow_epochs = " << t.window_epochs << "\nwindow_sigma = "
      << fmt(t.window_sigma) << "\nseed = " << t.seed << "\n\n";
  const auto& o = c.optim;
  out << "[optim]\nlr = " << fmt(o.lr) << "\nlr_decay = " << fmt(o.lr_decay) << "\ndecay_epochs = " << o.decay_epochs
      << "\ngrad_clip = " << fmt(o.grad_clip) << "\nbatch_size = " << o.batch_size << "\nepochs = " << o.epochs
      << "\n\n";
  const auto& b = c.beam;
  out << "[beam]\nbeam_size = " << b.beam_size << "\nlm_weight = " << fmt(b.lm_weight) << "\ntoken_bonus = "
      << fmt(b.token_bonus) << "\neos_factor = " << opt(b.eos_factor) << "\ncandidate_gap = "
      << opt(b.candidate_gap) << "\nattention_limit = " << opt(b.attention_limit) << "\nbeam_threshold = "
      << opt(b.beam_threshold) << "\nmax_out_len = " << opt(b.max_out_len) << "\ncount_eos_in_length = "
      << flag(b.count_eos_in_length) << "\nlm_scores_eos = " << flag(b.lm_scores_eos) << "\n\n";
  const auto& s = c.synthetic;
  out << "[synthetic]\nvocab_size = " << s.vocab_size << "\npattern_frames = " << s.pattern_frames
      << "\nnoise_std = " << fmt(s.noise_std) << "\ntrain_utterances = " << s.train_utterances
      << "\ndev_utterances = " << s.dev_utterances << "\nmin_tokens = " << s.min_tokens << "\nmax_tokens = "
      << s.max_tokens << "\nseed = " << s.seed << "\n\n";
  const auto& f = c.features;
  out << "[features]\nsample_rate = " << fmt(f.sample_rate) << "\nn_mels = " << f.n_mels << "\nwindow_ms = "
      << fmt(f.window_ms) << "\nhop_ms = " << fmt(f.hop_ms) << "\nlog_floor = " << fmt(f.log_floor)
      << "\npre_emphasis = " << flag(f.pre_emphasis) << "\npre_emphasis_coeff = " << fmt(f.pre_emphasis_coeff)
      << "\nnormalize = " << flag(f.normalize) << "\n";
  const auto& d = c.data;
  if (d.train_manifest || d.dev_manifest || d.vocab || d.lm) {
    out << "\n[data]\n";
    if (d.train_manifest) out << "train_manifest = " << d.train_manifest->string() << "\n";
    if (d.dev_manifest) out << "dev_manifest = " << d.dev_manifest->string() << "\n";
    if (d.vocab) out << "vocab = " << d.vocab->string() << "\n";
    if (d.lm) out << "lm = " << d.lm->string() << "\n";
  }
  return out.str();
}

}  // namespace tds
