// SPDX-License-Identifier: Apache-2.0
#include "tds/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace tds {

void OptimConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("optim: lr must be positive");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw std::invalid_argument("optim: lr_decay in (0, 1]");
  if (decay_epochs < 1) throw std::invalid_argument("optim: decay_epochs must be >= 1");
  if (!(grad_clip > 0.0)) throw std::invalid_argument("optim: grad_clip must be positive");
  if (batch_size < 1) throw std::invalid_argument("optim: batch_size must be >= 1");
}

void TrainConfig::validate() const {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument(std::string("train: ") + name + " in [0, 1)");
  };
  prob(p_rs, "p_rs");
  prob(p_wp, "p_wp");
  prob(label_smoothing, "label_smoothing");
  if (!(window_sigma > 0.0)) throw std::invalid_argument("train: window_sigma must be positive");
}

double learning_rate(const OptimConfig& cfg, std::size_t epoch) {
  return cfg.lr * std::pow(cfg.lr_decay, static_cast<double>(epoch / cfg.decay_epochs));
}

double sgd_step(const ParamList& params, double lr, double grad_clip) {
  double sq = 0.0;
  for (const auto& [name, p] : params) {
    for (double g : p.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in '" + name + "'");
      sq += g * g;
    }
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("gradient norm overflow");
  const double factor = norm > grad_clip ? grad_clip / norm : 1.0;
  for (const auto& [name, p] : params) {
    Tensor t = p;
    const auto g = t.grad();
    if (g.empty()) continue;
    auto v = t.mutable_data();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * factor * g[i];
    t.zero_grad();
  }
  return norm;
}

void SyntheticConfig::validate() const {
  if (vocab_size < 3) throw std::invalid_argument("synthetic: vocab_size must be >= 3");
  if (pattern_frames < 1 || feature_dim < 1) throw std::invalid_argument("synthetic: empty patterns");
  if (!(noise_std >= 0.0)) throw std::invalid_argument("synthetic: noise_std must be >= 0");
  if (min_tokens < 1 || max_tokens < min_tokens) throw std::invalid_argument("synthetic: bad length range");
}

SyntheticTask synthetic_task(const SyntheticConfig& cfg, int eos_id) {
  cfg.validate();
  Rng root(cfg.seed);
  Rng template_rng = root.derive(1), data_rng = root.derive(2);
  const std::size_t F = cfg.feature_dim, P = cfg.pattern_frames;

  SyntheticTask task;
  std::vector<int> content;
  for (std::size_t id = 0; id < cfg.vocab_size; ++id) {
    if (static_cast<int>(id) == eos_id) {
      task.templates.emplace_back();
      continue;
    }
    std::vector<double> v(P * F);
    for (auto& x : v) x = template_rng.normal();
    task.templates.push_back(Tensor::from({P, F}, std::move(v)));
    content.push_back(static_cast<int>(id));
  }

  auto make = [&](std::size_t n, const std::string& prefix) {
    Dataset out;
    for (std::size_t i = 0; i < n; ++i) {
      Utterance u;
      u.id = prefix + std::to_string(i);
      const std::size_t len = cfg.min_tokens + data_rng.uniform_int(cfg.max_tokens - cfg.min_tokens + 1);
      std::vector<double> feats;
      feats.reserve(len * P * F);
      for (std::size_t j = 0; j < len; ++j) {
        const int tok = content[data_rng.uniform_int(content.size())];
        u.tokens.push_back(tok);
        for (double x : task.templates[static_cast<std::size_t>(tok)].data())
          feats.push_back(x + cfg.noise_std * data_rng.normal());
      }
      u.features = Tensor::from({len * P, F}, std::move(feats));
      out.push_back(std::move(u));
    }
    return out;
  };
  task.train = make(cfg.train_utterances, "train-");
  task.dev = make(cfg.dev_utterances, "dev-");
  return task;
}

std::vector<ManifestRecord> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  std::vector<ManifestRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto where = [&] { return path.string() + ":" + std::to_string(line_no) + ": "; };
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) throw std::runtime_error(where() + "expected path<TAB>duration_ms<TAB>transcript");
    ManifestRecord r;
    r.path = line.substr(0, t1);
    if (r.path.is_relative()) r.path = path.parent_path() / r.path;
    try {
      std::size_t used = 0;
      const std::string d = line.substr(t1 + 1, t2 - t1 - 1);
      r.duration_ms = std::stod(d, &used);
      if (used != d.size()) throw std::invalid_argument(d);
    } catch (const std::exception&) {
      throw std::runtime_error(where() + "bad duration");
    }
    if (!(r.duration_ms > 0.0)) throw std::runtime_error(where() + "duration must be positive");
    if (!std::filesystem::exists(r.path)) throw std::runtime_error(where() + "missing file " + r.path.string());
    r.transcript = normalize_text(line.substr(t2 + 1));
    out.push_back(std::move(r));
  }
  return out;
}

Dataset load_audio_dataset(const std::vector<ManifestRecord>& records, const FeatureConfig& features) {
  Dataset out;
  for (const auto& r : records) {
    WavAudio wav = read_wav(r.path);
    if (std::abs(wav.sample_rate - features.sample_rate) > 1e-9) {
      throw std::runtime_error(r.path.string() + ": sample rate " + std::to_string(wav.sample_rate) +
                               " does not match the feature config");
    }
    Utterance u;
    u.id = r.path.stem().string();
    u.features = log_mel(wav.samples, features);
    u.transcript = r.transcript;
    out.push_back(std::move(u));
  }
  return out;
}

double diagonality(const Tensor& attention, double radius) {
  const std::size_t U = attention.dim(0), T = attention.dim(1);
  const double ratio = static_cast<double>(T) / static_cast<double>(U);
  double total = 0.0;
  for (std::size_t u = 0; u < U; ++u) {
    const double center = ratio * static_cast<double>(u);
    for (std::size_t t = 0; t < T; ++t)
      if (std::abs(static_cast<double>(t) - center) <= radius) total += attention.at(u, t);
  }
  return total / static_cast<double>(U);
}

namespace {

std::vector<std::string> token_words(std::span<const int> ids) {
  std::vector<std::string> out;
  for (int t : ids) out.push_back(std::to_string(t));
  return out;
}

TokenSequence strip_eos(TokenSequence t, int eos) {
  if (!t.empty() && t.back() == eos) t.pop_back();
  return t;
}

}  // namespace

Evaluation evaluate_greedy(const Seq2Seq& model, const Dataset& data, const WordPieceVocab* vocab) {
  NoGradGuard no_grad;
  Evaluation ev;
  const int eos = model.decoder().config().eos_id;
  Rng unused(0);
  for (const auto& u : data) {
    TokenSequence ref = u.tokens;
    if (ref.empty() && vocab) ref = encode_transcript(u.transcript, *vocab, 0.0, unused);
    const EncoderOutput enc = model.encoder().encode(u.features, unused, false);
    const TokenSequence hyp = strip_eos(greedy_decode(enc, model.decoder()), eos);
    ev.tokens += token_errors(ref, hyp);
    if (vocab) {
      ev.words += word_errors(u.transcript.empty() ? decode(ref, *vocab) : u.transcript, decode(hyp, *vocab));
    } else {
      ev.words += word_errors(token_words(ref), token_words(hyp));
    }
    TokenSequence target = ref;
    target.push_back(eos);
    const auto tf = model.decoder().forward_teacher_forced(enc, model.decoder().shift_right(target));
    ev.diagonality += diagonality(tf.attention);
  }
  if (!data.empty()) ev.diagonality /= static_cast<double>(data.size());
  return ev;
}

nlohmann::json EpochMetrics::to_json() const {
  return {{"epoch", epoch},
          {"lr", lr},
          {"train_loss", train_loss},
          {"grad_norm", grad_norm},
          {"token_accuracy", token_accuracy},
          {"dev_wer", dev_wer},
          {"diagonality", diagonality},
          {"window", window},
          {"seconds", seconds}};
}

Trainer::Trainer(Seq2Seq& model, TrainConfig train, OptimConfig optim, const WordPieceVocab* vocab)
    : model_(model), train_(train), optim_(optim), vocab_(vocab) {
  train_.validate();
  optim_.validate();
}

TokenSequence Trainer::targets_for(const Utterance& u, Rng& rng) const {
  TokenSequence t = u.tokens;
  if (t.empty()) {
    if (!vocab_) throw std::invalid_argument("utterance '" + u.id + "' has text but no vocabulary was given");
    t = encode_transcript(u.transcript, *vocab_, train_.p_wp, rng);
  }
  t.push_back(model_.decoder().config().eos_id);
  return t;
}

double Trainer::train_epoch(std::size_t epoch, const Dataset& data, double* grad_norm,
                            const std::function<bool(std::size_t)>& after_batch) {
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  Rng rng = Rng(train_.seed).derive(epoch + 1);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(i)]);

  const double lr = learning_rate(optim_, epoch);
  const bool window = epoch < train_.window_epochs;
  const ParamList params = model_.parameters();
  const auto& dec = model_.decoder();
  const DecoderConfig& dcfg = dec.config();

  double loss_sum = 0.0, norm_sum = 0.0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < order.size(); start += optim_.batch_size) {
    const std::size_t B = std::min(optim_.batch_size, order.size() - start);
    std::vector<Tensor> feats;
    for (std::size_t b = 0; b < B; ++b) feats.push_back(data[order[start + b]].features);
    const auto encs = model_.encoder().encode_batch(feats, rng, true);
    std::vector<Tensor> losses;
    for (std::size_t b = 0; b < B; ++b) {
      const TokenSequence target = targets_for(data[order[start + b]], rng);
      const TokenSequence inputs =
          dec.shift_right(random_sample_targets(target, train_.p_rs, dcfg.n_tokens, dcfg.eos_id, rng));
      const auto out = dec.forward_teacher_forced(
          encs[b], inputs, window ? std::optional<double>(train_.window_sigma) : std::nullopt);
      losses.push_back(label_smoothed_loss(out.log_probs, target, train_.label_smoothing));
    }
    Tensor loss = losses.size() == 1 ? losses.front() : scale(sum(concat(losses, 0)), 1.0 / B);
    loss.backward();
    loss_sum += loss.item();
    norm_sum += sgd_step(params, lr, optim_.grad_clip);
    ++batches;
    if (after_batch && !after_batch(batches)) break;
  }
  if (grad_norm) *grad_norm = norm_sum / static_cast<double>(batches);
  return loss_sum / static_cast<double>(batches);
}

std::vector<EpochMetrics> Trainer::fit(const Dataset& train, const Dataset& dev, std::size_t first_epoch,
                                       const TrainOptions& options) {
  std::vector<EpochMetrics> history;
  std::ofstream metrics;
  if (options.metrics) {
    metrics.open(*options.metrics, std::ios::app);
    if (!metrics) throw std::runtime_error("cannot open metrics file " + options.metrics->string());
  }
  for (std::size_t epoch = first_epoch; epoch < optim_.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochMetrics m;
    m.epoch = epoch;
    m.lr = learning_rate(optim_, epoch);
    m.window = epoch < train_.window_epochs;
    try {
      m.train_loss = train_epoch(epoch, train, &m.grad_norm);
    } catch (const NumericError& e) {
      std::string msg = std::string("training diverged in epoch ") + std::to_string(epoch) + ": " + e.what();
      if (options.checkpoint && epoch > first_epoch) msg += "; last good checkpoint: " + options.checkpoint->string();
      throw std::runtime_error(msg);
    }
    if (!dev.empty()) {
      const Evaluation ev = evaluate_greedy(model_, dev, vocab_);
      m.token_accuracy = ev.token_accuracy();
      m.dev_wer = ev.words.rate();
      m.diagonality = ev.diagonality;
    }
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (options.checkpoint) {
      nlohmann::json header = options.header;
      header["next_epoch"] = epoch + 1;
      save_checkpoint(*options.checkpoint, model_.to_checkpoint(header));
    }
    if (metrics.is_open()) metrics << m.to_json().dump() << '\n' << std::flush;
    history.push_back(m);
    if (options.on_epoch && !options.on_epoch(m)) break;
  }
  return history;
}

std::size_t Trainer::resume_epoch(const Checkpoint& ckpt) {
  if (!ckpt.header.contains("next_epoch")) throw std::runtime_error("checkpoint was not written by training");
  return ckpt.header.at("next_epoch").get<std::size_t>();
}

}  // namespace tds
