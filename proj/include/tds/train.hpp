// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tds/beam_search.hpp"
#include "tds/frontend.hpp"
#include "tds/model.hpp"
#include "tds/wer.hpp"
#include "tds/wordpiece.hpp"

namespace tds {

struct OptimConfig {
  double lr = 0.05;
  double lr_decay = 0.5;
  std::size_t decay_epochs = 40;
  double grad_clip = 15.0;
  std::size_t batch_size = 8;
  std::size_t epochs = 100;

  void validate() const;
};

struct TrainConfig {
  double p_rs = 0.01;             // random sampling of decoder inputs
  double p_wp = 0.01;             // word-piece sampling per word
  double label_smoothing = 0.05;
  std::size_t window_epochs = 3;  // soft window for the first epochs
  double window_sigma = 4.0;
  std::uint64_t seed = 1;

  void validate() const;
};

/// lr * lr_decay ^ floor(epoch / decay_epochs), epochs counted from zero.
double learning_rate(const OptimConfig& cfg, std::size_t epoch);

/// Clips the global gradient norm to `grad_clip`, applies p -= lr * grad and
/// zeroes the gradients. Returns the norm before clipping. Throws
/// NumericError without touching any parameter when a gradient is not
/// finite.
double sgd_step(const ParamList& params, double lr, double grad_clip);

struct Utterance {
  std::string id;
  Tensor features;      // [T, input_dim]
  TokenSequence tokens; // reference tokens without EOS; empty for text-only
  std::string transcript;
};

using Dataset = std::vector<Utterance>;

struct SyntheticConfig {
  std::size_t vocab_size = 30;  // output classes, EOS included
  std::size_t pattern_frames = 8;
  double noise_std = 0.3;
  std::size_t train_utterances = 2000;
  std::size_t dev_utterances = 200;
  std::size_t min_tokens = 1;
  std::size_t max_tokens = 6;
  std::size_t feature_dim = 80;
  std::uint64_t seed = 7;

  void validate() const;
};

/// Each content token (every id but EOS) owns a fixed Gaussian feature
/// template of pattern_frames frames; an utterance concatenates the
/// templates of a random token string and adds Gaussian noise.
struct SyntheticTask {
  std::vector<Tensor> templates;  // by token id; EOS has none
  Dataset train;
  Dataset dev;
};

SyntheticTask synthetic_task(const SyntheticConfig& cfg, int eos_id = WordPieceVocab::kEos);

struct ManifestRecord {
  std::filesystem::path path;
  double duration_ms = 0.0;
  std::string transcript;
};

/// Lines "path<TAB>duration_ms<TAB>transcript"; relative paths resolve
/// against the manifest's directory. Throws naming the line on a missing
/// file, bad duration, or malformed line.
std::vector<ManifestRecord> load_manifest(const std::filesystem::path& path);

/// Reads each WAV file and computes log-mel features.
Dataset load_audio_dataset(const std::vector<ManifestRecord>& records, const FeatureConfig& features);

/// Attention mass within +-radius encoded frames of (T'/U) u, averaged
/// over rows. attention: [U, T'].
double diagonality(const Tensor& attention, double radius = 3.0);

struct Evaluation {
  ErrorCounts tokens;
  ErrorCounts words;
  double diagonality = 0.0;
  double token_accuracy() const { return 1.0 - tokens.rate(); }
};

/// Greedy decoding of every utterance. Word errors use the vocabulary's
/// surface text when given, otherwise token ids stand in for words.
Evaluation evaluate_greedy(const Seq2Seq& model, const Dataset& data,
                           const WordPieceVocab* vocab);

struct EpochMetrics {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double grad_norm = 0.0;
  double token_accuracy = 0.0;
  double dev_wer = 0.0;
  double diagonality = 0.0;
  bool window = false;
  double seconds = 0.0;

  nlohmann::json to_json() const;
};

struct TrainOptions {
  /// Written after every epoch when set.
  std::optional<std::filesystem::path> checkpoint;
  /// One JSON object per line per epoch, appended.
  std::optional<std::filesystem::path> metrics;
  /// Extra header fields stored with each checkpoint.
  nlohmann::json header = nlohmann::json::object();
  /// Called after each epoch; returning false stops training.
  std::function<bool(const EpochMetrics&)> on_epoch;
};

class Trainer {
 public:
  Trainer(Seq2Seq& model, TrainConfig train, OptimConfig optim,
          const WordPieceVocab* vocab = nullptr);

  /// Teacher-forced targets for one utterance: word-piece sampled when the
  /// utterance carries text, with EOS appended.
  TokenSequence targets_for(const Utterance& u, Rng& rng) const;

  /// One pass over `data` in a seed-determined order. Returns the mean loss.
  /// `after_batch` receives the number of batches done so far; returning
  /// false ends the epoch early.
  double train_epoch(std::size_t epoch, const Dataset& data, double* grad_norm = nullptr,
                     const std::function<bool(std::size_t)>& after_batch = {});

  /// Epochs [first_epoch, optim.epochs). Checkpoints record the next epoch
  /// so a resumed run repeats exactly what an uninterrupted run would do.
  std::vector<EpochMetrics> fit(const Dataset& train, const Dataset& dev,
                                std::size_t first_epoch = 0, const TrainOptions& options = {});

  /// Next epoch recorded in a checkpoint written by fit().
  static std::size_t resume_epoch(const Checkpoint& ckpt);

 private:
  Seq2Seq& model_;
  TrainConfig train_;
  OptimConfig optim_;
  const WordPieceVocab* vocab_;
};

}  // namespace tds
