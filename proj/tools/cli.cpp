// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "tds/beam_search.hpp"
#include "tds/config.hpp"
#include "tds/ngram.hpp"
#include "tds/train.hpp"

namespace tds::cli {

namespace {

/// Bad input detected after argument parsing (invalid config, missing data).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

RunConfig read_config(const std::string& path) {
  try {
    if (path.empty()) {
      std::istringstream empty;
      return parse_config(empty);
    }
    return load_config(path);
  } catch (const std::runtime_error& e) {
    throw UsageError(e.what());
  }
}

nlohmann::json vocab_json(const WordPieceVocab& v) {
  nlohmann::json pieces = nlohmann::json::array(), probs = nlohmann::json::array();
  for (std::size_t i = 2; i < v.size(); ++i) {
    pieces.push_back(v.pieces()[i]);
    probs.push_back(v.log_probs()[i]);
  }
  return {{"pieces", pieces}, {"log_probs", probs}};
}

WordPieceVocab vocab_from_json(const nlohmann::json& j) {
  std::vector<std::pair<std::string, double>> pieces;
  for (std::size_t i = 0; i < j.at("pieces").size(); ++i)
    pieces.emplace_back(j.at("pieces")[i].get<std::string>(), j.at("log_probs")[i].get<double>());
  return WordPieceVocab::from_pieces(pieces);
}

/// The data a command works on plus the vocabulary that renders it.
struct Corpus {
  Dataset train;
  Dataset dev;
  std::optional<WordPieceVocab> vocab;
  std::size_t n_tokens = 0;
};

Corpus synthetic_corpus(const RunConfig& cfg) {
  SyntheticConfig sc = cfg.synthetic;
  sc.feature_dim = cfg.model.encoder.input_dim;
  SyntheticTask task = synthetic_task(sc, cfg.model.decoder.eos_id);
  return {std::move(task.train), std::move(task.dev), std::nullopt, sc.vocab_size};
}

Dataset manifest_dataset(const std::filesystem::path& path, const RunConfig& cfg) {
  return load_audio_dataset(load_manifest(path), cfg.features);
}

/// Evaluation data: synthetic dev set, --manifest, or the configured dev
/// manifest.
Corpus eval_corpus(const RunConfig& cfg, bool synthetic, const std::string& manifest,
                   const nlohmann::json& header) {
  if (synthetic) return synthetic_corpus(cfg);
  Corpus c;
  std::filesystem::path path;
  if (!manifest.empty()) path = manifest;
  else if (cfg.data.dev_manifest) path = *cfg.data.dev_manifest;
  else throw UsageError("no evaluation data: pass --synthetic or --manifest");
  c.dev = manifest_dataset(path, cfg);
  if (header.contains("vocab")) c.vocab = vocab_from_json(header.at("vocab"));
  else if (cfg.data.vocab) c.vocab = WordPieceVocab::load(*cfg.data.vocab);
  else throw UsageError("manifest data needs a word-piece vocabulary");
  return c;
}

std::string render(std::span<const int> tokens, const std::optional<WordPieceVocab>& vocab, int eos) {
  if (vocab) return decode(tokens, *vocab);
  std::string out;
  for (int t : tokens) {
    if (t == eos) break;
    out += (out.empty() ? "" : " ") + std::to_string(t);
  }
  return out;
}

std::string reference_text(const Utterance& u, const std::optional<WordPieceVocab>& vocab, int eos) {
  return u.transcript.empty() ? render(u.tokens, vocab, eos) : u.transcript;
}

/// Surface strings of decoder tokens for LM lookup.
std::vector<std::string> token_strings(std::size_t n_tokens, const std::optional<WordPieceVocab>& vocab, int eos) {
  if (vocab) return vocab->pieces();
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n_tokens; ++i)
    out.push_back(static_cast<int>(i) == eos ? ArpaModel::kEos : std::to_string(i));
  return out;
}

std::vector<std::size_t> parse_sizes(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const unsigned long v = std::stoul(item, &used);
      if (used != item.size() || v == 0) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw UsageError("bad beam size '" + item + "'");
    }
  }
  if (out.empty()) throw UsageError("no beam sizes given");
  return out;
}

/// Parses "start:stop:step" into the inclusive list of LM weights.
std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> parts;
  std::stringstream ss(text);
  std::string item;
  try {
    while (std::getline(ss, item, ':')) parts.push_back(std::stod(item));
  } catch (const std::exception&) {
    throw UsageError("bad LM weight grid '" + text + "'");
  }
  if (parts.size() != 3 || parts[2] <= 0.0 || parts[1] < parts[0]) {
    throw UsageError("LM weight grid must be start:stop:step with step > 0 and stop >= start");
  }
  std::vector<double> out;
  const auto n = static_cast<std::size_t>(std::floor((parts[1] - parts[0]) / parts[2] + 1e-9));
  for (std::size_t i = 0; i <= n; ++i) out.push_back(parts[0] + static_cast<double>(i) * parts[2]);
  return out;
}

std::unique_ptr<Seq2Seq> load_model(const std::string& path, nlohmann::json* header) {
  Checkpoint ckpt = load_checkpoint(path);
  if (header) *header = ckpt.header;
  return Seq2Seq::from_checkpoint(ckpt);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Time-depth separable sequence-to-sequence speech recognition", "tds"};
  app.require_subcommand(1);
  std::string config_path;

  // train
  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  std::string train_ckpt, metrics_path;
  bool train_synthetic = false, resume = false;
  std::optional<std::size_t> epochs_override;
  train->add_option("-c,--config", config_path, "Config file")->check(CLI::ExistingFile);
  train->add_option("--checkpoint", train_ckpt, "Checkpoint written after every epoch")->required();
  train->add_option("--metrics", metrics_path, "Append per-epoch JSON lines here");
  train->add_flag("--synthetic", train_synthetic, "Train on the synthetic task");
  train->add_flag("--resume", resume, "Continue from --checkpoint");
  train->add_option("--epochs", epochs_override, "Override optim.epochs");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Greedy (and optionally beam) error rates");
  std::string eval_ckpt, eval_manifest;
  bool eval_synthetic = false;
  std::optional<std::size_t> eval_beam;
  evaluate->add_option("-c,--config", config_path, "Config file")->check(CLI::ExistingFile);
  evaluate->add_option("--checkpoint", eval_ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--manifest", eval_manifest, "Evaluation manifest")->check(CLI::ExistingFile);
  evaluate->add_flag("--synthetic", eval_synthetic, "Use the synthetic dev set");
  evaluate->add_option("--beam", eval_beam, "Also report the WER of this beam size");

  // decode
  auto* dec = app.add_subcommand("decode", "Beam search decoding with optional LM fusion");
  std::string dec_ckpt, dec_manifest, dec_lm, beam_sizes;
  bool dec_synthetic = false;
  std::optional<double> lm_weight, token_bonus;
  std::size_t nbest = 5;
  dec->add_option("-c,--config", config_path, "Config file")->check(CLI::ExistingFile);
  dec->add_option("--checkpoint", dec_ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  dec->add_option("--manifest", dec_manifest, "Manifest to decode")->check(CLI::ExistingFile);
  dec->add_flag("--synthetic", dec_synthetic, "Decode the synthetic dev set");
  dec->add_option("--lm", dec_lm, "ARPA language model")->check(CLI::ExistingFile);
  dec->add_option("--lm-weight", lm_weight, "Override beam.lm_weight");
  dec->add_option("--token-bonus", token_bonus, "Override beam.token_bonus");
  dec->add_option("--beam-sizes", beam_sizes, "Comma-separated beam sizes, e.g. 1,80");
  std::string lm_grid;
  dec->add_option("--lm-weight-grid", lm_grid, "Sweep the LM weight over start:stop:step");
  dec->add_option("--nbest", nbest, "Hypotheses listed per utterance")->check(CLI::PositiveNumber);

  // tokenize
  auto* tokenize = app.add_subcommand("tokenize", "Word-piece segmentation of text lines");
  std::string vocab_path;
  double p_wp = 0.0;
  std::uint64_t tok_seed = 1;
  std::vector<std::string> tok_text;
  tokenize->add_option("--vocab", vocab_path, "Word-piece vocabulary")->required()->check(CLI::ExistingFile);
  tokenize->add_option("--p-wp", p_wp, "Word-piece sampling probability")->check(CLI::Range(0.0, 1.0));
  tokenize->add_option("--seed", tok_seed, "Sampling seed");
  tokenize->add_option("text", tok_text, "Text (default: lines from stdin)");

  // lm-score
  auto* lm_score = app.add_subcommand("lm-score", "Natural-log LM scores of text lines");
  std::string lm_path;
  bool sentence_start = false, no_eos = false;
  std::vector<std::string> lm_text;
  lm_score->add_option("--lm", lm_path, "ARPA language model")->required()->check(CLI::ExistingFile);
  lm_score->add_flag("--sentence-start", sentence_start, "Score from the <s> context");
  lm_score->add_flag("--no-eos", no_eos, "Do not score </s>");
  lm_score->add_option("text", lm_text, "Sentences (default: lines from stdin)");

  // features
  auto* features = app.add_subcommand("features", "Log-mel features of a WAV file");
  std::string wav_path, feat_out;
  features->add_option("-c,--config", config_path, "Config file")->check(CLI::ExistingFile);
  features->add_option("wav", wav_path, "16-bit PCM mono WAV")->required()->check(CLI::ExistingFile);
  features->add_option("-o,--output", feat_out, "Write a tensor file instead of text");

  // receptive-field
  auto* rf = app.add_subcommand("receptive-field", "Input frames seen by one encoded step");
  std::optional<std::size_t> rf_kernel;
  bool rf_sweep = false;
  rf->add_option("-c,--config", config_path, "Config file")->check(CLI::ExistingFile);
  rf->add_option("--kernel", rf_kernel, "Override the kernel size");
  rf->add_flag("--sweep", rf_sweep, "Report kernels 5, 9, 13, 17 and 21");

  std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*rf) {
      RunConfig cfg = read_config(config_path);
      std::vector<std::size_t> kernels;
      if (rf_sweep) kernels = {5, 9, 13, 17, 21};
      else kernels = {rf_kernel.value_or(cfg.model.encoder.kernel)};
      for (std::size_t k : kernels) {
        EncoderConfig e = cfg.model.encoder;
        e.kernel = k;
        try {
          e.validate();
        } catch (const std::invalid_argument& ex) {
          throw UsageError(ex.what());
        }
        out << "kernel " << k << "\treceptive_field " << receptive_field(e) << "\tsubsample_factor "
            << e.subsample_factor() << "\n";
      }
      return kExitOk;
    }

    if (*features) {
      RunConfig cfg = read_config(config_path);
      WavAudio wav = read_wav(wav_path);
      FeatureConfig fc = cfg.features;
      fc.sample_rate = wav.sample_rate;
      Tensor f = log_mel(wav.samples, fc);
      if (!feat_out.empty()) {
        Checkpoint c;
        c.header["features"] = {{"n_mels", fc.n_mels}, {"sample_rate", fc.sample_rate}};
        c.put("features", f);
        save_checkpoint(feat_out, c);
        out << "frames " << f.dim(0) << "\tmels " << f.dim(1) << "\n";
      } else {
        out << std::setprecision(17);
        for (std::size_t t = 0; t < f.dim(0); ++t) {
          for (std::size_t m = 0; m < f.dim(1); ++m) out << (m ? "\t" : "") << f.at(t, m);
          out << "\n";
        }
      }
      return kExitOk;
    }

    if (*tokenize) {
      WordPieceVocab vocab = WordPieceVocab::load(vocab_path);
      Rng rng(tok_seed);
      auto emit = [&](const std::string& line) {
        const TokenSequence ids = encode_transcript(line, vocab, p_wp, rng);
        std::string id_text, piece_text;
        for (int id : ids) {
          id_text += (id_text.empty() ? "" : " ") + std::to_string(id);
          piece_text += (piece_text.empty() ? "" : " ") + vocab.piece(id);
        }
        out << id_text << "\t" << piece_text << "\n";
      };
      if (!tok_text.empty()) {
        std::string joined;
        for (const auto& t : tok_text) joined += (joined.empty() ? "" : " ") + t;
        emit(joined);
      } else {
        for (std::string line; std::getline(std::cin, line);) emit(line);
      }
      return kExitOk;
    }

    if (*lm_score) {
      ArpaOptions opts;
      opts.sentence_start_context = sentence_start;
      opts.score_eos = !no_eos;
      ArpaModel lm = ArpaModel::load(lm_path, opts);
      double total = 0.0;
      auto emit = [&](const std::string& line) {
        std::vector<std::string> words = split_words(line);
        words.push_back(ArpaModel::kEos);
        const double s = lm.score_sequence(words);
        total += s;
        out << std::setprecision(17) << s << "\t" << normalize_text(line) << "\n";
      };
      if (!lm_text.empty()) {
        for (const auto& t : lm_text) emit(t);
      } else {
        for (std::string line; std::getline(std::cin, line);) emit(line);
      }
      out << "total\t" << std::setprecision(17) << total << "\n";
      return kExitOk;
    }

    if (*train) {
      RunConfig cfg = read_config(config_path);
      if (epochs_override) cfg.optim.epochs = *epochs_override;
      Corpus corpus;
      nlohmann::json header;
      if (train_synthetic || !cfg.data.train_manifest) {
        corpus = synthetic_corpus(cfg);
        header["data"] = "synthetic";
      } else {
        if (!cfg.data.vocab) throw UsageError("data.train_manifest needs data.vocab");
        corpus.vocab = WordPieceVocab::load(*cfg.data.vocab);
        corpus.n_tokens = corpus.vocab->size();
        corpus.train = manifest_dataset(*cfg.data.train_manifest, cfg);
        if (cfg.data.dev_manifest) corpus.dev = manifest_dataset(*cfg.data.dev_manifest, cfg);
        header["vocab"] = vocab_json(*corpus.vocab);
      }
      if (cfg.model.decoder.n_tokens == 0) cfg.model.decoder.n_tokens = corpus.n_tokens;
      if (cfg.model.decoder.n_tokens != corpus.n_tokens) {
        throw UsageError("decoder.n_tokens does not match the data's vocabulary");
      }

      std::unique_ptr<Seq2Seq> model;
      std::size_t first_epoch = 0;
      if (resume) {
        Checkpoint ckpt = load_checkpoint(train_ckpt);
        first_epoch = Trainer::resume_epoch(ckpt);
        model = Seq2Seq::from_checkpoint(ckpt);
      } else {
        Rng init = Rng(cfg.train.seed).derive(0);
        try {
          model = std::make_unique<Seq2Seq>(cfg.model, init);
        } catch (const std::invalid_argument& e) {
          throw UsageError(e.what());
        }
      }
      const WordPieceVocab* vocab = corpus.vocab ? &*corpus.vocab : nullptr;
      Trainer trainer(*model, cfg.train, cfg.optim, vocab);
      TrainOptions opts;
      opts.checkpoint = train_ckpt;
      if (!metrics_path.empty()) opts.metrics = metrics_path;
      opts.header = header;
      opts.on_epoch = [&](const EpochMetrics& m) {
        out << m.to_json().dump() << "\n" << std::flush;
        return true;
      };
      trainer.fit(corpus.train, corpus.dev, first_epoch, opts);
      return kExitOk;
    }

    if (*evaluate) {
      RunConfig cfg = read_config(config_path);
      nlohmann::json header;
      auto model = load_model(eval_ckpt, &header);
      const bool synthetic = eval_synthetic || (eval_manifest.empty() && header.value("data", "") == "synthetic");
      Corpus corpus = eval_corpus(cfg, synthetic, eval_manifest, header);
      const WordPieceVocab* vocab = corpus.vocab ? &*corpus.vocab : nullptr;
      const Evaluation ev = evaluate_greedy(*model, corpus.dev, vocab);
      nlohmann::json result = {{"utterances", corpus.dev.size()},
                               {"token_accuracy", ev.token_accuracy()},
                               {"token_error_rate", ev.tokens.rate()},
                               {"wer", ev.words.rate()},
                               {"diagonality", ev.diagonality}};
      if (eval_beam) {
        BeamConfig bc = cfg.beam;
        bc.beam_size = *eval_beam;
        const int eos = model->decoder().config().eos_id;
        ErrorCounts words;
        Rng unused(0);
        for (const auto& u : corpus.dev) {
          const auto enc = model->encoder().encode(u.features, unused, false);
          const BeamResult r = beam_decode(enc, model->decoder(), nullptr, bc);
          words += word_errors(reference_text(u, corpus.vocab, eos), render(r.best().tokens, corpus.vocab, eos));
        }
        result["beam_size"] = *eval_beam;
        result["beam_wer"] = words.rate();
      }
      out << result.dump() << "\n";
      return kExitOk;
    }

    if (*dec) {
      RunConfig cfg = read_config(config_path);
      if (lm_weight) cfg.beam.lm_weight = *lm_weight;
      if (token_bonus) cfg.beam.token_bonus = *token_bonus;
      nlohmann::json header;
      auto model = load_model(dec_ckpt, &header);
      const bool synthetic = dec_synthetic || (dec_manifest.empty() && header.value("data", "") == "synthetic");
      Corpus corpus = eval_corpus(cfg, synthetic, dec_manifest, header);
      const int eos = model->decoder().config().eos_id;

      std::optional<ArpaModel> arpa;
      std::unique_ptr<ArpaTokenScorer> scorer;
      std::filesystem::path lm_file = dec_lm;
      if (lm_file.empty() && cfg.data.lm) lm_file = *cfg.data.lm;
      if (!lm_file.empty()) {
        arpa = ArpaModel::load(lm_file);
        scorer = std::make_unique<ArpaTokenScorer>(
            *arpa, token_strings(model->decoder().config().n_tokens, corpus.vocab, eos));
      }

      std::vector<std::size_t> sizes =
          beam_sizes.empty() ? std::vector<std::size_t>{cfg.beam.beam_size} : parse_sizes(beam_sizes);
      out << std::setprecision(10);
      Rng unused(0);
      std::vector<EncoderOutput> encoded;
      for (const auto& u : corpus.dev) encoded.push_back(model->encoder().encode(u.features, unused, false));
      const std::vector<double> weights =
          lm_grid.empty() ? std::vector<double>{cfg.beam.lm_weight} : parse_grid(lm_grid);
      if (!lm_grid.empty() && !scorer) throw UsageError("--lm-weight-grid needs a language model");
      for (std::size_t size : sizes) {
        for (double weight : weights) {
          BeamConfig bc = cfg.beam;
          bc.beam_size = size;
          bc.lm_weight = weight;
          ErrorCounts words;
          for (std::size_t i = 0; i < corpus.dev.size(); ++i) {
            const Utterance& u = corpus.dev[i];
            const BeamResult r = beam_decode(encoded[i], model->decoder(), scorer.get(), bc);
            const std::string ref = reference_text(u, corpus.vocab, eos);
            const std::string hyp = render(r.best().tokens, corpus.vocab, eos);
            words += word_errors(ref, hyp);
            out << "utt\t" << u.id << "\tbeam=" << size << "\tcomplete=" << (r.complete ? 1 : 0) << "\tref=" << ref
                << "\thyp=" << hyp << "\n";
            for (std::size_t k = 0; k < std::min(nbest, r.hypotheses.size()); ++k) {
              const Hypothesis& h = r.hypotheses[k];
              out << "nbest\t" << u.id << "\t" << k + 1 << "\ts2s=" << h.s2s_logp << "\tlm=" << h.lm_logp
                  << "\tlen=" << h.tokens.size() << "\tscore=" << combined_score(h, bc, eos) << "\t"
                  << render(h.tokens, corpus.vocab, eos) << "\n";
            }
            out << "peaks\t" << u.id << "\t";
            for (std::size_t k = 0; k < r.best().peaks.size(); ++k) out << (k ? " " : "") << r.best().peaks[k];
            out << "\n";
          }
          out << "wer\tbeam=" << size;
          if (!lm_grid.empty()) out << "\tlm_weight=" << weight;
          out << "\t" << words.rate() << "\terrors=" << words.errors() << "\tref_words=" << words.reference_length
              << "\n";
        }
      }
      return kExitOk;
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace tds::cli
