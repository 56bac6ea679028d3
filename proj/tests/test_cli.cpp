// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "tds/encoder.hpp"
#include "tds/frontend.hpp"
#include "tds/ngram.hpp"
#include "tds/rng.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run tds_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "tds");
  std::ostringstream out, err;
  const int code = tds::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("tds_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

const std::string kTiny = std::string(TDS_TEST_DATA_DIR) + "/tiny.ini";
const std::string kData = TDS_DATA_DIR;

std::vector<std::string> lines_starting(const std::string& text, const std::string& prefix) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);)
    if (line.rfind(prefix, 0) == 0) out.push_back(line);
  return out;
}

/// Drops the wall-clock field from a metrics line.
std::string without_seconds(std::string line) {
  const auto at = line.find("\"seconds\":");
  const auto end = line.find(',', at);
  return line.erase(at, end - at + 1);
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
  CHECK(tds_cli({}).code == tds::cli::kExitUsage);
  CHECK(tds_cli({"transcribe"}).code == tds::cli::kExitUsage);
  CHECK(tds_cli({"receptive-field", "--frobnicate"}).code == tds::cli::kExitUsage);
  CHECK(tds_cli({"lm-score", "--lm", "/no/such/file.arpa", "a"}).code == tds::cli::kExitUsage);
  CHECK(tds_cli({"decode", "--checkpoint", "/no/such/model.ckpt"}).code == tds::cli::kExitUsage);
  const Run bad = tds_cli({"receptive-field", "--kernel", "4"});
  CHECK(bad.code == tds::cli::kExitUsage);
  CHECK(bad.err.find("error") != std::string::npos);
}

TEST_CASE("invalid config values are usage errors naming the line") {
  const fs::path dir = scratch("badcfg");
  std::ofstream(dir / "bad.ini") << "[encoder]\nkernel = banana\n";
  const Run r = tds_cli({"receptive-field", "-c", (dir / "bad.ini").string()});
  CHECK(r.code == tds::cli::kExitUsage);
  CHECK(r.err.find("line 2") != std::string::npos);
}

TEST_CASE("receptive-field matches the dependency walk for the default layout") {
  const Run r = tds_cli({"receptive-field"});
  REQUIRE(r.code == 0);
  tds::EncoderConfig cfg;
  std::ostringstream expected;
  expected << "kernel 21\treceptive_field " << tds::receptive_field(cfg) << "\tsubsample_factor 8\n";
  CHECK(r.out == expected.str());
  CHECK(tds_cli({"receptive-field", "--sweep"}).out.find("kernel 9\treceptive_field 569") != std::string::npos);
}

TEST_CASE("lm-score prints natural-log sentence scores") {
  const Run r = tds_cli({"lm-score", "--lm", kData + "/lm/toy.arpa", "a b", "b"});
  REQUIRE(r.code == 0);
  const auto model = tds::ArpaModel::load(kData + "/lm/toy.arpa");
  const double ab = model.score_sequence({"a", "b", "</s>"});
  const double b = model.score_sequence({"b", "</s>"});
  std::istringstream in(r.out);
  double s1, s2, total;
  std::string rest;
  in >> s1;
  std::getline(in, rest);
  in >> s2;
  std::getline(in, rest);
  in >> rest >> total;
  CHECK(s1 == ab);
  CHECK(s2 == b);
  CHECK(total == doctest::Approx(ab + b).epsilon(1e-15));
}

TEST_CASE("tokenize segments words and samples reproducibly") {
  const std::string vocab = kData + "/wordpiece/toy.vocab";
  const Run best = tds_cli({"tokenize", "--vocab", vocab, "the", "cat"});
  REQUIRE(best.code == 0);
  CHECK(best.out == "2 3\t\xE2\x96\x81the \xE2\x96\x81" "cat\n");
  const Run a = tds_cli({"tokenize", "--vocab", vocab, "--p-wp", "1", "--seed", "5", "the cat"});
  const Run b = tds_cli({"tokenize", "--vocab", vocab, "--p-wp", "1", "--seed", "5", "the cat"});
  CHECK(a.code == 0);
  CHECK(a.out == b.out);
  CHECK(a.out != best.out);
  CHECK(tds_cli({"tokenize", "--vocab", vocab, "--p-wp", "2", "x"}).code == tds::cli::kExitUsage);
}

TEST_CASE("features writes one row per frame") {
  const fs::path dir = scratch("features");
  std::vector<double> samples(16000 / 10);
  for (std::size_t i = 0; i < samples.size(); ++i) samples[i] = 0.5 * std::sin(0.05 * static_cast<double>(i));
  tds::write_wav(dir / "tone.wav", samples, 16000);
  const Run r = tds_cli({"features", (dir / "tone.wav").string()});
  REQUIRE(r.code == 0);
  const auto wav = tds::read_wav(dir / "tone.wav");
  const tds::Tensor f = tds::log_mel(wav.samples, tds::FeatureConfig{});
  std::istringstream in(r.out);
  std::size_t rows = 0;
  for (std::string line; std::getline(in, line);) {
    std::istringstream cols(line);
    double v;
    std::size_t n = 0;
    while (cols >> v) {
      CHECK(v == f.at(rows, n));
      ++n;
    }
    CHECK(n == 80);
    ++rows;
  }
  CHECK(rows == f.dim(0));
  CHECK(tds_cli({"features", (dir / "missing.wav").string()}).code == tds::cli::kExitUsage);
}

TEST_CASE("train, evaluate and decode on the synthetic task") {
  const fs::path dir = scratch("synthetic");
  const std::string ckpt = (dir / "model.ckpt").string();
  const Run train = tds_cli({"train", "-c", kTiny, "--synthetic", "--checkpoint", ckpt, "--metrics",
                             (dir / "metrics.jsonl").string()});
  REQUIRE(train.code == 0);
  CHECK(lines_starting(train.out, "{").size() == 2);
  std::ifstream metrics(dir / "metrics.jsonl");
  std::size_t n = 0;
  for (std::string line; std::getline(metrics, line); ++n) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("train_loss"));
    CHECK(j.contains("token_accuracy"));
    CHECK(j.contains("dev_wer"));
  }
  CHECK(n == 2);

  const Run eval = tds_cli({"evaluate", "-c", kTiny, "--checkpoint", ckpt, "--beam", "1"});
  REQUIRE(eval.code == 0);
  const auto j = nlohmann::json::parse(eval.out);
  CHECK(j.at("utterances") == 3);
  // Beam 1 with stabilizers that cannot fire here is greedy decoding.
  CHECK(j.at("beam_wer") == j.at("wer"));

  const Run dec = tds_cli({"decode", "-c", kTiny, "--checkpoint", ckpt, "--beam-sizes", "1,80"});
  REQUIRE(dec.code == 0);
  const auto wers = lines_starting(dec.out, "wer\t");
  REQUIRE(wers.size() == 2);
  CHECK(wers[0].rfind("wer\tbeam=1\t", 0) == 0);
  CHECK(wers[1].rfind("wer\tbeam=80\t", 0) == 0);
  CHECK(lines_starting(dec.out, "utt\t").size() == 6);
  CHECK(lines_starting(dec.out, "peaks\t").size() == 6);
}

TEST_CASE("decode sweeps the LM weight grid") {
  const fs::path dir = scratch("grid");
  const std::string ckpt = (dir / "model.ckpt").string();
  REQUIRE(tds_cli({"train", "-c", kTiny, "--synthetic", "--epochs", "1", "--checkpoint", ckpt}).code == 0);
  tds::ArpaModel lm = tds::ArpaModel::estimate_add_one({{"0", "2"}, {"3", "4", "0"}}, 2);
  std::ofstream arpa(dir / "lm.arpa");
  lm.dump(arpa);
  arpa.close();
  const Run r = tds_cli({"decode", "-c", kTiny, "--checkpoint", ckpt, "--lm", (dir / "lm.arpa").string(),
                         "--beam-sizes", "4", "--lm-weight-grid", "0:1:0.5"});
  REQUIRE(r.code == 0);
  const auto wers = lines_starting(r.out, "wer\t");
  REQUIRE(wers.size() == 3);
  CHECK(wers[2].find("lm_weight=1\t") != std::string::npos);
  CHECK(tds_cli({"decode", "-c", kTiny, "--checkpoint", ckpt, "--lm-weight-grid", "0:1:0.5"}).code ==
        tds::cli::kExitUsage);
  CHECK(tds_cli({"decode", "-c", kTiny, "--checkpoint", ckpt, "--beam-sizes", "0"}).code == tds::cli::kExitUsage);
}

TEST_CASE("train --resume matches an uninterrupted run") {
  const fs::path dir = scratch("resume");
  const std::string straight = (dir / "straight.ckpt").string();
  const std::string split = (dir / "split.ckpt").string();
  const Run full = tds_cli({"train", "-c", kTiny, "--synthetic", "--checkpoint", straight});
  const Run first = tds_cli({"train", "-c", kTiny, "--synthetic", "--epochs", "1", "--checkpoint", split});
  const Run second = tds_cli({"train", "-c", kTiny, "--synthetic", "--resume", "--checkpoint", split});
  REQUIRE(full.code == 0);
  REQUIRE(first.code == 0);
  REQUIRE(second.code == 0);
  const auto full_lines = lines_starting(full.out, "{");
  const auto first_lines = lines_starting(first.out, "{");
  const auto second_lines = lines_starting(second.out, "{");
  REQUIRE(full_lines.size() == 2);
  REQUIRE(first_lines.size() == 1);
  REQUIRE(second_lines.size() == 1);
  CHECK(without_seconds(full_lines[0]) == without_seconds(first_lines[0]));
  CHECK(without_seconds(full_lines[1]) == without_seconds(second_lines[0]));

  const Run a = tds_cli({"decode", "-c", kTiny, "--checkpoint", straight, "--beam-sizes", "3"});
  const Run b = tds_cli({"decode", "-c", kTiny, "--checkpoint", split, "--beam-sizes", "3"});
  CHECK(a.out == b.out);
}

TEST_CASE("train and decode from a manifest of WAV files") {
  const fs::path dir = scratch("manifest");
  tds::Rng rng(11);
  std::ofstream manifest(dir / "train.tsv");
  const std::vector<std::string> texts = {"the cat", "a cat", "the cats", "cat"};
  for (std::size_t i = 0; i < texts.size(); ++i) {
    std::vector<double> samples(1600 + 400 * i);
    for (auto& s : samples) s = 0.1 * rng.normal();
    const std::string name = "utt" + std::to_string(i) + ".wav";
    tds::write_wav(dir / name, samples, 16000);
    manifest << name << '\t' << 1000.0 * static_cast<double>(samples.size()) / 16000 << '\t' << texts[i] << '\n';
  }
  manifest.close();
  std::ofstream(dir / "run.ini") << "[encoder]\ngroups = 1x2\nkernel = 3\nattention_dim = 8\ndropout = 0\n"
                                 << "[optim]\nepochs = 1\nbatch_size = 2\n"
                                 << "[data]\ntrain_manifest = train.tsv\ndev_manifest = train.tsv\n"
                                 << "vocab = " << kData << "/wordpiece/toy.vocab\n";
  const std::string cfg = (dir / "run.ini").string();
  const std::string ckpt = (dir / "model.ckpt").string();
  const Run train = tds_cli({"train", "-c", cfg, "--checkpoint", ckpt});
  INFO(train.err);
  REQUIRE(train.code == 0);
  const Run dec = tds_cli({"decode", "-c", cfg, "--checkpoint", ckpt, "--beam-sizes", "2"});
  INFO(dec.err);
  REQUIRE(dec.code == 0);
  CHECK(lines_starting(dec.out, "utt\t").size() == 4);
  CHECK(dec.out.find("ref=the cats") != std::string::npos);

  std::ofstream(dir / "broken.tsv") << "missing.wav\t100\tthe cat\n";
  CHECK(tds_cli({"decode", "-c", cfg, "--checkpoint", ckpt, "--manifest", (dir / "broken.tsv").string()}).code ==
        tds::cli::kExitFailure);
}
