// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "support/random_tensor.hpp"
#include "tds/config.hpp"
#include "tds/train.hpp"

using namespace tds;
using tds::testing::random_tensor;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("tds_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

ModelConfig tiny_model(std::size_t n_tokens) {
  ModelConfig mc;
  mc.encoder.input_dim = 12;
  mc.encoder.groups = {{1, 2}};
  mc.encoder.kernel = 5;
  mc.encoder.attention_dim = 16;
  mc.encoder.dropout = 0.1;
  mc.decoder.n_tokens = n_tokens;
  return mc;
}

SyntheticConfig tiny_task() {
  SyntheticConfig sc;
  sc.vocab_size = 6;
  sc.pattern_frames = 4;
  sc.feature_dim = 12;
  sc.train_utterances = 40;
  sc.dev_utterances = 8;
  sc.max_tokens = 3;
  return sc;
}

}  // namespace

TEST_CASE("gradient clipping scales by clip over norm") {
  Tensor a = Tensor::from({2}, {1.0, 2.0}, true), b = Tensor::from({1}, {3.0}, true);
  ParamList params{{"a", a}, {"b", b}};
  // grads (10, 20, 20), norm 30 -> halved with clip 15
  Tensor loss = add(sum(mul(a, Tensor::from({2}, {10.0, 20.0}))), scale(sum(b), 20.0));
  loss.backward();
  const double norm = sgd_step(params, 1.0, 15.0);
  CHECK(norm == doctest::Approx(30.0));
  CHECK(a[0] == doctest::Approx(1.0 - 5.0));
  CHECK(a[1] == doctest::Approx(2.0 - 10.0));
  CHECK(b[0] == doctest::Approx(3.0 - 10.0));
  CHECK(a.grad().empty());

  // below the clip the update is the plain gradient
  scale(sum(a), 2.0).backward();
  const double before = a[0];
  sgd_step({{"a", a}}, 0.5, 15.0);
  CHECK(a[0] == doctest::Approx(before - 1.0));
}

TEST_CASE("clipping preserves the gradient direction") {
  Rng rng(1);
  Tensor w = random_tensor({5}, rng, -1, 1, true);
  Tensor target = random_tensor({5}, rng, 10, 20);
  sum(mul(w, target)).backward();
  std::vector<double> g(w.grad().begin(), w.grad().end()), before(w.data().begin(), w.data().end());
  sgd_step({{"w", w}}, 1.0, 1.0);
  std::vector<double> step(5);
  for (int i = 0; i < 5; ++i) step[i] = before[i] - w[i];
  for (int i = 0; i < 5; ++i) CHECK(step[i] / g[i] == doctest::Approx(step[0] / g[0]));
  CHECK(step[0] / g[0] > 0);
}

TEST_CASE("non-finite gradients abort the step") {
  Tensor w = Tensor::from({2}, {1.0, 2.0}, true);
  w.mutable_grad()[0] = std::nan("");
  CHECK_THROWS_AS(sgd_step({{"w", w}}, 0.1, 15.0), NumericError);
  CHECK(w[0] == 1.0);
}

TEST_CASE("quadratic bowl descends monotonically") {
  Rng rng(2);
  Tensor x = random_tensor({4}, rng, -3, 3, true);
  Tensor center = random_tensor({4}, rng);
  double previous = INFINITY;
  for (int step = 0; step < 100; ++step) {
    Tensor d = sub(x, center);
    Tensor loss = sum(mul(d, d));
    CHECK(loss.item() < previous);
    previous = loss.item();
    loss.backward();
    sgd_step({{"x", x}}, 0.05, 15.0);
  }
  CHECK(previous < 1e-6);
}

TEST_CASE("learning rate schedule") {
  OptimConfig oc;
  CHECK(learning_rate(oc, 0) == 0.05);
  CHECK(learning_rate(oc, 39) == 0.05);
  CHECK(learning_rate(oc, 40) == 0.025);
  CHECK(learning_rate(oc, 80) == 0.0125);
}

TEST_CASE("synthetic task structure") {
  SyntheticConfig sc = tiny_task();
  SyntheticTask a = synthetic_task(sc);
  CHECK(a.train.size() == 40);
  CHECK(a.dev.size() == 8);
  CHECK(a.templates.size() == 6);
  CHECK_FALSE(a.templates[1].defined());
  for (const auto& u : a.train) {
    CHECK(u.features.dim(0) == u.tokens.size() * sc.pattern_frames);
    for (int t : u.tokens) CHECK(t != 1);
  }
  sc.seed = 8;
  SyntheticTask b = synthetic_task(sc);
  CHECK(a.templates[0][0] != b.templates[0][0]);
  // noise-free utterances are exact template copies
  sc.noise_std = 0.0;
  SyntheticTask c = synthetic_task(sc);
  const auto& u = c.train.front();
  for (std::size_t i = 0; i < sc.pattern_frames * sc.feature_dim; ++i)
    CHECK(u.features[i] == c.templates[static_cast<std::size_t>(u.tokens[0])][i]);
}

TEST_CASE("diagonality of ideal and off-diagonal alignments") {
  // U = 2, T' = 8: ideal centers 0 and 4
  std::vector<double> a(16, 0.0);
  a[0] = 1.0;
  a[8 + 4] = 1.0;
  CHECK(diagonality(Tensor::from({2, 8}, a)) == 1.0);
  std::vector<double> b(16, 0.0);
  b[7] = 1.0;
  b[8 + 0] = 1.0;
  CHECK(diagonality(Tensor::from({2, 8}, b)) == 0.0);
}

TEST_CASE("separable single-token task is learned exactly") {
  SyntheticConfig sc = tiny_task();
  sc.noise_std = 0.0;
  sc.max_tokens = 1;
  sc.train_utterances = 20;
  SyntheticTask task = synthetic_task(sc);
  Rng init(3);
  ModelConfig mc = tiny_model(sc.vocab_size);
  mc.encoder.dropout = 0.0;
  Seq2Seq model(mc, init);
  TrainConfig tc;
  tc.p_rs = 0.0;
  tc.label_smoothing = 0.0;
  tc.window_epochs = 0;
  OptimConfig oc;
  oc.lr = 0.1;
  oc.batch_size = 2;
  oc.epochs = 30;  // 300 steps
  Trainer trainer(model, tc, oc);
  TrainOptions opt;
  opt.on_epoch = [](const EpochMetrics& m) { return m.token_accuracy < 1.0; };
  auto history = trainer.fit(task.train, task.dev, 0, opt);
  CHECK(history.back().token_accuracy == 1.0);
}

TEST_CASE("training is deterministic and resumable") {
  SyntheticTask task = synthetic_task(tiny_task());
  TrainConfig tc;
  tc.window_epochs = 1;
  OptimConfig oc;
  oc.batch_size = 4;
  oc.epochs = 3;
  const auto dir = temp_dir("resume");

  auto run = [&](std::size_t epochs) {
    Rng init(5);
    auto model = std::make_unique<Seq2Seq>(tiny_model(6), init);
    OptimConfig o = oc;
    o.epochs = epochs;
    Trainer t(*model, tc, o);
    TrainOptions opt;
    opt.checkpoint = dir / "ckpt.bin";
    auto h = t.fit(task.train, task.dev, 0, opt);
    return std::make_pair(std::move(model), h);
  };
  auto [full, full_history] = run(3);
  auto [again, again_history] = run(3);
  CHECK(full_history[0].train_loss == again_history[0].train_loss);
  CHECK(full_history[2].train_loss == again_history[2].train_loss);

  // stop after two epochs, then resume from the checkpoint
  run(2);
  Checkpoint ckpt = load_checkpoint(dir / "ckpt.bin");
  CHECK(Trainer::resume_epoch(ckpt) == 2);
  auto resumed = Seq2Seq::from_checkpoint(ckpt);
  Trainer t(*resumed, tc, oc);
  auto rest = t.fit(task.train, task.dev, Trainer::resume_epoch(ckpt));
  REQUIRE(rest.size() == 1);
  CHECK(rest[0].train_loss == full_history[2].train_loss);
  const auto pa = full->parameters(), pb = resumed->parameters();
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::size_t j = 0; j < pa[i].second.numel(); ++j) REQUIRE(pa[i].second[j] == pb[i].second[j]);
}

TEST_CASE("checkpoint round trip keeps greedy outputs") {
  SyntheticTask task = synthetic_task(tiny_task());
  Rng init(6);
  Seq2Seq model(tiny_model(6), init);
  const auto dir = temp_dir("roundtrip");
  save_checkpoint(dir / "m.bin", model.to_checkpoint());
  auto back = Seq2Seq::from_checkpoint(load_checkpoint(dir / "m.bin"));
  Rng r(0);
  for (const auto& u : task.dev) {
    auto a = greedy_decode(model.encoder().encode(u.features, r, false), model.decoder());
    auto b = greedy_decode(back->encoder().encode(u.features, r, false), back->decoder());
    CHECK(a == b);
  }
  CHECK(count_parameters(back->parameters()) == count_parameters(model.parameters()));
}

TEST_CASE("manifest parsing") {
  const auto dir = temp_dir("manifest");
  write_wav(dir / "a.wav", std::vector<double>(1600, 0.1), 16000);
  {
    std::ofstream m(dir / "good.tsv");
    m << "a.wav\t100\thello  world\n";
  }
  auto recs = load_manifest(dir / "good.tsv");
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].transcript == "hello world");
  CHECK(recs[0].duration_ms == 100.0);
  auto data = load_audio_dataset(recs, FeatureConfig{});
  CHECK(data[0].features.dim(1) == 80);
  {
    std::ofstream m(dir / "missing.tsv");
    m << "a.wav\t100\tok\nb.wav\t100\tgone\n";
  }
  CHECK_THROWS_WITH(load_manifest(dir / "missing.tsv"), doctest::Contains(":2:"));
  {
    std::ofstream m(dir / "bad.tsv");
    m << "a.wav\t-5\tx\n";
  }
  CHECK_THROWS_WITH(load_manifest(dir / "bad.tsv"), doctest::Contains("positive"));
}

TEST_CASE("config parsing") {
  std::istringstream in(
      "# comment\n[encoder]\ngroups = 1x4, 2x4\nkernel = 9\nattention_dim = 64\n"
      "[optim]\nlr = 0.1 ; trailing comment\ndecay_epochs = 10\n[beam]\neos_factor = off\nbeam_size = 4\n"
      "[data]\nvocab = pieces.txt\n");
  RunConfig c = parse_config(in, "/base");
  CHECK(c.model.encoder.groups.size() == 2);
  CHECK(c.model.encoder.subsample_factor() == 4);
  CHECK(c.model.decoder.attention_dim == 64);
  CHECK(c.optim.lr == 0.1);
  CHECK(c.optim.grad_clip == 15.0);
  CHECK_FALSE(c.beam.eos_factor.has_value());
  CHECK(c.beam.candidate_gap == 10.0);
  CHECK(*c.data.vocab == std::filesystem::path("/base/pieces.txt"));

  std::istringstream again(format_config(c));
  RunConfig d = parse_config(again);
  CHECK(format_config(d) == format_config(c));

  std::istringstream empty("");
  RunConfig p = parse_config(empty);
  CHECK(p.optim.lr == 0.05);
  CHECK(p.optim.decay_epochs == 40);
  CHECK(p.train.p_rs == 0.01);
  CHECK(p.train.label_smoothing == 0.05);
  CHECK(p.beam.beam_size == 80);
  CHECK(p.beam.attention_limit == 30u);
  CHECK(p.model.encoder.dropout == 0.2);

  std::istringstream unknown("[encoder]\nwidth = 3\n");
  CHECK_THROWS_WITH(parse_config(unknown), doctest::Contains("line 2"));
  std::istringstream bad("[optim]\nlr = fast\n");
  CHECK_THROWS_WITH(parse_config(bad), doctest::Contains("lr"));
  std::istringstream invalid("[encoder]\nkernel = 4\n");
  CHECK_THROWS(parse_config(invalid));
  std::istringstream section("[nope]\n");
  CHECK_THROWS(parse_config(section));
}
