#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "cmsf/ablation.hpp"
#include "cmsf/cli.hpp"
#include "cmsf/errors.hpp"
#include "cmsf/ops.hpp"
#include "cmsf/spike.hpp"
#include "cmsf/trainer.hpp"
#include "test_support.hpp"

using namespace cmsf;
using cmsf::testing::finite_difference;
using cmsf::testing::grad_close;
using cmsf::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("cmsf_test_" + tag + "_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

FeatureDataset toy_data(std::size_t pairs = 24, std::uint64_t seed = 5) {
  SynthOptions o;
  o.seed = seed;
  o.pairs = pairs;
  o.N = o.L = 4;
  o.d_region = 12;
  o.d_word = 10;
  o.latent_dim = 6;
  o.noise = 0.1f;
  return synth_dataset(o).data;
}

RunConfig toy_config() {
  RunConfig c;
  c.D = 16;
  c.B = 8;
  c.h = 2;
  c.epochs = 3;
  c.decay_epochs = 1;
  c.lr_encoder = 5e-3f;
  c.val_fraction = 0.25f;
  c.seed = 7;
  return c;
}

bool nonzero(const Tensor& t) {
  if (!t.has_grad()) return false;
  const auto g = t.grad();
  return std::any_of(g.begin(), g.end(), [](float v) { return v != 0.0f; });
}

int cli(std::vector<std::string> args, std::string* out_text = nullptr, std::string* err_text = nullptr) {
  std::vector<const char*> argv{"cmsf"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(int(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return code;
}

}  // namespace

// ---------------------------------------------------------------- model

TEST_CASE("every fusion kind and alignment mode runs a training step") {
  const auto data = toy_data(8);
  const std::vector<std::size_t> idx = {0, 1, 2, 3};
  for (auto kind : {FusionKind::kNone, FusionKind::kScca, FusionKind::kSca, FusionKind::kScsa}) {
    for (auto mode : {AlignMode::kLse, AlignMode::kVha, AlignMode::kTha, AlignMode::kBiha}) {
      auto cfg = toy_config().model_config(12, 10);
      cfg.fusion.kind = kind;
      cfg.pool.mode = mode;
      CmsfModel model(cfg);
      auto loss = model.training_loss(data.region_batch(idx), data.word_batch(idx), {});
      CHECK(std::isfinite(loss.total.item()));
      loss.total.backward();
      CHECK(nonzero(model.params().find("region.linear")->tensor));
      CHECK(nonzero(model.params().find("word.linear")->tensor));
    }
  }
}

TEST_CASE("full-model gradients agree with finite differences in smooth mode") {
  SmoothSpikeGuard smooth;
  ModelConfig cfg;
  cfg.d_region = 5;
  cfg.d_word = 4;
  cfg.D = 8;
  cfg.T = 2;
  cfg.fusion = {FusionKind::kScca, 3};
  // The detached paths are deliberate gradient stops; the check needs the
  // exact derivative of the whole objective.
  cfg.detach_fusion_input = false;
  cfg.detach_soft_labels = false;
  CmsfModel model(cfg);
  std::mt19937_64 rng(3);
  const auto regions = random_tensor(rng, {2, 3, 5}, -2, 2);
  const auto words = random_tensor(rng, {2, 3, 4}, -2, 2);
  const LossWeights w{0.5f, 0.5f};
  auto loss = [&] { return model.training_loss(regions, words, w).total; };
  model.params().zero_grad();
  loss().backward();
  std::size_t checked = 0;
  for (const auto& p : model.params().params()) {
    Tensor t = p.tensor;
    for (std::size_t i = 0; i < t.numel(); i += std::max<std::size_t>(1, t.numel() / 3)) {
      const double analytic = t.has_grad() ? t.grad()[i] : 0.0;
      // Hard maxima make the objective piecewise smooth; a step that straddles
      // a switch is retried closer in.
      double numeric = finite_difference(loss, t, i, 1e-3f);
      if (!grad_close(analytic, numeric, 2e-3, 5e-2)) numeric = finite_difference(loss, t, i, 2.5e-4f);
      INFO(p.name << "[" << i << "] analytic " << analytic << " numeric " << numeric);
      CHECK(grad_close(analytic, numeric, 2e-3, 5e-2));
      ++checked;
    }
  }
  CHECK(checked > 100);
}

TEST_CASE("lambda = 1 without fusion trains only the input side") {
  auto cfg = toy_config().model_config(12, 10);
  cfg.fusion.kind = FusionKind::kNone;
  CmsfModel model(cfg);
  const auto data = toy_data(8);
  const std::vector<std::size_t> idx = {0, 1, 2, 3, 4, 5};
  auto loss = model.training_loss(data.region_batch(idx), data.word_batch(idx), {1.0f, 0.01f});
  loss.total.backward();
  for (const auto& p : model.params().params()) {
    const bool post = p.name.find(".ssa.") != std::string::npos || p.name.find(".mlp.") != std::string::npos ||
                      p.name.find(".pool.") != std::string::npos || p.name.find(".generator.") != std::string::npos;
    INFO(p.name);
    if (post) {
      CHECK_FALSE(nonzero(p.tensor));
    } else {
      CHECK(nonzero(p.tensor));
    }
  }
}

// ---------------------------------------------------------------- trainer

TEST_CASE("trainer batches cover the training split once") {
  const auto data = toy_data(21);
  auto cfg = toy_config();
  cfg.B = 4;
  cfg.val_fraction = 0.25f;
  Trainer t(cfg, data);
  REQUIRE(t.split().train.size() == 16);
  cfg.val_fraction = 0.05f;  // 20 training pairs
  cfg.B = 6;                 // 6, 6, 6, 2
  Trainer u(cfg, data);
  const auto b = u.batches(0);
  CHECK(b.size() == 4);
  std::vector<std::size_t> seen;
  for (const auto& batch : b) seen.insert(seen.end(), batch.begin(), batch.end());
  std::sort(seen.begin(), seen.end());
  CHECK(seen == u.split().train);
  CHECK(u.batches(0) == b);
  CHECK(u.batches(1) != b);
  cfg.B = 19;  // 19 + 1 merges into one batch of 20
  Trainer v(cfg, data);
  CHECK(v.batches(0).size() == 1);
  CHECK(v.batches(0)[0].size() == 20);
}

TEST_CASE("training is deterministic and writes its artefacts") {
  TempDir dir("train");
  const auto data = toy_data();
  std::ostringstream log;
  Trainer a(toy_config(), data, {dir.path, &log, true});
  const auto& ha = a.train();
  Trainer b(toy_config(), data);
  const auto& hb = b.train();
  REQUIRE(ha.size() == 3);
  REQUIRE(hb.size() == 3);
  for (std::size_t e = 0; e < 3; ++e) {
    CHECK(ha[e].mean_loss == hb[e].mean_loss);
    CHECK(ha[e].validation.rsum() == hb[e].validation.rsum());
    CHECK(ha[e].train.has_value());
  }
  for (const char* f : {"best.ckpt", "last.ckpt", "config.txt", "history.csv"}) CHECK(fs::exists(dir.path / f));
  CHECK(RunConfig::load(dir.path / "config.txt").to_text() == toy_config().to_text());

  std::istringstream lines(log.str());
  std::string first;
  std::getline(lines, first);
  INFO(first);
  CHECK(first.rfind("step 0 epoch 0 early=", 0) == 0);
  for (const char* key : {" basic=", " fusion=", " inter=", " intra=", " total=", " lr_encoder=0.005",
                          " lr_fusion=0.005"}) {
    CHECK(first.find(key) != std::string::npos);
  }
  CHECK(log.str().find("epoch 2 mean_loss=") != std::string::npos);
  // Last epoch runs at the decayed rate.
  CHECK(a.steps().back().lr_encoder == doctest::Approx(5e-4));
}

TEST_CASE("resume continues the loss trajectory") {
  TempDir dir("resume");
  const auto data = toy_data();
  auto cfg = toy_config();
  Trainer a(cfg, data, {dir.path});
  a.run_epoch();
  const auto batch = a.batches(1).front();
  const auto before = a.step(batch);
  Trainer b(cfg, data);
  b.resume(dir.path / "last.ckpt");
  CHECK(b.epoch() == 1);
  const auto after = b.step(batch);
  REQUIRE(before.losses.size() == after.losses.size());
  for (std::size_t i = 0; i < before.losses.size(); ++i) {
    CHECK(after.losses[i].second == doctest::Approx(before.losses[i].second).epsilon(1e-5));
  }
  CHECK(after.step == before.step);
  // Parameters after the shared step agree too.
  for (std::size_t i = 0; i < a.model().params().params().size(); ++i) {
    const Tensor pa = a.model().params().params()[i].tensor;
    const Tensor pb = b.model().params().params()[i].tensor;
    for (std::size_t k = 0; k < pa.numel(); ++k) CHECK(pa.at(k) == doctest::Approx(pb.at(k)).epsilon(1e-5));
  }
}

TEST_CASE("a non-finite loss aborts with the component breakdown") {
  auto data = toy_data();
  Trainer t(toy_config(), data);
  const auto batch = t.batches(0).front();
  data.regions[batch.front() * 4 * 12] = std::numeric_limits<float>::infinity();
  try {
    t.step(batch);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    const std::string msg = e.what();
    for (const char* key : {"early=", "basic=", "fusion=", "inter=", "intra=", "total="}) {
      CHECK(msg.find(key) != std::string::npos);
    }
  }
}

TEST_CASE("trainer rejects invalid configurations before building a model") {
  const auto data = toy_data();
  auto cfg = toy_config();
  cfg.h = 3;  // does not divide 4 tokens
  CHECK_THROWS_AS(Trainer(cfg, data), ConfigError);
  cfg = toy_config();
  cfg.B = 1;
  CHECK_THROWS_AS(Trainer(cfg, data), ConfigError);
}

// ---------------------------------------------------------------- ablation

TEST_CASE("ablation axes") {
  RunConfig c;
  apply_axis(c, "objective", "dual-stream");
  CHECK_FALSE(c.early_alignment);
  CHECK(c.fusion == FusionKind::kNone);
  apply_axis(c, "objective", "full");
  CHECK(c.early_alignment);
  CHECK(c.fusion == FusionKind::kScca);
  apply_axis(c, "time-steps", "3");
  CHECK(c.T == 3);
  apply_axis(c, "align", "lse");
  CHECK(c.align == AlignMode::kLse);
  CHECK_THROWS_AS(apply_axis(c, "depth", "3"), ConfigError);
  CHECK_THROWS_AS(apply_axis(c, "time-steps", "two"), ConfigError);
  CHECK_THROWS_AS(apply_axis(c, "objective", "half"), ConfigError);

  AblationRow r{"h", "2", {1, 3}};
  CHECK(r.mean() == 2.0);
  CHECK(r.stddev() == 1.0);
}

// ---------------------------------------------------------------- cli

TEST_CASE("cli usage errors") {
  std::string out, err;
  CHECK(cli({"frobnicate"}, &out, &err) == 2);
  CHECK(err.find("synth-data") != std::string::npos);
  CHECK(cli({}, &out, &err) == 2);
  CHECK(cli({"train"}, &out, &err) == 2);  // --data is required
  CHECK(cli({"train", "--bogus"}, &out, &err) == 2);
  CHECK(cli({"--help"}, &out, &err) == 0);
}

TEST_CASE("cli end to end") {
  TempDir dir("cli");
  const std::string data_dir = (dir.path / "data").string();
  const std::string run_dir = (dir.path / "run").string();
  std::string out, err;
  REQUIRE(cli({"synth-data", "--out", data_dir, "--pairs", "16", "--regions", "4", "--words", "4", "--d-region",
               "12", "--d-word", "10", "--seed", "2"},
              &out, &err) == 0);
  const std::string manifest = data_dir + "/manifest.txt";
  REQUIRE(fs::exists(manifest));

  std::ofstream(dir.path / "run.cfg") << "D = 16\nB = 8\nh = 2\nepochs = 2\ndecay_epochs = 1\nval_fraction = 0.25\n";
  REQUIRE(cli({"train", "--data", manifest, "--config", (dir.path / "run.cfg").string(), "--out", run_dir,
               "--set", "lr_encoder=0.005", "--quiet"},
              &out, &err) == 0);
  CHECK(fs::exists(run_dir + "/best.ckpt"));
  CHECK(fs::exists(run_dir + "/train.log"));
  CHECK(RunConfig::load(run_dir + "/config.txt").lr_encoder == 0.005f);

  CHECK(cli({"eval", "--checkpoint", run_dir + "/last.ckpt", "--data", manifest, "--out",
             (dir.path / "m.csv").string()},
            &out, &err) == 0);
  CHECK(out.find("R@Sum") != std::string::npos);
  CHECK(fs::exists(dir.path / "m.csv"));

  CHECK(cli({"energy", "--checkpoint", run_dir + "/last.ckpt", "--data", manifest, "--batch", "4"}, &out, &err) == 0);
  CHECK(out.find("region.gate_multiply,mask,") != std::string::npos);
  CHECK(out.find("total_millijoules=") != std::string::npos);

  // Validation failures are one-line diagnostics with exit 1.
  CHECK(cli({"train", "--data", manifest, "--set", "warp=9"}, &out, &err) == 1);
  CHECK(err.rfind("error: ", 0) == 0);
  CHECK(std::count(err.begin(), err.end(), '\n') == 1);
  CHECK(cli({"eval", "--checkpoint", (dir.path / "nope.ckpt").string(), "--data", manifest}, &out, &err) == 1);
}

TEST_CASE("cli eval of the identity score matrix prints R@Sum 600") {
  TempDir dir("cli_identity");
  {
    std::ofstream f(dir.path / "identity.csv");
    for (int i = 0; i < 10; ++i) {
      for (int j = 0; j < 10; ++j) f << (j ? "," : "") << (i == j ? 1 : 0);
      f << "\n";
    }
  }
  std::string out, err;
  CHECK(cli({"eval", "--scores", (dir.path / "identity.csv").string()}, &out, &err) == 0);
  CHECK(out.find("R@Sum 600") != std::string::npos);
}

TEST_CASE("cli ablate over time steps emits one row per T") {
  TempDir dir("cli_ablate");
  std::string out, err;
  REQUIRE(cli({"synth-data", "--out", (dir.path / "d").string(), "--pairs", "12", "--regions", "4", "--words", "4",
               "--d-region", "8", "--d-word", "8"},
              &out, &err) == 0);
  REQUIRE(cli({"ablate", "--data", (dir.path / "d/manifest.txt").string(), "--axis", "time-steps", "--values",
               "1,2,3,4", "--seeds", "1", "--set", "D=8", "--set", "B=4", "--set", "h=2", "--set", "epochs=1",
               "--set", "decay_epochs=0", "--set", "val_fraction=0.25", "--out", (dir.path / "abl").string()},
              &out, &err) == 0);
  std::istringstream rows(out);
  std::string line;
  std::vector<std::string> values;
  while (std::getline(rows, line)) {
    std::istringstream fields(line);
    std::string axis, value;
    if (fields >> axis >> value && axis == "time-steps") values.push_back(value);
  }
  CHECK(values == std::vector<std::string>{"1", "2", "3", "4"});
}
