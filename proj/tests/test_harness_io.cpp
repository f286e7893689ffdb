#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "cmsf/checkpoint.hpp"
#include "cmsf/config.hpp"
#include "cmsf/dataset.hpp"
#include "cmsf/errors.hpp"
#include "cmsf/metrics.hpp"
#include "cmsf/ops.hpp"
#include "cmsf/optimizer.hpp"
#include "cmsf/trainer.hpp"
#include "test_support.hpp"

using namespace cmsf;
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

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

SynthOptions tiny_synth(std::uint64_t seed = 3) {
  SynthOptions o;
  o.seed = seed;
  o.pairs = 12;
  o.N = 5;
  o.L = 4;
  o.d_region = 7;
  o.d_word = 6;
  o.latent_dim = 4;
  return o;
}

ModelConfig tiny_model(std::uint64_t seed = 0) {
  ModelConfig cfg;
  cfg.d_region = 7;
  cfg.d_word = 6;
  cfg.D = 8;
  cfg.fusion = {FusionKind::kScca, 2};
  cfg.seed = seed;
  return cfg;
}

}  // namespace

// ---------------------------------------------------------------- dataset

TEST_CASE("synthetic data: noise 0 reproduces the shared latent code exactly") {
  auto o = tiny_synth();
  o.noise = 0.0f;
  const auto s = synth_dataset(o);
  const auto& d = s.data;
  REQUIRE(s.concepts == std::min(o.N, o.L));
  auto project = [&](std::size_t pair, std::uint32_t c, const std::vector<float>& proj, std::size_t width,
                     std::size_t col) {
    double acc = 0;
    for (std::size_t k = 0; k < o.latent_dim; ++k) {
      acc += double(s.latents[(pair * s.concepts + c) * o.latent_dim + k]) * proj[k * width + col];
    }
    return acc;
  };
  for (std::size_t p = 0; p < o.pairs; ++p) {
    for (std::size_t n = 0; n < o.N; ++n) {
      const auto c = s.region_code[p * o.N + n];
      REQUIRE(c < s.concepts);
      for (std::size_t j = 0; j < o.d_region; ++j) {
        CHECK(d.regions[(p * o.N + n) * o.d_region + j] ==
              doctest::Approx(project(p, c, s.region_projection, o.d_region, j)).epsilon(1e-5));
      }
    }
    for (std::size_t l = 0; l < o.L; ++l) {
      const auto c = s.word_code[p * o.L + l];
      REQUIRE(c < s.concepts);
      for (std::size_t j = 0; j < o.d_word; ++j) {
        CHECK(d.words[(p * o.L + l) * o.d_word + j] ==
              doctest::Approx(project(p, c, s.word_projection, o.d_word, j)).epsilon(1e-5));
      }
    }
  }
  // Latents of different pairs are drawn independently.
  for (std::size_t p = 1; p < o.pairs; ++p) {
    bool differs = false;
    for (std::size_t k = 0; k < s.concepts * o.latent_dim; ++k) {
      differs |= s.latents[k] != s.latents[p * s.concepts * o.latent_dim + k];
    }
    CHECK(differs);
  }
}

TEST_CASE("synthetic data: determinism, files and loader checks") {
  TempDir a("synth_a"), b("synth_b");
  const auto m1 = write_dataset(synth_dataset(tiny_synth(9)).data, a.path);
  const auto m2 = write_dataset(synth_dataset(tiny_synth(9)).data, b.path);
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(a.path)) {
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), a.path));
  }
  CHECK(files.size() == 1 + 2 * 12);
  for (const auto& f : files) CHECK(read_bytes(a.path / f) == read_bytes(b.path / f));
  CHECK(synth_dataset(tiny_synth(9)).data.regions != synth_dataset(tiny_synth(10)).data.regions);

  const auto loaded = load_dataset(m1);
  const auto original = synth_dataset(tiny_synth(9)).data;
  CHECK(loaded.regions == original.regions);
  CHECK(loaded.words == original.words);
  CHECK(loaded.N == 5);
  CHECK(loaded.L == 4);

  // A feature file one float short is rejected before any values are read.
  std::string manifest = read_bytes(m2);
  std::istringstream lines(manifest);
  std::string line;
  for (int i = 0; i < 5; ++i) std::getline(lines, line);
  const auto region_file = b.path / line.substr(0, line.find(' '));
  const auto bytes = read_bytes(region_file);
  std::ofstream(region_file, std::ios::binary | std::ios::trunc).write(bytes.data(), std::streamsize(bytes.size() - 4));
  CHECK_THROWS_AS(load_dataset(m2), DatasetError);
  fs::remove(region_file);
  CHECK_THROWS_AS(load_dataset(m2), DatasetError);
  CHECK_THROWS_AS(load_dataset(b.path / "missing.txt"), DatasetError);
}

TEST_CASE("synthetic data: option errors") {
  auto o = tiny_synth();
  o.pairs = 1;
  CHECK_THROWS_AS(synth_dataset(o), UsageError);
  o = tiny_synth();
  o.noise = -0.1f;
  CHECK_THROWS_AS(synth_dataset(o), UsageError);
}

TEST_CASE("split_pairs is seed-stable and partitions the pairs") {
  const auto s = split_pairs(200, 0.1, 4);
  CHECK(s.validation.size() == 20);
  CHECK(s.train.size() == 180);
  std::vector<std::size_t> all = s.train;
  all.insert(all.end(), s.validation.begin(), s.validation.end());
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> expect(200);
  std::iota(expect.begin(), expect.end(), 0);
  CHECK(all == expect);
  CHECK(split_pairs(200, 0.1, 4).validation == s.validation);
  CHECK(split_pairs(200, 0.1, 5).validation != s.validation);
  CHECK(split_pairs(3, 0.01, 0).validation.size() == 1);
  CHECK(split_pairs(10, 0.0, 0).validation.empty());
  CHECK_THROWS_AS(split_pairs(10, 1.0, 0), ConfigError);
}

TEST_CASE("a fresh model retrieves at chance level") {
  SynthOptions o;
  o.seed = 11;
  o.pairs = 200;
  o.N = o.L = 36;
  o.d_region = 256;  // reduced widths keep the test fast; the code path is the same
  o.d_word = 128;
  o.noise = 0.1f;
  const auto data = synth_dataset(o).data;
  ModelConfig cfg;
  cfg.d_region = o.d_region;
  cfg.d_word = o.d_word;
  cfg.D = 64;
  cfg.fusion = {FusionKind::kScca, 6};
  CmsfModel model(cfg);
  const auto calls = fusion_invocations();
  const auto m = evaluate_recall(model, data);
  CHECK(fusion_invocations() == calls);
  const double p = 1.0 / 200.0;
  const double bound = 100.0 * (3.0 / 200.0 + 3.0 * std::sqrt(p * (1 - p) / 200.0));
  CHECK(m.i2t_r1 <= bound);
  CHECK(m.t2i_r1 <= bound);
}

// ---------------------------------------------------------------- config

TEST_CASE("config text round-trips and rejects bad input") {
  RunConfig c;
  CHECK(c.D == 1024);
  CHECK(c.B == 160);
  CHECK(c.alpha == 0.1f);
  CHECK(c.h == 6);
  CHECK(c.lambda == 0.5f);
  CHECK(c.T == 2);
  CHECK(c.epochs == 35);
  c.D = 64;
  c.lr_encoder = 1.25e-3f;
  c.fusion = FusionKind::kSca;
  c.align = AlignMode::kLse;
  c.generator = GeneratorVariant::kConvBn;
  c.early_alignment = false;
  c.seed = 123456789012345ULL;
  const auto text = c.to_text();
  const auto back = RunConfig::parse(text);
  CHECK(back.to_text() == text);
  CHECK(back.seed == c.seed);
  CHECK(back.lr_encoder == c.lr_encoder);
  for (const auto& key : RunConfig::keys()) CHECK(text.find(key + " = ") != std::string::npos);

  const auto parsed = RunConfig::parse("# comment\n  D = 32   # trailing\n\nfusion=none\nlr_encoder = 5e-4\n");
  CHECK(parsed.D == 32);
  CHECK(parsed.fusion == FusionKind::kNone);
  CHECK(parsed.lr_encoder == 5e-4f);
  CHECK_THROWS_AS(RunConfig::parse("depth = 3"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("D = -1"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("D = 3x"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("alpha = nan"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("early_alignment = maybe"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("align = cosine"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("just words"), ConfigError);
  CHECK_THROWS_AS(RunConfig::load("/nonexistent/cmsf.cfg"), ConfigError);
}

TEST_CASE("config validation and learning-rate schedule") {
  RunConfig c;
  CHECK_NOTHROW(c.validate(36, 36));
  CHECK_THROWS_AS(c.validate(8, 8), ConfigError);  // h = 6 does not divide 8
  c.h = 2;
  CHECK_NOTHROW(c.validate(8, 8));
  auto bad = [](auto mutate) {
    RunConfig r;
    mutate(r);
    return r;
  };
  CHECK_THROWS_AS(bad([](RunConfig& r) { r.B = 1; }).validate(36, 36), ConfigError);
  CHECK_THROWS_AS(bad([](RunConfig& r) { r.lambda = 2; }).validate(36, 36), ConfigError);
  CHECK_THROWS_AS(bad([](RunConfig& r) { r.alpha = 0; }).validate(36, 36), ConfigError);
  CHECK_THROWS_AS(bad([](RunConfig& r) { r.T = 0; }).validate(36, 36), ConfigError);
  CHECK_THROWS_AS(bad([](RunConfig& r) { r.temperature = 0; }).validate(36, 36), ConfigError);
  CHECK_THROWS_AS(bad([](RunConfig& r) { r.decay_epochs = 40; }).validate(36, 36), ConfigError);
  CHECK_THROWS_AS(bad([](RunConfig& r) { r.val_fraction = 1; }).validate(36, 36), ConfigError);
  for (std::size_t e = 0; e < 35; ++e) CHECK(RunConfig{}.lr_scale(e) == (e < 20 ? 1.0f : 0.1f));
}

// ---------------------------------------------------------------- optimiser

TEST_CASE("AdamW matches a double-precision reference") {
  ParamStore store;
  Tensor a = store.add("enc", Tensor::from({3}, {0.5f, -1.0f, 2.0f}), ParamGroup::kEncoder);
  Tensor b = store.add("fus", Tensor::from({2}, {1.0f, -0.25f}), ParamGroup::kFusion);
  Tensor idle = store.add("idle", Tensor::from({1}, {7.0f}), ParamGroup::kEncoder);
  AdamWOptions o;
  o.lr_encoder = 0.01f;
  o.lr_fusion = 0.1f;
  o.weight_decay = 0.05f;
  AdamW opt(store, o);

  struct Ref {
    std::vector<double> w, m, v;
    double lr;
  };
  Ref ra{{0.5, -1.0, 2.0}, {0, 0, 0}, {0, 0, 0}, 0.01}, rb{{1.0, -0.25}, {0, 0}, {0, 0}, 0.1};
  const std::vector<std::vector<float>> ga = {{1, -2, 0.5f}, {0.1f, 0.1f, -3}, {-1, 0, 2}};
  const std::vector<std::vector<float>> gb = {{0.3f, -0.7f}, {2, 1}, {-0.5f, 0}};
  for (int t = 1; t <= 3; ++t) {
    const float scale = t == 3 ? 0.5f : 1.0f;
    store.zero_grad();
    add(sum(mul(a, Tensor::from({3}, ga[t - 1]))), sum(mul(b, Tensor::from({2}, gb[t - 1])))).backward();
    opt.step(scale);
    auto ref_step = [&](Ref& r, const std::vector<float>& g) {
      const double lr = r.lr * scale;
      for (std::size_t i = 0; i < r.w.size(); ++i) {
        r.m[i] = 0.9 * r.m[i] + 0.1 * g[i];
        r.v[i] = 0.999 * r.v[i] + 0.001 * double(g[i]) * g[i];
        const double mh = r.m[i] / (1 - std::pow(0.9, t));
        const double vh = r.v[i] / (1 - std::pow(0.999, t));
        r.w[i] -= lr * 0.05 * r.w[i];
        r.w[i] -= lr * mh / (std::sqrt(vh) + 1e-8);
      }
    };
    ref_step(ra, ga[t - 1]);
    ref_step(rb, gb[t - 1]);
    for (std::size_t i = 0; i < 3; ++i) CHECK(a.at(i) == doctest::Approx(ra.w[i]).epsilon(1e-5));
    for (std::size_t i = 0; i < 2; ++i) CHECK(b.at(i) == doctest::Approx(rb.w[i]).epsilon(1e-5));
  }
  CHECK(idle.at(0) == 7.0f);
  CHECK(opt.steps() == 3);
}

// ---------------------------------------------------------------- metrics

TEST_CASE("recall@K examples") {
  const std::size_t n = 12;
  Tensor eye = Tensor::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) eye.mutable_data()[i * n + i] = 1.0f;
  const auto m = recall_at_k(eye);
  CHECK(m.rsum() == 600.0);
  CHECK(m.warnings.empty());

  std::vector<std::size_t> anti(n);
  for (std::size_t i = 0; i < n; ++i) anti[i] = n - 1 - i;
  const auto wrong = recall_at_k(eye, anti);
  CHECK(wrong.i2t_r1 == 0.0);
  CHECK(wrong.t2i_r1 == 0.0);

  // Ties are pessimistic: a constant matrix never ranks the partner first.
  const auto flat = recall_at_k(Tensor::full({n, n}, 0.5f));
  CHECK(flat.rsum() == 0.0);
  CHECK(pessimistic_rank({0.2f, 0.9f, 0.9f}, 1) == 1);
  CHECK(pessimistic_rank({0.2f, 0.9f, 0.1f}, 1) == 0);

  // Fewer items than K clamps with a warning.
  Tensor small = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const auto clamped = recall_at_k(small);
  CHECK(clamped.rsum() == 600.0);
  CHECK(clamped.warnings.size() == 2);

  CHECK_THROWS_AS(recall_at_k(Tensor::zeros({2, 3})), DimensionError);
  CHECK_THROWS_AS(recall_at_k(eye, std::vector<std::size_t>(n, 0)), UsageError);
  CHECK(m.csv_header() == "i2t_r1,i2t_r5,i2t_r10,t2i_r1,t2i_r5,t2i_r10,rsum");
}

TEST_CASE("recall@K of random scores sits at the permutation expectation") {
  const std::size_t n = 200, seeds = 20;
  std::vector<double> r1, r5;
  for (std::size_t seed = 0; seed < seeds; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    const auto m = recall_at_k(random_tensor(rng, {n, n}));
    r1.push_back(m.i2t_r1);
    r1.push_back(m.t2i_r1);
    r5.push_back(m.i2t_r5);
    r5.push_back(m.t2i_r5);
  }
  auto within = [&](const std::vector<double>& xs, double k) {
    const double p = k / double(n);
    const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / double(xs.size());
    const double sigma = 100.0 * std::sqrt(p * (1 - p) / double(n)) / std::sqrt(double(xs.size()));
    CHECK(std::abs(mean - 100.0 * p) <= 3.0 * sigma);
  };
  within(r1, 1);
  within(r5, 5);
}

// ---------------------------------------------------------------- checkpoint

TEST_CASE("checkpoint index matches the golden layout") {
  TempDir dir("ckpt_golden");
  CmsfModel model(tiny_model());
  AdamW opt(model.params(), {});
  CheckpointMeta meta{3, 0, 7, 6, 5, 4, 123.5, "D = 8\n"};
  save_checkpoint(dir.path / "m.ckpt", model, &opt, meta);
  const std::string bytes = read_bytes(dir.path / "m.ckpt");
  CHECK(!fs::exists(dir.path / "m.ckpt.tmp"));

  std::ifstream golden(std::string(CMSF_GOLDEN_DIR) + "/checkpoint_header.txt");
  REQUIRE(golden.good());
  std::ostringstream want;
  want << golden.rdbuf();
  const auto data_pos = bytes.find("\ndata ");
  REQUIRE(data_pos != std::string::npos);
  const auto header_end = bytes.find('\n', data_pos + 1) + 1;
  CHECK(bytes.substr(0, header_end) == want.str());

  // The first array is param/region.linear at offset 0, little-endian.
  const Tensor w = model.params().find("region.linear")->tensor;
  REQUIRE(bytes.size() >= header_end + w.numel() * 4);
  for (std::size_t i = 0; i < w.numel(); ++i) {
    std::uint32_t u = 0;
    for (int k = 0; k < 4; ++k) u |= std::uint32_t(std::uint8_t(bytes[header_end + 4 * i + k])) << (8 * k);
    float f;
    std::memcpy(&f, &u, 4);
    CHECK(f == w.at(i));
  }
  const auto back = read_checkpoint_meta(dir.path / "m.ckpt");
  CHECK(back.epoch == 3);
  CHECK(back.best == 123.5);
  CHECK(back.config_text == "D = 8\n");
}

TEST_CASE("checkpoint round trip gives bit-identical evaluation") {
  TempDir dir("ckpt_rt");
  auto o = tiny_synth(21);
  o.N = 6;
  const auto data = synth_dataset(o).data;
  CmsfModel a(tiny_model(1));
  AdamW opt_a(a.params(), {});
  // A few training steps so moments and running statistics are non-trivial.
  for (int i = 0; i < 3; ++i) {
    a.params().zero_grad();
    a.training_loss(data.region_batch({0, 1, 2, 3}), data.word_batch({0, 1, 2, 3}), {}).total.backward();
    opt_a.step();
  }
  save_checkpoint(dir.path / "a.ckpt", a, &opt_a, {});
  CmsfModel b(tiny_model(2));
  AdamW opt_b(b.params(), {});
  load_checkpoint(dir.path / "a.ckpt", b, &opt_b);
  CHECK(opt_b.steps() == 3);
  CHECK(opt_b.first_moments() == opt_a.first_moments());
  CHECK(opt_b.second_moments() == opt_a.second_moments());
  std::vector<std::size_t> all(o.pairs);
  std::iota(all.begin(), all.end(), 0);
  NoGradGuard ng;
  const Tensor sa = a.score(a.encode_regions(data.region_batch(all)), a.encode_words(data.word_batch(all)));
  const Tensor sb = b.score(b.encode_regions(data.region_batch(all)), b.encode_words(data.word_batch(all)));
  CHECK(std::vector<float>(sa.data().begin(), sa.data().end()) ==
        std::vector<float>(sb.data().begin(), sb.data().end()));
}

TEST_CASE("checkpoint errors") {
  TempDir dir("ckpt_err");
  CmsfModel model(tiny_model());
  save_checkpoint(dir.path / "m.ckpt", model, nullptr, {});

  // Loading with an optimiser needs moments that were never saved.
  AdamW opt(model.params(), {});
  try {
    load_checkpoint(dir.path / "m.ckpt", model, &opt);
    FAIL("expected a checkpoint error");
  } catch (const CheckpointError& e) {
    CHECK(std::string(e.what()).find("adam_m/") != std::string::npos);
  }
  auto wider = tiny_model();
  wider.D = 16;
  CmsfModel other(wider);
  CHECK_THROWS_AS(load_checkpoint(dir.path / "m.ckpt", other, nullptr), CheckpointError);

  const std::string bytes = read_bytes(dir.path / "m.ckpt");
  std::ofstream(dir.path / "short.ckpt", std::ios::binary).write(bytes.data(), std::streamsize(bytes.size() - 8));
  CHECK_THROWS_AS(load_checkpoint(dir.path / "short.ckpt", model, nullptr), CheckpointError);
  std::ofstream(dir.path / "junk.ckpt") << "hello\n";
  CHECK_THROWS_AS(load_checkpoint(dir.path / "junk.ckpt", model, nullptr), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint(dir.path / "none.ckpt", model, nullptr), CheckpointError);
}
