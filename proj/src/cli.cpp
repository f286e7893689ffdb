#include "cmsf/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <memory>
#include <ostream>
#include <sstream>

#include "cmsf/ablation.hpp"
#include "cmsf/checkpoint.hpp"
#include "cmsf/config.hpp"
#include "cmsf/dataset.hpp"
#include "cmsf/errors.hpp"
#include "cmsf/metrics.hpp"
#include "cmsf/trainer.hpp"

namespace cmsf {

namespace {

const std::vector<std::string> kSubcommands = {"synth-data", "train", "eval", "energy", "ablate"};

struct Common {
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string config, out;
  std::vector<std::string> overrides;  // key=value
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--seed", c.seed, "Random seed")->each([&c](const std::string&) { c.seed_given = true; });
  app->add_option("--config", c.config, "Run configuration file (key = value)");
  app->add_option("--out", c.out, "Output path");
  app->add_option("--set", c.overrides, "Config override key=value (repeatable)");
}

RunConfig resolve_config(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : RunConfig::load(c.config);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed_given) cfg.seed = c.seed;
  return cfg;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct LoadedModel {
  CheckpointMeta meta;
  RunConfig cfg;
  std::unique_ptr<CmsfModel> model;
};

LoadedModel load_model(const std::string& path) {
  LoadedModel m;
  m.meta = read_checkpoint_meta(path);
  m.cfg = RunConfig::parse(m.meta.config_text);
  m.model = std::make_unique<CmsfModel>(m.cfg.model_config(m.meta.d_region, m.meta.d_word));
  load_checkpoint(path, *m.model, nullptr);
  return m;
}

void check_dims(const LoadedModel& m, const FeatureDataset& d) {
  if (m.meta.d_region != d.d_region || m.meta.d_word != d.d_word || m.meta.N != d.N || m.meta.L != d.L) {
    throw DatasetError("dataset shape (N=" + std::to_string(d.N) + ", L=" + std::to_string(d.L) + ", widths " +
                       std::to_string(d.d_region) + "/" + std::to_string(d.d_word) +
                       ") does not match the checkpoint");
  }
}

// Square score matrix from a CSV file, one row per image.
Tensor read_scores(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read scores file " + path);
  std::vector<float> values;
  std::size_t rows = 0, cols = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t n = 0;
    for (const auto& cell : split_list(line)) {
      try {
        values.push_back(std::stof(cell));
      } catch (const std::exception&) {
        throw UsageError("scores file: bad number '" + cell + "'");
      }
      ++n;
    }
    if (rows == 0) cols = n;
    if (n != cols) throw DimensionError("scores file: ragged row " + std::to_string(rows + 1));
    ++rows;
  }
  return Tensor::from({rows, cols}, std::move(values));
}

void write_text(const std::string& path, const std::string& text) {
  const std::filesystem::path p(path);
  if (!p.parent_path().empty()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw UsageError("cannot write " + path);
  out << text;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spiking cross-modal retrieval: data synthesis, training, evaluation, energy and ablations", "cmsf"};
  app.require_subcommand(1);

  Common common;

  // synth-data
  SynthOptions synth;
  auto* synth_cmd = app.add_subcommand("synth-data", "Write a synthetic paired feature dataset");
  add_common(synth_cmd, common);
  synth_cmd->add_option("--pairs", synth.pairs, "Number of pairs")->capture_default_str();
  synth_cmd->add_option("--regions", synth.N, "Region tokens per image")->capture_default_str();
  synth_cmd->add_option("--words", synth.L, "Word tokens per caption")->capture_default_str();
  synth_cmd->add_option("--d-region", synth.d_region, "Region feature width")->capture_default_str();
  synth_cmd->add_option("--d-word", synth.d_word, "Word feature width")->capture_default_str();
  synth_cmd->add_option("--latent-dim", synth.latent_dim, "Latent concept width")->capture_default_str();
  synth_cmd->add_option("--noise", synth.noise, "Gaussian noise scale")->capture_default_str();

  // train
  std::string data_path, resume_path;
  bool eval_train = false, quiet = false;
  auto* train_cmd = app.add_subcommand("train", "Train a model; writes checkpoints and logs into --out");
  add_common(train_cmd, common);
  train_cmd->add_option("--data", data_path, "Dataset manifest")->required();
  train_cmd->add_option("--resume", resume_path, "Checkpoint to resume from");
  train_cmd->add_flag("--eval-train", eval_train, "Also report recall on the training split each epoch");
  train_cmd->add_flag("--quiet", quiet, "Only log epochs");

  // eval
  std::string ckpt_path, scores_path;
  auto* eval_cmd = app.add_subcommand("eval", "Recall@K of a checkpoint on a dataset (or of a score matrix)");
  add_common(eval_cmd, common);
  eval_cmd->add_option("--checkpoint", ckpt_path, "Checkpoint file");
  eval_cmd->add_option("--data", data_path, "Dataset manifest");
  eval_cmd->add_option("--scores", scores_path, "CSV score matrix (rows: images, columns: captions)");

  // energy
  std::size_t calib = 16;
  auto* energy_cmd = app.add_subcommand("energy", "Theoretical energy report over a calibration batch");
  add_common(energy_cmd, common);
  energy_cmd->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required();
  energy_cmd->add_option("--data", data_path, "Dataset manifest (calibration pairs)")->required();
  energy_cmd->add_option("--batch", calib, "Calibration pairs")->capture_default_str();

  // ablate
  std::string axis, values;
  std::size_t seeds = 1;
  auto* ablate_cmd = app.add_subcommand("ablate", "Sweep one axis and tabulate mean validation R@Sum");
  add_common(ablate_cmd, common);
  ablate_cmd->add_option("--data", data_path, "Dataset manifest")->required();
  ablate_cmd->add_option("--axis", axis, "align | fusion | time-steps | h | generator | objective")->required();
  ablate_cmd->add_option("--values", values, "Comma-separated values")->required();
  ablate_cmd->add_option("--seeds", seeds, "Seeds per value")->capture_default_str();

  if (argc > 1 && argv[1][0] != '-' &&
      std::find(kSubcommands.begin(), kSubcommands.end(), argv[1]) == kSubcommands.end()) {
    err << "unknown subcommand '" << argv[1] << "'\n" << app.help();
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "error: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    if (synth_cmd->parsed()) {
      if (common.out.empty()) throw UsageError("synth-data needs --out <directory>");
      synth.seed = common.seed;
      const auto manifest = write_dataset(synth_dataset(synth).data, common.out);
      out << manifest.string() << "\n";
    } else if (train_cmd->parsed()) {
      if (common.out.empty()) throw UsageError("train needs --out <directory>");
      const RunConfig cfg = resolve_config(common);
      const FeatureDataset data = load_dataset(data_path);
      std::filesystem::create_directories(common.out);
      std::ofstream log_file(std::filesystem::path(common.out) / "train.log", std::ios::app);
      // Steps go to the log file; epochs also to stdout.
      struct Tee : std::streambuf {
        std::ostream *a, *b;
        bool quiet;
        std::string line;
        int overflow(int c) override {
          if (c == EOF) return 0;
          line.push_back(char(c));
          if (c == '\n') {
            *a << line;
            if (!quiet || line.rfind("epoch", 0) == 0) *b << line;
            line.clear();
          }
          return c;
        }
      } tee;
      tee.a = &log_file;
      tee.b = &out;
      tee.quiet = quiet;
      std::ostream log(&tee);
      TrainOptions opts;
      opts.out_dir = common.out;
      opts.log = &log;
      opts.eval_train = eval_train;
      Trainer trainer(cfg, data, opts);
      if (!resume_path.empty()) trainer.resume(resume_path);
      trainer.train();
      out << "best validation R@Sum " << trainer.best_rsum() << "\n";
    } else if (eval_cmd->parsed()) {
      RecallMetrics m;
      if (!scores_path.empty()) {
        m = recall_at_k(read_scores(scores_path));
      } else {
        if (ckpt_path.empty() || data_path.empty()) throw UsageError("eval needs --checkpoint and --data, or --scores");
        LoadedModel lm = load_model(ckpt_path);
        const FeatureDataset data = load_dataset(data_path);
        check_dims(lm, data);
        m = evaluate_recall(*lm.model, data);
      }
      for (const auto& w : m.warnings) err << "warning: " << w << "\n";
      out << m.table();
      out << "R@Sum " << m.rsum() << "\n";
      if (!common.out.empty()) write_text(common.out, RecallMetrics::csv_header() + "\n" + m.csv_row() + "\n");
    } else if (energy_cmd->parsed()) {
      LoadedModel lm = load_model(ckpt_path);
      const FeatureDataset data = load_dataset(data_path);
      check_dims(lm, data);
      if (calib == 0) throw UsageError("--batch must be positive");
      std::vector<std::size_t> idx(std::min(calib, data.pairs));
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      const EnergyReport report = lm.model->energy_report(data.region_batch(idx), data.word_batch(idx));
      const std::string text = report.to_text();
      out << text;
      if (!common.out.empty()) write_text(common.out, text);
    } else if (ablate_cmd->parsed()) {
      const RunConfig cfg = resolve_config(common);
      const FeatureDataset data = load_dataset(data_path);
      const auto rows = run_ablation(cfg, data, axis, split_list(values), seeds, &err);
      out << ablation_table(rows);
      if (!common.out.empty()) write_text(common.out, ablation_csv(rows));
    }
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: " << msg << "\n";
    return 1;
  }
  return 0;
}

}  // namespace cmsf
