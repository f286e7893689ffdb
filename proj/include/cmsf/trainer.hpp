#pragma once
// Minibatch training loop, recall evaluation and resume support.
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cmsf/config.hpp"
#include "cmsf/dataset.hpp"
#include "cmsf/metrics.hpp"
#include "cmsf/model.hpp"
#include "cmsf/optimizer.hpp"

namespace cmsf {

// Eval-mode encoding of every pair, no fusion, scored in row blocks.
RecallMetrics evaluate_recall(const CmsfModel& model, const FeatureDataset& data, std::size_t block = 64);

struct StepRecord {
  std::size_t epoch = 0, step = 0;  // step is global across epochs
  std::vector<std::pair<std::string, double>> losses;
  float lr_encoder = 0, lr_fusion = 0;
  std::string to_log() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_loss = 0;
  RecallMetrics validation;
  std::optional<RecallMetrics> train;  // when TrainOptions::eval_train
  std::string to_log() const;
};

struct TrainOptions {
  // Directory for best.ckpt, last.ckpt, config.txt and history.csv; empty
  // keeps everything in memory.
  std::filesystem::path out_dir;
  std::ostream* log = nullptr;  // one line per step and per epoch
  bool eval_train = false;
};

class Trainer {
 public:
  // Validates the config against the data before allocating the model.
  Trainer(RunConfig config, const FeatureDataset& data, TrainOptions options = {});

  // Restores model, optimiser and epoch counter from a checkpoint written by
  // this trainer (normally last.ckpt).
  void resume(const std::filesystem::path& checkpoint);

  // Runs the remaining epochs, returning the history so far.
  const std::vector<EpochRecord>& train();
  // One epoch: shuffle seeded by (seed, epoch), then optimisation steps.
  EpochRecord run_epoch();
  // One optimisation step on the given pair indices; returns the losses
  // evaluated before the update. Throws DivergenceError on a non-finite loss.
  StepRecord step(const std::vector<std::size_t>& pairs);

  // Training pairs of `epoch` cut into batches of B (a trailing singleton is
  // merged into the previous batch).
  std::vector<std::vector<std::size_t>> batches(std::size_t epoch) const;

  const RunConfig& config() const { return cfg_; }
  CmsfModel& model() { return *model_; }
  AdamW& optimizer() { return *opt_; }
  const Split& split() const { return split_; }
  std::size_t epoch() const { return epoch_; }
  const std::vector<EpochRecord>& history() const { return history_; }
  const std::vector<StepRecord>& steps() const { return steps_; }
  double best_rsum() const { return best_; }

  void save(const std::filesystem::path& path);

 private:
  RunConfig cfg_;
  const FeatureDataset& data_;
  TrainOptions opts_;
  Split split_;
  FeatureDataset validation_, train_subset_;
  std::unique_ptr<CmsfModel> model_;
  std::unique_ptr<AdamW> opt_;
  std::size_t epoch_ = 0, global_step_ = 0;
  double best_ = -1.0;
  std::vector<EpochRecord> history_;
  std::vector<StepRecord> steps_;
};

}  // namespace cmsf
