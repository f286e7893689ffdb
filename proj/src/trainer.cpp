#include "cmsf/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>

#include "cmsf/checkpoint.hpp"
#include "cmsf/errors.hpp"
#include "cmsf/spike.hpp"

namespace cmsf {

namespace {

std::vector<std::size_t> all_pairs(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

RecallMetrics evaluate_recall(const CmsfModel& model, const FeatureDataset& data, std::size_t block) {
  NoGradGuard no_grad;
  const auto idx = all_pairs(data.pairs);
  const Tensor r = model.encode_regions(data.region_batch(idx));
  const Tensor e = model.encode_words(data.word_batch(idx));
  return recall_at_k(model.score(r, e, block));
}

std::string StepRecord::to_log() const {
  std::string s = "step " + std::to_string(step) + " epoch " + std::to_string(epoch);
  for (const auto& [name, v] : losses) s += " " + name + "=" + fmt(v);
  s += " lr_encoder=" + fmt(lr_encoder) + " lr_fusion=" + fmt(lr_fusion);
  return s;
}

std::string EpochRecord::to_log() const {
  std::string s = "epoch " + std::to_string(epoch) + " mean_loss=" + fmt(mean_loss) +
                  " val_rsum=" + fmt(validation.rsum()) + " val_i2t_r1=" + fmt(validation.i2t_r1) +
                  " val_t2i_r1=" + fmt(validation.t2i_r1);
  if (train) {
    s += " train_i2t_r1=" + fmt(train->i2t_r1) + " train_t2i_r1=" + fmt(train->t2i_r1) +
         " train_rsum=" + fmt(train->rsum());
  }
  return s;
}

Trainer::Trainer(RunConfig config, const FeatureDataset& data, TrainOptions options)
    : cfg_(std::move(config)), data_(data), opts_(std::move(options)) {
  data_.validate();
  cfg_.validate(data_.N, data_.L);
  if (data_.pairs < 2) throw UsageError("training needs at least two pairs");
  split_ = split_pairs(data_.pairs, cfg_.val_fraction, cfg_.seed);
  if (split_.train.size() < 2) throw UsageError("training split has fewer than two pairs");
  validation_ = data_.subset(split_.validation.empty() ? split_.train : split_.validation);
  if (opts_.eval_train) train_subset_ = data_.subset(split_.train);
  set_surrogate_alpha(cfg_.surrogate_alpha);
  model_ = std::make_unique<CmsfModel>(cfg_.model_config(data_.d_region, data_.d_word));
  AdamWOptions ao;
  ao.lr_encoder = cfg_.lr_encoder;
  ao.lr_fusion = cfg_.lr_fusion;
  ao.weight_decay = cfg_.weight_decay;
  opt_ = std::make_unique<AdamW>(model_->params(), ao);
  if (!opts_.out_dir.empty()) {
    std::filesystem::create_directories(opts_.out_dir);
    std::ofstream(opts_.out_dir / "config.txt") << cfg_.to_text();
  }
}

std::vector<std::vector<std::size_t>> Trainer::batches(std::size_t epoch) const {
  std::vector<std::size_t> order = split_.train;
  std::seed_seq seq{std::uint32_t(cfg_.seed), std::uint32_t(cfg_.seed >> 32), std::uint32_t(epoch), 0x7a11u};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < order.size(); start += cfg_.B) {
    const std::size_t end = std::min(order.size(), start + cfg_.B);
    out.emplace_back(order.begin() + std::ptrdiff_t(start), order.begin() + std::ptrdiff_t(end));
  }
  if (out.size() > 1 && out.back().size() < 2) {
    out[out.size() - 2].insert(out[out.size() - 2].end(), out.back().begin(), out.back().end());
    out.pop_back();
  }
  return out;
}

StepRecord Trainer::step(const std::vector<std::size_t>& pairs) {
  set_surrogate_alpha(cfg_.surrogate_alpha);
  const float scale = cfg_.lr_scale(epoch_);
  model_->params().zero_grad();
  LossBreakdown loss =
      model_->training_loss(data_.region_batch(pairs), data_.word_batch(pairs), cfg_.loss_weights());
  StepRecord rec;
  rec.epoch = epoch_;
  rec.step = global_step_;
  rec.losses = loss.values();
  rec.lr_encoder = cfg_.lr_encoder * scale;
  rec.lr_fusion = cfg_.lr_fusion * scale;
  for (const auto& [name, v] : rec.losses) {
    if (!std::isfinite(v)) throw DivergenceError("non-finite loss at " + rec.to_log());
  }
  loss.total.backward();
  opt_->step(scale);
  ++global_step_;
  if (opts_.log) *opts_.log << rec.to_log() << "\n";
  steps_.push_back(rec);
  return rec;
}

EpochRecord Trainer::run_epoch() {
  if (epoch_ >= cfg_.epochs) throw UsageError("all " + std::to_string(cfg_.epochs) + " epochs already ran");
  EpochRecord rec;
  rec.epoch = epoch_;
  double sum = 0;
  std::size_t n = 0;
  for (const auto& b : batches(epoch_)) {
    const StepRecord s = step(b);
    sum += s.losses.back().second;
    ++n;
  }
  rec.mean_loss = sum / double(n);
  rec.validation = evaluate_recall(*model_, validation_);
  if (opts_.eval_train) rec.train = evaluate_recall(*model_, train_subset_);
  ++epoch_;
  history_.push_back(rec);
  if (opts_.log) *opts_.log << rec.to_log() << "\n" << std::flush;
  if (!opts_.out_dir.empty()) {
    const bool improved = rec.validation.rsum() > best_;
    if (improved) best_ = rec.validation.rsum();
    save(opts_.out_dir / "last.ckpt");
    if (improved) save(opts_.out_dir / "best.ckpt");
    const auto csv = opts_.out_dir / "history.csv";
    const bool fresh = !std::filesystem::exists(csv) || rec.epoch == 0;
    std::ofstream out(csv, fresh ? std::ios::trunc : std::ios::app);
    if (fresh) out << "epoch,mean_loss," << RecallMetrics::csv_header() << "\n";
    out << rec.epoch << "," << fmt(rec.mean_loss) << "," << rec.validation.csv_row() << "\n";
  } else if (rec.validation.rsum() > best_) {
    best_ = rec.validation.rsum();
  }
  return rec;
}

const std::vector<EpochRecord>& Trainer::train() {
  while (epoch_ < cfg_.epochs) run_epoch();
  return history_;
}

void Trainer::save(const std::filesystem::path& path) {
  CheckpointMeta meta;
  meta.epoch = epoch_;
  meta.d_region = data_.d_region;
  meta.d_word = data_.d_word;
  meta.N = data_.N;
  meta.L = data_.L;
  meta.best = best_;
  meta.config_text = cfg_.to_text();
  save_checkpoint(path, *model_, opt_.get(), meta);
}

void Trainer::resume(const std::filesystem::path& checkpoint) {
  const CheckpointMeta meta = load_checkpoint(checkpoint, *model_, opt_.get());
  if (meta.d_region != data_.d_region || meta.d_word != data_.d_word || meta.N != data_.N || meta.L != data_.L) {
    throw CheckpointError("checkpoint was written for different feature dimensions");
  }
  epoch_ = meta.epoch;
  best_ = meta.best;
  global_step_ = 0;
  for (std::size_t e = 0; e < epoch_; ++e) global_step_ += batches(e).size();
}

}  // namespace cmsf
