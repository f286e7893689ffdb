#pragma once
// Hyperparameter sweeps over one axis, repeated across seeds.
#include <cstddef>
#include <ostream>
#include <string>
#include <vector>

#include "cmsf/config.hpp"
#include "cmsf/dataset.hpp"

namespace cmsf {

// Axes: "align" (lse, vha, tha, biha), "fusion" (none, scca, sca, scsa),
// "time-steps" (T), "h" (comb heads), "generator" (variant tags) and
// "objective" (dual-stream, early, fusion, full).
const std::vector<std::string>& ablation_axes();
// Applies one axis value; unknown axes or values are ConfigErrors.
void apply_axis(RunConfig& cfg, const std::string& axis, const std::string& value);

struct AblationRow {
  std::string axis, value;
  std::vector<double> rsums;  // final validation R@Sum per seed
  double mean() const;
  double stddev() const;  // population
};

// Trains one model per (value, seed); seeds run from base.seed upward.
std::vector<AblationRow> run_ablation(const RunConfig& base, const FeatureDataset& data, const std::string& axis,
                                      const std::vector<std::string>& values, std::size_t seeds,
                                      std::ostream* progress = nullptr);

std::string ablation_table(const std::vector<AblationRow>& rows);
std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace cmsf
