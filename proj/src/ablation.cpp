#include "cmsf/ablation.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include "cmsf/errors.hpp"
#include "cmsf/trainer.hpp"

namespace cmsf {

const std::vector<std::string>& ablation_axes() {
  static const std::vector<std::string> axes = {"align", "fusion", "time-steps", "h", "generator", "objective"};
  return axes;
}

void apply_axis(RunConfig& cfg, const std::string& axis, const std::string& value) {
  if (axis == "align") {
    cfg.set("align", value);
  } else if (axis == "fusion") {
    cfg.set("fusion", value);
  } else if (axis == "time-steps") {
    cfg.set("T", value);
  } else if (axis == "h") {
    cfg.set("h", value);
  } else if (axis == "generator") {
    cfg.set("generator", value);
  } else if (axis == "objective") {
    // Dual-stream keeps only the basic unimodal alignment.
    if (value == "dual-stream") {
      cfg.early_alignment = false;
      cfg.fusion = FusionKind::kNone;
    } else if (value == "early") {
      cfg.early_alignment = true;
      cfg.fusion = FusionKind::kNone;
    } else if (value == "fusion") {
      cfg.early_alignment = false;
      if (cfg.fusion == FusionKind::kNone) cfg.fusion = FusionKind::kScca;
    } else if (value == "full") {
      cfg.early_alignment = true;
      if (cfg.fusion == FusionKind::kNone) cfg.fusion = FusionKind::kScca;
    } else {
      throw ConfigError("objective must be dual-stream, early, fusion or full, got '" + value + "'");
    }
  } else {
    throw ConfigError("unknown ablation axis '" + axis + "'");
  }
}

double AblationRow::mean() const {
  if (rsums.empty()) return 0.0;
  return std::accumulate(rsums.begin(), rsums.end(), 0.0) / double(rsums.size());
}

double AblationRow::stddev() const {
  if (rsums.empty()) return 0.0;
  const double m = mean();
  double ss = 0;
  for (double r : rsums) ss += (r - m) * (r - m);
  return std::sqrt(ss / double(rsums.size()));
}

std::vector<AblationRow> run_ablation(const RunConfig& base, const FeatureDataset& data, const std::string& axis,
                                      const std::vector<std::string>& values, std::size_t seeds,
                                      std::ostream* progress) {
  if (values.empty()) throw UsageError("ablation needs at least one value");
  if (seeds == 0) throw UsageError("ablation needs at least one seed");
  // Validate every point before training any of them.
  std::vector<RunConfig> configs;
  for (const auto& v : values) {
    RunConfig c = base;
    apply_axis(c, axis, v);
    c.validate(data.N, data.L);
    configs.push_back(c);
  }
  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < values.size(); ++i) {
    AblationRow row{axis, values[i], {}};
    for (std::size_t s = 0; s < seeds; ++s) {
      RunConfig c = configs[i];
      c.seed = base.seed + s;
      Trainer trainer(c, data);
      trainer.train();
      row.rsums.push_back(trainer.history().back().validation.rsum());
      if (progress) {
        *progress << "ablate " << axis << "=" << values[i] << " seed=" << c.seed << " rsum=" << row.rsums.back()
                  << "\n" << std::flush;
      }
    }
    rows.push_back(row);
  }
  return rows;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-12s %-12s %6s %10s %10s\n", "axis", "value", "seeds", "mean_rsum", "std_rsum");
  std::string out = buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-12s %-12s %6zu %10.2f %10.2f\n", r.axis.c_str(), r.value.c_str(),
                  r.rsums.size(), r.mean(), r.stddev());
    out += buf;
  }
  return out;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "axis,value,seeds,mean_rsum,std_rsum,rsums\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, ",%zu,%.4f,%.4f,", r.rsums.size(), r.mean(), r.stddev());
    out += r.axis + "," + r.value + buf;
    for (std::size_t i = 0; i < r.rsums.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%s%.4f", i ? ";" : "", r.rsums[i]);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

}  // namespace cmsf
