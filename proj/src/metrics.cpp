#include "cmsf/metrics.hpp"

#include <cstdio>
#include <numeric>

#include "cmsf/errors.hpp"

namespace cmsf {

std::size_t pessimistic_rank(const std::vector<float>& row, std::size_t target) {
  const float s = row.at(target);
  std::size_t rank = 0;
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (j != target && !(row[j] < s)) ++rank;  // NaN competitors also count against
  }
  return rank;
}

RecallMetrics recall_at_k(const Tensor& scores, const std::vector<std::size_t>& gt_in) {
  if (scores.rank() != 2 || scores.dim(0) != scores.dim(1) || scores.dim(0) == 0) {
    throw DimensionError("recall needs a non-empty square score matrix, got " + shape_str(scores.shape()));
  }
  const std::size_t n = scores.dim(0);
  std::vector<std::size_t> gt = gt_in;
  if (gt.empty()) {
    gt.resize(n);
    std::iota(gt.begin(), gt.end(), 0);
  }
  if (gt.size() != n) throw DimensionError("ground-truth mapping has " + std::to_string(gt.size()) + " entries for " + std::to_string(n) + " items");
  std::vector<std::size_t> inverse(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    if (gt[i] >= n || inverse[gt[i]] != n) throw UsageError("ground-truth mapping is not a permutation");
    inverse[gt[i]] = i;
  }

  const auto s = scores.data();
  std::vector<std::size_t> i2t(n), t2i(n);
  std::vector<float> line(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) line[j] = s[i * n + j];
    i2t[i] = pessimistic_rank(line, gt[i]);
  }
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) line[i] = s[i * n + j];
    t2i[j] = pessimistic_rank(line, inverse[j]);
  }

  RecallMetrics m;
  auto recall = [&](const std::vector<std::size_t>& ranks, std::size_t k) {
    std::size_t hits = 0;
    for (auto r : ranks) hits += r < k;
    return 100.0 * double(hits) / double(n);
  };
  for (std::size_t k : {1u, 5u, 10u}) {
    std::size_t used = k;
    if (k > n) {
      used = n;
      m.warnings.push_back("R@" + std::to_string(k) + " clamped to K=" + std::to_string(n) + " (only " +
                           std::to_string(n) + " items)");
    }
    const double a = recall(i2t, used), b = recall(t2i, used);
    if (k == 1) m.i2t_r1 = a, m.t2i_r1 = b;
    if (k == 5) m.i2t_r5 = a, m.t2i_r5 = b;
    if (k == 10) m.i2t_r10 = a, m.t2i_r10 = b;
  }
  return m;
}

std::string RecallMetrics::csv_header() { return "i2t_r1,i2t_r5,i2t_r10,t2i_r1,t2i_r5,t2i_r10,rsum"; }

std::string RecallMetrics::csv_row() const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f", i2t_r1, i2t_r5, i2t_r10, t2i_r1, t2i_r5,
                t2i_r10, rsum());
  return buf;
}

std::string RecallMetrics::table() const {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "%8s %8s %8s %8s %8s %8s %8s\n%8.2f %8.2f %8.2f %8.2f %8.2f %8.2f %8.2f\n", "i2t@1", "i2t@5",
                "i2t@10", "t2i@1", "t2i@5", "t2i@10", "R@Sum", i2t_r1, i2t_r5, i2t_r10, t2i_r1, t2i_r5, t2i_r10,
                rsum());
  return buf;
}

}  // namespace cmsf
