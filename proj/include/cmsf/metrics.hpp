#pragma once
// Recall@K over a pooled (images x captions) score matrix.
#include <cstddef>
#include <string>
#include <vector>

#include "cmsf/tensor.hpp"

namespace cmsf {

struct RecallMetrics {
  // Percentages in [0, 100].
  double i2t_r1 = 0, i2t_r5 = 0, i2t_r10 = 0;
  double t2i_r1 = 0, t2i_r5 = 0, t2i_r10 = 0;
  double rsum() const { return i2t_r1 + i2t_r5 + i2t_r10 + t2i_r1 + t2i_r5 + t2i_r10; }
  // One entry per K that had to be clamped to the item count.
  std::vector<std::string> warnings;

  static std::string csv_header();
  std::string csv_row() const;
  // Two-line aligned table (header + values).
  std::string table() const;
};

// scores[i][j]: image i vs caption j, square. gt[i] is the caption paired
// with image i (identity when empty) and must be a permutation. A query's
// rank counts every competitor scoring >= its partner, so ties never help.
RecallMetrics recall_at_k(const Tensor& scores, const std::vector<std::size_t>& gt = {});

// Zero-based pessimistic rank of column `target` within `row`.
std::size_t pessimistic_rank(const std::vector<float>& row, std::size_t target);

}  // namespace cmsf
