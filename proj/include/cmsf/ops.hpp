#pragma once

#include <cstddef>
#include <vector>

#include "cmsf/tensor.hpp"

namespace cmsf {

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, float c);
Tensor scale(const Tensor& a, float c);
Tensor div_scalar(const Tensor& a, float c);
// a * s with s a one-element tensor.
Tensor scale_by(const Tensor& a, const Tensor& s);
// a + s with s a one-element tensor.
Tensor add_scalar_tensor(const Tensor& a, const Tensor& s);

// Broadcast a length-D vector along the last axis of a.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor mul_row(const Tensor& a, const Tensor& row);

Tensor softplus(const Tensor& a);
Tensor exp(const Tensor& a);

// a: (..., m, k). b: (k, n) shared across the leading axes, or (..., k, n)
// with the same leading axes as a.
Tensor matmul(const Tensor& a, const Tensor& b);
// Swap the last two axes.
Tensor transpose_last(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const Tensor& a, const Tensor& b, int axis);
Tensor slice(const Tensor& a, int axis, std::size_t start, std::size_t length);
// Stacks equally shaped tensors along a new leading axis.
Tensor stack(const std::vector<Tensor>& parts);
// Each index along `axis` repeated `times` times consecutively.
Tensor repeat_interleave(const Tensor& a, int axis, std::size_t times);
// out[..., k, ...] = a[..., k - offset, ...] along `axis`, zero outside.
Tensor shift(const Tensor& a, int axis, long offset);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_axis(const Tensor& a, int axis);
// Max along an axis; the gradient goes to the lowest-index maximiser.
Tensor max_axis(const Tensor& a, int axis);
// (1/alpha) * log(sum(exp(alpha * a))) along the last axis, max-shifted.
Tensor logsumexp_last(const Tensor& a, float alpha);
Tensor softmax_last(const Tensor& a);

// Normalisation over the last axis.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps);
// Rows of the last axis scaled to unit L2 norm; zero rows stay finite.
Tensor l2_normalize_last(const Tensor& x, float eps = 1e-8f);

struct RunningStats {
  std::vector<float> mean;
  std::vector<float> var;
  bool initialized = false;

  // Zero mean, unit variance: the state a freshly built layer starts from.
  static RunningStats identity(std::size_t channels);
};

// Per-channel (last axis) normalisation with statistics pooled over every
// other axis, time included. Train mode normalises with batch statistics and
// folds them into `stats` with the given momentum; eval mode uses `stats`.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, RunningStats& stats,
                  bool train_mode, float momentum = 0.1f, float eps = 1e-5f);

}  // namespace cmsf
