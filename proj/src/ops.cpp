#include "cmsf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cmsf/errors.hpp"

namespace cmsf {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

std::size_t normalize_axis(const Tensor& a, int axis) {
  const int r = static_cast<int>(a.rank());
  const int ax = axis < 0 ? axis + r : axis;
  if (ax < 0 || ax >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(a.shape()));
  }
  return static_cast<std::size_t>(ax);
}

// Splits a shape around `axis` into (outer, axis length, inner).
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t n = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

void require_one_element(const Tensor& s, const char* op) {
  if (s.numel() != 1) throw DimensionError(std::string(op) + ": expected one-element tensor, got " + shape_str(s.shape()));
}

std::size_t last_dim(const Tensor& a, const char* op) {
  if (a.rank() == 0) throw DimensionError(std::string(op) + ": tensor has no axes");
  return a.shape().back();
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto x = a.data();
  const auto y = b.data();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return Tensor::from_op(a.shape(), std::move(out), {a, b}, [](const Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      auto g = grad_of(self.parents[p]);
      if (g.empty()) continue;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const auto x = a.data();
  const auto y = b.data();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return Tensor::from_op(a.shape(), std::move(out), {a, b}, [](const Node& self) {
    if (auto g = grad_of(self.parents[0]); !g.empty())
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    if (auto g = grad_of(self.parents[1]); !g.empty())
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto x = a.data();
  const auto y = b.data();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  if (auto* counter = active_op_counter()) counter->mask_muls += out.size();
  return Tensor::from_op(a.shape(), std::move(out), {a, b}, [](const Node& self) {
    const auto x = self.parents[0].data();
    const auto y = self.parents[1].data();
    if (auto g = grad_of(self.parents[0]); !g.empty())
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y[i];
    if (auto g = grad_of(self.parents[1]); !g.empty())
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x[i];
  });
}

Tensor add_scalar(const Tensor& a, float c) {
  const auto x = a.data();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + c;
  return Tensor::from_op(a.shape(), std::move(out), {a}, [](const Node& self) {
    auto g = grad_of(self.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor scale(const Tensor& a, float c) {
  const auto x = a.data();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * c;
  return Tensor::from_op(a.shape(), std::move(out), {a}, [c](const Node& self) {
    auto g = grad_of(self.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * c;
  });
}

Tensor div_scalar(const Tensor& a, float c) {
  const auto x = a.data();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] / c;
  return Tensor::from_op(a.shape(), std::move(out), {a}, [c](const Node& self) {
    auto g = grad_of(self.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / c;
  });
}

Tensor scale_by(const Tensor& a, const Tensor& s) {
  require_one_element(s, "scale_by");
  const float c = s.item();
  const auto x = a.data();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * c;
  return Tensor::from_op(a.shape(), std::move(out), {a, s}, [c](const Node& self) {
    if (auto g = grad_of(self.parents[0]); !g.empty())
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * c;
    if (auto g = grad_of(self.parents[1]); !g.empty()) {
      const auto x = self.parents[0].data();
      double acc = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) acc += double(self.grad[i]) * x[i];
      g[0] += static_cast<float>(acc);
    }
  });
}

Tensor add_scalar_tensor(const Tensor& a, const Tensor& s) {
  require_one_element(s, "add_scalar_tensor");
  const float c = s.item();
  const auto x = a.data();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + c;
  return Tensor::from_op(a.shape(), std::move(out), {a, s}, [](const Node& self) {
    if (auto g = grad_of(self.parents[0]); !g.empty())
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    if (auto g = grad_of(self.parents[1]); !g.empty()) {
      double acc = 0.0;
      for (float v : self.grad) acc += v;
      g[0] += static_cast<float>(acc);
    }
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  const std::size_t d = last_dim(a, "add_row");
  if (row.numel() != d) {
    throw DimensionError("add_row: row of shape " + shape_str(row.shape()) + " vs tensor " + shape_str(a.shape()));
  }
  const auto x = a.data();
  const auto r = row.data();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + r[i % d];
  return Tensor::from_op(a.shape(), std::move(out), {a, row}, [d](const Node& self) {
    if (auto g = grad_of(self.parents[0]); !g.empty())
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    if (auto g = grad_of(self.parents[1]); !g.empty())
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % d] += self.grad[i];
  });
}

Tensor mul_row(const Tensor& a, const Tensor& row) {
  const std::size_t d = last_dim(a, "mul_row");
  if (row.numel() != d) {
    throw DimensionError("mul_row: row of shape " + shape_str(row.shape()) + " vs tensor " + shape_str(a.shape()));
  }
  const auto x = a.data();
  const auto r = row.data();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * r[i % d];
  return Tensor::from_op(a.shape(), std::move(out), {a, row}, [d](const Node& self) {
    const auto x = self.parents[0].data();
    const auto r = self.parents[1].data();
    if (auto g = grad_of(self.parents[0]); !g.empty())
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * r[i % d];
    if (auto g = grad_of(self.parents[1]); !g.empty())
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % d] += self.grad[i] * x[i];
  });
}

Tensor softplus(const Tensor& a) {
  const auto x = a.data();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x[i] > 20.0f ? x[i] : std::log1p(std::exp(x[i]));
  }
  return Tensor::from_op(a.shape(), std::move(out), {a}, [](const Node& self) {
    const auto x = self.parents[0].data();
    auto g = grad_of(self.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / (1.0f + std::exp(-x[i]));
  });
}

Tensor exp(const Tensor& a) {
  const auto x = a.data();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x[i]);
  return Tensor::from_op(a.shape(), std::move(out), {a}, [](const Node& self) {
    const auto y = self.values();
    auto g = grad_of(self.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y[i];
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw DimensionError("matmul: operands need rank >= 2, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(-2);
  const std::size_t k = a.dim(-1);
  const std::size_t n = b.dim(-1);
  const bool shared_b = b.rank() == 2;
  bool ok = b.dim(-2) == k;
  if (!shared_b) {
    ok = ok && b.rank() == a.rank() &&
         std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin());
  }
  if (!ok) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  Shape out_shape(a.shape().begin(), a.shape().end() - 2);
  const std::size_t batches = shape_numel(out_shape);
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<float> out(shape_numel(out_shape), 0.0f);

  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t bi = 0; bi < batches; ++bi) {
    const float* A = x.data() + bi * m * k;
    const float* B = y.data() + (shared_b ? 0 : bi * k * n);
    float* C = out.data() + bi * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const float av = A[i * k + p];
        if (av == 0.0f) continue;
        const float* Brow = B + p * n;
        float* Crow = C + i * n;
        for (std::size_t j = 0; j < n; ++j) Crow[j] += av * Brow[j];
      }
    }
  }
  if (auto* counter = active_op_counter()) counter->macs += batches * m * k * n;

  return Tensor::from_op(std::move(out_shape), std::move(out), {a, b},
                         [batches, m, k, n, shared_b](const Node& self) {
    const auto x = self.parents[0].data();
    const auto y = self.parents[1].data();
    const float* G = self.grad.data();
    auto ga = grad_of(self.parents[0]);
    auto gb = grad_of(self.parents[1]);
    for (std::size_t bi = 0; bi < batches; ++bi) {
      const float* A = x.data() + bi * m * k;
      const float* B = y.data() + (shared_b ? 0 : bi * k * n);
      const float* Gb = G + bi * m * n;
      if (!ga.empty()) {
        float* GA = ga.data() + bi * m * k;
        for (std::size_t i = 0; i < m; ++i) {
          const float* Grow = Gb + i * n;
          for (std::size_t p = 0; p < k; ++p) {
            const float* Brow = B + p * n;
            float acc = 0.0f;
            for (std::size_t j = 0; j < n; ++j) acc += Grow[j] * Brow[j];
            GA[i * k + p] += acc;
          }
        }
      }
      if (!gb.empty()) {
        float* GB = gb.data() + (shared_b ? 0 : bi * k * n);
        for (std::size_t i = 0; i < m; ++i) {
          const float* Grow = Gb + i * n;
          for (std::size_t p = 0; p < k; ++p) {
            const float av = A[i * k + p];
            if (av == 0.0f) continue;
            float* GBrow = GB + p * n;
            for (std::size_t j = 0; j < n; ++j) GBrow[j] += av * Grow[j];
          }
        }
      }
    }
  });
}

Tensor transpose_last(const Tensor& a) {
  if (a.rank() < 2) throw DimensionError("transpose_last: rank < 2 for shape " + shape_str(a.shape()));
  const std::size_t m = a.dim(-2);
  const std::size_t n = a.dim(-1);
  const std::size_t batches = shape_numel(Shape(a.shape().begin(), a.shape().end() - 2));
  Shape out_shape = a.shape();
  std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
  const auto x = a.data();
  std::vector<float> out(x.size());
  for (std::size_t b = 0; b < batches; ++b)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[b * m * n + j * m + i] = x[b * m * n + i * n + j];
  return Tensor::from_op(std::move(out_shape), std::move(out), {a}, [batches, m, n](const Node& self) {
    auto g = grad_of(self.parents[0]);
    for (std::size_t b = 0; b < batches; ++b)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[b * m * n + i * n + j] += self.grad[b * m * n + j * m + i];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<float> out(a.data().begin(), a.data().end());
  return Tensor::from_op(std::move(shape), std::move(out), {a}, [](const Node& self) {
    auto g = grad_of(self.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
  const std::size_t ax = normalize_axis(a, axis);
  if (a.rank() != b.rank()) throw DimensionError("concat: rank mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (i != ax && a.shape()[i] != b.shape()[i]) {
      throw DimensionError("concat: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
  }
  const AxisSplit sa = split_at(a.shape(), ax);
  const AxisSplit sb = split_at(b.shape(), ax);
  Shape out_shape = a.shape();
  out_shape[ax] = sa.n + sb.n;
  const std::size_t na = sa.n * sa.inner;
  const std::size_t nb = sb.n * sb.inner;
  std::vector<float> out(shape_numel(out_shape));
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t o = 0; o < sa.outer; ++o) {
    std::copy_n(x.data() + o * na, na, out.data() + o * (na + nb));
    std::copy_n(y.data() + o * nb, nb, out.data() + o * (na + nb) + na);
  }
  return Tensor::from_op(std::move(out_shape), std::move(out), {a, b}, [outer = sa.outer, na, nb](const Node& self) {
    auto ga = grad_of(self.parents[0]);
    auto gb = grad_of(self.parents[1]);
    for (std::size_t o = 0; o < outer; ++o) {
      const float* src = self.grad.data() + o * (na + nb);
      if (!ga.empty())
        for (std::size_t i = 0; i < na; ++i) ga[o * na + i] += src[i];
      if (!gb.empty())
        for (std::size_t i = 0; i < nb; ++i) gb[o * nb + i] += src[na + i];
    }
  });
}

Tensor slice(const Tensor& a, int axis, std::size_t start, std::size_t length) {
  const std::size_t ax = normalize_axis(a, axis);
  const AxisSplit s = split_at(a.shape(), ax);
  if (start + length > s.n) {
    throw DimensionError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") exceeds axis of length " + std::to_string(s.n));
  }
  Shape out_shape = a.shape();
  out_shape[ax] = length;
  std::vector<float> out(shape_numel(out_shape));
  const auto x = a.data();
  const std::size_t chunk = length * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(x.data() + o * s.n * s.inner + start * s.inner, chunk, out.data() + o * chunk);
  }
  return Tensor::from_op(std::move(out_shape), std::move(out), {a}, [s, start, chunk](const Node& self) {
    auto g = grad_of(self.parents[0]);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < chunk; ++i) g[o * s.n * s.inner + start * s.inner + i] += self.grad[o * chunk + i];
  });
}

Tensor stack(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw UsageError("stack: no tensors");
  const Shape& base = parts.front().shape();
  for (const auto& p : parts) {
    if (p.shape() != base) throw DimensionError("stack: shape mismatch " + shape_str(base) + " vs " + shape_str(p.shape()));
  }
  const std::size_t chunk = shape_numel(base);
  Shape out_shape{parts.size()};
  out_shape.insert(out_shape.end(), base.begin(), base.end());
  std::vector<float> out(chunk * parts.size());
  for (std::size_t i = 0; i < parts.size(); ++i) {
    std::copy_n(parts[i].data().data(), chunk, out.data() + i * chunk);
  }
  return Tensor::from_op(std::move(out_shape), std::move(out), parts, [chunk](const Node& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      auto g = grad_of(self.parents[i]);
      for (std::size_t j = 0; j < g.size(); ++j) g[j] += self.grad[i * chunk + j];
    }
  });
}

Tensor repeat_interleave(const Tensor& a, int axis, std::size_t times) {
  const std::size_t ax = normalize_axis(a, axis);
  const AxisSplit s = split_at(a.shape(), ax);
  Shape out_shape = a.shape();
  out_shape[ax] = s.n * times;
  std::vector<float> out(shape_numel(out_shape));
  const auto x = a.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.n * times; ++i)
      std::copy_n(x.data() + (o * s.n + i / times) * s.inner, s.inner, out.data() + (o * s.n * times + i) * s.inner);
  return Tensor::from_op(std::move(out_shape), std::move(out), {a}, [s, times](const Node& self) {
    auto g = grad_of(self.parents[0]);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.n * times; ++i)
        for (std::size_t j = 0; j < s.inner; ++j)
          g[(o * s.n + i / times) * s.inner + j] += self.grad[(o * s.n * times + i) * s.inner + j];
  });
}

Tensor shift(const Tensor& a, int axis, long offset) {
  const std::size_t ax = normalize_axis(a, axis);
  const AxisSplit s = split_at(a.shape(), ax);
  const auto x = a.data();
  std::vector<float> out(x.size(), 0.0f);
  const long n = static_cast<long>(s.n);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (long k = 0; k < n; ++k) {
      const long src = k - offset;
      if (src < 0 || src >= n) continue;
      std::copy_n(x.data() + (o * s.n + static_cast<std::size_t>(src)) * s.inner, s.inner,
                  out.data() + (o * s.n + static_cast<std::size_t>(k)) * s.inner);
    }
  return Tensor::from_op(a.shape(), std::move(out), {a}, [s, offset, n](const Node& self) {
    auto g = grad_of(self.parents[0]);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (long k = 0; k < n; ++k) {
        const long src = k - offset;
        if (src < 0 || src >= n) continue;
        for (std::size_t j = 0; j < s.inner; ++j)
          g[(o * s.n + static_cast<std::size_t>(src)) * s.inner + j] += self.grad[(o * s.n + static_cast<std::size_t>(k)) * s.inner + j];
      }
  });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  if (auto* counter = active_op_counter()) counter->adds += a.numel();
  return Tensor::from_op({}, {static_cast<float>(acc)}, {a}, [](const Node& self) {
    auto g = grad_of(self.parents[0]);
    const float go = self.grad[0];
    for (float& v : g) v += go;
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw UsageError("mean of empty tensor");
  return scale(sum(a), 1.0f / static_cast<float>(a.numel()));
}

Tensor sum_axis(const Tensor& a, int axis) {
  const std::size_t ax = normalize_axis(a, axis);
  const AxisSplit s = split_at(a.shape(), ax);
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<long>(ax));
  std::vector<float> out(s.outer * s.inner, 0.0f);
  const auto x = a.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < s.n; ++k)
      for (std::size_t j = 0; j < s.inner; ++j) out[o * s.inner + j] += x[(o * s.n + k) * s.inner + j];
  if (auto* counter = active_op_counter()) counter->adds += a.numel();
  return Tensor::from_op(std::move(out_shape), std::move(out), {a}, [s](const Node& self) {
    auto g = grad_of(self.parents[0]);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t k = 0; k < s.n; ++k)
        for (std::size_t j = 0; j < s.inner; ++j) g[(o * s.n + k) * s.inner + j] += self.grad[o * s.inner + j];
  });
}

Tensor max_axis(const Tensor& a, int axis) {
  const std::size_t ax = normalize_axis(a, axis);
  const AxisSplit s = split_at(a.shape(), ax);
  if (s.n == 0) throw DimensionError("max_axis: empty axis in shape " + shape_str(a.shape()));
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<long>(ax));
  std::vector<float> out(s.outer * s.inner);
  std::vector<std::size_t> arg(out.size());
  const auto x = a.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < s.inner; ++j) {
      std::size_t best = 0;
      float bv = x[o * s.n * s.inner + j];
      for (std::size_t k = 1; k < s.n; ++k) {
        const float v = x[(o * s.n + k) * s.inner + j];
        if (v > bv) {
          bv = v;
          best = k;
        }
      }
      out[o * s.inner + j] = bv;
      arg[o * s.inner + j] = (o * s.n + best) * s.inner + j;
    }
  return Tensor::from_op(std::move(out_shape), std::move(out), {a}, [arg = std::move(arg)](const Node& self) {
    auto g = grad_of(self.parents[0]);
    for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += self.grad[i];
  });
}

Tensor logsumexp_last(const Tensor& a, float alpha) {
  if (!(alpha > 0.0f)) throw ParameterError("logsumexp: alpha must be > 0");
  const std::size_t n = last_dim(a, "logsumexp_last");
  if (n == 0) throw DimensionError("logsumexp: empty last axis");
  const std::size_t rows = a.numel() / n;
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  std::vector<float> out(rows);
  std::vector<float> weights(a.numel());
  const auto x = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* row = x.data() + r * n;
    const float m = *std::max_element(row, row + n);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = std::exp(double(alpha) * (double(row[i]) - m));
      weights[r * n + i] = static_cast<float>(e);
      acc += e;
    }
    for (std::size_t i = 0; i < n; ++i) weights[r * n + i] = static_cast<float>(weights[r * n + i] / acc);
    out[r] = static_cast<float>(double(m) + std::log(acc) / alpha);
  }
  return Tensor::from_op(std::move(out_shape), std::move(out), {a}, [n, w = std::move(weights)](const Node& self) {
    auto g = grad_of(self.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i / n] * w[i];
  });
}

Tensor softmax_last(const Tensor& a) {
  const std::size_t n = last_dim(a, "softmax_last");
  const std::size_t rows = n == 0 ? 0 : a.numel() / n;
  const auto x = a.data();
  std::vector<float> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const float* row = x.data() + r * n;
    const float m = *std::max_element(row, row + n);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += std::exp(double(row[i]) - m);
    for (std::size_t i = 0; i < n; ++i) out[r * n + i] = static_cast<float>(std::exp(double(row[i]) - m) / acc);
  }
  return Tensor::from_op(a.shape(), std::move(out), {a}, [n, rows](const Node& self) {
    auto g = grad_of(self.parents[0]);
    const auto y = self.values();
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += double(self.grad[r * n + i]) * y[r * n + i];
      for (std::size_t i = 0; i < n; ++i)
        g[r * n + i] += static_cast<float>(y[r * n + i] * (self.grad[r * n + i] - dot));
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  if (!(eps > 0.0f)) throw ParameterError("layer_norm: eps must be > 0");
  const std::size_t d = last_dim(x, "layer_norm");
  if (gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layer_norm: affine parameters " + shape_str(gamma.shape()) + "/" +
                         shape_str(beta.shape()) + " do not match width " + std::to_string(d));
  }
  const std::size_t rows = d == 0 ? 0 : x.numel() / d;
  const auto in = x.data();
  const auto ga = gamma.data();
  const auto be = beta.data();
  std::vector<float> out(in.size());
  std::vector<float> xhat(in.size());
  std::vector<float> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* row = in.data() + r * d;
    double mu = 0.0;
    for (std::size_t i = 0; i < d; ++i) mu += row[i];
    mu /= double(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= double(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = static_cast<float>(is);
    for (std::size_t i = 0; i < d; ++i) {
      const float h = static_cast<float>((row[i] - mu) * is);
      xhat[r * d + i] = h;
      out[r * d + i] = h * ga[i] + be[i];
    }
  }
  return Tensor::from_op(x.shape(), std::move(out), {x, gamma, beta},
                         [d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](const Node& self) {
    const auto ga = self.parents[1].data();
    auto gx = grad_of(self.parents[0]);
    auto gg = grad_of(self.parents[1]);
    auto gb = grad_of(self.parents[2]);
    for (std::size_t r = 0; r < rows; ++r) {
      const float* gy = self.grad.data() + r * d;
      const float* h = xhat.data() + r * d;
      double mean_g = 0.0;
      double mean_gh = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        const double gh = double(gy[i]) * ga[i];
        mean_g += gh;
        mean_gh += gh * h[i];
        if (!gg.empty()) gg[i] += gy[i] * h[i];
        if (!gb.empty()) gb[i] += gy[i];
      }
      mean_g /= double(d);
      mean_gh /= double(d);
      if (!gx.empty()) {
        for (std::size_t i = 0; i < d; ++i) {
          const double gh = double(gy[i]) * ga[i];
          gx[r * d + i] += static_cast<float>(inv_std[r] * (gh - mean_g - h[i] * mean_gh));
        }
      }
    }
  });
}

Tensor l2_normalize_last(const Tensor& x, float eps) {
  const std::size_t d = last_dim(x, "l2_normalize_last");
  const std::size_t rows = d == 0 ? 0 : x.numel() / d;
  const auto in = x.data();
  std::vector<float> out(in.size());
  std::vector<float> inv_norm(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t i = 0; i < d; ++i) ss += double(in[r * d + i]) * in[r * d + i];
    const double inv = 1.0 / std::sqrt(ss + double(eps) * eps);
    inv_norm[r] = static_cast<float>(inv);
    for (std::size_t i = 0; i < d; ++i) out[r * d + i] = static_cast<float>(in[r * d + i] * inv);
  }
  return Tensor::from_op(x.shape(), std::move(out), {x}, [d, rows, inv_norm = std::move(inv_norm)](const Node& self) {
    auto g = grad_of(self.parents[0]);
    const auto y = self.values();
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t i = 0; i < d; ++i) dot += double(self.grad[r * d + i]) * y[r * d + i];
      for (std::size_t i = 0; i < d; ++i)
        g[r * d + i] += static_cast<float>(inv_norm[r] * (self.grad[r * d + i] - y[r * d + i] * dot));
    }
  });
}

RunningStats RunningStats::identity(std::size_t channels) {
  RunningStats s;
  s.mean.assign(channels, 0.0f);
  s.var.assign(channels, 1.0f);
  s.initialized = true;
  return s;
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, RunningStats& stats,
                  bool train_mode, float momentum, float eps) {
  if (!(eps > 0.0f)) throw ParameterError("batch_norm: eps must be > 0");
  const std::size_t c = last_dim(x, "batch_norm");
  if (gamma.numel() != c || beta.numel() != c) {
    throw DimensionError("batch_norm: affine parameters do not match channel count " + std::to_string(c));
  }
  const std::size_t rows = c == 0 ? 0 : x.numel() / c;
  const auto in = x.data();
  const auto ga = gamma.data();
  const auto be = beta.data();
  std::vector<float> out(in.size());

  if (!train_mode) {
    if (!stats.initialized) throw StateError("batch_norm: eval mode with uninitialized running statistics");
    if (stats.mean.size() != c || stats.var.size() != c) {
      throw DimensionError("batch_norm: running statistics sized " + std::to_string(stats.mean.size()) +
                           " for " + std::to_string(c) + " channels");
    }
    std::vector<float> inv_std(c);
    for (std::size_t j = 0; j < c; ++j) inv_std[j] = static_cast<float>(1.0 / std::sqrt(double(stats.var[j]) + eps));
    std::vector<float> xhat(in.size());
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < c; ++j) {
        const float h = (in[r * c + j] - stats.mean[j]) * inv_std[j];
        xhat[r * c + j] = h;
        out[r * c + j] = h * ga[j] + be[j];
      }
    return Tensor::from_op(x.shape(), std::move(out), {x, gamma, beta},
                           [c, rows, inv_std = std::move(inv_std), xhat = std::move(xhat)](const Node& self) {
      const auto ga = self.parents[1].data();
      auto gx = grad_of(self.parents[0]);
      auto gg = grad_of(self.parents[1]);
      auto gb = grad_of(self.parents[2]);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) {
          const float gy = self.grad[r * c + j];
          if (!gx.empty()) gx[r * c + j] += gy * ga[j] * inv_std[j];
          if (!gg.empty()) gg[j] += gy * xhat[r * c + j];
          if (!gb.empty()) gb[j] += gy;
        }
    });
  }

  std::vector<double> mu(c, 0.0);
  std::vector<double> var(c, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) mu[j] += in[r * c + j];
  for (std::size_t j = 0; j < c; ++j) mu[j] /= double(std::max<std::size_t>(rows, 1));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) {
      const double dv = in[r * c + j] - mu[j];
      var[j] += dv * dv;
    }
  std::vector<float> inv_std(c);
  for (std::size_t j = 0; j < c; ++j) {
    const double biased = var[j] / double(std::max<std::size_t>(rows, 1));
    inv_std[j] = static_cast<float>(1.0 / std::sqrt(biased + eps));
    var[j] = rows > 1 ? var[j] / double(rows - 1) : biased;
  }
  if (!stats.initialized || stats.mean.size() != c) {
    stats = RunningStats::identity(c);
  }
  for (std::size_t j = 0; j < c; ++j) {
    stats.mean[j] = static_cast<float>((1.0 - momentum) * stats.mean[j] + momentum * mu[j]);
    stats.var[j] = static_cast<float>((1.0 - momentum) * stats.var[j] + momentum * var[j]);
  }
  std::vector<float> xhat(in.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) {
      const float h = static_cast<float>((in[r * c + j] - mu[j]) * inv_std[j]);
      xhat[r * c + j] = h;
      out[r * c + j] = h * ga[j] + be[j];
    }
  return Tensor::from_op(x.shape(), std::move(out), {x, gamma, beta},
                         [c, rows, inv_std = std::move(inv_std), xhat = std::move(xhat)](const Node& self) {
    const auto ga = self.parents[1].data();
    auto gx = grad_of(self.parents[0]);
    auto gg = grad_of(self.parents[1]);
    auto gb = grad_of(self.parents[2]);
    std::vector<double> mean_g(c, 0.0);
    std::vector<double> mean_gh(c, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < c; ++j) {
        const float gy = self.grad[r * c + j];
        const double gh = double(gy) * ga[j];
        mean_g[j] += gh;
        mean_gh[j] += gh * xhat[r * c + j];
        if (!gg.empty()) gg[j] += gy * xhat[r * c + j];
        if (!gb.empty()) gb[j] += gy;
      }
    if (gx.empty() || rows == 0) return;
    for (std::size_t j = 0; j < c; ++j) {
      mean_g[j] /= double(rows);
      mean_gh[j] /= double(rows);
    }
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < c; ++j) {
        const double gh = double(self.grad[r * c + j]) * ga[j];
        gx[r * c + j] += static_cast<float>(inv_std[j] * (gh - mean_g[j] - xhat[r * c + j] * mean_gh[j]));
      }
  });
}

}  // namespace cmsf
