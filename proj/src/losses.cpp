#include "cmsf/losses.hpp"

#include <cmath>
#include <limits>

#include "cmsf/errors.hpp"
#include "cmsf/ops.hpp"

namespace cmsf {

void LossWeights::validate() const {
  if (!(lambda >= 0.0f && lambda <= 1.0f)) throw ConfigError("lambda must lie in [0, 1]");
  if (!(temperature > 0.0f)) throw ConfigError("temperature must be positive");
}

namespace {

// One direction. transposed = false reads row i as S[i][*], true as S[*][i].
// Fills dS (unscaled by the 1/2 of the symmetric average) when given.
double infonce_direction(std::span<const float> s, std::size_t b, double tau, bool transposed,
                         std::vector<double>* ds) {
  auto at = [&](std::size_t i, std::size_t j) { return double(transposed ? s[j * b + i] : s[i * b + j]); };
  auto index = [&](std::size_t i, std::size_t j) { return transposed ? j * b + i : i * b + j; };
  double total = 0.0;
  std::vector<double> z(b);
  for (std::size_t i = 0; i < b; ++i) {
    const double pos = at(i, i);
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < b; ++j) {
      if (j == i) continue;
      z[j] = (at(i, j) - pos) / tau;
      peak = std::max(peak, z[j]);
    }
    double acc = 0.0;
    for (std::size_t j = 0; j < b; ++j) {
      if (j != i) acc += std::exp(z[j] - peak);
    }
    total += peak + std::log(acc);
    if (ds) {
      const double w = 1.0 / (double(b) * tau);
      for (std::size_t j = 0; j < b; ++j) {
        if (j == i) continue;
        (*ds)[index(i, j)] += w * std::exp(z[j] - peak) / acc;
      }
      (*ds)[index(i, i)] -= w;
    }
  }
  return total / double(b);
}

}  // namespace

Tensor infonce_pair(const Tensor& S, float temperature) {
  if (!(temperature > 0.0f)) throw ParameterError("infonce: temperature must be positive");
  if (S.rank() != 2 || S.dim(0) != S.dim(1)) {
    throw DimensionError("infonce: expected a square similarity matrix, got " + shape_str(S.shape()));
  }
  const std::size_t b = S.dim(0);
  if (b < 2) throw UsageError("infonce needs a batch of at least 2 pairs");
  const double tau = temperature;
  const double value = 0.5 * (infonce_direction(S.data(), b, tau, false, nullptr) +
                              infonce_direction(S.data(), b, tau, true, nullptr));
  return Tensor::from_op({}, {float(value)}, {S}, [b, tau](const Node& self) {
    const Tensor& s = self.parents[0];
    auto gs = grad_of(s);
    if (gs.empty()) return;
    std::vector<double> ds(b * b, 0.0);
    infonce_direction(s.data(), b, tau, false, &ds);
    infonce_direction(s.data(), b, tau, true, &ds);
    const double g = 0.5 * double(self.grad[0]);
    for (std::size_t k = 0; k < ds.size(); ++k) gs[k] += float(g * ds[k]);
  });
}

LossBreakdown total_loss(const SimilaritySet& sims, const LossWeights& weights, LossTerms terms) {
  weights.validate();
  auto need = [](const Tensor& t, const char* name) -> const Tensor& {
    if (!t.defined()) throw ContractError(std::string("total_loss: missing similarity matrix ") + name);
    return t;
  };
  const float tau = weights.temperature;
  LossBreakdown out;
  out.basic = infonce_pair(need(sims.basic, "S(E~,R~)"), tau);
  if (terms.fusion) {
    out.fusion = infonce_pair(need(sims.fusion, "S(E-,R-)"), tau);
    out.inter = add(infonce_pair(need(sims.text_to_fused, "S(E~,R-)"), tau),
                    infonce_pair(need(sims.fused_to_image, "S(E-,R~)"), tau));
    out.intra = add(infonce_pair(need(sims.text_intra, "S(E~,E-)"), tau),
                    infonce_pair(need(sims.image_intra, "S(R~,R-)"), tau));
    out.late = add(add(out.basic, out.fusion), add(out.inter, out.intra));
  } else {
    out.late = out.basic;
  }
  if (terms.early) {
    out.early = infonce_pair(need(sims.early, "S(E_f,R_f)"), tau);
    out.total = add(scale(out.early, weights.lambda), scale(out.late, 1.0f - weights.lambda));
  } else {
    out.total = out.late;
  }
  return out;
}

std::vector<std::pair<std::string, double>> LossBreakdown::values() const {
  auto v = [](const Tensor& t) { return t.defined() ? double(t.item()) : 0.0; };
  return {{"early", v(early)}, {"basic", v(basic)}, {"fusion", v(fusion)},
          {"inter", v(inter)}, {"intra", v(intra)}, {"total", v(total)}};
}

}  // namespace cmsf
