#include "cmsf/energy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "cmsf/errors.hpp"
#include "cmsf/spike.hpp"

namespace cmsf {

void EnergyConstants::validate() const {
  if (!(e_mac_pj > 0.0) || !(e_ac_pj > 0.0)) {
    throw ParameterError("energy constants must be positive");
  }
}

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kSpiking: return "spiking";
    case LayerKind::kFloat: return "float";
    case LayerKind::kMask: return "mask";
  }
  return "?";
}

std::uint64_t sops(const LayerLedger& ledger) {
  if (ledger.kind != LayerKind::kSpiking) {
    throw UsageError("sops: layer '" + ledger.name + "' is " + std::string(to_string(ledger.kind)) +
                     ", not spiking");
  }
  const double v = double(ledger.T) * ledger.firing_rate * double(ledger.flops);
  return static_cast<std::uint64_t>(std::llround(v));
}

double layer_energy_pj(const LayerLedger& ledger, const EnergyConstants& consts) {
  switch (ledger.kind) {
    case LayerKind::kSpiking: return consts.e_ac_pj * double(sops(ledger));
    case LayerKind::kFloat: return consts.e_mac_pj * double(ledger.flops);
    case LayerKind::kMask: return 0.0;
  }
  return 0.0;
}

double EnergyReport::ac_fraction() const {
  const double total = double(ac_ops) + double(mac_ops);
  return total > 0.0 ? double(ac_ops) / total : 0.0;
}

EnergyReport build_report(std::vector<LayerLedger> layers, std::size_t T,
                          const EnergyConstants& consts) {
  consts.validate();
  EnergyReport r;
  r.constants = consts;
  r.T = T;
  r.layers = std::move(layers);
  for (const auto& l : r.layers) {
    if (l.kind == LayerKind::kSpiking) r.ac_ops += sops(l);
    if (l.kind == LayerKind::kFloat) r.mac_ops += l.flops;
    r.picojoules += layer_energy_pj(l, consts);
  }
  return r;
}

namespace {

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

}  // namespace

std::string EnergyReport::to_text() const {
  std::ostringstream out;
  out << "# cmsf energy report v1\n";
  out << "# flops: one multiply-accumulate per unit; spiking rows per time step\n";
  out << "# e_mac_pj=" << fmt("%.4g", constants.e_mac_pj) << " e_ac_pj=" << fmt("%.4g", constants.e_ac_pj)
      << " T=" << T << "\n";
  out << "name,kind,flops,rate,sops,picojoules\n";
  for (const auto& l : layers) {
    const std::uint64_t s = l.kind == LayerKind::kSpiking ? sops(l) : 0;
    out << l.name << ',' << to_string(l.kind) << ',' << l.flops << ',' << fmt("%.6f", l.firing_rate)
        << ',' << s << ',' << fmt("%.3f", layer_energy_pj(l, constants)) << '\n';
  }
  out << "total_ac_ops=" << ac_ops << '\n';
  out << "total_mac_ops=" << mac_ops << '\n';
  out << "total_picojoules=" << fmt("%.3f", picojoules) << '\n';
  out << "total_millijoules=" << fmt("%.9f", millijoules()) << '\n';
  out << "ac_fraction=" << fmt("%.6f", ac_fraction()) << '\n';
  return out.str();
}

double mixed_energy_mj(double ops, double ac_fraction, const EnergyConstants& consts) {
  consts.validate();
  if (ac_fraction < 0.0 || ac_fraction > 1.0) throw ParameterError("ac_fraction must lie in [0, 1]");
  const double pj = ops * (ac_fraction * consts.e_ac_pj + (1.0 - ac_fraction) * consts.e_mac_pj);
  return pj * 1e-9;
}

LayerKind expected_layer_kind(const std::string& name) {
  std::string base = name;
  for (const char* prefix : {"region.", "word."}) {
    const std::string p(prefix);
    if (base.rfind(p, 0) == 0) {
      base = base.substr(p.size());
      break;
    }
  }
  if (base == "linear" || base == "generator" || base == "mlp_out") return LayerKind::kFloat;
  if (base == "qkv" || base == "attention" || base == "out_linear" || base == "gate_linear") {
    return LayerKind::kSpiking;
  }
  if (base == "gate_multiply") return LayerKind::kMask;
  throw AccountingError("no accounting rule for layer '" + name + "'");
}

void LayerRecorder::push(LayerLedger ledger, std::uint64_t dense_macs) {
  const LayerKind want = expected_layer_kind(ledger.name);
  if (want != ledger.kind) {
    throw AccountingError("layer '" + ledger.name + "' recorded as " + std::string(to_string(ledger.kind)) +
                          " but is accounted as " + std::string(to_string(want)));
  }
  for (const auto& l : ledgers_) {
    if (l.name == ledger.name) throw AccountingError("layer '" + ledger.name + "' recorded twice");
  }
  ledger.T = T_;
  ledgers_.push_back(std::move(ledger));
  claimed_macs_ += dense_macs;
}

void LayerRecorder::spiking(const std::string& name, const Tensor& input, std::uint64_t flops_per_step,
                            std::uint64_t dense_macs) {
  float peak = 0.0f;
  double total = 0.0;
  for (float v : input.data()) {
    if (v < 0.0f || v != std::floor(v)) {
      throw AccountingError("layer '" + name + "' is fed non-spike values");
    }
    peak = std::max(peak, v);
    total += v;
  }
  if (input.numel() == 0) throw UsageError("layer '" + name + "' has an empty input");
  const double mean = total / double(input.numel());
  const std::uint64_t m = peak > 1.0f ? std::uint64_t(peak) : 1;
  push({name, LayerKind::kSpiking, flops_per_step * m, mean / double(m), T_}, dense_macs);
}

void LayerRecorder::spiking_rate(const std::string& name, double rate, std::uint64_t flops_per_step,
                                 std::uint64_t dense_macs) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw AccountingError("layer '" + name + "' rate outside [0, 1]");
  push({name, LayerKind::kSpiking, flops_per_step, rate, T_}, dense_macs);
}

void LayerRecorder::floating(const std::string& name, std::uint64_t flops, std::uint64_t dense_macs) {
  push({name, LayerKind::kFloat, flops, 1.0, T_}, dense_macs);
}

void LayerRecorder::mask(const std::string& name, std::uint64_t elements, double gate_rate) {
  push({name, LayerKind::kMask, elements, gate_rate, T_}, 0);
}

}  // namespace cmsf
