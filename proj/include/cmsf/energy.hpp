#pragma once
// Theoretical operation and energy accounting.
//
// Spiking layers cost E_AC per synaptic operation, SOPs = T * rate * FLOPs,
// with FLOPs counted per time step (one multiply-accumulate = one unit) and
// rate the firing rate of the layer's input. Floating-point layers cost E_MAC
// per FLOP over the whole pass. Mask layers are free.
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "cmsf/tensor.hpp"

namespace cmsf {

struct EnergyConstants {
  double e_mac_pj = 4.6;
  double e_ac_pj = 0.9;
  void validate() const;
};

enum class LayerKind { kSpiking, kFloat, kMask };
std::string_view to_string(LayerKind kind);

struct LayerLedger {
  std::string name;
  LayerKind kind = LayerKind::kSpiking;
  std::uint64_t flops = 0;
  double firing_rate = 0.0;
  std::size_t T = 1;
};

// T * rate * flops rounded to the nearest integer. Spiking layers only.
std::uint64_t sops(const LayerLedger& ledger);
double layer_energy_pj(const LayerLedger& ledger, const EnergyConstants& consts);

struct EnergyReport {
  EnergyConstants constants;
  std::size_t T = 1;
  std::vector<LayerLedger> layers;
  std::uint64_t ac_ops = 0;   // total SOPs
  std::uint64_t mac_ops = 0;  // total float-layer FLOPs
  double picojoules = 0.0;
  double millijoules() const { return picojoules * 1e-9; }
  double ac_fraction() const;

  // One comma-separated record per layer in a fixed field order, followed
  // by a totals footer.
  std::string to_text() const;
};

EnergyReport build_report(std::vector<LayerLedger> layers, std::size_t T,
                          const EnergyConstants& consts);

// Energy of `ops` operations of which `ac_fraction` are accumulates and the
// rest multiply-accumulates, in millijoules.
double mixed_energy_mj(double ops, double ac_fraction, const EnergyConstants& consts);

// Collects ledgers during an instrumented forward pass. Every layer name must
// be one of the known layers (optionally behind a "region." or "word."
// prefix) and must be recorded with the kind the table assigns to it;
// anything else is an AccountingError. The recorder also tracks the dense
// multiply-accumulates each layer claims so the caller can compare them with
// what the array ops actually executed.
class LayerRecorder {
 public:
  explicit LayerRecorder(std::size_t T) : T_(T) {}

  // Spiking layer fed by `input`. Integer inputs above one (residual sums)
  // are treated as multi-spike trains: with peak m the layer is charged m
  // times the flops at rate mean/m.
  void spiking(const std::string& name, const Tensor& input, std::uint64_t flops_per_step,
               std::uint64_t dense_macs);
  // Spiking layer with an externally computed input rate in [0, 1].
  void spiking_rate(const std::string& name, double rate, std::uint64_t flops_per_step,
                    std::uint64_t dense_macs);
  void floating(const std::string& name, std::uint64_t flops, std::uint64_t dense_macs);
  void mask(const std::string& name, std::uint64_t elements, double gate_rate);

  const std::vector<LayerLedger>& ledgers() const { return ledgers_; }
  std::uint64_t claimed_macs() const { return claimed_macs_; }
  std::size_t T() const { return T_; }

 private:
  void push(LayerLedger ledger, std::uint64_t dense_macs);

  std::size_t T_;
  std::vector<LayerLedger> ledgers_;
  std::uint64_t claimed_macs_ = 0;
};

// Kind the accounting table assigns to a layer name; AccountingError for an
// unknown layer.
LayerKind expected_layer_kind(const std::string& name);

}  // namespace cmsf
