#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>

#include "cmsf/alignment.hpp"
#include "cmsf/checkpoint.hpp"
#include "cmsf/config.hpp"
#include "cmsf/dataset.hpp"
#include "cmsf/energy.hpp"
#include "cmsf/errors.hpp"
#include "cmsf/fusion.hpp"
#include "cmsf/losses.hpp"
#include "cmsf/metrics.hpp"
#include "cmsf/model.hpp"
#include "cmsf/neurons.hpp"
#include "cmsf/trainer.hpp"

namespace py = pybind11;
using namespace cmsf;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const FloatArray& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor::from(std::move(shape), std::vector<float>(a.data(), a.data() + a.size()));
}

py::array_t<float> to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::array_t<float> to_array(const std::vector<float>& v, std::vector<py::ssize_t> shape) {
  py::array_t<float> out(shape);
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

py::dict recall_dict(const RecallMetrics& m) {
  py::dict d;
  d["i2t_r1"] = m.i2t_r1;
  d["i2t_r5"] = m.i2t_r5;
  d["i2t_r10"] = m.i2t_r10;
  d["t2i_r1"] = m.t2i_r1;
  d["t2i_r5"] = m.t2i_r5;
  d["t2i_r10"] = m.t2i_r10;
  d["rsum"] = m.rsum();
  d["warnings"] = m.warnings;
  return d;
}

FeatureDataset dataset_from(const FloatArray& regions, const FloatArray& words) {
  if (regions.ndim() != 3 || words.ndim() != 3 || regions.shape(0) != words.shape(0)) {
    throw DimensionError("expected regions (P, N, d_region) and words (P, L, d_word) with equal P");
  }
  FeatureDataset d;
  d.pairs = std::size_t(regions.shape(0));
  d.N = std::size_t(regions.shape(1));
  d.d_region = std::size_t(regions.shape(2));
  d.L = std::size_t(words.shape(1));
  d.d_word = std::size_t(words.shape(2));
  d.regions.assign(regions.data(), regions.data() + regions.size());
  d.words.assign(words.data(), words.data() + words.size());
  d.validate();
  return d;
}

RunConfig config_from(const py::dict& overrides) {
  RunConfig c;
  for (auto [k, v] : overrides) c.set(py::str(k).cast<std::string>(), py::str(v).cast<std::string>());
  return c;
}

// A checkpointed model plus the shapes it was trained on.
struct Loaded {
  CheckpointMeta meta;
  RunConfig cfg;
  std::unique_ptr<CmsfModel> model;
};

}  // namespace

PYBIND11_MODULE(_cmsf, m) {
  m.doc() = "Spiking cross-modal retrieval core";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<DimensionError>(m, "DimensionError", base);
  py::register_exception<ParameterError>(m, "ParameterError", base);
  py::register_exception<StateError>(m, "StateError", base);
  py::register_exception<UsageError>(m, "UsageError", base);
  py::register_exception<ConfigError>(m, "ConfigError", base);
  py::register_exception<ContractError>(m, "ContractError", base);
  py::register_exception<AccountingError>(m, "AccountingError", base);
  py::register_exception<DatasetError>(m, "DatasetError", base);
  py::register_exception<CheckpointError>(m, "CheckpointError", base);
  py::register_exception<DivergenceError>(m, "DivergenceError", base);

  m.def(
      "lif_sequence",
      [](const FloatArray& x, float tau, float v_th, float v_reset) {
        const LifParams p{tau, v_th, v_reset};
        return to_array(lif_sequence(to_tensor(x), p).tensor());
      },
      py::arg("x"), py::arg("tau") = 2.0f, py::arg("v_th") = 1.0f, py::arg("v_reset") = 0.0f,
      "Binary spike train of a LIF population driven by x (time on axis 0).");

  m.def(
      "fine_similarity", [](const FloatArray& e, const FloatArray& r) {
        return to_array(fine_similarity(to_tensor(e), to_tensor(r)));
      },
      py::arg("words"), py::arg("regions"), "Token-level cosine similarities, shape (B, B, L, N).");

  m.def(
      "similarity",
      [](const FloatArray& e, const FloatArray& r, const std::string& mode, float alpha) {
        return to_array(similarity(to_tensor(e), to_tensor(r), {alpha, parse_align_mode(mode)}));
      },
      py::arg("words"), py::arg("regions"), py::arg("mode") = "biha", py::arg("alpha") = 0.1f,
      "Pooled global similarity, rows index images and columns captions.");

  m.def(
      "infonce",
      [](const FloatArray& S, float temperature) {
        Tensor s = to_tensor(S);
        s.set_requires_grad(true);
        Tensor loss = infonce_pair(s, temperature);
        loss.backward();
        return py::make_tuple(loss.item(), to_array(Tensor::from(s.shape(), {s.grad().begin(), s.grad().end()})));
      },
      py::arg("S"), py::arg("temperature") = 0.01f, "Symmetric InfoNCE value and its gradient with respect to S.");

  m.def(
      "recall_at_k", [](const FloatArray& scores) { return recall_dict(recall_at_k(to_tensor(scores))); },
      py::arg("scores"), "Recall@{1,5,10} in both directions for a square image x caption score matrix.");

  m.def(
      "sops",
      [](std::uint64_t flops, double firing_rate, std::size_t T) {
        return sops({"layer", LayerKind::kSpiking, flops, firing_rate, T});
      },
      py::arg("flops"), py::arg("firing_rate"), py::arg("T"));
  m.def(
      "layer_energy_pj",
      [](const std::string& kind, std::uint64_t flops, double firing_rate, std::size_t T) {
        LayerKind k = LayerKind::kSpiking;
        if (kind == "float") k = LayerKind::kFloat;
        else if (kind == "mask") k = LayerKind::kMask;
        else if (kind != "spiking") throw ConfigError("layer kind must be spiking, float or mask");
        return layer_energy_pj({"layer", k, flops, firing_rate, T}, {});
      },
      py::arg("kind"), py::arg("flops"), py::arg("firing_rate") = 0.0, py::arg("T") = 1);
  m.def(
      "mixed_energy_mj", [](double ops, double ac_fraction) { return mixed_energy_mj(ops, ac_fraction, {}); },
      py::arg("ops"), py::arg("ac_fraction"));

  m.def(
      "synth_dataset",
      [](std::uint64_t seed, std::size_t pairs, std::size_t N, std::size_t L, std::size_t d_region,
         std::size_t d_word, std::size_t latent_dim, float noise) {
        SynthOptions o;
        o.seed = seed;
        o.pairs = pairs;
        o.N = N;
        o.L = L;
        o.d_region = d_region;
        o.d_word = d_word;
        o.latent_dim = latent_dim;
        o.noise = noise;
        const FeatureDataset d = synth_dataset(o).data;
        const auto P = py::ssize_t(d.pairs);
        return py::make_tuple(to_array(d.regions, {P, py::ssize_t(d.N), py::ssize_t(d.d_region)}),
                              to_array(d.words, {P, py::ssize_t(d.L), py::ssize_t(d.d_word)}));
      },
      py::arg("seed") = 0, py::arg("pairs") = 200, py::arg("N") = 36, py::arg("L") = 36,
      py::arg("d_region") = 2048, py::arg("d_word") = 768, py::arg("latent_dim") = 16, py::arg("noise") = 0.1f,
      "Synthetic paired features (regions, words).");

  m.def(
      "save_dataset",
      [](const FloatArray& regions, const FloatArray& words, const std::string& dir) {
        return write_dataset(dataset_from(regions, words), dir).string();
      },
      py::arg("regions"), py::arg("words"), py::arg("dir"), "Writes a dataset directory; returns the manifest path.");

  m.def(
      "load_dataset",
      [](const std::string& manifest) {
        const FeatureDataset d = load_dataset(manifest);
        const auto P = py::ssize_t(d.pairs);
        return py::make_tuple(to_array(d.regions, {P, py::ssize_t(d.N), py::ssize_t(d.d_region)}),
                              to_array(d.words, {P, py::ssize_t(d.L), py::ssize_t(d.d_word)}));
      },
      py::arg("manifest"));

  m.def("config_keys", &RunConfig::keys);
  m.def(
      "config_text", [](const py::dict& overrides) { return config_from(overrides).to_text(); },
      py::arg("overrides") = py::dict(), "Full run configuration text with the given keys overridden.");

  m.def(
      "train",
      [](const FloatArray& regions, const FloatArray& words, const py::dict& overrides, const std::string& out_dir) {
        const FeatureDataset data = dataset_from(regions, words);
        const RunConfig cfg = config_from(overrides);
        TrainOptions opts;
        opts.out_dir = out_dir;
        std::vector<EpochRecord> history;
        {
          py::gil_scoped_release release;
          Trainer trainer(cfg, data, opts);
          history = trainer.train();
        }
        py::list out;
        for (const auto& e : history) {
          py::dict d = recall_dict(e.validation);
          d["epoch"] = e.epoch;
          d["mean_loss"] = e.mean_loss;
          out.append(d);
        }
        return out;
      },
      py::arg("regions"), py::arg("words"), py::arg("config") = py::dict(), py::arg("out_dir") = "",
      "Trains a model; returns the per-epoch validation history. Writes checkpoints when out_dir is set.");

  py::class_<Loaded>(m, "Model", "A trained model restored from a checkpoint.")
      .def(py::init([](const std::string& path) {
             auto l = std::make_unique<Loaded>();
             l->meta = read_checkpoint_meta(path);
             l->cfg = RunConfig::parse(l->meta.config_text);
             l->model = std::make_unique<CmsfModel>(l->cfg.model_config(l->meta.d_region, l->meta.d_word));
             load_checkpoint(path, *l->model, nullptr);
             return l;
           }),
           py::arg("checkpoint"))
      .def_property_readonly("config_text", [](const Loaded& l) { return l.meta.config_text; })
      .def("encode_regions",
           [](const Loaded& l, const FloatArray& x) {
             NoGradGuard ng;
             return to_array(l.model->encode_regions(to_tensor(x)));
           })
      .def("encode_words",
           [](const Loaded& l, const FloatArray& x) {
             NoGradGuard ng;
             return to_array(l.model->encode_words(to_tensor(x)));
           })
      .def(
          "scores",
          [](const Loaded& l, const FloatArray& regions, const FloatArray& words) {
            NoGradGuard ng;
            const CmsfModel& m = *l.model;
            return to_array(m.score(m.encode_regions(to_tensor(regions)), m.encode_words(to_tensor(words))));
          },
          py::arg("regions"), py::arg("words"), "Image x caption retrieval scores.")
      .def(
          "energy_mj",
          [](const Loaded& l, const FloatArray& regions, const FloatArray& words) {
            return l.model->energy_report(to_tensor(regions), to_tensor(words)).millijoules();
          },
          py::arg("regions"), py::arg("words"));

  m.def("fusion_invocations", &fusion_invocations,
        "Number of fusion-module forward passes executed in this process.");
}
