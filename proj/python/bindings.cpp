// Python bindings: data files, synthesis, metrics, energy closed forms,
// the experiment protocol and trained-model inference.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "energyformer/checkpoint.hpp"
#include "energyformer/error.hpp"
#include "energyformer/fope.hpp"
#include "energyformer/pipeline.hpp"
#include "energyformer/synth.hpp"

namespace py = pybind11;
using namespace ef;

namespace {

using CubeArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using LabelArray = py::array_t<std::uint16_t, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

HsiCube cube_from(const CubeArray& a) {
  if (a.ndim() != 3) throw DimensionError("cube array must be 3-D (rows, cols, bands)");
  HsiCube c(static_cast<std::uint32_t>(a.shape(0)), static_cast<std::uint32_t>(a.shape(1)),
            static_cast<std::uint32_t>(a.shape(2)));
  std::memcpy(c.values.data(), a.data(), c.values.size() * sizeof(float));
  return c;
}

CubeArray cube_to(const HsiCube& c) {
  CubeArray a({static_cast<py::ssize_t>(c.rows), static_cast<py::ssize_t>(c.cols), static_cast<py::ssize_t>(c.bands)});
  std::memcpy(a.mutable_data(), c.values.data(), c.values.size() * sizeof(float));
  return a;
}

LabelMap labels_from(const LabelArray& a) {
  if (a.ndim() != 2) throw DimensionError("label array must be 2-D (rows, cols)");
  LabelMap m(static_cast<std::uint32_t>(a.shape(0)), static_cast<std::uint32_t>(a.shape(1)));
  std::memcpy(m.labels.data(), a.data(), m.labels.size() * sizeof(std::uint16_t));
  return m;
}

LabelArray labels_to(const LabelMap& m) {
  LabelArray a({static_cast<py::ssize_t>(m.rows), static_cast<py::ssize_t>(m.cols)});
  std::memcpy(a.mutable_data(), m.labels.data(), m.labels.size() * sizeof(std::uint16_t));
  return a;
}

Tensor tensor_from(const DoubleArray& a) {
  Shape s(a.shape(), a.shape() + a.ndim());
  return Tensor(s, std::vector<double>(a.data(), a.data() + a.size()));
}

py::dict metrics_dict(const Metrics& m) {
  py::dict d;
  d["oa"] = m.oa;
  d["aa"] = m.aa;
  d["kappa"] = m.kappa;
  d["per_class"] = m.per_class;
  d["undefined_classes"] = m.undefined_classes;
  return d;
}

py::dict report_dict(const EvalReport& r) {
  py::dict d = metrics_dict(r.metrics);
  const std::size_t C = r.confusion.classes();
  py::array_t<std::uint64_t> conf({C, C});
  for (std::size_t i = 0; i < C; ++i)
    for (std::size_t j = 0; j < C; ++j) conf.mutable_at(i, j) = r.confusion.at(i, j);
  d["confusion"] = conf;
  d["train_time_seconds"] = r.train_time_seconds;
  return d;
}

ConfusionMatrix confusion_from(const py::array_t<std::uint64_t, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2 || a.shape(0) != a.shape(1)) throw DimensionError("confusion matrix must be square");
  const std::size_t C = static_cast<std::size_t>(a.shape(0));
  ConfusionMatrix m(C);
  for (std::size_t i = 0; i < C; ++i)
    for (std::size_t j = 0; j < C; ++j) m.at(i, j) = a.at(i, j);
  return m;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "EnergyFormer hyperspectral classifier core";

  static py::exception<Error> base(m, "Error");
  static py::exception<Error> io(m, "IoError", base.ptr());
  static py::exception<Error> format(m, "FormatError", base.ptr());
  static py::exception<Error> usage(m, "UsageError", base.ptr());
  static py::exception<Error> numeric(m, "NumericError", base.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      switch (e.kind()) {
        case Error::Kind::io: py::set_error(io, e.what()); break;
        case Error::Kind::format: py::set_error(format, e.what()); break;
        case Error::Kind::numeric: py::set_error(numeric, e.what()); break;
        default: py::set_error(usage, e.what()); break;
      }
    }
  });

  m.def("read_cube", [](const std::filesystem::path& p) { return cube_to(read_cube(p)); }, py::arg("path"),
        "HSIC1 file -> float32 array (rows, cols, bands).");
  m.def("write_cube", [](const CubeArray& a, const std::filesystem::path& p) { write_cube(cube_from(a), p); },
        py::arg("cube"), py::arg("path"));
  m.def("read_labels", [](const std::filesystem::path& p) { return labels_to(read_labels(p)); }, py::arg("path"),
        "HSIL1 file -> uint16 array (rows, cols).");
  m.def("write_labels", [](const LabelArray& a, const std::filesystem::path& p) { write_labels(labels_from(a), p); },
        py::arg("labels"), py::arg("path"));
  m.def("normalize", [](const CubeArray& a) { return cube_to(normalize(cube_from(a))); }, py::arg("cube"),
        "Per-band min-max scaling to [0, 1].");

  m.def(
      "synthesize",
      [](std::size_t classes, std::uint32_t rows, std::uint32_t cols, std::uint32_t bands, double sigma, std::uint64_t seed) {
        SynthConfig c{classes, rows, cols, bands, sigma, seed};
        const SynthScene s = synthesize(c);
        return py::make_tuple(cube_to(s.cube), labels_to(s.labels));
      },
      py::arg("classes") = 4, py::arg("rows") = 32, py::arg("cols") = 32, py::arg("bands") = 16, py::arg("sigma") = 0.02,
      py::arg("seed") = 7, "Synthetic scene -> (cube, labels).");

  m.def(
      "stratified_split",
      [](const LabelArray& labels, double fraction, std::uint64_t seed) {
        const Split s = stratified_split(labels_from(labels), fraction, seed);
        return py::make_tuple(s.train, s.test);
      },
      py::arg("labels"), py::arg("fraction"), py::arg("seed"), "-> (train indices, test indices), row-major.");

  m.def("compute_metrics", [](const py::array_t<std::uint64_t, py::array::c_style | py::array::forcecast>& a) {
    return metrics_dict(compute_metrics(confusion_from(a)));
  }, py::arg("confusion"), "Rows are truth, columns prediction.");

  m.def("attention_energy", [](const DoubleArray& scores, double beta) {
    Tape t;
    return energy::attention_energy(t.constant(tensor_from(scores)), beta).value().item();
  }, py::arg("scores"), py::arg("beta"), "Energy of scores shaped (heads, tokens, tokens).");
  m.def("hopfield_energy", [](const DoubleArray& g, const DoubleArray& wh) {
    Tape t;
    return energy::hopfield_energy(t.constant(tensor_from(g)), t.constant(tensor_from(wh))).value().item();
  }, py::arg("g"), py::arg("wh"));
  m.def("dominant_frequencies", &fope::dominant_frequencies, py::arg("head_dim"), py::arg("base") = 10000.0);
  m.def("floor_frequency", &fope::floor_frequency, py::arg("positions"));

  m.def("default_config", []() { return to_json(RunConfig{}); }, "Default configuration as JSON text.");

  py::class_<Model>(m, "Model")
      .def_static("load", &load_checkpoint, py::arg("path"))
      .def("save", [](const Model& self, const std::filesystem::path& p) { save_checkpoint(self, p); }, py::arg("path"))
      .def_property_readonly("classes", [](const Model& self) { return self.config().classes; })
      .def_property_readonly("bands", [](const Model& self) { return self.config().bands; })
      .def_property_readonly("patch_size", [](const Model& self) { return self.config().patch_size; })
      .def_property_readonly("encoder", [](const Model& self) { return to_string(self.config().encoder); })
      .def("parameter_count", [](const Model& self) {
        std::size_t n = 0;
        for (const auto& [name, t] : self.parameters().entries()) n += t.size();
        return n;
      })
      .def(
          "evaluate",
          [](const Model& self, const CubeArray& cube, const LabelArray& labels, const std::vector<std::size_t>& pixels) {
            py::gil_scoped_release release;
            return evaluate(self, normalize(cube_from(cube)), labels_from(labels), pixels);
          },
          py::arg("cube"), py::arg("labels"), py::arg("pixels"))
      .def(
          "predict_map",
          [](const Model& self, const CubeArray& cube, const LabelArray& labels, bool all_pixels) {
            return labels_to(predict_map(self, normalize(cube_from(cube)), labels_from(labels), all_pixels));
          },
          py::arg("cube"), py::arg("labels"), py::arg("all_pixels") = false);

  py::class_<EvalReport>(m, "EvalReport")
      .def_property_readonly("oa", [](const EvalReport& r) { return r.metrics.oa; })
      .def_property_readonly("aa", [](const EvalReport& r) { return r.metrics.aa; })
      .def_property_readonly("kappa", [](const EvalReport& r) { return r.metrics.kappa; })
      .def("as_dict", &report_dict);

  m.def(
      "run_experiment",
      [](const CubeArray& cube, const LabelArray& labels, const std::string& config_json) {
        const HsiCube c = cube_from(cube);
        const LabelMap l = labels_from(labels);
        const RunConfig cfg = parse_config(config_json);
        ExperimentResult r = [&] {
          py::gil_scoped_release release;
          return run_experiment(c, l, cfg);
        }();
        py::dict d = report_dict(r.report);
        d["epoch_loss"] = r.training.epoch_loss;
        d["train_pixels"] = r.split.train;
        d["test_pixels"] = r.split.test;
        d["model"] = py::cast(std::move(r.model));
        return d;
      },
      py::arg("cube"), py::arg("labels"), py::arg("config_json") = "{}",
      "Normalize, split, train and evaluate. Returns metrics, loss curve, split and the model.");
}
