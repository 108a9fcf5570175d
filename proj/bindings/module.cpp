#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "pscene/integration.hpp"
#include "pscene/scene_data.hpp"

namespace py = pybind11;
using namespace pscene;

namespace {

py::array_t<double> image_to_array(const SceneImage& img) {
  py::array_t<double> out({img.h, img.w, 3});
  std::copy(img.data.begin(), img.data.end(), out.mutable_data());
  return out;
}

SceneImage image_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
  if (arr.ndim() != 3 || arr.shape(2) != 3)
    throw ArgumentError("image array must have shape (h, w, 3)");
  SceneImage img;
  img.h = static_cast<int>(arr.shape(0));
  img.w = static_cast<int>(arr.shape(1));
  img.data.assign(arr.data(), arr.data() + arr.size());
  return img;
}

py::array_t<std::uint16_t> labels_to_array(const LabelMap& labels) {
  py::array_t<std::uint16_t> out({labels.h, labels.w});
  std::copy(labels.labels.begin(), labels.labels.end(), out.mutable_data());
  return out;
}

LabelMap labels_from_array(
    const py::array_t<std::uint16_t, py::array::c_style | py::array::forcecast>& arr) {
  if (arr.ndim() != 2) throw ArgumentError("label array must have shape (h, w)");
  LabelMap labels;
  labels.h = static_cast<int>(arr.shape(0));
  labels.w = static_cast<int>(arr.shape(1));
  labels.labels.assign(arr.data(), arr.data() + arr.size());
  return labels;
}

}  // namespace

PYBIND11_MODULE(_pscene, m) {
  m.doc() = "Scene parsing core: synthetic data, image/label I/O, evaluation.";
  m.attr("UNLABELED") = kUnlabeled;

  py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);

  py::class_<EvalReport>(m, "EvalReport")
      .def_readonly("gpa", &EvalReport::gpa)
      .def_readonly("aca", &EvalReport::aca)
      .def_readonly("per_class_recall", &EvalReport::per_class_recall)
      .def_readonly("confusion", &EvalReport::confusion)
      .def_readonly("labeled_total", &EvalReport::labeled_total)
      .def("__repr__", [](const EvalReport& r) {
        return "EvalReport(gpa=" + std::to_string(r.gpa) + ", aca=" + std::to_string(r.aca) + ")";
      });

  m.def("load_image", [](const std::filesystem::path& p) { return image_to_array(load_image_ppm(p)); },
        py::arg("path"), "Load a P6 PPM image as a float array of shape (h, w, 3).");
  m.def("save_image",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& arr,
           const std::filesystem::path& p) { save_image_ppm(image_from_array(arr), p); },
        py::arg("image"), py::arg("path"));
  m.def("load_labels",
        [](const std::filesystem::path& p) { return labels_to_array(load_labels_pgm(p)); },
        py::arg("path"), "Load a 16-bit P5 PGM label map (65535 marks unlabeled pixels).");
  m.def("save_labels",
        [](const py::array_t<std::uint16_t, py::array::c_style | py::array::forcecast>& arr,
           const std::filesystem::path& p) { save_labels_pgm(labels_from_array(arr), p); },
        py::arg("labels"), py::arg("path"));

  m.def("evaluate",
        [](const std::vector<py::array_t<std::uint16_t, py::array::c_style | py::array::forcecast>>& preds,
           const std::vector<py::array_t<std::uint16_t, py::array::c_style | py::array::forcecast>>& gts,
           int class_count) {
          std::vector<LabelMap> p, g;
          for (const auto& a : preds) p.push_back(labels_from_array(a));
          for (const auto& a : gts) g.push_back(labels_from_array(a));
          return evaluate(p, g, class_count);
        },
        py::arg("predictions"), py::arg("ground_truth"), py::arg("class_count"),
        "Per-pixel accuracy (gpa) and mean per-class recall (aca) over labeled pixels.");

  m.def("synthesize",
        [](std::uint64_t seed, const std::filesystem::path& out_dir) {
          const SceneGrammarConfig grammar = default_grammar();
          const SynthResult res = generate_synthetic_scenes(grammar, seed);
          save_split(res.train, out_dir / "train.manifest", "train");
          save_split(res.test, out_dir / "test.manifest", "test");
          std::vector<std::string> names;
          for (const auto& cls : grammar.classes) names.push_back(cls.name);
          return names;
        },
        py::arg("seed"), py::arg("out_dir"),
        "Generate the default synthetic corpus on disk; returns the class names.");
}
