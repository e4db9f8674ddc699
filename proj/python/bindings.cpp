#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "mmnas/data.hpp"
#include "mmnas/network.hpp"
#include "mmnas/report.hpp"
#include "mmnas/search.hpp"
#include "mmnas/search_space.hpp"

namespace py = pybind11;
using namespace mmnas;

namespace {

py::object big_int(const BigInt& v) {
  std::ostringstream os;
  os << v;
  return py::module_::import("builtins").attr("int")(os.str());
}

py::array_t<float> to_numpy(const Tensor<float>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Tensor<float> from_numpy(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<float>(std::move(shape), std::vector<float>(a.data(), a.data() + a.size()));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multimodal random architecture search with shared weights";

  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<SpecParseError>(m, "SpecParseError", PyExc_ValueError);
  py::register_exception<BuildError>(m, "BuildError", PyExc_ValueError);
  py::register_exception<SnapshotError>(m, "SnapshotError", PyExc_ValueError);

  m.def("cell_cardinality", [](int layers) { return big_int(cell_cardinality(layers)); },
        py::arg("layers"));
  m.def("fusion_cardinality",
        [](int depth, int cells) { return big_int(fusion_cardinality(depth, cells)); },
        py::arg("depth"), py::arg("cells"));

  py::class_<SearchSpaceConfig>(m, "SearchSpaceConfig")
      .def(py::init<>())
      .def_readwrite("layers", &SearchSpaceConfig::layers)
      .def_readwrite("fusion_depth", &SearchSpaceConfig::fusion_depth)
      .def_readwrite("repeats", &SearchSpaceConfig::repeats)
      .def_readwrite("skip_probability", &SearchSpaceConfig::skip_probability)
      .def_readwrite("width", &SearchSpaceConfig::width)
      .def_readwrite("fusion_width", &SearchSpaceConfig::fusion_width)
      .def_readwrite("num_classes", &SearchSpaceConfig::num_classes)
      .def("violations", &SearchSpaceConfig::violations);

  py::class_<ArchitectureSpec>(m, "ArchitectureSpec")
      .def_readonly("repeats", &ArchitectureSpec::repeats)
      .def_readonly("width", &ArchitectureSpec::width)
      .def_readonly("fusion_width", &ArchitectureSpec::fusion_width)
      .def_readonly("num_classes", &ArchitectureSpec::num_classes)
      .def("to_json", [](const ArchitectureSpec& s) { return serialize(s); })
      .def_static("from_json", [](const std::string& text) { return deserialize(text); })
      .def("hash", [](const ArchitectureSpec& s) { return hash_hex(canonical_hash(s)); })
      .def("validate", [](const ArchitectureSpec& s) { return validate(s); })
      .def("summary", &emit_arch_summary)
      .def("dot", &emit_arch_dot)
      .def("fusion_connectivity", [](const ArchitectureSpec& s) { return fusion_connectivity(s.fusion); })
      .def(py::self == py::self)
      .def("__repr__", [](const ArchitectureSpec& s) {
        return "<ArchitectureSpec " + hash_hex(canonical_hash(s)) + ">";
      });

  m.def(
      "sample_architecture",
      [](const SearchSpaceConfig& cfg, std::uint64_t seed) {
        Rng rng(seed);
        return sample_architecture(cfg, rng);
      },
      py::arg("config"), py::arg("seed"));

  py::class_<SyntheticConfig>(m, "SyntheticConfig")
      .def(py::init<>())
      .def_readwrite("k_a", &SyntheticConfig::k_a)
      .def_readwrite("k_b", &SyntheticConfig::k_b)
      .def_readwrite("image_size", &SyntheticConfig::image_size)
      .def_readwrite("sigma", &SyntheticConfig::sigma)
      .def_readwrite("seed", &SyntheticConfig::seed)
      .def_property(
          "sizes",
          [](const SyntheticConfig& c) {
            return std::array<std::size_t, 3>{c.sizes.train, c.sizes.validation, c.sizes.test};
          },
          [](SyntheticConfig& c, std::array<std::size_t, 3> s) { c.sizes = {s[0], s[1], s[2]}; })
      .def_property_readonly("num_classes", &SyntheticConfig::num_classes)
      .def_property_readonly("ceiling_x", &SyntheticConfig::ceiling_x)
      .def_property_readonly("ceiling_y", &SyntheticConfig::ceiling_y);

  py::class_<BiModalDataset>(m, "Dataset")
      .def(py::init([](py::array_t<float> x, py::array_t<float> y, std::vector<int> labels,
                       std::array<std::size_t, 3> splits, int num_classes) {
             BiModalDataset d;
             d.x = from_numpy(x);
             d.y = from_numpy(y);
             d.labels = std::move(labels);
             d.splits = {splits[0], splits[1], splits[2]};
             d.num_classes = num_classes;
             d.check();
             return d;
           }),
           py::arg("x"), py::arg("y"), py::arg("labels"), py::arg("splits"),
           py::arg("num_classes"))
      .def("__len__", &BiModalDataset::size)
      .def_readonly("num_classes", &BiModalDataset::num_classes)
      .def_property_readonly("x", [](const BiModalDataset& d) { return to_numpy(d.x); })
      .def_property_readonly("y", [](const BiModalDataset& d) { return to_numpy(d.y); })
      .def_readonly("labels", &BiModalDataset::labels)
      .def_property_readonly("splits",
                             [](const BiModalDataset& d) {
                               return std::array<std::size_t, 3>{d.splits.train, d.splits.validation,
                                                                 d.splits.test};
                             })
      .def("save", [](const BiModalDataset& d, const std::filesystem::path& dir) { save(d, dir); })
      .def_static("load", [](const std::filesystem::path& p) { return load_manifest(p); })
      .def(py::self == py::self);

  m.def("generate_synthetic", &generate_synthetic, py::arg("config"));

  py::class_<SearchConfig>(m, "SearchConfig")
      .def(py::init<>())
      .def_readwrite("budget", &SearchConfig::budget)
      .def_readwrite("steps", &SearchConfig::steps)
      .def_readwrite("batch_size", &SearchConfig::batch_size)
      .def_readwrite("lr", &SearchConfig::lr)
      .def_readwrite("final_epochs", &SearchConfig::final_epochs)
      .def_readwrite("seed", &SearchConfig::seed)
      .def_readwrite("space", &SearchConfig::space);

  py::class_<RunRecord>(m, "RunRecord")
      .def_readonly("seed", &RunRecord::seed)
      .def_readonly("best", &RunRecord::best)
      .def_readonly("best_index", &RunRecord::best_index)
      .def_readonly("best_val_accuracy", &RunRecord::best_val_accuracy)
      .def_readonly("test_accuracy", &RunRecord::test_accuracy)
      .def_property_readonly("feature_params", [](const RunRecord& r) { return r.best_params.feature; })
      .def_property_readonly("fusion_params", [](const RunRecord& r) { return r.best_params.fusion; })
      .def_readonly("store_params", &RunRecord::store_params)
      .def_property_readonly("num_architectures", [](const RunRecord& r) { return r.log.size(); })
      .def("to_json", &to_json_text, py::arg("include_timing") = false)
      .def_static("from_json", [](const std::string& text) { return run_record_from_json(text); });

  m.def(
      "run_search",
      [](const SearchConfig& cfg, const BiModalDataset& data) { return run_search(cfg, data); },
      py::arg("config"), py::arg("data"), py::call_guard<py::gil_scoped_release>());

  m.def(
      "run_multi_seed", &run_multi_seed, py::arg("config"), py::arg("data"), py::arg("seeds"),
      py::call_guard<py::gil_scoped_release>());

  m.def(
      "final_train",
      [](const ArchitectureSpec& spec, const BiModalDataset& data, int epochs, double lr,
         int batch_size, std::uint64_t seed) {
        FinalResult r;
        {
          py::gil_scoped_release release;
          r = final_train(spec, data, FinalTrainConfig{epochs, lr, batch_size, seed});
        }
        py::dict out;
        out["test_accuracy"] = r.test_accuracy;
        out["epoch_losses"] = r.epoch_losses;
        out["params"] = r.store.count_params();
        out["snapshot"] = py::bytes(r.store.snapshot());
        return out;
      },
      py::arg("spec"), py::arg("data"), py::arg("epochs") = 50, py::arg("lr") = 1e-4,
      py::arg("batch_size") = 32, py::arg("seed") = 0);

  m.def(
      "variance_table",
      [](const std::vector<RunRecord>& records, const std::string& format) {
        if (format != "markdown" && format != "csv")
          throw py::value_error("format must be 'markdown' or 'csv'");
        return emit_table(aggregate(records),
                          format == "csv" ? TableFormat::Csv : TableFormat::Markdown);
      },
      py::arg("records"), py::arg("format") = "markdown");

  m.def(
      "variance_rows",
      [](const std::vector<double>& accuracy, const std::vector<double>& feature,
         const std::vector<double>& fusion) {
        if (accuracy.size() != feature.size() || accuracy.size() != fusion.size())
          throw py::value_error("columns differ in length");
        std::vector<VarianceRow> rows;
        for (std::size_t i = 0; i < accuracy.size(); ++i)
          rows.push_back({std::to_string(i + 1), accuracy[i], feature[i], fusion[i]});
        const auto t = aggregate(std::move(rows));
        py::dict out;
        out["mean"] = py::make_tuple(t.mean.accuracy, t.mean.feature_params, t.mean.fusion_params);
        out["std"] = py::make_tuple(t.std_dev.accuracy, t.std_dev.feature_params,
                                    t.std_dev.fusion_params);
        out["markdown"] = emit_table(t, TableFormat::Markdown);
        return out;
      },
      py::arg("accuracy"), py::arg("feature_params"), py::arg("fusion_params"));

  m.def("method_card", &emit_method_card);
}
