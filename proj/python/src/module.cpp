#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "thzleaf/cli.hpp"
#include "thzleaf/config.hpp"
#include "thzleaf/errors.hpp"
#include "thzleaf/eval.hpp"
#include "thzleaf/hash.hpp"
#include "thzleaf/parallel.hpp"

namespace py = pybind11;
using namespace thzleaf;

namespace {

RunConfig config_from(const std::string& yaml, const std::vector<std::string>& overrides) {
  return parse_config(yaml, "<python>", overrides);
}

py::array_t<float> traces(const Dataset& d) {
  py::array_t<float> out({d.size(), d.n_t()});
  auto v = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t k = 0; k < d.n_t(); ++k) v(i, k) = d.records[i].trace.samples[k];
  return out;
}

template <class F>
py::array_t<double> column(const Dataset& d, F&& f) {
  py::array_t<double> out(d.size());
  auto v = out.mutable_unchecked<1>();
  for (std::size_t i = 0; i < d.size(); ++i) v(i) = f(d.records[i]);
  return out;
}

py::array_t<double> to_array(const std::vector<double>& v) {
  py::array_t<double> out(v.size());
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

std::vector<double> to_vector(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  return {a.data(), a.data() + a.size()};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "THz leaf-wetness toolkit: synthetic traces, tree and CNN regressors, metrics";
  m.attr("__version__") = cli::kVersion;

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<PipelineError>(m, "PipelineError", PyExc_RuntimeError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("set_thread_count", &set_thread_count, py::arg("n"));

  py::class_<Dataset>(m, "Dataset")
      .def("__len__", &Dataset::size)
      .def_property_readonly("n_t", &Dataset::n_t)
      .def_property_readonly("traces", &traces, "float32 array (records, samples)")
      .def_property_readonly("g_b", [](const Dataset& d) { return column(d, [](const SampleRecord& r) { return r.g_b; }); })
      .def_property_readonly("humidity", [](const Dataset& d) { return column(d, [](const SampleRecord& r) { return r.a; }); })
      .def_property_readonly("series_id", [](const Dataset& d) {
        return column(d, [](const SampleRecord& r) { return static_cast<double>(r.series_id); });
      })
      .def_property_readonly("acq_index", [](const Dataset& d) {
        return column(d, [](const SampleRecord& r) { return static_cast<double>(r.acq_index); });
      })
      .def_property_readonly("dt", [](const Dataset& d) { return d.empty() ? 0.0 : d.records[0].trace.dt; })
      .def_property_readonly("provenance", [](const Dataset& d) { return d.provenance; })
      .def("content_hash", [](const Dataset& d) { return hex64(d.content_hash()); })
      .def("subset", [](const Dataset& d, const std::vector<std::size_t>& idx) { return d.subset(idx); })
      .def("save", [](const Dataset& d, const std::filesystem::path& dir) { write_dataset(d, dir); })
      .def_static("load", &read_dataset, py::arg("dir"));

  m.def(
      "generate_dataset",
      [](const std::string& yaml, const std::vector<std::string>& overrides) {
        const auto cfg = config_from(yaml, overrides);
        py::gil_scoped_release nogil;
        return sim::generate_dataset(cfg.sim);
      },
      py::arg("config") = "", py::arg("overrides") = std::vector<std::string>{},
      "Synthesise a dataset from YAML config text plus section.key=value overrides.");
  m.def(
      "split_random",
      [](const Dataset& d, double test_fraction, std::uint64_t seed) { return split_random(d, test_fraction, seed); },
      py::arg("dataset"), py::arg("test_fraction") = 0.15, py::arg("seed") = 7);
  m.def("resolved_config", [](const std::string& yaml, const std::vector<std::string>& overrides) {
    return config_from(yaml, overrides).to_yaml();
  }, py::arg("config") = "", py::arg("overrides") = std::vector<std::string>{});

  m.def("water_absorption_per_cm", [](double f_thz) {
    return sim::power_absorption_per_cm(sim::DoubleDebyeWater{}, f_thz);
  }, py::arg("f_thz"));
  m.def(
      "slab_transmission",
      [](double n, double kappa, double thickness_mm, double f_thz) {
        const sim::LayerStack s{{sim::Layer{thickness_mm, sim::ConstantIndex{n, kappa}}}};
        return sim::stack_transmission(s, f_thz);
      },
      py::arg("n"), py::arg("kappa"), py::arg("thickness_mm"), py::arg("f_thz"));

  m.def(
      "detect_onset",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x, double dt) {
        return features::detect_onset(TimeTrace::from_double(to_vector(x), dt, 0.0));
      },
      py::arg("trace"), py::arg("dt") = 0.05);
  m.def(
      "fit_polynomial",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& t,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& y, int n, double lo, double hi) {
        return to_array(features::fit_polynomial(to_vector(t), to_vector(y), n, lo, hi));
      },
      py::arg("t"), py::arg("y"), py::arg("order"), py::arg("lo"), py::arg("hi"));
  m.def(
      "feature_matrix",
      [](const Dataset& d) {
        const auto fm = features::build_feature_matrix(d, features::WindowSpec{});
        py::array_t<double> out({fm.rows(), fm.cols()});
        std::copy(fm.values.data.begin(), fm.values.data.end(), out.mutable_data());
        return py::make_tuple(out, fm.names);
      },
      py::arg("dataset"), "Default windowed-polynomial features and their names.");

  m.def(
      "mae",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& p,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& b) {
        return eval::mae(to_vector(p), to_vector(b));
      },
      py::arg("g_p"), py::arg("g_b"));
  m.def(
      "median_pct_diff",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& p,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& b, double eps) {
        return eval::median_pct_diff(to_vector(p), to_vector(b), eps);
      },
      py::arg("g_p"), py::arg("g_b"), py::arg("epsilon") = 0.1);

  py::class_<eval::DtModel>(m, "TreeModel")
      .def("predict", [](const eval::DtModel& model, const Dataset& d) { return to_array(model.predict(d)); })
      .def_property_readonly("orders", [](const eval::DtModel& model) { return model.windows.orders; })
      .def_property_readonly("selected_features", [](const eval::DtModel& model) { return model.ensemble.feature_names; })
      .def("to_json", &eval::DtModel::to_json)
      .def("save", &eval::DtModel::save)
      .def_static("load", &eval::DtModel::load);
  m.def(
      "train_tree",
      [](const Dataset& d, const std::string& yaml, const std::vector<std::string>& overrides) {
        const auto cfg = config_from(yaml, overrides);
        py::gil_scoped_release nogil;
        return eval::train_dt(d, cfg.pipeline.dt);
      },
      py::arg("dataset"), py::arg("config") = "", py::arg("overrides") = std::vector<std::string>{});

  py::class_<cnn::CnnModel>(m, "CnnModel")
      .def("predict", [](cnn::CnnModel& model, const Dataset& d) { return to_array(model.predict(d)); })
      .def("layer_activations", [](cnn::CnnModel& model, const Dataset& d, std::size_t i) {
        if (i >= d.size()) throw py::index_error("record index out of range");
        return model.layer_activations(d.records[i].trace, d.records[i].a);
      })
      .def("save", &cnn::CnnModel::save, py::arg("json_file"), py::arg("weights_file"))
      .def_static("load", &cnn::CnnModel::load, py::arg("json_file"), py::arg("weights_file"));
  m.def(
      "train_cnn",
      [](const Dataset& d, const std::string& yaml, const std::vector<std::string>& overrides) {
        auto cfg = config_from(yaml, overrides);
        cfg.pipeline.cnn.arch.input_length = d.n_t();
        py::gil_scoped_release nogil;
        auto r = eval::train_cnn(d, cfg.pipeline.cnn);
        std::vector<std::tuple<int, double, double>> hist;
        for (const auto& h : r.history) hist.emplace_back(h.epoch, h.train_loss, h.val_loss);
        return std::make_pair(eval::chosen_model(r, cfg.pipeline.cnn), hist);
      },
      py::arg("dataset"), py::arg("config") = "", py::arg("overrides") = std::vector<std::string>{},
      "Returns (model, [(epoch, train_loss, val_loss), ...]).");
  m.def("cnn_parameter_counts", [] {
    const auto c = cnn::count_parameters(cnn::Architecture{});
    return py::dict(py::arg("total") = c.total, py::arg("feature_part") = c.feature_part,
                    py::arg("regression_part") = c.regression_part);
  });
  m.def("cnn_shape_chain", [] { return cnn::Architecture{}.shape_chain(); });

  m.def("run_cli", [](const std::vector<std::string>& args) { return cli::run(args); }, py::arg("args"),
        "Run a CLI subcommand in-process and return its exit code.");
}
