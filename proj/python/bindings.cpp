// Thin pybind11 layer over the core library. Structured values cross the
// boundary as the same JSON and CSV documents the CLI reads and writes.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>

#include "rdl/archspec.hpp"
#include "rdl/checkpoint.hpp"
#include "rdl/costmodel.hpp"
#include "rdl/data.hpp"
#include "rdl/distill.hpp"
#include "rdl/errors.hpp"
#include "rdl/experiments.hpp"
#include "rdl/parallel.hpp"

namespace py = pybind11;
using namespace rdl;

namespace {

cost::ArchDescriptor descriptor(const std::string &family, int depth, int widen, int num_classes, double dropout) {
  cost::ArchDescriptor a;
  a.family = arch::parse_family(family);
  a.depth = a.family == arch::Family::ResNet18 ? 18 : depth;
  a.widen = widen;
  a.num_classes = num_classes;
  a.dropout_p = dropout;
  return a;
}

std::vector<arch::GroupingPolicy> parse_policies(const std::vector<std::string> &names) {
  std::vector<arch::GroupingPolicy> out;
  for (const auto &n : names) out.push_back(arch::GroupingPolicy::parse(n));
  return out;
}

data::DatasetPair dataset(const std::string &handle, std::optional<int> subset) {
  auto pair = data::load_dataset(data::parse_handle(handle));
  if (subset) {
    pair.train = data::subset_per_class(pair.train, *subset);
    pair.test = data::subset_per_class(pair.test, *subset);
  }
  return pair;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Grouped-convolution network analysis, training and distillation";

  // args == (code, message); the Python package exposes args[0] as .code.
  py::exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error &e) {
      const py::object type = py::module_::import("rdl._core").attr("Error");
      PyErr_SetObject(type.ptr(), py::make_tuple(e.code(), e.what()).ptr());
    }
  });

  m.def("set_deterministic", &set_deterministic, py::arg("on"));

  m.def(
      "build_spec",
      [](const std::string &family, int depth, int widen, const std::string &policy, bool residual,
         int num_classes, double dropout) {
        const auto a = descriptor(family, depth, widen, num_classes, dropout);
        return arch::serialize(cost::build_network(a, arch::GroupingPolicy::parse(policy), residual));
      },
      py::arg("family"), py::arg("depth") = 22, py::arg("widen") = 2, py::arg("policy") = "std",
      py::arg("residual") = true, py::arg("num_classes") = 100, py::arg("dropout") = 0.3,
      "archspec/1 document of a built network");

  m.def(
      "validate_spec",
      [](const std::string &spec_json) {
        std::vector<std::tuple<std::string, int, int, std::string>> out;
        for (const auto &v : arch::validate(arch::parse_spec(spec_json))) {
          out.emplace_back(v.rule, v.block, v.layer, v.message);
        }
        return out;
      },
      py::arg("spec_json"), "(rule, block, layer, message) per violation; empty when valid");

  m.def(
      "analyze",
      [](const std::string &spec_json, const std::string &input, const std::string &format) {
        const auto report = cost::network_cost(arch::parse_spec(spec_json), cost::InputShape::parse(input));
        return cost::render_report(report, cost::parse_format(format));
      },
      py::arg("spec_json"), py::arg("input") = "3x32x32", py::arg("format") = "json");

  m.def(
      "cost_table",
      [](const std::string &family, int depth, int widen, const std::vector<std::string> &policies,
         const std::vector<bool> &residual_modes, const std::string &input, int num_classes,
         const std::string &format) {
        const auto t = cost::cost_table(descriptor(family, depth, widen, num_classes, 0.3), parse_policies(policies),
                                        residual_modes, cost::InputShape::parse(input));
        return cost::render_table(t, cost::parse_format(format));
      },
      py::arg("family"), py::arg("depth") = 22, py::arg("widen") = 2, py::arg("policies"),
      py::arg("residual_modes") = std::vector<bool>{true, false}, py::arg("input") = "3x32x32",
      py::arg("num_classes") = 100, py::arg("format") = "json");

  m.def("format_millions", &cost::format_millions, py::arg("count"), py::arg("significant"));
  m.def("accuracy_drop", &exp::accuracy_drop, py::arg("r_baseline"), py::arg("nr_baseline"));
  m.def("distillation_gain", &exp::distillation_gain, py::arg("distilled"), py::arg("r_baseline"));

  m.def(
      "report",
      [](const std::string &results_csv) {
        auto tables = exp::build_tables(exp::parse_results_csv(results_csv));
        return py::make_tuple(exp::render_tables(tables), exp::metrics_csv(tables));
      },
      py::arg("results_csv"), "(formatted tables, metrics CSV) from a results CSV");

  m.def(
      "train",
      [](const std::string &spec_json, const std::string &dataset_handle, const std::string &config_json,
         std::optional<int> subset, std::optional<std::string> checkpoint_out) {
        const auto spec = arch::parse_spec(spec_json);
        const auto config = distill::TrainConfig::from_json(config_json);
        const auto pair = dataset(dataset_handle, subset);
        std::optional<distill::Teacher> teacher;
        if (config.distill) teacher = distill::load_teacher(*config.distill);
        distill::TrainResult r;
        {
          py::gil_scoped_release release;
          r = distill::train(spec, pair, config, teacher);
        }
        if (checkpoint_out) tg::save_checkpoint(*checkpoint_out, r.checkpoint);
        py::dict out;
        out["final_test"] = r.final_test;
        out["best_test"] = r.best_test;
        out["final_train"] = r.final_train;
        out["history_csv"] = distill::history_csv(r.history);
        out["normalizer_json"] = r.normalizer.to_json();
        return out;
      },
      py::arg("spec_json"), py::arg("dataset"), py::arg("config_json"), py::arg("subset") = py::none(),
      py::arg("checkpoint_out") = py::none(),
      "Trains on hard targets, or distills when the traincfg/1 document names a teacher");

  m.def(
      "evaluate",
      [](const std::string &spec_json, const std::string &checkpoint_path, const std::string &normalizer_json,
         const std::string &dataset_handle, std::optional<int> subset, const std::string &split) {
        const auto pair = dataset(dataset_handle, subset);
        if (split != "train" && split != "test") throw ConfigError("split must be train or test");
        return distill::evaluate(tg::load_checkpoint(checkpoint_path), arch::parse_spec(spec_json),
                                 split == "train" ? pair.train : pair.test,
                                 data::Normalizer::from_json(normalizer_json));
      },
      py::arg("spec_json"), py::arg("checkpoint"), py::arg("normalizer_json"), py::arg("dataset"),
      py::arg("subset") = py::none(), py::arg("split") = "test", "top-1 accuracy in percent");

  m.def(
      "run_matrix",
      [](const std::string &config_json, const std::string &out_dir) {
        const auto config = exp::MatrixConfig::from_json(config_json, {});
        exp::MatrixOutcome outcome;
        {
          py::gil_scoped_release release;
          outcome = exp::run_matrix(config, out_dir);
        }
        return py::make_tuple(exp::results_csv(outcome.results), outcome.failures.size());
      },
      py::arg("config_json"), py::arg("out_dir"), "(results CSV, failure count); artifacts land in out_dir");

  m.def(
      "project_2d",
      [](const std::vector<std::vector<double>> &features, const std::vector<int> &class_ids) {
        exp::ActivationMatrix a;
        a.features = features;
        a.class_ids = class_ids;
        for (std::size_t i = 0; i < features.size(); ++i) a.sample_ids.push_back(static_cast<int>(i));
        if (a.class_ids.size() != features.size()) throw ConfigError("one class id per row");
        std::vector<std::tuple<double, double>> out;
        for (const auto &p : exp::project_2d(a)) out.emplace_back(p.x, p.y);
        return out;
      },
      py::arg("features"), py::arg("class_ids"), "leading two principal-component coordinates per row");
}
