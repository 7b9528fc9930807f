// Python module `dcitoy`. Tensors cross the boundary as nested lists of
// floats (tokens x channels); everything else maps to plain dicts and lists.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>
#include <string>
#include <vector>

#include "dci/connector.hpp"
#include "dci/data.hpp"
#include "dci/error.hpp"
#include "dci/metrics.hpp"
#include "dci/train.hpp"
#include "json.hpp"

namespace py = pybind11;
using namespace dci;

namespace {

using Rows = std::vector<std::vector<double>>;

Tensor from_rows(const Rows& rows) {
  if (rows.empty()) throw DimensionError("expected a non-empty tokens x channels list");
  const std::size_t cols = rows.front().size();
  std::vector<double> flat;
  flat.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    if (r.size() != cols) throw DimensionError("ragged feature rows");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), cols}, std::move(flat));
}

Rows to_rows(const Tensor& t) {
  Rows out(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) out[i][j] = t.at(i, j);
  return out;
}

LayerFeatureStack to_stack(const std::vector<Rows>& layers) {
  LayerFeatureStack s;
  for (const auto& l : layers) s.features.push_back(from_rows(l));
  return s;
}

ConnectorConfig connector_config(std::size_t layers, std::size_t groups, std::size_t width, bool dci) {
  ConnectorConfig c;
  c.layers = layers;
  c.groups = groups;
  c.width = width;
  c.dci_enabled = dci;
  return c;
}

LossLog to_log(const std::vector<double>& losses) {
  LossLog log;
  for (std::size_t i = 0; i < losses.size(); ++i) log.entries.emplace_back(i + 1, losses[i]);
  return log;
}

py::dict record_dict(const SampleRecord& r) {
  py::dict d;
  d["id"] = r.id;
  d["task"] = r.task;
  d["dataset"] = r.dataset;
  d["images"] = r.images;
  d["prompt"] = r.prompt;
  d["answer"] = r.answer;
  d["answer_type"] = r.answer_type == AnswerType::mcq ? "mcq" : "open";
  d["choices"] = r.choices;
  d["metric"] = r.metric_tag();
  return d;
}

py::dict report_dict(const MetricReport& report) {
  py::list datasets;
  for (const auto& s : report.datasets) {
    py::dict d;
    d["task"] = s.task;
    d["dataset"] = s.dataset;
    d["metric"] = std::string(metric_name(s.metric));
    d["score"] = s.score;
    d["samples"] = s.samples;
    datasets.append(d);
  }
  py::dict groups;
  for (const auto& [key, avg] : report.group_averages)
    groups[py::str(key.task + "/" + std::string(metric_name(key.metric)))] = avg;
  py::dict out;
  out["datasets"] = datasets;
  out["group_averages"] = groups;
  return out;
}

}  // namespace

PYBIND11_MODULE(dcitoy, m) {
  m.doc() = "Toy interleaved multi-image model with a Dense Channel Integration connector";

  py::register_exception<Error>(m, "Error", PyExc_ValueError);

  // metrics
  m.def("rouge_l", &rouge_l, py::arg("prediction"), py::arg("reference"),
        "ROUGE-L F1 on whitespace tokens, scaled to [0, 100].");
  m.def(
      "accuracy_score",
      [](const std::string& prediction, const std::string& gold, std::optional<std::vector<std::string>> choices) {
        if (!choices) return accuracy_score(prediction, gold);
        return accuracy_score(prediction, gold, std::span<const std::string>(*choices));
      },
      py::arg("prediction"), py::arg("gold"), py::arg("choices") = py::none());
  m.def(
      "aggregate_group_average", [](const std::vector<double>& s) { return aggregate_group_average(s); },
      py::arg("scores"));
  m.def("format_score", &format_score, py::arg("value"), "Half-up rounding to two decimals.");
  m.def(
      "build_report",
      [](const std::vector<py::dict>& rows, bool from_display) {
        std::vector<DatasetScore> ds;
        for (const auto& r : rows) {
          DatasetScore s;
          s.task = r["task"].cast<std::string>();
          s.dataset = r["dataset"].cast<std::string>();
          s.metric = parse_metric(r["metric"].cast<std::string>());
          s.score = r["score"].cast<double>();
          if (r.contains("samples")) s.samples = r["samples"].cast<std::size_t>();
          ds.push_back(std::move(s));
        }
        return report_dict(build_report(std::move(ds), from_display));
      },
      py::arg("datasets"), py::arg("from_display") = false);

  // connector
  m.def(
      "fuse_groups",
      [](const std::vector<Rows>& layers, std::size_t groups) {
        const LayerFeatureStack s = to_stack(layers);
        const auto cfg = connector_config(s.layers(), groups, s.layers() ? s.last().cols() : 0, true);
        std::vector<Rows> out;
        for (const Tensor& g : fuse_groups(s, cfg)) out.push_back(to_rows(g));
        return out;
      },
      py::arg("layers"), py::arg("groups"), "Group means GL_1..GL_G of an L-layer feature stack.");
  m.def(
      "vision_embedding",
      [](const std::vector<Rows>& layers, std::size_t groups, bool dci) {
        const LayerFeatureStack s = to_stack(layers);
        const auto cfg = connector_config(s.layers(), groups, s.layers() ? s.last().cols() : 0, dci);
        return to_rows(vision_embedding(s, cfg).ev);
      },
      py::arg("layers"), py::arg("groups"), py::arg("dci") = true);
  m.def(
      "connector_param_count",
      [](std::size_t layers, std::size_t groups, std::size_t width, std::size_t hidden, std::size_t lm_width) {
        ConnectorConfig c = connector_config(layers, groups, width, true);
        c.hidden = hidden;
        c.lm_width = lm_width;
        const ConnectorParamCount pc = connector_param_count(c);
        return py::dict(py::arg("base") = pc.base, py::arg("with_dci") = pc.with_dci, py::arg("delta") = pc.delta);
      },
      py::arg("layers"), py::arg("groups"), py::arg("width"), py::arg("hidden"), py::arg("lm_width"));

  // data
  m.def("split_sizes", &split_sizes, py::arg("n"), py::arg("ratio") = 0.9);
  m.def(
      "synth_generate",
      [](const std::string& kind, std::size_t n, std::uint64_t seed, std::size_t image_size,
         const std::filesystem::path& out_dir) {
        py::list out;
        for (const auto& r : synth_generate(parse_synth_kind(kind), n, seed, image_size, out_dir))
          out.append(record_dict(r));
        return out;
      },
      py::arg("kind"), py::arg("n"), py::arg("seed"), py::arg("image_size"), py::arg("out_dir"));
  m.def(
      "load_manifest",
      [](const std::filesystem::path& path) {
        py::list out;
        for (const auto& r : load_manifest(path)) out.append(record_dict(r));
        return out;
      },
      py::arg("path"));

  // training
  m.def(
      "compare_loss_curves",
      [](const std::vector<double>& a, const std::vector<double>& b, std::size_t k) {
        const LossComparison c = compare_loss_curves(to_log(a), to_log(b), k);
        auto stats = [](const CurveStats& s) {
          return py::dict(py::arg("first_k_mean") = s.first_k_mean, py::arg("final_mean") = s.final_mean,
                          py::arg("final_variance") = s.final_variance);
        };
        return py::dict(py::arg("k") = c.k, py::arg("a") = stats(c.a), py::arg("b") = stats(c.b),
                        py::arg("first_k_delta") = c.first_k_delta, py::arg("final_mean_delta") = c.final_mean_delta,
                        py::arg("final_variance_delta") = c.final_variance_delta);
      },
      py::arg("a"), py::arg("b"), py::arg("k") = 10);
  m.def(
      "train",
      [](const py::dict& config) {
        const std::string text = py::module_::import("json").attr("dumps")(config).cast<std::string>();
        RunConfig cfg = RunConfig::defaults();
        apply_config_json(cfg, nlohmann::json::parse(text));
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(cfg);
        }
        std::vector<double> losses;
        for (const auto& [step, loss] : r.log.entries) losses.push_back(loss);
        return py::dict(py::arg("losses") = losses, py::arg("dci") = r.log.dci,
                        py::arg("config_hash") = r.log.config_hash, py::arg("train_samples") = r.train_records.size(),
                        py::arg("val_samples") = r.val_records.size(), py::arg("report") = report_dict(r.val_report));
      },
      py::arg("config"), "Train from a config dict using the JSON config keys. Returns losses and the val report.");
}
