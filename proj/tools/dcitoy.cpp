// dcitoy: synthetic data, training, evaluation and reporting for the toy
// interleaved multi-image model with a switchable DCI connector.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dci/connector.hpp"
#include "dci/data.hpp"
#include "dci/error.hpp"
#include "dci/metrics.hpp"
#include "dci/model.hpp"
#include "dci/train.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw dci::IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw dci::ParseError(path.string() + ": " + e.what());
  }
}

void write_or_print(const std::string& text, const std::optional<fs::path>& out) {
  std::cout << text;
  if (out) {
    if (out->has_parent_path()) fs::create_directories(out->parent_path());
    std::ofstream f(*out, std::ios::binary);
    if (!f) throw dci::IoError("cannot write " + out->string());
    f << text;
  }
}

// Scores file: {"from_display": bool, "datasets": [{"task", "dataset", "metric", "score"}]}.
dci::MetricReport report_from_scores(const json& j) {
  std::vector<dci::DatasetScore> datasets;
  try {
    for (const json& d : j.at("datasets")) {
      datasets.push_back({d.at("task").get<std::string>(), d.at("dataset").get<std::string>(),
                          dci::parse_metric(d.at("metric").get<std::string>()), d.at("score").get<double>(),
                          d.value("samples", std::size_t{0})});
    }
  } catch (const json::exception& e) {
    throw dci::ParseError(std::string("scores file: ") + e.what());
  }
  return dci::build_report(std::move(datasets), j.value("from_display", false));
}

// Quick internal consistency checks; the full suites live under tests/.
int run_selftest() {
  int failures = 0;
  auto check = [&](const char* name, bool ok) {
    std::printf("[%s] %s\n", ok ? "PASS" : "FAIL", name);
    if (!ok) ++failures;
  };

  const std::vector<double> rouge_group = {33.71, 59.26, 31.33, 35.78};
  check("group average 40.02", dci::format_score(dci::aggregate_group_average(rouge_group)) == "40.02");
  check("rouge_l worked example", dci::rouge_l("the cat on mat", "the cat sat on the mat") == 80.0);
  check("accuracy normalization", dci::accuracy_score("(b)", "B") == 100.0);

  dci::ConnectorConfig cc;
  cc.layers = 4;
  cc.groups = 2;
  cc.width = 1;
  dci::LayerFeatureStack stack;
  for (double v : {1.0, 2.0, 3.0, 4.0}) stack.features.push_back(dci::Tensor({1, 1}, {v}));
  const dci::Tensor ev = dci::vision_embedding(stack, cc).ev;
  check("DCI embedding [1.5, 3.5, 4.0]", ev.values() == std::vector<double>{1.5, 3.5, 4.0});

  dci::ConnectorConfig pc;
  pc.width = 8;
  pc.hidden = 16;
  pc.lm_width = 16;
  pc.groups = 3;
  pc.layers = 6;
  const auto count = dci::connector_param_count(pc);
  check("projector delta G*d*h = 384", count.delta == 384);

  dci::ModelConfig mc;
  mc.vision.layers = 3;
  mc.vision.width = 8;
  mc.connector.groups = 3;
  mc.connector.hidden = 8;
  mc.decoder.width = 8;
  mc.decoder.blocks = 1;
  mc.decoder.vocab_size = 12;
  mc.decoder.max_len = 16;
  mc.link();
  const dci::ModelParams params = dci::init_model(mc, 5);
  dci::Example ex;
  ex.plan.ids = {dci::Vocab::kBos, dci::Vocab::kImage, 5, 6, 7, dci::Vocab::kEos};
  ex.plan.image_of = {0};
  ex.plan.answer_mask = {0, 0, 0, 0, 1, 1};
  std::vector<double> pixels(64);
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = static_cast<double>((i * 37) % 64) / 63.0;
  ex.images = {dci::Tensor({8, 8}, pixels)};
  auto report = dci::grad_check(
      [&](const dci::Tensor& image) {
        dci::Example local = ex;
        local.images = {image};
        return dci::example_loss(mc, params, local);
      },
      ex.images.front(), 1e-5, 1e-4);
  check("pipeline gradient vs finite differences", report.passed);

  std::printf("%d failure(s)\n", failures);
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Toy interleaved multi-image model with a Dense Channel Integration connector"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic interleaved dataset");
  std::string synth_kind = "spot_diff";
  std::size_t synth_n = 200, synth_image = 8;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  synth->add_option("--kind", synth_kind, "spot_diff | state_coherence | mcq_count")->capture_default_str();
  synth->add_option("--n", synth_n, "Number of samples")->capture_default_str();
  synth->add_option("--seed", synth_seed, "Generator seed")->capture_default_str();
  synth->add_option("--image-size", synth_image, "Pixels per side (multiple of 8)")->capture_default_str();
  synth->add_option("--out", synth_out, "Output directory")->required();

  // train
  auto* train = app.add_subcommand("train", "Train on a manifest and evaluate on its validation split");
  std::string train_manifest, train_out, train_config;
  std::string dci_flag;
  std::optional<std::size_t> layers, groups, epochs, batch_size;
  std::optional<std::uint64_t> seed;
  std::optional<double> split_ratio, lr;
  bool paper_lr = false;
  train->add_option("--manifest", train_manifest, "JSON-lines manifest");
  train->add_option("--out", train_out, "Output directory");
  train->add_option("--config", train_config, "JSON run config");
  train->add_option("--dci", dci_flag, "Enable the DCI connector")->check(CLI::IsMember({"on", "off"}));
  train->add_option("--layers", layers, "Vision encoder layers L");
  train->add_option("--groups", groups, "DCI groups G (must divide L)");
  train->add_option("--seed", seed, "Run seed");
  train->add_option("--split-ratio", split_ratio, "Train fraction per dataset");
  train->add_flag("--paper-lr", paper_lr, "Use the 2e-5 learning rate of the original fine-tuning run");
  train->add_option("--lr", lr, "Learning rate");
  train->add_option("--epochs", epochs, "Epochs");
  train->add_option("--batch-size", batch_size, "Batch size");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a trained model directory on a manifest");
  std::string eval_model, eval_manifest, eval_out, eval_split = "all";
  std::size_t eval_max_new = 8;
  eval->add_option("--model-dir", eval_model, "Directory written by train")->required();
  eval->add_option("--manifest", eval_manifest, "JSON-lines manifest")->required();
  eval->add_option("--split", eval_split, "all | train | val (recomputed with the run's seed and ratio)")
      ->check(CLI::IsMember({"all", "train", "val"}))
      ->capture_default_str();
  eval->add_option("--max-new", eval_max_new, "Maximum generated tokens")->capture_default_str();
  eval->add_option("--out", eval_out, "Directory for report.txt");

  // report
  auto* report = app.add_subcommand("report", "Render a score table or compare two loss logs");
  std::string scores_path, layout = "table1", report_out;
  std::vector<std::string> compare;
  std::size_t first_k = 10;
  report->add_option("--scores", scores_path, "Per-dataset scores JSON");
  report->add_option("--layout", layout, "table1 | test_tables | groups")->capture_default_str();
  report->add_option("--compare", compare, "Two loss_log.csv files")->expected(2);
  report->add_option("--first-k", first_k, "Window size for the comparison")->capture_default_str();
  report->add_option("--out", report_out, "Also write the output to this file");

  auto* selftest = app.add_subcommand("selftest", "Run quick internal checks");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      auto records = dci::synth_generate(dci::parse_synth_kind(synth_kind), synth_n, synth_seed, synth_image, synth_out);
      std::printf("wrote %zu records to %s\n", records.size(), (fs::path(synth_out) / "manifest.jsonl").c_str());
      return 0;
    }

    if (train->parsed()) {
      dci::RunConfig cfg = dci::RunConfig::defaults();
      if (!train_config.empty()) dci::apply_config_json(cfg, read_json(train_config));
      if (!train_manifest.empty()) cfg.manifest = train_manifest;
      if (!train_out.empty()) cfg.out_dir = train_out;
      if (!dci_flag.empty()) cfg.model.connector.dci_enabled = dci_flag == "on";
      if (layers) cfg.model.vision.layers = *layers;
      if (groups) cfg.model.connector.groups = *groups;
      if (seed) cfg.seed = *seed;
      if (split_ratio) cfg.split_ratio = *split_ratio;
      if (lr) cfg.adam.lr = *lr;
      if (paper_lr) cfg.adam.lr = dci::kPaperLearningRate;
      if (epochs) cfg.epochs = *epochs;
      if (batch_size) cfg.batch_size = *batch_size;
      cfg.model.link();
      if (cfg.manifest.empty()) throw dci::ConfigError("train: --manifest (or config 'manifest') is required");

      const auto start = std::chrono::steady_clock::now();
      dci::TrainResult result = dci::train(cfg);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      const auto& log = result.log;
      std::printf("dci=%s lr=%g steps=%zu first_loss=%.6f last_loss=%.6f (%.1fs)\n", log.dci ? "on" : "off",
                  result.config.adam.lr, log.size(), log.entries.front().second, log.entries.back().second, secs);
      std::cout << dci::render_report(result.val_report, dci::ReportLayout::groups);
      return 0;
    }

    if (eval->parsed()) {
      const fs::path dir(eval_model);
      dci::RunConfig cfg = dci::RunConfig::defaults();
      const json stored = read_json(dir / "config.json");
      dci::apply_config_json(cfg, stored);
      cfg.model.decoder.vocab_size = stored.at("decoder").at("vocab_size").get<std::size_t>();
      const auto words = read_json(dir / "vocab.json").get<std::vector<std::string>>();
      const dci::Vocab vocab = dci::Vocab::from_words(words);
      cfg.model.validate();
      const dci::ModelParams params = dci::load_params(dir / "params.bin", cfg.model);

      auto records = dci::load_manifest(eval_manifest);
      if (eval_split != "all") {
        auto split = dci::split_by_dataset(records, dci::SplitSpec{cfg.split_ratio, cfg.seed});
        records = eval_split == "train" ? split.train : split.val;
      }
      auto samples = dci::load_samples(records, fs::path(eval_manifest).parent_path());
      auto metrics = dci::evaluate(cfg.model, params, vocab, samples, eval_max_new);
      std::optional<fs::path> out;
      if (!eval_out.empty()) out = fs::path(eval_out) / "report.txt";
      write_or_print(dci::render_report(metrics, dci::ReportLayout::groups), out);
      return 0;
    }

    if (report->parsed()) {
      std::optional<fs::path> out;
      if (!report_out.empty()) out = fs::path(report_out);
      if (!compare.empty()) {
        auto a = dci::read_loss_csv(compare[0]);
        auto b = dci::read_loss_csv(compare[1]);
        write_or_print(dci::format_comparison(dci::compare_loss_curves(a, b, first_k)), out);
        return 0;
      }
      if (scores_path.empty()) throw dci::ConfigError("report: give --scores or --compare");
      auto metrics = report_from_scores(read_json(scores_path));
      write_or_print(dci::render_report(metrics, dci::parse_layout(layout)), out);
      return 0;
    }

    if (selftest->parsed()) return run_selftest();
  } catch (const dci::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
