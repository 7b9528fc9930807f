#pragma once

// Adam training loop, evaluation runner and loss-curve comparison.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dci/data.hpp"
#include "dci/decoder.hpp"
#include "dci/metrics.hpp"
#include "dci/model.hpp"
#include "json.hpp"

namespace dci {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Learning rate of the original 7B fine-tuning run (--paper-lr).
inline constexpr double kPaperLearningRate = 2e-5;

struct AdamState {
  std::size_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// m <- b1 m + (1 - b1) g;  v <- b2 v + (1 - b2) g^2;
/// theta <- theta - lr * m_hat / (sqrt(v_hat) + eps), with bias-corrected
/// m_hat = m / (1 - b1^t) and v_hat = v / (1 - b2^t).
/// State is sized on first use. Throws DimensionError on shape mismatch.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state,
               const AdamHyper& hyper);

struct RunConfig {
  ModelConfig model;
  AdamHyper adam;
  std::size_t epochs = 1;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  double split_ratio = 0.9;
  std::size_t max_new_tokens = 8;
  std::filesystem::path manifest;
  std::filesystem::path out_dir;

  /// Toy defaults: 8x8 images, 4x4 patches, d=8, L=6, G=3, e=32.
  static RunConfig defaults();
  void validate() const;
};

/// Reads the JSON config file layout documented in the README; absent keys
/// keep their current value.
void apply_config_json(RunConfig& cfg, const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& cfg);

struct LossLog {
  std::vector<std::pair<std::size_t, double>> entries;  // (step, loss)
  std::string config_hash;
  bool dci = false;
  std::uint64_t seed = 0;

  bool empty() const { return entries.empty(); }
  std::size_t size() const { return entries.size(); }
  /// Throws ValidationError unless steps strictly increase and losses are
  /// finite.
  void validate() const;
};

/// "step,loss" header, one row per step, losses with 17 significant digits.
void write_loss_csv(const std::filesystem::path& path, const LossLog& log);
LossLog read_loss_csv(const std::filesystem::path& path);

/// Records loaded with their decoded images.
struct LoadedSample {
  SampleRecord record;
  std::vector<Tensor> images;
};

std::vector<LoadedSample> load_samples(std::span<const SampleRecord> records, const std::filesystem::path& manifest_dir);

/// Vocabulary over prompts, answers and choices.
Vocab build_vocab(std::span<const SampleRecord> records);

Example make_example(const LoadedSample& sample, const Vocab& vocab, bool with_answer);

struct TrainResult {
  RunConfig config;  // decoder.vocab_size resolved
  Vocab vocab;
  ModelParams initial;
  ModelParams params;
  LossLog log;
  std::vector<SampleRecord> train_records;
  std::vector<SampleRecord> val_records;
  MetricReport val_report;
};

/// Loads the manifest, splits each dataset 9:1 (by default), trains for
/// cfg.epochs with one Adam step per batch, evaluates on the validation
/// split and, when out_dir is set, writes loss_log.csv, params.bin,
/// vocab.json, config.json, run.json and report.txt.
TrainResult train(const RunConfig& cfg);

/// Prediction for one record; used to plug in stubs.
using AnswerFn = std::function<std::string(const SampleRecord&)>;

/// Scores every record with its declared metric and aggregates per dataset
/// and per (task, metric) group. Records are processed in id order. Throws
/// ConfigError for an unknown metric tag.
MetricReport evaluate(std::span<const SampleRecord> records, const AnswerFn& answer);

/// Greedy generation with the given model.
MetricReport evaluate(const ModelConfig& cfg, const ModelParams& params, const Vocab& vocab,
                      std::span<const LoadedSample> samples, std::size_t max_new);

struct CurveStats {
  double first_k_mean = 0.0;
  double final_mean = 0.0;
  double final_variance = 0.0;  // population variance over the final window
};

struct LossComparison {
  std::size_t k = 0;
  CurveStats a;
  CurveStats b;
  double first_k_delta = 0.0;  // b - a
  double final_mean_delta = 0.0;
  double final_variance_delta = 0.0;
};

/// Both windows hold k entries: the first k and the last k. Throws
/// EmptyReductionError for an empty log and RangeError when k is zero or
/// exceeds either log.
LossComparison compare_loss_curves(const LossLog& a, const LossLog& b, std::size_t k);
std::string format_comparison(const LossComparison& c);

}  // namespace dci
