#include "dci/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "dci/error.hpp"
#include "dci/rng.hpp"

namespace dci {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const RunConfig& cfg) {
  json j = config_to_json(cfg);
  j.erase("manifest");
  j.erase("out_dir");
  return fnv1a_hex(j.dump());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

template <class T>
void read_into(const json& j, const char* key, T& target) {
  if (j.contains(key)) target = j.at(key).get<T>();
}

double mean_of(std::span<const double> xs) {
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

}  // namespace

// ---- Adam -----------------------------------------------------------------

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state,
               const AdamHyper& hyper) {
  if (params.size() != grads.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                         std::to_string(grads.size()) + " gradients");
  }
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.emplace_back(p->numel(), 0.0);
      state.v.emplace_back(p->numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("adam_step: optimizer state has a different layout");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape() || state.m[i].size() != params[i]->numel()) {
      throw DimensionError("adam_step: parameter " + shape_to_string(params[i]->shape()) + " vs gradient " +
                           shape_to_string(grads[i].shape()));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i]->data();
    auto g = grads[i].data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * g[j];
      v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * g[j] * g[j];
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      theta[j] -= hyper.lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
    }
  }
}

// ---- configuration --------------------------------------------------------

RunConfig RunConfig::defaults() {
  RunConfig cfg;
  cfg.model.vision = VisionConfig{};
  cfg.model.connector = ConnectorConfig{};
  cfg.model.decoder = DecoderConfig{};
  cfg.model.link();
  return cfg;
}

void RunConfig::validate() const {
  if (!std::isfinite(adam.lr) || adam.lr < 0.0) throw ConfigError("run: learning rate must be finite and >= 0");
  if (epochs < 1) throw ConfigError("run: epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("run: batch_size must be at least 1");
  if (!(split_ratio > 0.0 && split_ratio <= 1.0)) throw ConfigError("run: split_ratio must lie in (0, 1]");
  model.vision.validate();
  model.connector.validate();
}

void apply_config_json(RunConfig& cfg, const json& j) {
  try {
    if (j.contains("vision")) {
      const json& v = j.at("vision");
      read_into(v, "image_size", cfg.model.vision.image_size);
      read_into(v, "patch_size", cfg.model.vision.patch_size);
      read_into(v, "channels", cfg.model.vision.channels);
      read_into(v, "width", cfg.model.vision.width);
      read_into(v, "layers", cfg.model.vision.layers);
      read_into(v, "heads", cfg.model.vision.heads);
    }
    if (j.contains("connector")) {
      const json& c = j.at("connector");
      read_into(c, "groups", cfg.model.connector.groups);
      read_into(c, "hidden", cfg.model.connector.hidden);
      read_into(c, "dci", cfg.model.connector.dci_enabled);
    }
    if (j.contains("decoder")) {
      const json& d = j.at("decoder");
      read_into(d, "width", cfg.model.decoder.width);
      read_into(d, "blocks", cfg.model.decoder.blocks);
      read_into(d, "heads", cfg.model.decoder.heads);
      read_into(d, "max_len", cfg.model.decoder.max_len);
    }
    if (j.contains("optimizer")) {
      const json& o = j.at("optimizer");
      read_into(o, "lr", cfg.adam.lr);
      read_into(o, "beta1", cfg.adam.beta1);
      read_into(o, "beta2", cfg.adam.beta2);
      read_into(o, "eps", cfg.adam.eps);
    }
    read_into(j, "epochs", cfg.epochs);
    read_into(j, "batch_size", cfg.batch_size);
    read_into(j, "seed", cfg.seed);
    read_into(j, "split_ratio", cfg.split_ratio);
    read_into(j, "max_new_tokens", cfg.max_new_tokens);
    if (j.contains("manifest")) cfg.manifest = j.at("manifest").get<std::string>();
    if (j.contains("out_dir")) cfg.out_dir = j.at("out_dir").get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  cfg.model.link();
}

json config_to_json(const RunConfig& cfg) {
  const auto& m = cfg.model;
  json j;
  j["vision"] = {{"image_size", m.vision.image_size}, {"patch_size", m.vision.patch_size},
                 {"channels", m.vision.channels},     {"width", m.vision.width},
                 {"layers", m.vision.layers},         {"heads", m.vision.heads}};
  j["connector"] = {{"groups", m.connector.groups}, {"hidden", m.connector.hidden}, {"dci", m.connector.dci_enabled}};
  j["decoder"] = {{"width", m.decoder.width},
                  {"blocks", m.decoder.blocks},
                  {"heads", m.decoder.heads},
                  {"max_len", m.decoder.max_len},
                  {"vocab_size", m.decoder.vocab_size}};
  j["optimizer"] = {{"lr", cfg.adam.lr}, {"beta1", cfg.adam.beta1}, {"beta2", cfg.adam.beta2}, {"eps", cfg.adam.eps}};
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["seed"] = cfg.seed;
  j["split_ratio"] = cfg.split_ratio;
  j["max_new_tokens"] = cfg.max_new_tokens;
  j["manifest"] = cfg.manifest.string();
  j["out_dir"] = cfg.out_dir.string();
  return j;
}

// ---- loss logs ------------------------------------------------------------

void LossLog::validate() const {
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!std::isfinite(entries[i].second)) {
      throw ValidationError("loss log: non-finite loss at step " + std::to_string(entries[i].first));
    }
    if (i > 0 && entries[i].first <= entries[i - 1].first) {
      throw ValidationError("loss log: steps must strictly increase (step " + std::to_string(entries[i].first) + ")");
    }
  }
}

void write_loss_csv(const fs::path& path, const LossLog& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "step,loss\n";
  char buf[64];
  for (const auto& [step, loss] : log.entries) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", step, loss);
    out << buf;
  }
}

LossLog read_loss_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("step,loss", 0) != 0) {
    throw ParseError(path.string() + ": expected header 'step,loss'");
  }
  LossLog log;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    try {
      if (comma == std::string::npos) throw std::invalid_argument("missing comma");
      log.entries.emplace_back(std::stoull(line.substr(0, comma)), std::stod(line.substr(comma + 1)));
    } catch (const std::exception&) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": malformed row '" + line + "'");
    }
  }
  log.validate();
  return log;
}

// ---- data preparation -----------------------------------------------------

std::vector<LoadedSample> load_samples(std::span<const SampleRecord> records, const fs::path& manifest_dir) {
  std::vector<LoadedSample> samples;
  samples.reserve(records.size());
  for (const SampleRecord& r : records) {
    LoadedSample s{r, {}};
    for (const std::string& img : r.images) s.images.push_back(image_to_tensor(read_image(resolve_image_path(manifest_dir, img))));
    samples.push_back(std::move(s));
  }
  return samples;
}

Vocab build_vocab(std::span<const SampleRecord> records) {
  std::vector<std::string> texts;
  for (const SampleRecord& r : records) {
    texts.push_back(r.prompt);
    texts.push_back(r.answer);
    texts.insert(texts.end(), r.choices.begin(), r.choices.end());
  }
  return Vocab::build(texts);
}

Example make_example(const LoadedSample& sample, const Vocab& vocab, bool with_answer) {
  std::optional<std::string_view> answer;
  if (with_answer) answer = sample.record.answer;
  return Example{plan_sequence(vocab, sample.record.prompt, answer), sample.images};
}

// ---- evaluation -----------------------------------------------------------

MetricReport evaluate(std::span<const SampleRecord> records, const AnswerFn& answer) {
  std::vector<const SampleRecord*> ordered;
  for (const SampleRecord& r : records) ordered.push_back(&r);
  std::sort(ordered.begin(), ordered.end(), [](const auto* a, const auto* b) { return a->id < b->id; });

  struct Acc {
    std::string task;
    Metric metric;
    double total = 0.0;
    std::size_t n = 0;
  };
  std::vector<std::string> order;
  std::map<std::string, Acc> acc;
  for (const SampleRecord* r : ordered) {
    const Metric metric = parse_metric(r->metric_tag());
    const std::string prediction = answer(*r);
    double score = 0.0;
    if (metric == Metric::rouge_l) {
      score = rouge_l(prediction, r->answer);
    } else if (r->choices.empty()) {
      score = accuracy_score(prediction, r->answer);
    } else {
      score = accuracy_score(prediction, r->answer, std::span<const std::string>(r->choices));
    }
    auto [it, inserted] = acc.try_emplace(r->dataset, Acc{r->task, metric});
    if (inserted) order.push_back(r->dataset);
    if (it->second.metric != metric || it->second.task != r->task) {
      throw ConfigError("dataset '" + r->dataset + "' mixes tasks or metric tags (record '" + r->id + "')");
    }
    it->second.total += score;
    ++it->second.n;
  }
  std::vector<DatasetScore> datasets;
  for (const std::string& name : order) {
    const Acc& a = acc.at(name);
    datasets.push_back({a.task, name, a.metric, a.total / static_cast<double>(a.n), a.n});
  }
  return build_report(std::move(datasets));
}

MetricReport evaluate(const ModelConfig& cfg, const ModelParams& params, const Vocab& vocab,
                      std::span<const LoadedSample> samples, std::size_t max_new) {
  std::map<std::string, const LoadedSample*> by_id;
  std::vector<SampleRecord> records;
  for (const LoadedSample& s : samples) {
    by_id[s.record.id] = &s;
    records.push_back(s.record);
  }
  return evaluate(records, [&](const SampleRecord& r) {
    const LoadedSample& s = *by_id.at(r.id);
    Example ex = make_example(s, vocab, /*with_answer=*/false);
    return generate_answer(cfg, params, vocab, ex.plan, ex.images, max_new);
  });
}

// ---- training -------------------------------------------------------------

TrainResult train(const RunConfig& input) {
  input.validate();
  TrainResult result;
  result.config = input;
  RunConfig& cfg = result.config;

  const std::vector<SampleRecord> records = load_manifest(cfg.manifest);
  Split split = split_by_dataset(records, SplitSpec{cfg.split_ratio, cfg.seed});
  result.train_records = split.train;
  result.val_records = split.val;

  result.vocab = build_vocab(records);
  cfg.model.decoder.vocab_size = result.vocab.size();
  cfg.model.decoder.seed = cfg.seed;
  cfg.model.vision.seed = cfg.seed;
  cfg.model.link();
  cfg.model.validate();

  const fs::path manifest_dir = cfg.manifest.parent_path();
  const std::vector<LoadedSample> train_samples = load_samples(split.train, manifest_dir);
  const std::vector<LoadedSample> val_samples = load_samples(split.val, manifest_dir);
  std::vector<Example> examples;
  for (const LoadedSample& s : train_samples) examples.push_back(make_example(s, result.vocab, true));

  ModelParams params = init_model(cfg.model, cfg.seed);
  result.initial = params;
  std::vector<Tensor*> slots;
  visit_model(params, [&](const std::string&, Tensor& t) { slots.push_back(&t); });
  AdamState state;

  result.log.config_hash = config_hash(cfg);
  result.log.dci = cfg.model.connector.dci_enabled;
  result.log.seed = cfg.seed;

  SplitMix64 order_rng(cfg.seed + 1);
  std::vector<std::size_t> order(examples.size());
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order, order_rng);
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      ++step;
      Tape tape;
      ModelParams tracked = track(tape, params);
      std::vector<Tensor> losses;
      for (std::size_t i = begin; i < end; ++i) {
        const Example& ex = examples[order[i]];
        try {
          losses.push_back(example_loss(cfg.model, tracked, ex));
        } catch (const Error& e) {
          throw Error("step " + std::to_string(step) + ", sample '" + train_samples[order[i]].record.id +
                      "': " + e.what());
        }
      }
      Tensor total = losses.front();
      for (std::size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
      Tensor batch_loss = scale(total, 1.0 / static_cast<double>(losses.size()));
      tape.backward(batch_loss);
      std::vector<Tensor> grads = gradients(tape, tracked);
      adam_step(slots, grads, state, cfg.adam);
      result.log.entries.emplace_back(step, batch_loss.item());
    }
  }
  result.log.validate();
  result.params = std::move(params);
  result.val_report = evaluate(cfg.model, result.params, result.vocab, val_samples, cfg.max_new_tokens);

  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    write_loss_csv(cfg.out_dir / "loss_log.csv", result.log);
    save_params(cfg.out_dir / "params.bin", result.params);
    write_text(cfg.out_dir / "vocab.json", json(result.vocab.words()).dump(1) + "\n");
    write_text(cfg.out_dir / "config.json", config_to_json(cfg).dump(2) + "\n");
    const ConnectorParamCount pc = connector_param_count(cfg.model.connector);
    json run = {{"config_hash", result.log.config_hash},
                {"dci", result.log.dci},
                {"seed", result.log.seed},
                {"steps", step},
                {"train_samples", split.train.size()},
                {"val_samples", split.val.size()},
                {"parameters", parameter_count(result.params)},
                {"projector", {{"base", pc.base}, {"with_dci", pc.with_dci}, {"delta", pc.delta}}}};
    write_text(cfg.out_dir / "run.json", run.dump(2) + "\n");
    write_text(cfg.out_dir / "report.txt", render_report(result.val_report, ReportLayout::groups));
  }
  return result;
}

// ---- loss comparison ------------------------------------------------------

LossComparison compare_loss_curves(const LossLog& a, const LossLog& b, std::size_t k) {
  if (a.empty() || b.empty()) throw EmptyReductionError("compare_loss_curves: empty loss log");
  if (k == 0 || k > a.size() || k > b.size()) {
    throw RangeError("compare_loss_curves: k=" + std::to_string(k) + " outside [1, " +
                     std::to_string(std::min(a.size(), b.size())) + "]");
  }
  auto stats = [k](const LossLog& log) {
    std::vector<double> losses;
    for (const auto& e : log.entries) losses.push_back(e.second);
    std::span<const double> all(losses);
    CurveStats s;
    s.first_k_mean = mean_of(all.first(k));
    auto tail = all.last(k);
    s.final_mean = mean_of(tail);
    double var = 0.0;
    for (double x : tail) var += (x - s.final_mean) * (x - s.final_mean);
    s.final_variance = var / static_cast<double>(k);
    return s;
  };
  LossComparison c;
  c.k = k;
  c.a = stats(a);
  c.b = stats(b);
  c.first_k_delta = c.b.first_k_mean - c.a.first_k_mean;
  c.final_mean_delta = c.b.final_mean - c.a.final_mean;
  c.final_variance_delta = c.b.final_variance - c.a.final_variance;
  return c;
}

std::string format_comparison(const LossComparison& c) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "window k=%zu\n"
                "%-22s %14s %14s %14s\n"
                "%-22s %14.6f %14.6f %14.6f\n"
                "%-22s %14.6f %14.6f %14.6f\n"
                "%-22s %14.6g %14.6g %14.6g\n",
                c.k, "quantity", "run A", "run B", "B - A", "first-k mean", c.a.first_k_mean, c.b.first_k_mean,
                c.first_k_delta, "final-window mean", c.a.final_mean, c.b.final_mean, c.final_mean_delta,
                "final-window variance", c.a.final_variance, c.b.final_variance, c.final_variance_delta);
  return buf;
}

}  // namespace dci
