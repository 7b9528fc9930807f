#include "dci/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "dci/error.hpp"

namespace dci {

namespace {

bool is_strip_char(unsigned char c) { return std::ispunct(c) != 0; }

std::string strip_surrounding(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_strip_char(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && is_strip_char(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream in{std::string(s)};
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

const char* task_title(const std::string& task) {
  if (task == "multi_image_reasoning") return "Multi-Image Reasoning";
  if (task == "doc_knowledge") return "Document and Knowledge-Based Understanding";
  if (task == "interactive_comm") return "Interactive Multi-Modal Communication";
  return task.c_str();
}

const char* metric_title(Metric m) { return m == Metric::rouge_l ? "ROUGE-L" : "Accuracy"; }

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

std::string pad_left(std::string s, std::size_t width) {
  if (s.size() < width) s.insert(0, width - s.size(), ' ');
  return s;
}

}  // namespace

std::string_view metric_name(Metric m) { return m == Metric::rouge_l ? "rouge_l" : "accuracy"; }

Metric parse_metric(std::string_view name) {
  if (name == "rouge_l") return Metric::rouge_l;
  if (name == "accuracy") return Metric::accuracy;
  throw ConfigError("unknown metric tag '" + std::string(name) + "' (expected rouge_l or accuracy)");
}

// ---- ROUGE-L --------------------------------------------------------------

std::vector<std::string> rouge_tokens(std::string_view text) {
  std::vector<std::string> out;
  for (const std::string& w : split_ws(lower(text))) {
    std::string t = strip_surrounding(w);
    if (!t.empty()) out.push_back(std::move(t));
  }
  return out;
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(std::string_view prediction, std::string_view reference) {
  const auto pred = rouge_tokens(prediction);
  const auto ref = rouge_tokens(reference);
  if (pred.empty() || ref.empty()) return 0.0;
  const std::size_t lcs = lcs_length(pred, ref);
  if (lcs == 0) return 0.0;
  const double p = static_cast<double>(lcs) / static_cast<double>(pred.size());
  const double r = static_cast<double>(lcs) / static_cast<double>(ref.size());
  const double b2 = kRougeBeta * kRougeBeta;
  return 100.0 * (1.0 + b2) * p * r / (r + b2 * p);
}

// ---- accuracy -------------------------------------------------------------

std::string normalize_answer(std::string_view text) {
  std::string out;
  for (const std::string& w : split_ws(strip_surrounding(lower(text)))) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  // Stripping may expose new surrounding whitespace or punctuation, e.g. "( b )".
  std::string again = strip_surrounding(out);
  if (again != out) return normalize_answer(again);
  return out;
}

double accuracy_score(std::string_view prediction, std::string_view gold,
                      std::optional<std::span<const std::string>> choices) {
  std::string p = normalize_answer(prediction);
  std::string g = normalize_answer(gold);
  if (choices) {
    auto resolve = [&](std::string& s) {
      if (s.size() == 1 && s[0] >= 'a' && static_cast<std::size_t>(s[0] - 'a') < choices->size()) {
        s = normalize_answer((*choices)[static_cast<std::size_t>(s[0] - 'a')]);
      }
    };
    const bool gold_is_choice = std::any_of(choices->begin(), choices->end(),
                                            [&](const std::string& c) { return normalize_answer(c) == g; });
    if (gold_is_choice) resolve(p);
    resolve(g);
  }
  return p == g ? 100.0 : 0.0;
}

// ---- aggregation ----------------------------------------------------------

double aggregate_group_average(std::span<const double> dataset_scores) {
  if (dataset_scores.empty()) throw EmptyReductionError("aggregate_group_average: empty metric group");
  double total = 0.0;
  for (double s : dataset_scores) total += s;
  return total / static_cast<double>(dataset_scores.size());
}

double round_half_up_2(double value) { return std::floor(value * 100.0 + 0.5 + 1e-7) / 100.0; }

std::string format_score(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", round_half_up_2(value));
  return buf;
}

const DatasetScore* MetricReport::find(std::string_view dataset) const {
  for (const DatasetScore& d : datasets)
    if (d.dataset == dataset) return &d;
  return nullptr;
}

MetricReport build_report(std::vector<DatasetScore> datasets, bool from_display) {
  MetricReport report;
  std::map<GroupKey, std::vector<double>> members;
  for (DatasetScore& d : datasets) {
    if (from_display) d.score = round_half_up_2(d.score);
    members[{d.task, d.metric}].push_back(d.score);
  }
  for (const auto& [key, scores] : members) report.group_averages[key] = aggregate_group_average(scores);
  report.datasets = std::move(datasets);
  return report;
}

ReportLayout parse_layout(std::string_view name) {
  if (name == "table1") return ReportLayout::table1;
  if (name == "test_tables") return ReportLayout::test_tables;
  if (name == "groups") return ReportLayout::groups;
  throw ConfigError("unknown report layout '" + std::string(name) + "' (expected table1, test_tables or groups)");
}

std::vector<LayoutGroup> layout_groups(ReportLayout layout, const MetricReport& report) {
  const std::vector<std::string> reasoning_rouge = {"Spot-the-Diff", "CLEVR-Change", "IEdit", "Birds-to-Words"};
  const std::vector<std::string> reasoning_acc = {"nuscenes",
                                                  "VISION",
                                                  "Fashion200K",
                                                  "MIT-States_PropertyCoherence",
                                                  "MIT-States_StateCoherence",
                                                  "RecipeQA_ImageCoherence",
                                                  "NLVR2",
                                                  "VizWiz"};
  std::vector<std::string> documents = {"SlideVQA", "OCR-VQA", "WebQA", "TQA", "MultiModalQA", "ManyModalQA"};
  const std::vector<std::string> communication = {"MMCoQA", "ALFRED"};

  switch (layout) {
    case ReportLayout::test_tables:
      documents.pop_back();  // the test tables omit ManyModalQA
      [[fallthrough]];
    case ReportLayout::table1:
      return {{"multi_image_reasoning", Metric::rouge_l, reasoning_rouge},
              {"multi_image_reasoning", Metric::accuracy, reasoning_acc},
              {"doc_knowledge", Metric::accuracy, documents},
              {"interactive_comm", Metric::rouge_l, communication}};
    case ReportLayout::groups: {
      std::vector<LayoutGroup> groups;
      for (const DatasetScore& d : report.datasets) {
        auto it = std::find_if(groups.begin(), groups.end(),
                               [&](const LayoutGroup& g) { return g.task == d.task && g.metric == d.metric; });
        if (it == groups.end()) {
          groups.push_back({d.task, d.metric, {}});
          it = std::prev(groups.end());
        }
        if (std::find(it->datasets.begin(), it->datasets.end(), d.dataset) == it->datasets.end())
          it->datasets.push_back(d.dataset);
      }
      return groups;
    }
  }
  return {};
}

std::string render_report(const MetricReport& report, ReportLayout layout) {
  constexpr std::size_t kTaskW = 44, kDataW = 32, kScoreW = 8;
  std::ostringstream out;
  out << pad("TASK", kTaskW) << pad("DATASET", kDataW) << pad_left("SCORE", kScoreW) << '\n';
  out << std::string(kTaskW + kDataW + kScoreW, '-') << '\n';
  if (report.datasets.empty()) {
    out << "warning: report contains no scored datasets\n";
    return out.str();
  }
  for (const LayoutGroup& group : layout_groups(layout, report)) {
    std::vector<double> present;
    bool first = true;
    for (const std::string& name : group.datasets) {
      const DatasetScore* d = report.find(name);
      std::string task_cell = first ? task_title(group.task) : "";
      first = false;
      if (d == nullptr || d->metric != group.metric) {
        out << pad(task_cell, kTaskW) << pad(name, kDataW) << pad_left("absent", kScoreW) << '\n';
        continue;
      }
      present.push_back(d->score);
      out << pad(task_cell, kTaskW) << pad(name, kDataW) << pad_left(format_score(d->score), kScoreW) << '\n';
    }
    std::string label = std::string("AVERAGE (") + metric_title(group.metric) + ")";
    std::string cell = present.empty() ? "absent" : format_score(aggregate_group_average(present));
    out << pad("", kTaskW) << pad(label, kDataW) << pad_left(cell, kScoreW) << '\n';
    out << std::string(kTaskW + kDataW + kScoreW, '-') << '\n';
  }
  return out.str();
}

}  // namespace dci
