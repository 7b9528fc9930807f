#pragma once

// ROUGE-L / accuracy scoring and per-metric-group table reports.

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dci {

enum class Metric { rouge_l, accuracy };

std::string_view metric_name(Metric m);
/// Throws ConfigError for anything other than "rouge_l" / "accuracy".
Metric parse_metric(std::string_view name);

/// F-measure weighting for ROUGE-L; 1 gives F1.
inline constexpr double kRougeBeta = 1.0;

/// Lowercase, whitespace-split tokens with surrounding punctuation removed.
/// Tokens that are pure punctuation are dropped.
std::vector<std::string> rouge_tokens(std::string_view text);

/// Length of the longest common subsequence.
std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

/// Sentence-level ROUGE-L F-measure scaled to [0, 100]. Zero when either side
/// has no tokens or nothing matches.
double rouge_l(std::string_view prediction, std::string_view reference);

/// Lowercase, trim, strip surrounding punctuation and brackets, collapse
/// internal whitespace.
std::string normalize_answer(std::string_view text);

/// 100 when the normalized strings match, else 0. With choices, a bare
/// option letter ("b", "(B)") on either side is resolved to the choice text
/// before comparing.
double accuracy_score(std::string_view prediction, std::string_view gold,
                      std::optional<std::span<const std::string>> choices = std::nullopt);

/// Unweighted arithmetic mean of per-dataset scores. Throws
/// EmptyReductionError for an empty group.
double aggregate_group_average(std::span<const double> dataset_scores);

/// Half-up rounding to two decimals. Values within 1e-9 of a half-way point
/// round up, so decimal inputs such as 39.185 behave as written.
double round_half_up_2(double value);
/// round_half_up_2 rendered with exactly two decimals.
std::string format_score(double value);

struct DatasetScore {
  std::string task;
  std::string dataset;
  Metric metric = Metric::accuracy;
  double score = 0.0;  // mean over samples, [0, 100]
  std::size_t samples = 0;
};

struct GroupKey {
  std::string task;
  Metric metric;
  friend bool operator<(const GroupKey& a, const GroupKey& b) {
    return a.task != b.task ? a.task < b.task : a.metric < b.metric;
  }
};

struct MetricReport {
  std::vector<DatasetScore> datasets;
  std::map<GroupKey, double> group_averages;

  const DatasetScore* find(std::string_view dataset) const;
};

/// Computes every (task, metric) group average. With `from_display`, each
/// dataset score is first rounded half-up to two decimals, which reproduces
/// tables whose averages were taken over displayed values.
MetricReport build_report(std::vector<DatasetScore> datasets, bool from_display = false);

enum class ReportLayout { table1, test_tables, groups };

/// Throws ConfigError for an unknown name.
ReportLayout parse_layout(std::string_view name);

struct LayoutGroup {
  std::string task;
  Metric metric;
  std::vector<std::string> datasets;
};

/// Dataset ordering of a fixed layout; `groups` derives it from the report.
std::vector<LayoutGroup> layout_groups(ReportLayout layout, const MetricReport& report);

/// Aligned plain-text table, one block per group with an AVERAGE row.
/// Datasets named by the layout but missing from the report print "absent"
/// and are excluded from the group's average. An empty report renders the
/// header plus a warning line.
std::string render_report(const MetricReport& report, ReportLayout layout);

}  // namespace dci
