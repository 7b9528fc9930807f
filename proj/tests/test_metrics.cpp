#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "dci/error.hpp"
#include "dci/metrics.hpp"
#include "dci/rng.hpp"
#include "oracles.hpp"

using namespace dci;

namespace {

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) out += (out.empty() ? "" : " ") + w;
  return out;
}

std::vector<std::string> random_words(SplitMix64& rng, std::size_t max_len, std::size_t alphabet) {
  std::vector<std::string> w(rng.below(max_len + 1));
  for (auto& s : w) s = std::string(1, static_cast<char>('a' + rng.below(alphabet)));
  return w;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("rouge_l examples") {
  CHECK(rouge_l("the cat sat", "the cat sat") == 100.0);
  CHECK(rouge_l("dog runs", "the cat sat") == 0.0);
  CHECK(rouge_l("the cat on mat", "the cat sat on the mat") == doctest::Approx(80.0).epsilon(1e-15));
  CHECK(rouge_l("", "the cat") == 0.0);
  CHECK(rouge_l("the", "") == 0.0);
  CHECK(rouge_l("The Cat, sat.", "the cat sat") == 100.0);
}

TEST_CASE("rouge_l agrees with the DP oracle on random pairs") {
  SplitMix64 rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto a = random_words(rng, 20, 1 + rng.below(5));
    const auto b = random_words(rng, 20, 1 + rng.below(5));
    CHECK(lcs_length(a, b) == oracle::lcs(a, b));
    CHECK(rouge_l(join(a), join(b)) == oracle::rouge_l_f1(a, b));
  }
}

TEST_CASE("rouge_l symmetry, identity and monotonicity") {
  SplitMix64 rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    const auto a = random_words(rng, 12, 4), b = random_words(rng, 12, 4);
    CHECK(rouge_l(join(a), join(b)) == doctest::Approx(rouge_l(join(b), join(a))).epsilon(1e-15));
    if (!a.empty()) CHECK(rouge_l(join(a), join(a)) == 100.0);

    // Delete tokens one at a time from a subsequence of the reference.
    if (b.empty()) continue;
    std::vector<std::string> pred;
    for (const auto& w : b)
      if (rng.below(3) != 0) pred.push_back(w);
    double previous = rouge_l(join(pred), join(b));
    while (!pred.empty()) {
      pred.erase(pred.begin() + static_cast<std::ptrdiff_t>(rng.below(pred.size())));
      const double now = rouge_l(join(pred), join(b));
      CHECK(now <= previous);
      previous = now;
    }
  }
}

TEST_CASE("rouge_l stays in range") {
  SplitMix64 rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const double s = rouge_l(join(random_words(rng, 10, 3)), join(random_words(rng, 10, 3)));
    CHECK(s >= 0.0);
    CHECK(s <= 100.0);
  }
}

TEST_CASE("accuracy examples") {
  CHECK(accuracy_score("B", "B") == 100.0);
  CHECK(accuracy_score("(b)", "B") == 100.0);
  CHECK(accuracy_score("A", "B") == 0.0);
  CHECK(accuracy_score("  The   Answer. ", "the answer") == 100.0);
  const std::vector<std::string> choices = {"yes", "no"};
  CHECK(accuracy_score("(B)", "no", choices) == 100.0);
  CHECK(accuracy_score("no", "b", choices) == 100.0);
  CHECK(accuracy_score("a", "no", choices) == 0.0);
}

TEST_CASE("group accuracy is a multiple of 100/n") {
  SplitMix64 rng(9);
  for (std::size_t n = 1; n <= 12; ++n) {
    std::vector<double> scores;
    for (std::size_t i = 0; i < n; ++i) scores.push_back(accuracy_score(rng.below(2) ? "a" : "b", "a"));
    const double mean = aggregate_group_average(scores);
    const double steps = mean * static_cast<double>(n) / 100.0;
    CHECK(std::abs(steps - std::round(steps)) < 1e-9);
  }
}

TEST_CASE("aggregate_group_average examples") {
  const std::vector<double> rouge = {33.71, 59.26, 31.33, 35.78};
  CHECK(format_score(aggregate_group_average(rouge)) == "40.02");
  const std::vector<double> docs = {51.50, 77.50, 21.29, 65.68, 35.37, 43.70};
  CHECK(format_score(aggregate_group_average(docs)) == "49.17");
  const std::vector<double> comm = {77.40, 72.28};
  CHECK(format_score(aggregate_group_average(comm)) == "74.84");
  const std::vector<double> single = {12.345};
  CHECK(aggregate_group_average(single) == 12.345);
  CHECK_THROWS_AS(aggregate_group_average(std::span<const double>{}), EmptyReductionError);
}

TEST_CASE("half-up display rounding") {
  CHECK(format_score(39.185) == "39.19");
  CHECK(format_score(40.8625) == "40.86");
  CHECK(format_score(0.005) == "0.01");
  CHECK(format_score(100.0) == "100.00");
  CHECK(round_half_up_2(2.675) == doctest::Approx(2.68));
}

TEST_CASE("metric tags") {
  CHECK(parse_metric("rouge_l") == Metric::rouge_l);
  CHECK(parse_metric("accuracy") == Metric::accuracy);
  CHECK_THROWS_AS(parse_metric("bleu"), ConfigError);
  CHECK(metric_name(Metric::rouge_l) == "rouge_l");
}

TEST_CASE("report group averages equal the mean of their members") {
  std::vector<DatasetScore> ds = {{"doc_knowledge", "A", Metric::accuracy, 50.0, 2},
                                  {"doc_knowledge", "B", Metric::accuracy, 75.0, 4},
                                  {"doc_knowledge", "C", Metric::rouge_l, 10.0, 1},
                                  {"interactive_comm", "D", Metric::rouge_l, 30.0, 3}};
  const MetricReport r = build_report(ds);
  CHECK(r.group_averages.at({"doc_knowledge", Metric::accuracy}) == 62.5);
  CHECK(r.group_averages.at({"doc_knowledge", Metric::rouge_l}) == 10.0);
  CHECK(r.group_averages.at({"interactive_comm", Metric::rouge_l}) == 30.0);
  REQUIRE(r.find("B") != nullptr);
  CHECK(r.find("B")->samples == 4);
  CHECK(r.find("missing") == nullptr);
}

TEST_CASE("render_report") {
  const MetricReport empty = build_report({});
  const std::string text = render_report(empty, ReportLayout::table1);
  CHECK(text.find("TASK") == 0);
  CHECK(text.find("warning: report contains no scored datasets") != std::string::npos);

  std::vector<DatasetScore> ds = {{"interactive_comm", "MMCoQA", Metric::rouge_l, 60.35, 0}};
  const std::string partial = render_report(build_report(ds), ReportLayout::table1);
  CHECK(partial.find("ALFRED") != std::string::npos);
  CHECK(partial.find("absent") != std::string::npos);
  CHECK(partial.find("60.35") != std::string::npos);

  CHECK(parse_layout("test_tables") == ReportLayout::test_tables);
  CHECK_THROWS_AS(parse_layout("table9"), ConfigError);
  const auto groups = layout_groups(ReportLayout::test_tables, build_report(ds));
  for (const auto& g : groups)
    for (const auto& name : g.datasets) CHECK(name != "ManyModalQA");
}

}  // TEST_SUITE
