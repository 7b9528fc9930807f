#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "doctest.h"
#include "dci/data.hpp"
#include "dci/error.hpp"
#include "dci/rng.hpp"

using namespace dci;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("dcitoy_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<SampleRecord> make_records(std::size_t n) {
  std::vector<SampleRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    SampleRecord r;
    r.id = "r" + std::to_string(i);
    r.task = "doc_knowledge";
    r.dataset = "toy";
    r.prompt = "what";
    r.answer = "x";
    out.push_back(r);
  }
  return out;
}

const char* kLineA =
    R"({"id":"a","task":"multi_image_reasoning","dataset":"d","images":["x.pgm","y.pgm"],"prompt":"<image> <image> what changed","answer":"nothing","answer_type":"open","choices":[]})";
const char* kLineB =
    R"({"id":"b","task":"doc_knowledge","dataset":"e","images":["z.pgm"],"prompt":"<image> pick","answer":"yes","answer_type":"mcq","choices":["yes","no"]})";

}  // namespace

TEST_SUITE("data") {

TEST_CASE("load a valid two-line manifest") {
  const fs::path dir = scratch("valid");
  write_text(dir / "m.jsonl", std::string(kLineA) + "\n" + kLineB + "\n");
  const auto records = load_manifest(dir / "m.jsonl");
  REQUIRE(records.size() == 2);
  CHECK(records[0].images.size() == 2);
  CHECK(records[0].metric_tag() == "rouge_l");
  CHECK(records[1].answer_type == AnswerType::mcq);
  CHECK(records[1].metric_tag() == "accuracy");
}

TEST_CASE("manifest errors") {
  const fs::path dir = scratch("errors");
  write_text(dir / "bad.jsonl", std::string(kLineA) + "\n{not json\n");
  try {
    load_manifest(dir / "bad.jsonl");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }

  std::string mismatch = kLineB;
  mismatch.replace(mismatch.find("<image> pick"), 12, "pick");
  write_text(dir / "count.jsonl", mismatch + "\n");
  try {
    load_manifest(dir / "count.jsonl");
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("'b'") != std::string::npos);
    CHECK(msg.find("prompt") != std::string::npos);
  }

  write_text(dir / "dup.jsonl", std::string(kLineA) + "\n" + kLineA + "\n");
  CHECK_THROWS_AS(load_manifest(dir / "dup.jsonl"), ValidationError);

  std::string gold = kLineB;
  gold.replace(gold.find("\"answer\":\"yes\""), 14, "\"answer\":\"maybe\"");
  write_text(dir / "gold.jsonl", gold + "\n");
  CHECK_THROWS_AS(load_manifest(dir / "gold.jsonl"), ValidationError);

  CHECK_THROWS_AS(load_manifest(dir / "missing.jsonl"), IoError);
}

TEST_CASE("manifest round trip") {
  const fs::path dir = scratch("roundtrip");
  write_text(dir / "m.jsonl", std::string(kLineA) + "\n" + kLineB + "\n");
  auto records = load_manifest(dir / "m.jsonl");
  records[0].metric = "accuracy";
  write_manifest(dir / "copy.jsonl", records);
  CHECK(load_manifest(dir / "copy.jsonl") == records);
}

TEST_CASE("image round trip") {
  const fs::path dir = scratch("images");
  Image gray{3, 2, 1, {0, 10, 20, 30, 40, 255}};
  write_image(dir / "g.pgm", gray);
  CHECK(read_image(dir / "g.pgm") == gray);
  Image color{2, 1, 3, {1, 2, 3, 4, 5, 6}};
  write_image(dir / "c.ppm", color);
  CHECK(read_image(dir / "c.ppm") == color);
  const Tensor t = image_to_tensor(gray);
  CHECK(t.shape() == Shape{2, 3});
  CHECK(t.at(1, 2) == 1.0);
  write_text(dir / "bad.pgm", "P2\n1 1\n255\n0\n");
  CHECK_THROWS_AS(read_image(dir / "bad.pgm"), ParseError);
}

TEST_CASE("split examples") {
  CHECK(split_sizes(20, 0.9) == std::pair<std::size_t, std::size_t>{18, 2});
  CHECK(split_sizes(7, 0.9) == std::pair<std::size_t, std::size_t>{6, 1});
  CHECK(split_sizes(2, 0.9) == std::pair<std::size_t, std::size_t>{1, 1});
  CHECK_THROWS_AS(split_sizes(1, 0.9), ConfigError);

  const auto records = make_records(20);
  const Split a = split_train_val(records, {0.9, 5});
  const Split b = split_train_val(records, {0.9, 5});
  CHECK(a.train == b.train);
  CHECK(a.val == b.val);
  const Split c = split_train_val(records, {0.9, 6});
  CHECK_FALSE(c.val == a.val);
}

TEST_CASE("split partition law") {
  for (std::size_t n : {2u, 3u, 7u, 20u, 101u, 1000u, 10000u}) {
    const auto records = make_records(n);
    for (std::uint64_t seed = 0; seed < (n >= 1000 ? 10u : 100u); ++seed) {
      const Split s = split_train_val(records, {0.9, seed});
      const std::size_t expected_val = std::max<std::size_t>(1, n - static_cast<std::size_t>(std::floor(0.9 * static_cast<double>(n) + 1e-9)));
      CHECK(s.val.size() == expected_val);
      std::set<std::string> ids;
      for (const auto& r : s.train) ids.insert(r.id);
      for (const auto& r : s.val) CHECK(ids.insert(r.id).second);
      CHECK(ids.size() == n);
    }
  }
}

TEST_CASE("split by dataset keeps each dataset's ratio") {
  auto records = make_records(20);
  auto more = make_records(10);
  for (auto& r : more) {
    r.id = "s" + r.id;
    r.dataset = "other";
  }
  records.insert(records.end(), more.begin(), more.end());
  const Split s = split_by_dataset(records, {0.9, 1});
  std::size_t toy = 0, other = 0;
  for (const auto& r : s.val) (r.dataset == "toy" ? toy : other)++;
  CHECK(toy == 2);
  CHECK(other == 1);
  CHECK(s.train.size() + s.val.size() == 30);
}

TEST_CASE("synthetic spot_diff differs in exactly one cell") {
  const fs::path dir = scratch("spot");
  const auto records = synth_generate(SynthKind::spot_diff, 1, 3, 8, dir);
  REQUIRE(records.size() == 1);
  const auto& r = records[0];
  REQUIRE(r.images.size() == 2);
  const Image a = read_image(resolve_image_path(dir, r.images[0]));
  const Image b = read_image(resolve_image_path(dir, r.images[1]));
  std::size_t diff = 0, row = 0, col = 0;
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x)
      if (a.at(y, x) != b.at(y, x)) {
        ++diff;
        row = y;
        col = x;
      }
  CHECK(diff == 1);
  CHECK(r.answer == "row " + std::to_string(row + 1) + " col " + std::to_string(col + 1));
  CHECK(count_placeholders(r.prompt) == 2);
}

TEST_CASE("synthetic records are self-consistent") {
  for (SynthKind kind : {SynthKind::spot_diff, SynthKind::state_coherence, SynthKind::mcq_count}) {
    const fs::path dir = scratch(std::string("self_") + std::string(synth_kind_name(kind)));
    const auto records = synth_generate(kind, 60, 11, 16, dir);
    CHECK(load_manifest(dir / "manifest.jsonl") == records);
    for (const auto& r : records) {
      CHECK_NOTHROW(validate_record(r));
      std::vector<Image> images;
      for (const auto& p : r.images) images.push_back(read_image(resolve_image_path(dir, p)));
      const auto derived = rederive_synthetic_answer(r, images);
      REQUIRE(derived.has_value());
      CHECK(*derived == r.answer);
      if (r.answer_type == AnswerType::mcq) CHECK(std::find(r.choices.begin(), r.choices.end(), r.answer) != r.choices.end());
    }
  }
}

TEST_CASE("synthetic generation is byte-deterministic") {
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  synth_generate(SynthKind::mcq_count, 5, 9, 8, a);
  synth_generate(SynthKind::mcq_count, 5, 9, 8, b);
  CHECK(read_bytes(a / "manifest.jsonl") == read_bytes(b / "manifest.jsonl"));
  for (const auto& entry : fs::directory_iterator(a / "images"))
    CHECK(read_bytes(entry.path()) == read_bytes(b / "images" / entry.path().filename()));
  CHECK_THROWS_AS(synth_generate(SynthKind::spot_diff, 1, 0, 12, a), ConfigError);
  CHECK_THROWS_AS(parse_synth_kind("nope"), ConfigError);
}

}  // TEST_SUITE
