#include "dci/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>

#include "dci/error.hpp"
#include "dci/rng.hpp"
#include "json.hpp"

namespace dci {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::set<std::string>& known_tasks() {
  static const std::set<std::string> tasks = {"multi_image_reasoning", "doc_knowledge", "interactive_comm"};
  return tasks;
}

std::string field_error(const SampleRecord& r, const std::string& field, const std::string& what) {
  return "record '" + r.id + "': field '" + field + "' " + what;
}

json to_json(const SampleRecord& r) {
  json j;
  j["id"] = r.id;
  j["task"] = r.task;
  j["dataset"] = r.dataset;
  j["images"] = r.images;
  j["prompt"] = r.prompt;
  j["answer"] = r.answer;
  j["answer_type"] = r.answer_type == AnswerType::mcq ? "mcq" : "open";
  j["choices"] = r.choices;
  if (r.metric) j["metric"] = *r.metric;
  return j;
}

template <class T>
T required(const json& j, const char* key, std::size_t line) {
  if (!j.contains(key)) throw ValidationError("line " + std::to_string(line) + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError("line " + std::to_string(line) + ": field '" + key + "' has the wrong type");
  }
}

SampleRecord from_json(const json& j, std::size_t line) {
  if (!j.is_object()) throw ParseError("line " + std::to_string(line) + ": expected a JSON object");
  SampleRecord r;
  r.id = required<std::string>(j, "id", line);
  r.task = required<std::string>(j, "task", line);
  r.dataset = required<std::string>(j, "dataset", line);
  r.images = required<std::vector<std::string>>(j, "images", line);
  r.prompt = required<std::string>(j, "prompt", line);
  r.answer = required<std::string>(j, "answer", line);
  const auto type = required<std::string>(j, "answer_type", line);
  if (type == "open") {
    r.answer_type = AnswerType::open;
  } else if (type == "mcq") {
    r.answer_type = AnswerType::mcq;
  } else {
    throw ValidationError(field_error(r, "answer_type", "must be 'open' or 'mcq', got '" + type + "'"));
  }
  if (j.contains("choices")) r.choices = required<std::vector<std::string>>(j, "choices", line);
  if (j.contains("metric")) r.metric = required<std::string>(j, "metric", line);
  return r;
}

// Cell grid used by every synthetic generator.
constexpr std::size_t kGrid = 8;

Image blank(std::size_t size) { return Image{size, size, 1, std::vector<std::uint8_t>(size * size, 0)}; }

void fill_cell(Image& img, std::size_t row, std::size_t col, std::uint8_t value) {
  const std::size_t px = img.width / kGrid;
  for (std::size_t y = row * px; y < (row + 1) * px; ++y)
    for (std::size_t x = col * px; x < (col + 1) * px; ++x) img.pixels[y * img.width + x] = value;
}

std::uint8_t cell_value(const Image& img, std::size_t row, std::size_t col) {
  const std::size_t px = img.width / kGrid;
  return img.at(row * px, col * px);
}

const char* const kCountWords[] = {"one", "two", "three", "four"};
const std::uint8_t kLevels[] = {60, 120, 180, 240};

std::string spot_diff_answer(std::size_t row, std::size_t col) {
  return "row " + std::to_string(row + 1) + " col " + std::to_string(col + 1);
}

}  // namespace

// ---- records --------------------------------------------------------------

std::string SampleRecord::metric_tag() const {
  if (metric) return *metric;
  return answer_type == AnswerType::mcq ? "accuracy" : "rouge_l";
}

std::size_t count_placeholders(std::string_view prompt) {
  std::istringstream in{std::string(prompt)};
  std::string w;
  std::size_t n = 0;
  while (in >> w) {
    std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return std::tolower(c); });
    if (w == "<image>") ++n;
  }
  return n;
}

void validate_record(const SampleRecord& r) {
  if (r.id.empty()) throw ValidationError("record with empty 'id'");
  if (!known_tasks().count(r.task)) throw ValidationError(field_error(r, "task", "is not a known task: '" + r.task + "'"));
  if (r.dataset.empty()) throw ValidationError(field_error(r, "dataset", "is empty"));
  const std::size_t placeholders = count_placeholders(r.prompt);
  if (placeholders != r.images.size()) {
    throw ValidationError(field_error(r, "prompt", "has " + std::to_string(placeholders) + " <image> placeholders for " +
                                                      std::to_string(r.images.size()) + " images"));
  }
  if (r.answer_type == AnswerType::mcq) {
    if (r.choices.empty()) throw ValidationError(field_error(r, "choices", "is empty for an mcq record"));
    if (std::find(r.choices.begin(), r.choices.end(), r.answer) == r.choices.end()) {
      throw ValidationError(field_error(r, "answer", "'" + r.answer + "' is not one of the choices"));
    }
  }
}

std::vector<SampleRecord> load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::vector<SampleRecord> records;
  std::set<std::string> ids;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ParseError(path.string() + ":" + std::to_string(line) + ": malformed JSON: " + e.what());
    }
    SampleRecord r = from_json(j, line);
    validate_record(r);
    if (!ids.insert(r.id).second) throw ValidationError("record '" + r.id + "': duplicate id at line " + std::to_string(line));
    records.push_back(std::move(r));
  }
  return records;
}

void write_manifest(const fs::path& path, std::span<const SampleRecord> records) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + path.string());
  for (const SampleRecord& r : records) out << to_json(r).dump() << '\n';
}

fs::path resolve_image_path(const fs::path& manifest_dir, const std::string& image) {
  fs::path p(image);
  return p.is_absolute() ? p : manifest_dir / p;
}

// ---- images ---------------------------------------------------------------

Image read_image(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  std::string magic;
  in >> magic;
  Image img;
  if (magic == "P5") {
    img.channels = 1;
  } else if (magic == "P6") {
    img.channels = 3;
  } else {
    throw ParseError(path.string() + ": unsupported image magic '" + magic + "' (expected P5 or P6)");
  }
  auto next_number = [&]() -> std::size_t {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string comment;
      std::getline(in, comment);
      in >> std::ws;
    }
    std::size_t v = 0;
    if (!(in >> v)) throw ParseError(path.string() + ": malformed image header");
    return v;
  };
  img.width = next_number();
  img.height = next_number();
  const std::size_t maxval = next_number();
  if (maxval != 255) throw ParseError(path.string() + ": maxval must be 255, got " + std::to_string(maxval));
  in.get();  // single whitespace before the raster
  img.pixels.resize(img.width * img.height * img.channels);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw ParseError(path.string() + ": truncated raster");
  }
  return img;
}

void write_image(const fs::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw ValidationError("write_image: channels must be 1 or 3");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image " + path.string());
  out << (image.channels == 1 ? "P5" : "P6") << '\n' << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
}

Tensor image_to_tensor(const Image& image) {
  std::vector<double> values(image.pixels.size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = image.pixels[i] / 255.0;
  Shape shape = image.channels == 1 ? Shape{image.height, image.width} : Shape{image.height, image.width, image.channels};
  return Tensor(std::move(shape), std::move(values));
}

// ---- split ----------------------------------------------------------------

std::pair<std::size_t, std::size_t> split_sizes(std::size_t n, double ratio) {
  if (n < 2) throw ConfigError("split: need at least 2 records, got " + std::to_string(n));
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("split: ratio must lie in (0, 1]");
  auto train = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
  train = std::clamp<std::size_t>(train, 1, n - 1);
  return {train, n - train};
}

Split split_train_val(std::span<const SampleRecord> records, const SplitSpec& spec) {
  const auto [n_train, n_val] = split_sizes(records.size(), spec.ratio);
  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  SplitMix64 rng(spec.seed);
  shuffle(order, rng);
  Split split;
  for (std::size_t i = 0; i < order.size(); ++i) (i < n_train ? split.train : split.val).push_back(records[order[i]]);
  return split;
}

Split split_by_dataset(std::span<const SampleRecord> records, const SplitSpec& spec) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<SampleRecord>> by_dataset;
  for (const SampleRecord& r : records) {
    auto& bucket = by_dataset[r.dataset];
    if (bucket.empty()) order.push_back(r.dataset);
    bucket.push_back(r);
  }
  Split all;
  for (const std::string& name : order) {
    Split part;
    try {
      part = split_train_val(by_dataset[name], spec);
    } catch (const ConfigError& e) {
      throw ConfigError("dataset '" + name + "': " + e.what());
    }
    std::move(part.train.begin(), part.train.end(), std::back_inserter(all.train));
    std::move(part.val.begin(), part.val.end(), std::back_inserter(all.val));
  }
  return all;
}

// ---- synthetic data -------------------------------------------------------

SynthKind parse_synth_kind(std::string_view name) {
  if (name == "spot_diff") return SynthKind::spot_diff;
  if (name == "state_coherence") return SynthKind::state_coherence;
  if (name == "mcq_count") return SynthKind::mcq_count;
  throw ConfigError("unknown synthetic kind '" + std::string(name) + "'");
}

std::string_view synth_kind_name(SynthKind kind) {
  switch (kind) {
    case SynthKind::spot_diff:
      return "spot_diff";
    case SynthKind::state_coherence:
      return "state_coherence";
    case SynthKind::mcq_count:
      return "mcq_count";
  }
  return "";
}

std::vector<SampleRecord> synth_generate(SynthKind kind, std::size_t n, std::uint64_t seed, std::size_t image_size,
                                         const fs::path& out_dir) {
  if (n < 1) throw ConfigError("synth: n must be at least 1");
  if (image_size == 0 || image_size % kGrid != 0) {
    throw ConfigError("synth: image_size " + std::to_string(image_size) + " is not a positive multiple of 8");
  }
  SplitMix64 rng(seed);
  const std::string kind_name(synth_kind_name(kind));
  std::vector<SampleRecord> records;
  records.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    char idbuf[32];
    std::snprintf(idbuf, sizeof idbuf, "%05zu", i);
    SampleRecord r;
    r.id = kind_name + "-" + idbuf;
    r.dataset = "synth_" + kind_name;
    std::vector<Image> frames;

    switch (kind) {
      case SynthKind::spot_diff: {
        Image a = blank(image_size);
        for (std::size_t row = 0; row < kGrid; ++row)
          for (std::size_t col = 0; col < kGrid; ++col) fill_cell(a, row, col, rng.below(2) ? 255 : 0);
        Image b = a;
        const std::size_t cell = rng.below(kGrid * kGrid);
        const std::size_t row = cell / kGrid, col = cell % kGrid;
        fill_cell(b, row, col, cell_value(a, row, col) ? 0 : 255);
        frames = {a, b};
        r.task = "multi_image_reasoning";
        r.prompt = "<image> <image> which cell differs between the two grids ?";
        r.answer = spot_diff_answer(row, col);
        r.answer_type = AnswerType::open;
        r.metric = "rouge_l";
        break;
      }
      case SynthKind::state_coherence: {
        std::vector<std::size_t> levels = {0, 1, 2, 3};
        shuffle(levels, rng);
        levels.resize(3);
        const bool consistent = rng.below(2) == 0;
        std::sort(levels.begin(), levels.end());
        if (consistent) {
          if (rng.below(2)) std::reverse(levels.begin(), levels.end());
        } else {
          // Peak or valley in the middle frame.
          if (rng.below(2)) {
            std::swap(levels[1], levels[2]);
          } else {
            std::swap(levels[0], levels[1]);
          }
        }
        for (std::size_t lv : levels) {
          Image f = blank(image_size);
          for (std::size_t row = 2; row < 6; ++row)
            for (std::size_t col = 2; col < 6; ++col) fill_cell(f, row, col, kLevels[lv]);
          frames.push_back(std::move(f));
        }
        r.task = "multi_image_reasoning";
        r.prompt = "<image> <image> <image> does the square change brightness consistently ?";
        r.answer = consistent ? "yes" : "no";
        r.answer_type = AnswerType::mcq;
        r.choices = {"yes", "no"};
        r.metric = "accuracy";
        break;
      }
      case SynthKind::mcq_count: {
        std::vector<std::size_t> slots(16);
        for (std::size_t s = 0; s < slots.size(); ++s) slots[s] = s;
        shuffle(slots, rng);
        const std::size_t k = 1 + rng.below(4);
        Image f = blank(image_size);
        for (std::size_t s = 0; s < k; ++s) {
          const std::size_t br = (slots[s] / 4) * 2, bc = (slots[s] % 4) * 2;
          for (std::size_t dr = 0; dr < 2; ++dr)
            for (std::size_t dc = 0; dc < 2; ++dc) fill_cell(f, br + dr, bc + dc, 255);
        }
        frames.push_back(std::move(f));
        r.task = "multi_image_reasoning";
        r.prompt = "<image> how many squares are in the image ?";
        r.answer = kCountWords[k - 1];
        r.answer_type = AnswerType::mcq;
        r.choices = {"one", "two", "three", "four"};
        r.metric = "accuracy";
        break;
      }
    }

    for (std::size_t f = 0; f < frames.size(); ++f) {
      std::string rel = "images/" + r.id + "_" + std::to_string(f) + ".pgm";
      write_image(out_dir / rel, frames[f]);
      r.images.push_back(rel);
    }
    validate_record(r);
    records.push_back(std::move(r));
  }
  write_manifest(out_dir / "manifest.jsonl", records);
  return records;
}

std::optional<std::string> rederive_synthetic_answer(const SampleRecord& record, std::span<const Image> images) {
  for (const Image& img : images)
    if (img.channels != 1 || img.width != img.height || img.width % kGrid != 0) return std::nullopt;

  if (record.dataset == "synth_spot_diff") {
    if (images.size() != 2) return std::nullopt;
    std::vector<std::pair<std::size_t, std::size_t>> diffs;
    for (std::size_t row = 0; row < kGrid; ++row)
      for (std::size_t col = 0; col < kGrid; ++col)
        if (cell_value(images[0], row, col) != cell_value(images[1], row, col)) diffs.emplace_back(row, col);
    if (diffs.size() != 1) return std::nullopt;
    return spot_diff_answer(diffs[0].first, diffs[0].second);
  }
  if (record.dataset == "synth_state_coherence") {
    if (images.size() != 3) return std::nullopt;
    int v[3];
    for (std::size_t f = 0; f < 3; ++f) v[f] = cell_value(images[f], 3, 3);
    const bool up = v[0] < v[1] && v[1] < v[2];
    const bool down = v[0] > v[1] && v[1] > v[2];
    return std::string(up || down ? "yes" : "no");
  }
  if (record.dataset == "synth_mcq_count") {
    if (images.size() != 1) return std::nullopt;
    std::size_t bright = 0;
    for (std::size_t row = 0; row < kGrid; ++row)
      for (std::size_t col = 0; col < kGrid; ++col) bright += cell_value(images[0], row, col) != 0;
    if (bright % 4 != 0 || bright == 0 || bright > 16) return std::nullopt;
    return std::string(kCountWords[bright / 4 - 1]);
  }
  return std::nullopt;
}

}  // namespace dci
