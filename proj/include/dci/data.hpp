#pragma once

// Manifests, image files, train/validation splits and synthetic datasets.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dci/tensor.hpp"

namespace dci {

enum class AnswerType { open, mcq };

struct SampleRecord {
  std::string id;
  std::string task;  // multi_image_reasoning | doc_knowledge | interactive_comm
  std::string dataset;
  std::vector<std::string> images;  // relative to the manifest directory unless absolute
  std::string prompt;               // one <image> per entry of images
  std::string answer;
  AnswerType answer_type = AnswerType::open;
  std::vector<std::string> choices;  // mcq only
  std::optional<std::string> metric;  // defaults by answer type when absent

  /// Declared metric tag, or "accuracy" for mcq and "rouge_l" for open.
  std::string metric_tag() const;

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

/// Number of `<image>` placeholders (case-insensitive, whitespace-delimited).
std::size_t count_placeholders(std::string_view prompt);

/// Throws ValidationError naming the record id and offending field.
void validate_record(const SampleRecord& record);

/// JSON-lines manifest. Blank lines are skipped. Throws ParseError with the
/// 1-based line number for malformed JSON and ValidationError for records
/// breaking an invariant or repeating an id.
std::vector<SampleRecord> load_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, std::span<const SampleRecord> records);

std::filesystem::path resolve_image_path(const std::filesystem::path& manifest_dir, const std::string& image);

// ---- images ---------------------------------------------------------------

struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;  // 1 (PGM) or 3 (PPM)
  std::vector<std::uint8_t> pixels;  // row-major, channels interleaved

  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c = 0) const { return pixels[(y * width + x) * channels + c]; }
  friend bool operator==(const Image&, const Image&) = default;
};

/// Binary PGM (P5) / PPM (P6) with maxval 255.
Image read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Image& image);

/// Pixel values scaled to [0, 1]: [H x W] for one channel, [H x W x C]
/// otherwise.
Tensor image_to_tensor(const Image& image);

// ---- split ----------------------------------------------------------------

struct SplitSpec {
  double ratio = 0.9;
  std::uint64_t seed = 0;
};

/// (train, validation) sizes: train = floor(ratio * n) clamped to [1, n - 1].
std::pair<std::size_t, std::size_t> split_sizes(std::size_t n, double ratio);

struct Split {
  std::vector<SampleRecord> train;
  std::vector<SampleRecord> val;
};

/// Fisher-Yates shuffle with SplitMix64(seed), then prefix = train and
/// suffix = validation. Throws ConfigError for n < 2 or a ratio outside
/// (0, 1].
Split split_train_val(std::span<const SampleRecord> records, const SplitSpec& spec);

/// Applies split_train_val to each dataset independently (in order of first
/// appearance) and concatenates the parts.
Split split_by_dataset(std::span<const SampleRecord> records, const SplitSpec& spec);

// ---- synthetic data -------------------------------------------------------

enum class SynthKind { spot_diff, state_coherence, mcq_count };

SynthKind parse_synth_kind(std::string_view name);
std::string_view synth_kind_name(SynthKind kind);

/// Writes `manifest.jsonl` and `images/*.pgm` under out_dir and returns the
/// records. Every image is image_size x image_size grayscale, drawn on an
/// 8 x 8 cell grid (image_size must be a multiple of 8).
///
///   spot_diff        two random binary grids differing in exactly one cell;
///                    answer "row R col C" (1-based).
///   state_coherence  three frames of one square at different brightness;
///                    answer "yes" when brightness is strictly monotone.
///   mcq_count        one to four 2 x 2-cell squares; answer is the count as
///                    a word, one of four choices.
std::vector<SampleRecord> synth_generate(SynthKind kind, std::size_t n, std::uint64_t seed, std::size_t image_size,
                                         const std::filesystem::path& out_dir);

/// Re-derives the gold answer of a synthetic record from its images, or
/// nullopt when the images are inconsistent with the generator.
std::optional<std::string> rederive_synthetic_answer(const SampleRecord& record, std::span<const Image> images);

}  // namespace dci
