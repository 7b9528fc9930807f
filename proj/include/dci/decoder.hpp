#pragma once

// Toy causal decoder over interleaved text / vision-token sequences.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dci/layers.hpp"
#include "dci/tensor.hpp"

namespace dci {

/// Word-level vocabulary. Ids 0..4 are reserved; corpus words follow in
/// lexicographic order.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kImage = 2;
  static constexpr int kBos = 3;
  static constexpr int kEos = 4;
  static constexpr int kReserved = 5;
  static constexpr std::string_view kImageLiteral = "<image>";

  Vocab();

  /// Collects every lowercase whitespace-separated word of `texts`.
  static Vocab build(std::span<const std::string> texts);
  /// Restores a vocabulary from its non-reserved words, in id order.
  static Vocab from_words(std::span<const std::string> words);

  std::size_t size() const { return words_.size(); }
  /// Non-reserved words in id order.
  std::vector<std::string> words() const;
  const std::string& word(int id) const;
  int id(std::string_view word) const;

  /// Lowercases and splits on whitespace. `<image>` becomes kImage; unknown
  /// words become kUnk. Reserved ids other than kImage and kUnk are never
  /// produced.
  std::vector<int> tokenize(std::string_view text) const;

  /// Joins words with single spaces, dropping PAD, BOS and EOS.
  std::string detokenize(std::span<const int> ids) const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

/// Text-level plan for one example. `ids` starts with BOS; when an answer is
/// present it is followed by the answer tokens and EOS, which are the only
/// positions flagged in `answer_mask`.
struct SequencePlan {
  std::vector<int> ids;
  std::vector<std::size_t> image_of;  // image index for each kImage, in order
  std::vector<int> answer_mask;       // per entry of ids

  std::size_t placeholders() const { return image_of.size(); }
};

/// Placeholders map to images 0, 1, 2, ... in prompt order.
SequencePlan plan_sequence(const Vocab& vocab, std::string_view prompt, std::optional<std::string_view> answer);

struct DecoderConfig {
  std::size_t width = 32;  // e
  std::size_t blocks = 2;
  std::size_t heads = 2;
  std::size_t vocab_size = 0;
  std::size_t max_len = 64;
  std::uint64_t seed = 0;

  void validate() const;
};

struct DecoderParams {
  Tensor token_embed;  // V x e
  Tensor position;     // max_len x e
  std::vector<Block> blocks;
  Norm final_norm;
  Linear head;  // e x V
};

DecoderParams init_decoder_params(const DecoderConfig& cfg, std::uint64_t seed);

/// Decoder input after placeholder expansion. Vision positions carry kImage
/// in `ids` and 0 in `loss_mask`; `loss_mask[i] == 1` marks an answer token at
/// position i, predicted from position i - 1.
struct AssembledSequence {
  Tensor embeddings;  // n x e
  std::vector<int> ids;
  std::vector<int> loss_mask;

  std::size_t length() const { return ids.size(); }
};

/// Replaces each placeholder by the rows of its image's vision tokens.
/// Throws ReferenceError for a placeholder without an image and
/// DimensionError for vision tokens whose width differs from the embedding
/// table.
AssembledSequence assemble_interleaved_sequence(const SequencePlan& plan, std::span<const Tensor> vision_tokens,
                                                const DecoderParams& params);

/// Next-token logits for every position, n x V. Throws LengthError when n
/// exceeds max_len.
Tensor decoder_logits(const Tensor& embeddings, const DecoderConfig& cfg, const DecoderParams& params);

/// Mean next-token cross-entropy over answer positions.
Tensor forward_loss(const AssembledSequence& seq, const DecoderConfig& cfg, const DecoderParams& params);

/// Index of the largest value; ties go to the lowest index.
int argmax(std::span<const double> values);

/// Greedy decoding against an arbitrary next-token scorer. Returns the new
/// ids, excluding the terminating EOS.
std::vector<int> greedy_decode(const std::function<std::vector<double>(std::span<const int>)>& next_logits,
                               std::vector<int> prefix, std::size_t max_new, int eos = Vocab::kEos);

/// Greedy answer for a prompt-only plan. PAD, IMG and BOS are never chosen.
/// Decoding also stops when the sequence reaches max_len.
std::string greedy_generate(const SequencePlan& prompt, std::span<const Tensor> vision_tokens,
                            const DecoderConfig& cfg, const DecoderParams& params, const Vocab& vocab,
                            std::size_t max_new);

template <class P, class F>
void visit_decoder(P& params, F&& f) {
  f(std::string("decoder.token_embed"), params.token_embed);
  f(std::string("decoder.position"), params.position);
  for (std::size_t i = 0; i < params.blocks.size(); ++i)
    visit_block(params.blocks[i], "decoder.block" + std::to_string(i), f);
  visit_norm(params.final_norm, "decoder.final_norm", f);
  visit_linear(params.head, "decoder.head", f);
}

}  // namespace dci
