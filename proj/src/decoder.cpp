#include "dci/decoder.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "dci/error.hpp"

namespace dci {

namespace {

const std::vector<std::string>& reserved_words() {
  static const std::vector<std::string> words = {"<pad>", "<unk>", "<image>", "<bos>", "<eos>"};
  return words;
}

std::vector<std::string> split_lower(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!current.empty()) out.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

bool is_reserved(const std::string& w) {
  const auto& r = reserved_words();
  return std::find(r.begin(), r.end(), w) != r.end();
}

}  // namespace

// ---- Vocab ----------------------------------------------------------------

Vocab::Vocab() : words_(reserved_words()) {}

Vocab Vocab::build(std::span<const std::string> texts) {
  std::set<std::string> unique;
  for (const std::string& text : texts)
    for (std::string& w : split_lower(text))
      if (!is_reserved(w)) unique.insert(std::move(w));
  std::vector<std::string> words(unique.begin(), unique.end());
  return from_words(words);
}

Vocab Vocab::from_words(std::span<const std::string> words) {
  Vocab v;
  for (const std::string& w : words) {
    if (is_reserved(w)) throw ValidationError("vocab: reserved word '" + w + "' in word list");
    if (v.index_.count(w)) throw ValidationError("vocab: duplicate word '" + w + "'");
    v.index_.emplace(w, static_cast<int>(v.words_.size()));
    v.words_.push_back(w);
  }
  return v;
}

std::vector<std::string> Vocab::words() const { return {words_.begin() + kReserved, words_.end()}; }

const std::string& Vocab::word(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
    throw IndexError("vocab: id " + std::to_string(id) + " outside [0, " + std::to_string(words_.size()) + ")");
  }
  return words_[static_cast<std::size_t>(id)];
}

int Vocab::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnk : it->second;
}

std::vector<int> Vocab::tokenize(std::string_view text) const {
  std::vector<int> ids;
  for (const std::string& w : split_lower(text)) ids.push_back(w == kImageLiteral ? kImage : id(w));
  return ids;
}

std::string Vocab::detokenize(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id == kPad || id == kBos || id == kEos) continue;
    if (!out.empty()) out.push_back(' ');
    out += word(id);
  }
  return out;
}

// ---- planning -------------------------------------------------------------

SequencePlan plan_sequence(const Vocab& vocab, std::string_view prompt, std::optional<std::string_view> answer) {
  SequencePlan plan;
  plan.ids.push_back(Vocab::kBos);
  for (int id : vocab.tokenize(prompt)) {
    if (id == Vocab::kImage) plan.image_of.push_back(plan.image_of.size());
    plan.ids.push_back(id);
  }
  plan.answer_mask.assign(plan.ids.size(), 0);
  if (answer) {
    for (int id : vocab.tokenize(*answer)) {
      if (id == Vocab::kImage) throw ValidationError("plan_sequence: image placeholder inside an answer");
      plan.ids.push_back(id);
      plan.answer_mask.push_back(1);
    }
    plan.ids.push_back(Vocab::kEos);
    plan.answer_mask.push_back(1);
  }
  return plan;
}

// ---- parameters -----------------------------------------------------------

void DecoderConfig::validate() const {
  if (width == 0 || heads == 0 || width % heads != 0) {
    throw ConfigError("decoder: width " + std::to_string(width) + " not divisible by heads " + std::to_string(heads));
  }
  if (vocab_size <= static_cast<std::size_t>(Vocab::kReserved) - 1) {
    throw ConfigError("decoder: vocab_size " + std::to_string(vocab_size) + " smaller than the reserved ids");
  }
  if (max_len == 0) throw ConfigError("decoder: max_len must be positive");
}

DecoderParams init_decoder_params(const DecoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SplitMix64 rng(seed);
  DecoderParams p;
  const double s = 1.0 / std::sqrt(static_cast<double>(cfg.width));
  std::vector<double> tok(cfg.vocab_size * cfg.width);
  for (double& v : tok) v = rng.symmetric(s);
  p.token_embed = Tensor({cfg.vocab_size, cfg.width}, std::move(tok));
  std::vector<double> pos(cfg.max_len * cfg.width);
  for (double& v : pos) v = rng.symmetric(s);
  p.position = Tensor({cfg.max_len, cfg.width}, std::move(pos));
  for (std::size_t i = 0; i < cfg.blocks; ++i) p.blocks.push_back(init_block(cfg.width, rng));
  p.final_norm = init_norm(cfg.width);
  p.head = init_linear(cfg.width, cfg.vocab_size, rng);
  return p;
}

// ---- assembly -------------------------------------------------------------

AssembledSequence assemble_interleaved_sequence(const SequencePlan& plan, std::span<const Tensor> vision_tokens,
                                                const DecoderParams& params) {
  if (plan.answer_mask.size() != plan.ids.size()) {
    throw DimensionError("assemble_interleaved_sequence: answer mask length differs from id count");
  }
  const std::size_t e = params.token_embed.cols();
  AssembledSequence seq;
  std::vector<Tensor> parts;
  std::vector<int> pending;
  auto flush = [&] {
    if (pending.empty()) return;
    parts.push_back(embedding(params.token_embed, pending));
    pending.clear();
  };

  std::size_t placeholder = 0;
  for (std::size_t i = 0; i < plan.ids.size(); ++i) {
    const int id = plan.ids[i];
    if (id != Vocab::kImage) {
      pending.push_back(id);
      seq.ids.push_back(id);
      seq.loss_mask.push_back(plan.answer_mask[i]);
      continue;
    }
    if (placeholder >= plan.image_of.size() || plan.image_of[placeholder] >= vision_tokens.size()) {
      throw ReferenceError("assemble_interleaved_sequence: placeholder " + std::to_string(placeholder) +
                           " has no vision tokens (" + std::to_string(vision_tokens.size()) + " images supplied)");
    }
    const Tensor& vis = vision_tokens[plan.image_of[placeholder]];
    if (vis.rank() != 2 || vis.cols() != e) {
      throw DimensionError("assemble_interleaved_sequence: vision tokens " + shape_to_string(vis.shape()) +
                           " do not match embedding width " + std::to_string(e));
    }
    flush();
    parts.push_back(vis);
    seq.ids.insert(seq.ids.end(), vis.rows(), Vocab::kImage);
    seq.loss_mask.insert(seq.loss_mask.end(), vis.rows(), 0);
    ++placeholder;
  }
  flush();
  if (parts.empty()) throw EmptyReductionError("assemble_interleaved_sequence: empty plan");
  seq.embeddings = parts.size() == 1 ? parts.front() : concat_rows(parts);
  return seq;
}

// ---- forward --------------------------------------------------------------

Tensor decoder_logits(const Tensor& embeddings, const DecoderConfig& cfg, const DecoderParams& params) {
  const std::size_t n = embeddings.rows();
  if (n > cfg.max_len) {
    throw LengthError("decoder: sequence length " + std::to_string(n) + " exceeds max_len " +
                      std::to_string(cfg.max_len));
  }
  Tensor x = add(embeddings, slice_rows(params.position, 0, n));
  for (const Block& block : params.blocks) x = apply(block, x, cfg.heads, /*causal=*/true);
  return apply(params.head, apply(params.final_norm, x));
}

Tensor forward_loss(const AssembledSequence& seq, const DecoderConfig& cfg, const DecoderParams& params) {
  const std::size_t n = seq.length();
  std::vector<int> targets(n, Vocab::kPad);
  std::vector<int> mask(n, 0);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    targets[i] = seq.ids[i + 1];
    mask[i] = seq.loss_mask[i + 1];
  }
  return softmax_cross_entropy(decoder_logits(seq.embeddings, cfg, params), targets, mask);
}

// ---- decoding -------------------------------------------------------------

int argmax(std::span<const double> values) {
  if (values.empty()) throw EmptyReductionError("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return static_cast<int>(best);
}

std::vector<int> greedy_decode(const std::function<std::vector<double>(std::span<const int>)>& next_logits,
                               std::vector<int> prefix, std::size_t max_new, int eos) {
  std::vector<int> produced;
  for (std::size_t step = 0; step < max_new; ++step) {
    const int next = argmax(next_logits(prefix));
    if (next == eos) break;
    produced.push_back(next);
    prefix.push_back(next);
  }
  return produced;
}

std::string greedy_generate(const SequencePlan& prompt, std::span<const Tensor> vision_tokens,
                            const DecoderConfig& cfg, const DecoderParams& params, const Vocab& vocab,
                            std::size_t max_new) {
  std::size_t vision_rows = 0;
  for (std::size_t idx : prompt.image_of)
    if (idx < vision_tokens.size()) vision_rows += vision_tokens[idx].rows();
  const std::size_t prompt_len = prompt.ids.size() - prompt.placeholders() + vision_rows;
  const std::size_t budget = cfg.max_len > prompt_len ? cfg.max_len - prompt_len : 0;

  SequencePlan working = prompt;
  auto scorer = [&](std::span<const int> ids) {
    working.ids.assign(ids.begin(), ids.end());
    working.answer_mask.assign(ids.size(), 0);
    AssembledSequence seq = assemble_interleaved_sequence(working, vision_tokens, params);
    Tensor logits = decoder_logits(seq.embeddings, cfg, params);
    const std::size_t v = logits.cols();
    auto last = logits.data().subspan((logits.rows() - 1) * v, v);
    std::vector<double> next(last.begin(), last.end());
    // Structural ids are never generated.
    for (int id : {Vocab::kPad, Vocab::kImage, Vocab::kBos}) next[static_cast<std::size_t>(id)] = -std::numeric_limits<double>::infinity();
    return next;
  };
  std::vector<int> produced = greedy_decode(scorer, prompt.ids, std::min(max_new, budget));
  return vocab.detokenize(produced);
}

}  // namespace dci
