#include "dci/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "dci/error.hpp"
#include "dci/rng.hpp"

namespace dci {

namespace {

constexpr char kMagic[8] = {'D', 'C', 'I', 'P', 'A', 'R', 'A', 'M'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put_le(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T get_le(std::istream& in, const std::filesystem::path& path) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw ParseError(path.string() + ": truncated file");
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[i]) << (8 * i);
  return value;
}

}  // namespace

void ModelConfig::link() {
  connector.layers = vision.layers;
  connector.width = vision.width;
  connector.lm_width = decoder.width;
}

void ModelConfig::validate() const {
  vision.validate();
  connector.validate();
  decoder.validate();
  if (connector.layers != vision.layers || connector.width != vision.width) {
    throw ConfigError("model: connector (L=" + std::to_string(connector.layers) + ", d=" +
                      std::to_string(connector.width) + ") disagrees with vision encoder (L=" +
                      std::to_string(vision.layers) + ", d=" + std::to_string(vision.width) + ")");
  }
  if (connector.lm_width != decoder.width) {
    throw ConfigError("model: projector output width " + std::to_string(connector.lm_width) +
                      " differs from decoder width " + std::to_string(decoder.width));
  }
}

ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SplitMix64 rng(seed);
  const std::uint64_t vision_seed = rng.next(), projector_seed = rng.next(), decoder_seed = rng.next();
  return ModelParams{init_vision_params(cfg.vision, vision_seed), init_projector(cfg.connector, projector_seed),
                     init_decoder_params(cfg.decoder, decoder_seed)};
}

std::size_t parameter_count(const ModelParams& params) {
  std::size_t n = 0;
  visit_model(params, [&](const std::string&, const Tensor& t) { n += t.numel(); });
  return n;
}

ModelParams track(Tape& tape, const ModelParams& params) {
  ModelParams tracked = params;
  visit_model(tracked, [&](const std::string&, Tensor& t) { t = tape.leaf(t); });
  return tracked;
}

std::vector<Tensor> gradients(const Tape& tape, const ModelParams& tracked) {
  std::vector<Tensor> grads;
  visit_model(tracked, [&](const std::string&, const Tensor& t) { grads.push_back(tape.grad(t)); });
  return grads;
}

std::vector<Tensor> vision_tokens(const ModelConfig& cfg, const ModelParams& params, std::span<const Tensor> images) {
  std::vector<Tensor> tokens;
  tokens.reserve(images.size());
  for (const Tensor& image : images) {
    LayerFeatureStack stack = encode_all_layers(image, cfg.vision, params.vision);
    tokens.push_back(connect(stack, cfg.connector, params.projector));
  }
  return tokens;
}

Tensor example_loss(const ModelConfig& cfg, const ModelParams& params, const Example& example) {
  std::vector<Tensor> tokens = vision_tokens(cfg, params, example.images);
  AssembledSequence seq = assemble_interleaved_sequence(example.plan, tokens, params.decoder);
  return forward_loss(seq, cfg.decoder, params.decoder);
}

std::string generate_answer(const ModelConfig& cfg, const ModelParams& params, const Vocab& vocab,
                            const SequencePlan& prompt, std::span<const Tensor> images, std::size_t max_new) {
  std::vector<Tensor> tokens = vision_tokens(cfg, params, images);
  return greedy_generate(prompt, tokens, cfg.decoder, params.decoder, vocab, max_new);
}

void save_params(const std::filesystem::path& path, const ModelParams& params) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  std::vector<std::pair<std::string, const Tensor*>> entries;
  visit_model(params, [&](const std::string& name, const Tensor& t) { entries.emplace_back(name, &t); });

  out.write(kMagic, sizeof kMagic);
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t->rank()));
    for (std::size_t d : t->shape()) put_le<std::uint64_t>(out, d);
  }
  for (const auto& entry : entries)
    for (double v : entry.second->data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
}

ModelParams load_params(const std::filesystem::path& path, const ModelConfig& cfg) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw ParseError(path.string() + ": not a params.bin file");
  }
  if (get_le<std::uint32_t>(in, path) != kVersion) throw ParseError(path.string() + ": unsupported version");
  const auto count = get_le<std::uint32_t>(in, path);

  ModelParams params = init_model(cfg, 0);
  std::vector<std::pair<std::string, Tensor*>> expected;
  visit_model(params, [&](const std::string& name, Tensor& t) { expected.emplace_back(name, &t); });
  if (count != expected.size()) {
    throw ValidationError(path.string() + ": " + std::to_string(count) + " entries, configuration expects " +
                          std::to_string(expected.size()));
  }
  for (const auto& [name, t] : expected) {
    const auto len = get_le<std::uint32_t>(in, path);
    std::string stored(len, '\0');
    if (!in.read(stored.data(), len)) throw ParseError(path.string() + ": truncated file");
    Shape shape(get_le<std::uint32_t>(in, path));
    for (std::size_t& d : shape) d = get_le<std::uint64_t>(in, path);
    if (stored != name || shape != t->shape()) {
      throw ValidationError(path.string() + ": entry '" + stored + "' " + shape_to_string(shape) + " does not match '" +
                            name + "' " + shape_to_string(t->shape()));
    }
  }
  for (const auto& entry : expected)
    for (double& v : entry.second->data()) v = std::bit_cast<double>(get_le<std::uint64_t>(in, path));
  return params;
}

}  // namespace dci
