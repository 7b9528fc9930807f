#pragma once

// Encoder -> connector -> decoder pipeline and parameter persistence.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dci/connector.hpp"
#include "dci/decoder.hpp"
#include "dci/tensor.hpp"
#include "dci/vision.hpp"

namespace dci {

struct ModelConfig {
  VisionConfig vision;
  ConnectorConfig connector;
  DecoderConfig decoder;

  /// Copies the shared widths (L, d, e) from the vision and decoder configs
  /// into the connector config.
  void link();
  /// Throws ConfigError when sub-configs are invalid or disagree.
  void validate() const;
};

struct ModelParams {
  VisionParams vision;
  ProjectorParams projector;
  DecoderParams decoder;
};

/// Sub-module seeds are drawn from SplitMix64(seed).
ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed);

template <class P, class F>
void visit_model(P& params, F&& f) {
  visit_vision(params.vision, f);
  visit_projector(params.projector, f);
  visit_decoder(params.decoder, f);
}

std::size_t parameter_count(const ModelParams& params);

/// Copy of `params` with every tensor registered as a leaf on `tape`.
ModelParams track(Tape& tape, const ModelParams& params);
/// Gradients for every parameter of a tracked copy, in visit order.
std::vector<Tensor> gradients(const Tape& tape, const ModelParams& tracked);

/// One training / evaluation example in decoder-ready form.
struct Example {
  SequencePlan plan;
  std::vector<Tensor> images;
};

/// Projected vision tokens (T x e) for each image.
std::vector<Tensor> vision_tokens(const ModelConfig& cfg, const ModelParams& params, std::span<const Tensor> images);

/// Answer-span cross-entropy of one example.
Tensor example_loss(const ModelConfig& cfg, const ModelParams& params, const Example& example);

std::string generate_answer(const ModelConfig& cfg, const ModelParams& params, const Vocab& vocab,
                            const SequencePlan& prompt, std::span<const Tensor> images, std::size_t max_new);

/// params.bin, little-endian:
///   "DCIPARAM" | u32 version (1) | u32 count
///   count x { u32 name_len | name | u32 rank | rank x u64 dim }
///   float64 data of every entry, concatenated in index order
void save_params(const std::filesystem::path& path, const ModelParams& params);
/// Reads into parameters shaped by `cfg`; every name and shape must match.
ModelParams load_params(const std::filesystem::path& path, const ModelConfig& cfg);

}  // namespace dci
