#pragma once

// Toy vision transformer that exposes every block output as a layer feature.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "dci/layers.hpp"
#include "dci/tensor.hpp"

namespace dci {

struct VisionConfig {
  std::size_t image_size = 8;
  std::size_t patch_size = 4;
  std::size_t channels = 1;
  std::size_t width = 8;  // d
  std::size_t layers = 6;  // L
  std::size_t heads = 2;
  std::uint64_t seed = 0;

  /// Throws ConfigError on a violated invariant.
  void validate() const;
  std::size_t grid() const { return image_size / patch_size; }
  std::size_t tokens() const { return grid() * grid(); }
  std::size_t patch_values() const { return patch_size * patch_size * channels; }
};

/// features[i] holds the output of encoder block i + 1, so features.back()
/// is the final layer's feature.
struct LayerFeatureStack {
  std::vector<Tensor> features;

  std::size_t layers() const { return features.size(); }
  const Tensor& last() const { return features.back(); }
};

struct VisionParams {
  Linear patch_embed;  // patch_values x width
  Tensor position;     // tokens x width
  std::vector<Block> blocks;
};

/// Images are [H x W] for one channel and [H x W x C] (interleaved channels)
/// otherwise. Token k covers patch (k / grid, k % grid); its values are
/// ordered by pixel row, pixel column, then channel.
Tensor patchify(const Tensor& image, const VisionConfig& cfg);

VisionParams init_vision_params(const VisionConfig& cfg, std::uint64_t seed);

LayerFeatureStack encode_all_layers(const Tensor& image, const VisionConfig& cfg, const VisionParams& params);

template <class P, class F>
void visit_vision(P& params, F&& f) {
  visit_linear(params.patch_embed, "vision.patch_embed", f);
  f(std::string("vision.position"), params.position);
  for (std::size_t i = 0; i < params.blocks.size(); ++i) visit_block(params.blocks[i], "vision.block" + std::to_string(i), f);
}

}  // namespace dci
