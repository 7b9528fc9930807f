#pragma once

// Dense Channel Integration connector and the two-layer MLP projector.
//
// With DCI enabled, the L per-layer features are partitioned into G groups of
// M = L / G adjacent layers. Each group is averaged,
//
//   GL_i = (1/M) * sum_{k=(i-1)M+1}^{iM} V_k,   1 <= i <= G,
//
// and the projector input is the channel-wise concatenation
//
//   EV = [GL_1, ..., GL_G, V_L]       (width (G + 1) * d).
//
// V_L is counted twice: inside GL_G and as the trailing block. Without DCI
// the projector sees V_L alone.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "dci/layers.hpp"
#include "dci/tensor.hpp"
#include "dci/vision.hpp"

namespace dci {

struct ConnectorConfig {
  std::size_t layers = 6;  // L
  std::size_t groups = 3;  // G
  std::size_t width = 8;   // d
  std::size_t hidden = 32;
  std::size_t lm_width = 32;
  bool dci_enabled = true;

  /// Throws ConfigError unless 1 <= G <= L, L mod G == 0 and all widths are
  /// positive.
  void validate() const;
  std::size_t group_size() const { return layers / groups; }  // M
  std::size_t input_width() const { return dci_enabled ? (groups + 1) * width : width; }
};

struct VisionEmbedding {
  Tensor ev;
};

struct ProjectorParams {
  Linear fc1;  // input_width x hidden
  Linear fc2;  // hidden x lm_width
};

/// Group means GL_1..GL_G in order.
std::vector<Tensor> fuse_groups(const LayerFeatureStack& stack, const ConnectorConfig& cfg);

/// EV = concat_channels(GL_1, ..., GL_G, V_L).
VisionEmbedding assemble_embedding(std::span<const Tensor> group_means, const Tensor& v_last,
                                   const ConnectorConfig& cfg);

/// Projector input: EV on the DCI path, V_L otherwise.
VisionEmbedding vision_embedding(const LayerFeatureStack& stack, const ConnectorConfig& cfg);

ProjectorParams init_projector(const ConnectorConfig& cfg, std::uint64_t seed);

/// Linear -> GELU -> Linear.
Tensor project(const Tensor& x, const ProjectorParams& params);

/// Full connector: projector(vision_embedding(stack)). Throws ConfigError if
/// the projector's input width does not match cfg.
Tensor connect(const LayerFeatureStack& stack, const ConnectorConfig& cfg, const ProjectorParams& params);

/// Same as above with a caller-supplied projector.
Tensor connect(const LayerFeatureStack& stack, const ConnectorConfig& cfg,
               const std::function<Tensor(const Tensor&)>& projector);

struct ConnectorParamCount {
  long long base = 0;      // d*h + h + h*e + e
  long long with_dci = 0;  // (G+1)*d*h + h + h*e + e
  long long delta = 0;     // G*d*h

  double delta_fraction_of(long long total) const { return static_cast<double>(delta) / static_cast<double>(total); }
};

/// DCI adds no parameters of its own; only the projector's first layer
/// widens.
ConnectorParamCount connector_param_count(const ConnectorConfig& cfg);

template <class P, class F>
void visit_projector(P& params, F&& f) {
  visit_linear(params.fc1, "projector.fc1", f);
  visit_linear(params.fc2, "projector.fc2", f);
}

}  // namespace dci
