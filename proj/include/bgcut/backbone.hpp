#pragma once

// ResNet-18-shaped feature extractor. Stem is a 3x3 stride-2 conv (no
// maxpool at desk scale), followed by four stages of basic residual blocks.
// Output stride 8 keeps stage 4 at stride 1 with dilation 2; output stride
// 16 keeps all stage strides at (1,2,2,2).

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "bgcut/nn.hpp"

namespace bgcut {

struct BackboneConfig {
  int in_channels = 3;
  int stem_channels = 16;
  std::array<int, 4> stage_channels{16, 32, 64, 128};
  std::array<int, 4> blocks_per_stage{2, 2, 2, 2};
  int output_stride = 8;  // 8 or 16
  // 0 means "derive from output_stride" (os 8 -> {1,1,1,2}, os 16 -> all 1).
  std::array<int, 4> dilation_per_stage{0, 0, 0, 0};
  int input_hint_h = 97;
  int input_hint_w = 97;

  // Quarter-width ResNet-18 shape, the training default on a laptop.
  static BackboneConfig desk();
  // Full ResNet-18 widths (64; 64,128,256,512), used for latency runs.
  static BackboneConfig full();

  std::array<int, 4> stage_strides() const;
  std::array<int, 4> stage_dilations() const;
  void validate() const;
};

// Actual channel widths of a (possibly pruned) network.
struct BackboneWidths {
  int stem = 0;
  std::array<std::vector<int>, 4> block_mid;
  std::array<int, 4> stage_out{};

  bool operator==(const BackboneWidths&) const = default;
};

BackboneWidths default_widths(const BackboneConfig& cfg);

template <class T>
struct BasicBlockT {
  ConvLayerT<T> conv1, conv2;
  BatchNormLayerT<T> bn1, bn2;
  std::optional<ConvLayerT<T>> proj;
  std::optional<BatchNormLayerT<T>> proj_bn;

  bool has_proj() const { return proj.has_value(); }
};

template <class T>
struct BackboneT {
  BackboneConfig config;  // widths here are the original, pre-pruning ones
  ConvLayerT<T> stem;
  BatchNormLayerT<T> stem_bn;
  std::array<std::vector<BasicBlockT<T>>, 4> stages;

  int out_channels() const { return stages[3].back().conv2.out_channels(); }
};

using Backbone = BackboneT<float>;

template <class T>
BackboneT<T> build_backbone(const BackboneConfig& cfg, std::uint64_t seed);
template <class T>
BackboneT<T> build_backbone_with_widths(const BackboneConfig& cfg, const BackboneWidths& widths,
                                        std::uint64_t seed);

template <class T>
ValueT<T> backbone_forward(TapeT<T>& tape, BackboneT<T>& net, const ValueT<T>& x, bool training);

template <class T>
void visit_params(BackboneT<T>& net, const std::string& prefix, const ParamFn<T>& fn);
template <class T>
void visit_buffers(BackboneT<T>& net, const std::string& prefix, const BufferFn<T>& fn);

template <class T>
using ConvFn = std::function<void(const std::string&, ConvLayerT<T>&)>;
template <class T>
void visit_convs(BackboneT<T>& net, const std::string& prefix, const ConvFn<T>& fn);

template <class T>
std::int64_t count_params(BackboneT<T>& net);

template <class T>
BackboneWidths widths_of(const BackboneT<T>& net);

// Asserts every producer/consumer channel pair matches, including both
// legs of each residual add. Throws Errc::shape_mismatch on violation.
template <class T>
void validate_channels(const BackboneT<T>& net);

template <class U, class T>
BackboneT<U> cast_backbone(const BackboneT<T>& net);

// CRC32 over all parameter bytes in visit order; identifies a specific
// parameter state (used to invalidate cached background features).
std::uint32_t backbone_fingerprint(Backbone& net);

}  // namespace bgcut
