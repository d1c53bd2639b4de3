#pragma once

// Spatial-temporal refinement: an encoder-decoder over the stacked score
// maps of 2n+1 consecutive frames plus color guidance, emitting refined
// 2-channel scores for the center frame. Three stride-2 3x3 convs down,
// three stride-2 4x4 deconvs up, same-size features fused by summation.

#include <array>
#include <cstdint>
#include <vector>

#include "bgcut/nn.hpp"

namespace bgcut {

struct RefinementConfig {
  int n = 2;  // temporal radius; window length 2n+1
  std::array<int, 3> encoder_channels{32, 64, 128};
  int encoder_kernel = 3;
  int decoder_kernel = 4;
  bool guidance = true;             // include color frames as extra input
  bool center_only_guidance = false;  // ablation: only the center frame
  bool skip_fusion = true;            // encoder/decoder summation links

  int window() const { return 2 * n + 1; }
  int input_channels() const;
  void validate() const;
};

template <class T>
struct RefinementModelT {
  RefinementConfig config;
  ConvLayerT<T> enc1, enc2, enc3;
  BatchNormLayerT<T> ebn1, ebn2, ebn3;
  ConvLayerT<T> dec1, dec2, dec3;  // dec3 has bias and no bn: raw logits
  BatchNormLayerT<T> dbn1, dbn2;

  mutable std::int64_t refine_passes = 0;
};

using RefinementModel = RefinementModelT<float>;

// Inputs to one refinement call: per-frame score maps [1,2,H,W] in temporal
// order and the matching color frames [1,3,H,W].
struct ScoreStack {
  std::vector<Tensor> scores;
  std::vector<Tensor> guidance;
  int center_index = 0;
};

template <class T>
RefinementModelT<T> build_refinement(const RefinementConfig& cfg, std::uint64_t seed);

// x: [B, input_channels, H, W]; output [B,2,H,W]. Internally zero-pads H,W
// up to a multiple of 8 and crops back.
template <class T>
ValueT<T> refinement_forward(TapeT<T>& tape, RefinementModelT<T>& model, const ValueT<T>& x,
                             bool training);

// Channel layout of the assembled input: per frame j the score pair
// (bg_j, fg_j) at channels 2j..2j+1, then guidance RGB blocks appended.
// This matches reshaping a window-major [(2n+1)B,C,H,W] batch into
// [B,(2n+1)C,H,W], which is how stage-2 training batches windows.
Tensor assemble_refinement_input(const RefinementConfig& cfg, const ScoreStack& stack);

// Inference path: refined center-frame scores [1,2,H,W].
Tensor refine(const RefinementModel& model, const ScoreStack& stack);

template <class T>
void visit_params(RefinementModelT<T>& m, const std::string& prefix, const ParamFn<T>& fn);
template <class T>
void visit_buffers(RefinementModelT<T>& m, const std::string& prefix, const BufferFn<T>& fn);

template <class U, class T>
RefinementModelT<U> cast_refinement(const RefinementModelT<T>& m);

}  // namespace bgcut
