#pragma once

// Segmentation heads. Stage 1 is a single-path model: backbone + 1x1
// classifier, trained first and reused to initialize both paths of the
// attenuation network. The attenuation network adds a background path
// whose globally pooled feature vector is tiled and concatenated with the
// segmentation features before the classifier.

#include <cstdint>
#include <vector>

#include "bgcut/backbone.hpp"

namespace bgcut {

using Mask = TensorT<std::uint8_t>;  // [H,W], values {0,1}

inline constexpr int kBackgroundClass = 0;
inline constexpr int kForegroundClass = 1;

template <class T>
struct Stage1ModelT {
  BackboneT<T> backbone;
  ConvLayerT<T> head;  // 1x1 with bias, backbone width -> 2 score channels
};

using Stage1Model = Stage1ModelT<float>;

template <class T>
Stage1ModelT<T> build_stage1(const BackboneConfig& cfg, std::uint64_t seed);

// Scores at input resolution: backbone -> 1x1 head -> bilinear upsample.
template <class T>
ValueT<T> stage1_scores(TapeT<T>& tape, Stage1ModelT<T>& model, const ValueT<T>& x, bool training);

template <class T>
void visit_params(Stage1ModelT<T>& m, const std::string& prefix, const ParamFn<T>& fn);
template <class T>
void visit_buffers(Stage1ModelT<T>& m, const std::string& prefix, const BufferFn<T>& fn);

struct AttenuationConfig {
  int seg_channels = 0;        // 0: same as backbone output width
  bool use_attenuation = true;  // false: classifier sees only the main path
};

template <class T>
struct AttenuationModelT {
  AttenuationConfig attn;
  BackboneT<T> main_backbone;
  BackboneT<T> bg_backbone;
  ConvLayerT<T> seg_conv;  // 3x3, produces the segmentation feature maps
  BatchNormLayerT<T> seg_bn;
  ConvLayerT<T> classifier;  // 1x1 with bias -> 2 channels

  // Inference instrumentation: frames pushed through each path.
  mutable std::int64_t main_passes = 0;
  mutable std::int64_t bg_passes = 0;

  int seg_channels() const { return seg_conv.out_channels(); }
  int bg_channels() const { return const_cast<BackboneT<T>&>(bg_backbone).out_channels(); }
};

using AttenuationModel = AttenuationModelT<float>;

struct GlobalBackgroundFeature {
  Tensor vec;  // [1,Cbg,1,1]
  int sample_count = 0;
  std::uint32_t fingerprint = 0;  // of the bg backbone parameters
};

template <class T>
AttenuationModelT<T> build_attenuation(const BackboneConfig& cfg, const AttenuationConfig& attn,
                                       std::uint64_t seed);

// Both paths start from the stage-1 backbone; heads are freshly initialized.
AttenuationModel build_attenuation_from_stage1(const Stage1Model& stage1,
                                               const AttenuationConfig& attn, std::uint64_t seed);

// Mean of per-sample globally pooled bg-path features, inference mode.
GlobalBackgroundFeature compute_bg_global_feature(const AttenuationModel& model,
                                                  const std::vector<Tensor>& bg_frames);

// Batched score computation on a tape. frames: [N,3,H,W]. bg_feat: [N,Cbg,1,1]
// per-row background vectors (ignored when attenuation is off, may be a
// default Value). Output: [N,2,H,W] logits at input resolution.
template <class T>
ValueT<T> attenuation_scores(TapeT<T>& tape, AttenuationModelT<T>& model, const ValueT<T>& frames,
                             const ValueT<T>& bg_feat, bool training);

// Single-frame inference entry point; checks the feature fingerprint.
Tensor attenuation_forward(const AttenuationModel& model, const Tensor& frame,
                           const GlobalBackgroundFeature& bg_feat);

// 2n+1 frames as one batch; equals per-frame forwards stacked.
std::vector<Tensor> attenuation_forward_batch(const AttenuationModel& model,
                                              const std::vector<Tensor>& frames,
                                              const GlobalBackgroundFeature& bg_feat);

// Per-pixel argmax over the two channels; ties go to background.
Mask predict_mask(const Tensor& scores);

template <class T>
void visit_params(AttenuationModelT<T>& m, const std::string& prefix, const ParamFn<T>& fn);
template <class T>
void visit_buffers(AttenuationModelT<T>& m, const std::string& prefix, const BufferFn<T>& fn);

template <class U, class T>
AttenuationModelT<U> cast_attenuation(const AttenuationModelT<T>& m);

}  // namespace bgcut
