#include "bgcut/segmentation.hpp"

namespace bgcut {

namespace {

constexpr std::uint64_t kSeedMix = 0x9e3779b97f4a7c15ull;

Tensor stack_batch(const std::vector<Tensor>& frames) {
  require(!frames.empty(), Errc::empty_input, "stack_batch: no frames");
  const Shape& s0 = frames[0].shape();
  require(s0.size() == 4 && s0[0] == 1, Errc::shape_mismatch, "stack_batch: frames must be [1,C,H,W]");
  Tensor out({static_cast<int>(frames.size()), s0[1], s0[2], s0[3]});
  const std::int64_t per = frames[0].size();
  for (std::size_t i = 0; i < frames.size(); ++i) {
    require(frames[i].same_shape(frames[0]), Errc::shape_mismatch, "stack_batch: frame size mismatch");
    std::copy(frames[i].data(), frames[i].data() + per, out.data() + static_cast<std::int64_t>(i) * per);
  }
  return out;
}

std::vector<Tensor> split_batch(const Tensor& batch) {
  std::vector<Tensor> out;
  const std::int64_t per = batch.size() / batch.dim(0);
  for (int n = 0; n < batch.dim(0); ++n) {
    Tensor t({1, batch.dim(1), batch.dim(2), batch.dim(3)});
    std::copy(batch.data() + n * per, batch.data() + (n + 1) * per, t.data());
    out.push_back(std::move(t));
  }
  return out;
}

// Score heads start near zero so the initial prediction is close to uniform.
template <class T>
void shrink_head(ConvLayerT<T>& head) {
  for (std::int64_t i = 0; i < head.w.value.size(); ++i) head.w.value[i] *= T(0.01);
}

}  // namespace

template <class T>
Stage1ModelT<T> build_stage1(const BackboneConfig& cfg, std::uint64_t seed) {
  Stage1ModelT<T> m;
  m.backbone = build_backbone<T>(cfg, seed);
  Rng rng(seed ^ kSeedMix);
  m.head = make_conv<T>(m.backbone.out_channels(), 2, 1, 1, 0, 1, true, rng);
  shrink_head(m.head);
  return m;
}

template <class T>
ValueT<T> stage1_scores(TapeT<T>& tape, Stage1ModelT<T>& model, const ValueT<T>& x, bool training) {
  ValueT<T> f = backbone_forward(tape, model.backbone, x, training);
  ValueT<T> s = conv_forward(tape, model.head, f);
  return tape.upsample_bilinear(s, x.tensor.dim(2), x.tensor.dim(3));
}

template <class T>
void visit_params(Stage1ModelT<T>& m, const std::string& prefix, const ParamFn<T>& fn) {
  visit_params(m.backbone, prefix + "backbone.", fn);
  visit_params(m.head, prefix + "head", fn);
}

template <class T>
void visit_buffers(Stage1ModelT<T>& m, const std::string& prefix, const BufferFn<T>& fn) {
  visit_buffers(m.backbone, prefix + "backbone.", fn);
}

template <class T>
AttenuationModelT<T> build_attenuation(const BackboneConfig& cfg, const AttenuationConfig& attn,
                                       std::uint64_t seed) {
  AttenuationModelT<T> m;
  m.attn = attn;
  m.main_backbone = build_backbone<T>(cfg, seed);
  m.bg_backbone = build_backbone<T>(cfg, seed + 1);
  const int feat = m.main_backbone.out_channels();
  const int seg_ch = attn.seg_channels > 0 ? attn.seg_channels : feat;
  Rng rng(seed ^ kSeedMix);
  m.seg_conv = make_conv<T>(feat, seg_ch, 3, 1, 1, 1, false, rng);
  m.seg_bn = make_batch_norm<T>(seg_ch);
  const int cls_in = seg_ch + (attn.use_attenuation ? m.bg_backbone.out_channels() : 0);
  m.classifier = make_conv<T>(cls_in, 2, 1, 1, 0, 1, true, rng);
  shrink_head(m.classifier);
  return m;
}

AttenuationModel build_attenuation_from_stage1(const Stage1Model& stage1,
                                               const AttenuationConfig& attn, std::uint64_t seed) {
  AttenuationModel m = build_attenuation<float>(stage1.backbone.config, attn, seed);
  // Deep copies: the two paths start equal but train independently.
  m.main_backbone = cast_backbone<float>(stage1.backbone);
  m.bg_backbone = cast_backbone<float>(stage1.backbone);
  return m;
}

template <class T>
ValueT<T> attenuation_scores(TapeT<T>& tape, AttenuationModelT<T>& model, const ValueT<T>& frames,
                             const ValueT<T>& bg_feat, bool training) {
  ValueT<T> feat = backbone_forward(tape, model.main_backbone, frames, training);
  model.main_passes += frames.tensor.dim(0);
  ValueT<T> seg = conv_bn_relu(tape, model.seg_conv, model.seg_bn, feat, training);
  ValueT<T> cls_in = seg;
  if (model.attn.use_attenuation) {
    require(bg_feat.tensor.defined(), Errc::invalid_argument,
            "attenuation_scores: background feature required when attenuation is on");
    require(bg_feat.tensor.dim(0) == frames.tensor.dim(0), Errc::shape_mismatch,
            "attenuation_scores: bg feature batch must match frames");
    ValueT<T> tiled = tape.upsample_tile(bg_feat, seg.tensor.dim(2), seg.tensor.dim(3));
    cls_in = tape.concat_channels({seg, tiled});
  }
  ValueT<T> scores = conv_forward(tape, model.classifier, cls_in);
  return tape.upsample_bilinear(scores, frames.tensor.dim(2), frames.tensor.dim(3));
}

GlobalBackgroundFeature compute_bg_global_feature(const AttenuationModel& model,
                                                  const std::vector<Tensor>& bg_frames) {
  require(!bg_frames.empty(), Errc::empty_input,
          "compute_bg_global_feature: at least one background sample required");
  auto& m = const_cast<AttenuationModel&>(model);
  Tape tape;
  tape.set_recording(false);
  Tensor acc;
  for (const Tensor& f : bg_frames) {
    require(f.rank() == 4 && f.dim(0) == 1, Errc::shape_mismatch,
            "background samples must be [1,3,H,W]");
    auto feat = backbone_forward(tape, m.bg_backbone, tape.constant(f), false);
    auto g = tape.global_avg_pool(feat);
    if (!acc.defined()) {
      acc = g.tensor.clone();
    } else {
      axpy(1.0f, g.tensor, acc);
    }
  }
  m.bg_passes += static_cast<std::int64_t>(bg_frames.size());
  scale_inplace(acc, 1.0f / static_cast<float>(bg_frames.size()));
  GlobalBackgroundFeature out;
  out.vec = acc;
  out.sample_count = static_cast<int>(bg_frames.size());
  out.fingerprint = backbone_fingerprint(m.bg_backbone);
  return out;
}

Tensor attenuation_forward(const AttenuationModel& model, const Tensor& frame,
                           const GlobalBackgroundFeature& bg_feat) {
  auto& m = const_cast<AttenuationModel&>(model);
  Tape tape;
  tape.set_recording(false);
  ValueT<float> bg = tape.constant(Tensor{});
  if (m.attn.use_attenuation) {
    require(bg_feat.vec.defined(), Errc::invalid_argument,
            "attenuation_forward: background feature not computed");
    require(bg_feat.fingerprint == backbone_fingerprint(m.bg_backbone), Errc::stale_feature,
            "attenuation_forward: background feature is stale, recompute it for this model");
    bg = tape.constant(bg_feat.vec);
  }
  return attenuation_scores(tape, m, tape.constant(frame), bg, false).tensor;
}

std::vector<Tensor> attenuation_forward_batch(const AttenuationModel& model,
                                              const std::vector<Tensor>& frames,
                                              const GlobalBackgroundFeature& bg_feat) {
  require(!frames.empty(), Errc::empty_input, "attenuation_forward_batch: no frames");
  auto& m = const_cast<AttenuationModel&>(model);
  Tape tape;
  tape.set_recording(false);
  Tensor batch = stack_batch(frames);
  ValueT<float> bg = tape.constant(Tensor{});
  if (m.attn.use_attenuation) {
    require(bg_feat.vec.defined(), Errc::invalid_argument,
            "attenuation_forward_batch: background feature not computed");
    require(bg_feat.fingerprint == backbone_fingerprint(m.bg_backbone), Errc::stale_feature,
            "attenuation_forward_batch: background feature is stale");
    bg = tape.repeat_batch(tape.constant(bg_feat.vec), batch.dim(0));
  }
  Tensor scores = attenuation_scores(tape, m, tape.constant(batch), bg, false).tensor;
  return split_batch(scores);
}

Mask predict_mask(const Tensor& scores) {
  require(scores.rank() == 4 && scores.dim(0) == 1 && scores.dim(1) == 2, Errc::shape_mismatch,
          "predict_mask: expected scores [1,2,H,W]");
  const int h = scores.dim(2), w = scores.dim(3);
  Mask mask({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      mask[static_cast<std::int64_t>(y) * w + x] =
          scores.at(0, kForegroundClass, y, x) > scores.at(0, kBackgroundClass, y, x) ? 1 : 0;
  return mask;
}

template <class T>
void visit_params(AttenuationModelT<T>& m, const std::string& prefix, const ParamFn<T>& fn) {
  visit_params(m.main_backbone, prefix + "main.", fn);
  visit_params(m.bg_backbone, prefix + "bg.", fn);
  visit_params(m.seg_conv, prefix + "seg_conv", fn);
  visit_params(m.seg_bn, prefix + "seg_bn", fn);
  visit_params(m.classifier, prefix + "classifier", fn);
}

template <class T>
void visit_buffers(AttenuationModelT<T>& m, const std::string& prefix, const BufferFn<T>& fn) {
  visit_buffers(m.main_backbone, prefix + "main.", fn);
  visit_buffers(m.bg_backbone, prefix + "bg.", fn);
  visit_buffers(m.seg_bn, prefix + "seg_bn", fn);
}

template <class U, class T>
AttenuationModelT<U> cast_attenuation(const AttenuationModelT<T>& m) {
  AttenuationModelT<U> o;
  o.attn = m.attn;
  o.main_backbone = cast_backbone<U>(m.main_backbone);
  o.bg_backbone = cast_backbone<U>(m.bg_backbone);
  o.seg_conv = cast_layer<U>(m.seg_conv);
  o.seg_bn = cast_layer<U>(m.seg_bn);
  o.classifier = cast_layer<U>(m.classifier);
  return o;
}

#define BGCUT_INSTANTIATE_SEG(T)                                                                  \
  template Stage1ModelT<T> build_stage1<T>(const BackboneConfig&, std::uint64_t);                 \
  template ValueT<T> stage1_scores<T>(TapeT<T>&, Stage1ModelT<T>&, const ValueT<T>&, bool);       \
  template void visit_params<T>(Stage1ModelT<T>&, const std::string&, const ParamFn<T>&);         \
  template void visit_buffers<T>(Stage1ModelT<T>&, const std::string&, const BufferFn<T>&);       \
  template AttenuationModelT<T> build_attenuation<T>(const BackboneConfig&,                       \
                                                     const AttenuationConfig&, std::uint64_t);    \
  template ValueT<T> attenuation_scores<T>(TapeT<T>&, AttenuationModelT<T>&, const ValueT<T>&,    \
                                           const ValueT<T>&, bool);                               \
  template void visit_params<T>(AttenuationModelT<T>&, const std::string&, const ParamFn<T>&);    \
  template void visit_buffers<T>(AttenuationModelT<T>&, const std::string&, const BufferFn<T>&);

BGCUT_INSTANTIATE_SEG(float)
BGCUT_INSTANTIATE_SEG(double)

template AttenuationModelT<double> cast_attenuation<double, float>(const AttenuationModelT<float>&);

}  // namespace bgcut
