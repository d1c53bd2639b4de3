#pragma once

#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "bgcut/image.hpp"
#include "bgcut/metrics.hpp"
#include "bgcut/refinement.hpp"
#include "bgcut/segmentation.hpp"

namespace bgcut {

struct SegmenterModels {
  AttenuationModel attn;
  std::optional<RefinementModel> refine;  // absent: raw argmax of the score maps
};

// Sliding-window segmentation with a per-frame score cache: every frame runs
// through the attenuation network exactly once, and each refinement window of
// 2n+1 frames reads cached scores. Push frames in order, call finish(), and
// drain take_ready() at any point; chunking does not change the output.
class VideoSegmenter {
 public:
  VideoSegmenter(const SegmenterModels& models, const std::vector<Tensor>& bg_frames);

  void push(const Tensor& frame);  // [1,3,H,W]
  void finish();
  std::vector<Mask> take_ready();

  const GlobalBackgroundFeature& bg_feature() const { return bg_feat_; }
  const std::vector<double>& attenuation_ms() const { return attn_ms_; }
  const std::vector<double>& refinement_ms() const { return refine_ms_; }

 private:
  void emit_ready();
  int window_radius() const;

  const SegmenterModels& models_;
  GlobalBackgroundFeature bg_feat_;
  std::deque<Tensor> scores_, guidance_;
  std::int64_t base_ = 0, pushed_ = 0, emitted_ = 0;
  bool finished_ = false;
  std::vector<Mask> ready_;
  std::vector<double> attn_ms_, refine_ms_;
};

// Whole-clip convenience wrapper around VideoSegmenter.
std::vector<Mask> segment_video(const SegmenterModels& models, const std::vector<Tensor>& frames,
                                const std::vector<Tensor>& bg_frames);

void reset_pass_counters(const SegmenterModels& models);

struct StageLatency {
  double mean_ms = 0, p95_ms = 0;
  int iterations = 0;
};

StageLatency latency_stats(std::vector<double> samples_ms);

struct BenchReport {
  StageLatency attenuation, refinement;
  int h = 0, w = 0;
  int threads = 1;
  std::string machine;
};

// Wall-clock per-frame cost of each stage at the given input size; `warmup`
// untimed iterations precede the measured ones. Zero iterations reports empty.
BenchReport bench_models(const SegmenterModels& models, int h, int w, int iterations,
                         int warmup = 3);

// out = alpha*frame + (1-alpha)*bg, where alpha is the mask box-blurred with
// radius `feather` (normalized by the in-bounds window size at borders).
// The replacement background is resized to the frame first.
Image composite(const Image& frame, const Mask& mask, const Image& replacement_bg, int feather);

struct EvalReport {
  IouResult overall;
  std::vector<std::pair<int, IouResult>> band;           // width -> band IoU
  std::vector<std::pair<std::string, double>> per_clip;  // clip id -> mean IoU
  std::int64_t main_passes = 0, bg_passes = 0, refine_passes = 0;
  StageLatency attenuation, refinement;
};

// IoU bookkeeping over one or more clips of prediction/gt mask lists.
EvalReport evaluate_masks(const std::vector<std::string>& clip_ids,
                          const std::vector<std::vector<Mask>>& pred,
                          const std::vector<std::vector<Mask>>& gt,
                          const std::vector<int>& band_widths);

// "width,iou" rows.
void write_band_csv(const std::string& path, const EvalReport& report);
void write_eval_json(const std::string& path, const EvalReport& report);

}  // namespace bgcut
