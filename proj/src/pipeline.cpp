#include "bgcut/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cmath>
#include <fstream>

#include "bgcut/error.hpp"
#include "bgcut/runtime.hpp"
#include "json.hpp"

namespace bgcut {

namespace {

double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

}  // namespace

VideoSegmenter::VideoSegmenter(const SegmenterModels& models, const std::vector<Tensor>& bg_frames)
    : models_(models) {
  if (models_.attn.attn.use_attenuation) {
    require(!bg_frames.empty(), Errc::empty_input,
            "VideoSegmenter: this model needs background samples; none given. "
            "Use a model trained without attenuation for clips that have no "
            "background frames.");
    bg_feat_ = compute_bg_global_feature(models_.attn, bg_frames);
  }
}

int VideoSegmenter::window_radius() const {
  return models_.refine ? models_.refine->config.n : 0;
}

void VideoSegmenter::push(const Tensor& frame) {
  require(!finished_, Errc::invalid_argument, "VideoSegmenter: push after finish");
  const double t0 = now_ms();
  Tensor s = attenuation_forward(models_.attn, frame, bg_feat_);
  attn_ms_.push_back(now_ms() - t0);
  scores_.push_back(s);
  if (models_.refine) guidance_.push_back(frame);
  ++pushed_;
  emit_ready();
}

void VideoSegmenter::finish() {
  finished_ = true;
  emit_ready();
}

void VideoSegmenter::emit_ready() {
  const int n = window_radius();
  while (emitted_ < pushed_ && (finished_ || emitted_ + n < pushed_)) {
    if (!models_.refine) {
      ready_.push_back(predict_mask(scores_[static_cast<std::size_t>(emitted_ - base_)]));
    } else {
      const std::int64_t lo = std::max<std::int64_t>(0, emitted_ - n);
      const std::int64_t hi = std::min<std::int64_t>(pushed_ - 1, emitted_ + n);
      // Edge windows replicate the clamped boundary frame so every output
      // window still holds 2n+1 entries; the center stays at slot n.
      ScoreStack stack;
      stack.center_index = n;
      for (std::int64_t j = emitted_ - n; j <= emitted_ + n; ++j) {
        const std::int64_t t = std::clamp(j, lo, hi);
        stack.scores.push_back(scores_[static_cast<std::size_t>(t - base_)]);
        stack.guidance.push_back(guidance_[static_cast<std::size_t>(t - base_)]);
      }
      const double t0 = now_ms();
      Tensor refined = refine(*models_.refine, stack);
      refine_ms_.push_back(now_ms() - t0);
      ready_.push_back(predict_mask(refined));
    }
    ++emitted_;
    const std::int64_t keep_from = emitted_ - n;
    while (base_ < keep_from) {
      scores_.pop_front();
      if (!guidance_.empty()) guidance_.pop_front();
      ++base_;
    }
  }
}

std::vector<Mask> VideoSegmenter::take_ready() {
  std::vector<Mask> out;
  out.swap(ready_);
  return out;
}

std::vector<Mask> segment_video(const SegmenterModels& models, const std::vector<Tensor>& frames,
                                const std::vector<Tensor>& bg_frames) {
  require(!frames.empty(), Errc::empty_input, "segment_video: no frames");
  VideoSegmenter seg(models, bg_frames);
  for (const Tensor& f : frames) seg.push(f);
  seg.finish();
  return seg.take_ready();
}

void reset_pass_counters(const SegmenterModels& models) {
  models.attn.main_passes = 0;
  models.attn.bg_passes = 0;
  if (models.refine) models.refine->refine_passes = 0;
}

StageLatency latency_stats(std::vector<double> samples_ms) {
  StageLatency s;
  s.iterations = static_cast<int>(samples_ms.size());
  if (samples_ms.empty()) return s;
  double sum = 0;
  for (double v : samples_ms) sum += v;
  s.mean_ms = sum / static_cast<double>(samples_ms.size());
  std::sort(samples_ms.begin(), samples_ms.end());
  const std::size_t idx =
      static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(samples_ms.size()))) - 1;
  s.p95_ms = samples_ms[std::min(idx, samples_ms.size() - 1)];
  return s;
}

BenchReport bench_models(const SegmenterModels& models, int h, int w, int iterations,
                         int warmup) {
  require(h > 0 && w > 0 && iterations >= 0, Errc::invalid_argument, "bench: bad arguments");
  BenchReport report;
  report.h = h;
  report.w = w;
  report.threads = max_threads();
  report.machine = machine_descriptor();
  if (iterations == 0) return report;

  Rng rng(42);
  Tensor frame({1, 3, h, w});
  fill_uniform(frame, -1.0, 1.0, rng);
  GlobalBackgroundFeature feat;
  if (models.attn.attn.use_attenuation) {
    Tensor bg({1, 3, h, w});
    fill_uniform(bg, -1.0, 1.0, rng);
    feat = compute_bg_global_feature(models.attn, {bg});
  }

  const int n = models.refine ? models.refine->config.n : 0;
  std::vector<double> attn_ms, refine_ms;
  for (int it = 0; it < warmup + iterations; ++it) {
    const double t0 = now_ms();
    Tensor scores = attenuation_forward(models.attn, frame, feat);
    const double t1 = now_ms();
    if (it >= warmup) attn_ms.push_back(t1 - t0);
    if (models.refine) {
      ScoreStack stack;
      for (int j = 0; j < 2 * n + 1; ++j) {
        stack.scores.push_back(scores);
        stack.guidance.push_back(frame);
      }
      stack.center_index = n;
      const double t2 = now_ms();
      (void)refine(*models.refine, stack);
      if (it >= warmup) refine_ms.push_back(now_ms() - t2);
    }
  }
  report.attenuation = latency_stats(attn_ms);
  report.refinement = latency_stats(refine_ms);
  return report;
}

Image composite(const Image& frame, const Mask& mask, const Image& replacement_bg, int feather) {
  require(frame.channels == 3, Errc::invalid_argument, "composite: RGB frame expected");
  require(mask.shape() == Shape{frame.h, frame.w}, Errc::shape_mismatch,
          "composite: mask/frame size mismatch");
  require(feather >= 0, Errc::invalid_argument, "composite: negative feather");
  const Image bg = resize_bilinear(replacement_bg, frame.h, frame.w);
  require(bg.channels == 3, Errc::invalid_argument, "composite: RGB background expected");

  const int h = frame.h, w = frame.w;
  std::vector<double> alpha(static_cast<std::size_t>(h) * w);
  if (feather == 0) {
    for (std::int64_t i = 0; i < mask.size(); ++i)
      alpha[static_cast<std::size_t>(i)] = mask[i] ? 1.0 : 0.0;
  } else {
    // Box blur normalized by the in-bounds window area.
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        int sum = 0, count = 0;
        for (int dy = -feather; dy <= feather; ++dy)
          for (int dx = -feather; dx <= feather; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
            ++count;
            sum += mask[static_cast<std::int64_t>(yy) * w + xx];
          }
        alpha[static_cast<std::size_t>(y) * w + x] = static_cast<double>(sum) / count;
      }
  }

  Image out = Image::make(h, w, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double a = alpha[static_cast<std::size_t>(y) * w + x];
      for (int c = 0; c < 3; ++c) {
        const double v = a * frame.at(y, x, c) + (1.0 - a) * bg.at(y, x, c);
        out.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  return out;
}

EvalReport evaluate_masks(const std::vector<std::string>& clip_ids,
                          const std::vector<std::vector<Mask>>& pred,
                          const std::vector<std::vector<Mask>>& gt,
                          const std::vector<int>& band_widths) {
  require(pred.size() == gt.size() && pred.size() == clip_ids.size(), Errc::shape_mismatch,
          "evaluate_masks: clip count mismatch");
  require(!pred.empty(), Errc::empty_input, "evaluate_masks: no clips");

  EvalReport report;
  std::vector<Mask> all_pred, all_gt;
  for (std::size_t c = 0; c < pred.size(); ++c) {
    IouResult clip = mean_iou(pred[c], gt[c]);
    report.per_clip.emplace_back(clip_ids[c], clip.mean());
    all_pred.insert(all_pred.end(), pred[c].begin(), pred[c].end());
    all_gt.insert(all_gt.end(), gt[c].begin(), gt[c].end());
  }
  report.overall = mean_iou(all_pred, all_gt);
  for (int w : band_widths) report.band.emplace_back(w, band_iou(all_pred, all_gt, w));
  return report;
}

void write_band_csv(const std::string& path, const EvalReport& report) {
  std::ofstream f(path);
  require(f.good(), Errc::io, "write_band_csv: cannot write " + path);
  f << "width,iou\n";
  for (const auto& [w, r] : report.band) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%d,%.6f\n", w, r.mean());
    f << buf;
  }
}

void write_eval_json(const std::string& path, const EvalReport& report) {
  nlohmann::json j;
  j["mean_iou"] = report.overall.mean();
  j["iou_background"] = report.overall.iou(0);
  j["iou_foreground"] = report.overall.iou(1);
  for (const auto& [id, v] : report.per_clip) j["per_clip"][id] = v;
  for (const auto& [w, r] : report.band)
    j["band_iou"].push_back({{"width", w}, {"iou", r.mean()}});
  j["counters"] = {{"main_passes", report.main_passes},
                   {"bg_passes", report.bg_passes},
                   {"refine_passes", report.refine_passes}};
  j["latency"] = {{"attenuation_mean_ms", report.attenuation.mean_ms},
                  {"attenuation_p95_ms", report.attenuation.p95_ms},
                  {"refinement_mean_ms", report.refinement.mean_ms},
                  {"refinement_p95_ms", report.refinement.p95_ms}};
  std::ofstream f(path);
  require(f.good(), Errc::io, "write_eval_json: cannot write " + path);
  f << j.dump(2) << "\n";
}

}  // namespace bgcut
