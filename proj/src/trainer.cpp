#include "bgcut/trainer.hpp"

#include <cmath>

#include "bgcut/error.hpp"
#include "bgcut/nn.hpp"

namespace bgcut {

namespace {

struct CropDraw {
  int clip = 0, frame = 0;
  int y0 = 0, x0 = 0;
  bool flip = false;
};

// Writes one normalized crop into batch row `row` of dst [B,3,c,c].
void crop_into(Tensor& dst, int row, const Image& img, const CropDraw& d, int crop) {
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < crop; ++y)
      for (int x = 0; x < crop; ++x) {
        const int sx = d.flip ? d.x0 + crop - 1 - x : d.x0 + x;
        dst.at(row, c, y, x) =
            static_cast<float>(img.at(d.y0 + y, sx, c)) / 127.5f - 1.0f;
      }
}

void labels_into(TensorT<int>& dst, int row, const Mask& m, const CropDraw& d, int crop) {
  const int w = static_cast<int>(m.shape()[1]);
  for (int y = 0; y < crop; ++y)
    for (int x = 0; x < crop; ++x) {
      const int sx = d.flip ? d.x0 + crop - 1 - x : d.x0 + x;
      dst.data()[(static_cast<std::int64_t>(row) * crop + y) * crop + x] =
          m[static_cast<std::int64_t>(d.y0 + y) * w + sx];
    }
}

CropDraw draw_crop(Rng& rng, const std::vector<ClipData>& clips, const TrainConfig& cfg,
                   std::int64_t sample, const std::vector<std::pair<int, int>>& samples) {
  CropDraw d;
  d.clip = samples[static_cast<std::size_t>(sample)].first;
  d.frame = samples[static_cast<std::size_t>(sample)].second;
  const Image& f = clips[static_cast<std::size_t>(d.clip)].frames[0];
  d.y0 = static_cast<int>(rng() % static_cast<std::uint64_t>(f.h - cfg.crop + 1));
  d.x0 = static_cast<int>(rng() % static_cast<std::uint64_t>(f.w - cfg.crop + 1));
  d.flip = cfg.hflip && (rng() & 1);
  return d;
}

std::vector<std::pair<int, int>> all_samples(const std::vector<ClipData>& clips) {
  std::vector<std::pair<int, int>> s;
  for (std::size_t c = 0; c < clips.size(); ++c)
    for (std::size_t t = 0; t < clips[c].frames.size(); ++t)
      s.emplace_back(static_cast<int>(c), static_cast<int>(t));
  return s;
}

void check_clips(const std::vector<ClipData>& clips, const TrainConfig& cfg) {
  require(!clips.empty(), Errc::empty_input, "train: no clips");
  for (const auto& c : clips) {
    require(!c.frames.empty() && c.frames.size() == c.masks.size(), Errc::invalid_argument,
            "train: clip " + c.clip_id + " has no usable frame/mask pairs");
    require(c.frames[0].h >= cfg.crop && c.frames[0].w >= cfg.crop, Errc::invalid_argument,
            "train: crop " + std::to_string(cfg.crop) + " exceeds frames of " + c.clip_id);
  }
}

bool finish_iteration(TrainResult& res, double loss) {
  res.losses.push_back(loss);
  ++res.iterations;
  if (!std::isfinite(loss)) {
    res.aborted = true;
    res.abort_reason = "non-finite loss at iteration " + std::to_string(res.iterations - 1);
    return false;
  }
  return true;
}

}  // namespace

long TrainConfig::max_iterations(std::int64_t num_samples) const {
  if (max_iterations_override > 0) return max_iterations_override;
  const long per_epoch = static_cast<long>((num_samples + batch_size - 1) / batch_size);
  return static_cast<long>(epochs) * per_epoch;
}

void TrainConfig::validate() const {
  require(batch_size > 0 && crop > 0 && base_lr > 0 && poly_power > 0 && n >= 0,
          Errc::invalid_argument, "TrainConfig: non-positive field");
  require(epochs > 0 || max_iterations_override > 0, Errc::invalid_argument,
          "TrainConfig: no iteration budget");
}

TrainResult train_stage1(Stage1Model& model, const std::vector<ClipData>& clips,
                         const TrainConfig& cfg) {
  cfg.validate();
  check_clips(clips, cfg);
  const auto samples = all_samples(clips);
  const long max_iter = cfg.max_iterations(static_cast<std::int64_t>(samples.size()));

  SgdOptimizer opt(cfg.momentum, cfg.weight_decay);
  visit_params<float>(model, "", [&](const std::string&, Variable& v) { opt.add(&v); });

  Rng rng(cfg.seed);
  TrainResult res;
  const int B = cfg.batch_size, c = cfg.crop;
  for (long iter = 0; iter < max_iter; ++iter) {
    Tensor x({B, 3, c, c});
    TensorT<int> labels({B, c, c});
    for (int i = 0; i < B; ++i) {
      const std::int64_t si = static_cast<std::int64_t>(rng() % samples.size());
      const CropDraw d = draw_crop(rng, clips, cfg, si, samples);
      const ClipData& clip = clips[static_cast<std::size_t>(d.clip)];
      crop_into(x, i, clip.frames[static_cast<std::size_t>(d.frame)], d, c);
      labels_into(labels, i, clip.masks[static_cast<std::size_t>(d.frame)], d, c);
    }

    Tape tape;
    auto scores = stage1_scores(tape, model, tape.constant(x), true);
    auto loss = tape.softmax_ce_loss(scores, labels, 255);
    opt.zero_grad();
    tape.backward(loss);
    if (!finish_iteration(res, static_cast<double>(loss.tensor[0]))) return res;
    opt.step(poly_lr(cfg.base_lr, cfg.poly_power, iter, max_iter));
  }
  return res;
}

TrainResult train_stage2(AttenuationModel& attn, RefinementModel* refine,
                         const std::vector<ClipData>& clips, const TrainConfig& cfg) {
  cfg.validate();
  check_clips(clips, cfg);
  require(!cfg.train_refinement || refine != nullptr, Errc::invalid_argument,
          "train_stage2: refinement requested but no model given");
  if (attn.attn.use_attenuation)
    for (const auto& clip : clips)
      require(!clip.bg.empty(), Errc::empty_input,
              "train_stage2: clip " + clip.clip_id + " has no background samples");

  const auto samples = all_samples(clips);
  const long max_iter = cfg.max_iterations(static_cast<std::int64_t>(samples.size()));
  const int win = 2 * cfg.n + 1;

  SgdOptimizer opt(cfg.momentum, cfg.weight_decay);
  if (cfg.train_attenuation)
    visit_params<float>(attn, "", [&](const std::string&, Variable& v) { opt.add(&v); });
  if (cfg.train_refinement)
    visit_params<float>(*refine, "",
                        [&](const std::string&, Variable& v) { opt.add(&v, cfg.refinement_lr_multiplier); });
  require(opt.size() > 0, Errc::invalid_argument, "train_stage2: nothing to train");

  const bool bn_train = !cfg.freeze_backbone_bn;
  Rng rng(cfg.seed);
  TrainResult res;
  const int B = cfg.batch_size, c = cfg.crop;

  for (long iter = 0; iter < max_iter; ++iter) {
    Tensor xw({win * B, 3, c, c});
    TensorT<int> labels_w({win * B, c, c});
    Tensor bg({B, 3, c, c});
    Tensor center_onehot({B, 2, c, c});

    for (int i = 0; i < B; ++i) {
      const std::int64_t si = static_cast<std::int64_t>(rng() % samples.size());
      const CropDraw d = draw_crop(rng, clips, cfg, si, samples);
      const ClipData& clip = clips[static_cast<std::size_t>(d.clip)];
      const int T = static_cast<int>(clip.frames.size());
      for (int j = 0; j < win; ++j) {
        const int t = std::clamp(d.frame - cfg.n + j, 0, T - 1);
        CropDraw dj = d;
        dj.frame = t;
        crop_into(xw, i * win + j, clip.frames[static_cast<std::size_t>(t)], dj, c);
        labels_into(labels_w, i * win + j, clip.masks[static_cast<std::size_t>(t)], dj, c);
      }
      // "we randomly select one background sample"
      if (attn.attn.use_attenuation) {
        const auto& bgi = clip.bg[static_cast<std::size_t>(rng() % clip.bg.size())];
        CropDraw db = d;
        db.y0 = static_cast<int>(rng() % static_cast<std::uint64_t>(bgi.h - c + 1));
        db.x0 = static_cast<int>(rng() % static_cast<std::uint64_t>(bgi.w - c + 1));
        crop_into(bg, i, bgi, db, c);
      }
      const Mask& cm = clip.masks[static_cast<std::size_t>(d.frame)];
      const int w = static_cast<int>(cm.shape()[1]);
      for (int y = 0; y < c; ++y)
        for (int x = 0; x < c; ++x) {
          const int sx = d.flip ? d.x0 + c - 1 - x : d.x0 + x;
          const int cls = cm[static_cast<std::int64_t>(d.y0 + y) * w + sx];
          center_onehot.at(i, cls, y, x) = 1.0f;
        }
    }

    Tape tape;
    ValueT<float> bg_feat = tape.constant(Tensor{});
    if (attn.attn.use_attenuation) {
      auto bg_deep = backbone_forward(tape, attn.bg_backbone, tape.constant(bg), bn_train);
      bg_feat = tape.repeat_batch(tape.global_avg_pool(bg_deep), win);
      attn.bg_passes += B;
    }
    auto scores = attenuation_scores(tape, attn, tape.constant(xw), bg_feat, bn_train);
    auto loss = tape.softmax_ce_loss(scores, labels_w, 255);
    double l2_part = 0.0;
    if (cfg.train_refinement) {
      const Shape ss = scores.tensor.shape();
      auto rin = tape.concat_channels(
          {tape.reshape(scores, Shape{B, win * 2, ss[2], ss[3]}),
           tape.reshape(tape.constant(xw), Shape{B, win * 3, ss[2], ss[3]})});
      auto refined = refinement_forward(tape, *refine, rin, true);
      auto l2 = tape.l2_loss(tape.softmax_channel(refined), center_onehot);
      l2_part = static_cast<double>(l2.tensor[0]);
      loss = tape.add(loss, l2);
    }
    res.aux_losses.push_back(l2_part);
    opt.zero_grad();
    tape.backward(loss);
    if (!finish_iteration(res, static_cast<double>(loss.tensor[0]))) return res;
    opt.step(poly_lr(cfg.base_lr, cfg.poly_power, iter, max_iter));
  }
  return res;
}

}  // namespace bgcut
