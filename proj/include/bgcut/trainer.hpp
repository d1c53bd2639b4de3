#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bgcut/dataset.hpp"
#include "bgcut/refinement.hpp"
#include "bgcut/segmentation.hpp"

namespace bgcut {

struct TrainConfig {
  int batch_size = 4;        // reference setup uses 16
  int crop = 97;             // reference setup uses 569
  double base_lr = 1e-3;
  double poly_power = 0.9;
  int epochs = 40;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double refinement_lr_multiplier = 10.0;
  int n = 2;  // refinement window is 2n+1 frames
  bool hflip = true;
  bool train_attenuation = true;   // stage 2: update the segmentation paths
  bool train_refinement = true;    // stage 2: train and apply refinement
  bool freeze_backbone_bn = false; // stage 2: keep stage-1 running stats
  int max_iterations_override = 0; // > 0 caps the poly schedule and run length
  std::uint64_t seed = 1;

  // epochs * ceil(samples / batch), or the override.
  long max_iterations(std::int64_t num_samples) const;
  void validate() const;
};

struct TrainResult {
  std::vector<double> losses;      // total loss per iteration
  std::vector<double> aux_losses;  // stage 2: the L2 refinement component
  long iterations = 0;
  bool aborted = false;
  std::string abort_reason;
};

// Softmax cross-entropy training of the single-path model on all frames of
// all clips. Deterministic given (config.seed, clips).
TrainResult train_stage1(Stage1Model& model, const std::vector<ClipData>& clips,
                         const TrainConfig& cfg);

// Joint training: cross-entropy on per-frame attenuation scores over the
// whole 2n+1 window plus L2 between softmaxed refined center scores and the
// one-hot ground truth. Each batch item draws one random background sample.
// `refine` may be null when cfg.train_refinement is false.
TrainResult train_stage2(AttenuationModel& attn, RefinementModel* refine,
                         const std::vector<ClipData>& clips, const TrainConfig& cfg);

}  // namespace bgcut
