#pragma once

// Gradual structured filter pruning for the stage-1 model. Each prune step
// keeps ceil(keep_ratio * C) filters per prunable unit, ranked by L1 norm.
// Two kinds of units exist: each block's internal conv1 output (pruned
// independently) and stage-output channel spaces. Stage outputs joined by
// identity shortcuts (including the stem when stage 1 starts with one) are
// pruned together as a single group, ranked by the summed L1 norm over all
// convs producing into the group, so every residual add stays well-formed.

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "bgcut/segmentation.hpp"

namespace bgcut {

struct PruneSchedule {
  double step_keep_ratio = 0.9;
  int num_steps = 15;
  int finetune_iters_per_step = 0;  // informational; the callback trains

  double cumulative_keep_fraction() const;
};

struct LayerFilterCount {
  std::string name;
  int before = 0;
  int after = 0;
};

struct PruneStepReport {
  int step = 0;
  std::vector<LayerFilterCount> layers;
  std::int64_t params_before = 0;
  std::int64_t params_after = 0;
};

struct PruneReport {
  std::vector<PruneStepReport> steps;
  double latency_before_ms = 0;
  double latency_after_ms = 0;
  bool aborted = false;
  std::string abort_reason;
};

// Filter indices sorted ascending by L1 norm of w[i,:,:,:]; ties keep the
// lower index first (so it is pruned first).
std::vector<int> rank_filters(const Tensor& w);

// ceil(keep_ratio * channels) on double arithmetic, clamped to [1, channels].
int kept_filter_count(double keep_ratio, int channels);

// One gradual step over all prunable units of the model, in place.
void prune_step(Stage1Model& model, double keep_ratio);

// Current output-filter count of every prunable conv, in visit order.
std::vector<LayerFilterCount> filter_counts(Stage1Model& model);

std::int64_t count_params(Stage1Model& model);

// Mean forward wall-clock of the full stage-1 scores pass at the config's
// input size hint.
double measure_stage1_latency_ms(Stage1Model& model, int iters = 3);

using FinetuneFn = std::function<double(Stage1Model&, int step)>;

// Runs schedule.num_steps rounds of prune_step + finetune. A finetune
// callback returning a non-finite loss aborts with the report so far.
PruneReport prune_to_target(Stage1Model& model, const PruneSchedule& schedule,
                            const FinetuneFn& finetune);

}  // namespace bgcut
