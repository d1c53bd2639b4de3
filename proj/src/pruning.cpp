#include "bgcut/pruning.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

namespace bgcut {

namespace {

double filter_l1(const Tensor& w, int f) {
  const std::int64_t per = w.size() / w.dim(0);
  const float* p = w.data() + static_cast<std::int64_t>(f) * per;
  double s = 0;
  for (std::int64_t i = 0; i < per; ++i) s += std::abs(static_cast<double>(p[i]));
  return s;
}

// Keep the (count) filters with the largest L1 norm; the returned indices
// are ascending so slicing preserves relative order.
std::vector<int> kept_indices(const std::vector<double>& scores, int count) {
  const int c = static_cast<int>(scores.size());
  std::vector<int> order(static_cast<std::size_t>(c));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[static_cast<std::size_t>(a)] < scores[static_cast<std::size_t>(b)]; });
  std::vector<int> kept(order.begin() + (c - count), order.end());
  std::sort(kept.begin(), kept.end());
  return kept;
}

Tensor slice_dim0(const Tensor& t, const std::vector<int>& kept) {
  Shape s = t.shape();
  const std::int64_t per = t.size() / s[0];
  s[0] = static_cast<int>(kept.size());
  Tensor out(s);
  for (std::size_t i = 0; i < kept.size(); ++i)
    std::copy(t.data() + kept[i] * per, t.data() + (kept[i] + 1) * per,
              out.data() + static_cast<std::int64_t>(i) * per);
  return out;
}

Tensor slice_dim1(const Tensor& t, const std::vector<int>& kept) {
  Shape s = t.shape();
  const std::int64_t inner = t.size() / (static_cast<std::int64_t>(s[0]) * s[1]);
  const int c_old = s[1];
  s[1] = static_cast<int>(kept.size());
  Tensor out(s);
  for (int n = 0; n < s[0]; ++n)
    for (std::size_t i = 0; i < kept.size(); ++i)
      std::copy(t.data() + (static_cast<std::int64_t>(n) * c_old + kept[i]) * inner,
                t.data() + (static_cast<std::int64_t>(n) * c_old + kept[i] + 1) * inner,
                out.data() + (static_cast<std::int64_t>(n) * s[1] + static_cast<std::int64_t>(i)) * inner);
  return out;
}

void slice_conv_out(ConvLayer& l, const std::vector<int>& kept) {
  l.w = Variable(slice_dim0(l.w.value, kept));
  if (l.has_bias()) l.b = Variable(slice_dim0(l.b.value, kept));
  std::vector<int> prov;
  for (int i : kept) prov.push_back(l.kept_out[static_cast<std::size_t>(i)]);
  l.kept_out = std::move(prov);
}

void slice_conv_in(ConvLayer& l, const std::vector<int>& kept) {
  l.w = Variable(slice_dim1(l.w.value, kept));
}

void slice_bn(BatchNormLayer& l, const std::vector<int>& kept) {
  l.gamma = Variable(slice_dim0(l.gamma.value, kept));
  l.beta = Variable(slice_dim0(l.beta.value, kept));
  l.running_mean = slice_dim0(l.running_mean, kept);
  l.running_var = slice_dim0(l.running_var, kept);
}

// Channel spaces: 0 = stem output, 1..4 = stage outputs. An identity
// shortcut at the first block of a stage merges its input space with the
// stage's own space.
struct SpaceUnion {
  std::array<int, 5> parent{0, 1, 2, 3, 4};
  int find(int x) {
    while (parent[static_cast<std::size_t>(x)] != x) x = parent[static_cast<std::size_t>(x)];
    return x;
  }
  void unite(int a, int b) { parent[static_cast<std::size_t>(find(a))] = find(b); }
};

struct Group {
  std::vector<ConvLayer*> producers;
  std::vector<BatchNormLayer*> producer_bns;
  std::vector<ConvLayer*> consumers;
  int width = 0;
};

std::vector<Group> channel_groups(Stage1Model& model) {
  Backbone& net = model.backbone;
  SpaceUnion uf;
  for (int s = 0; s < 4; ++s) {
    if (!net.stages[static_cast<std::size_t>(s)][0].has_proj()) uf.unite(s, s + 1);
  }

  std::array<Group, 5> by_root;
  auto add_producer = [&](int space, ConvLayer* c, BatchNormLayer* bn) {
    Group& g = by_root[static_cast<std::size_t>(uf.find(space))];
    g.producers.push_back(c);
    g.producer_bns.push_back(bn);
    g.width = c->out_channels();
  };
  auto add_consumer = [&](int space, ConvLayer* c) {
    by_root[static_cast<std::size_t>(uf.find(space))].consumers.push_back(c);
  };

  add_producer(0, &net.stem, &net.stem_bn);
  for (int s = 0; s < 4; ++s) {
    auto& stage = net.stages[static_cast<std::size_t>(s)];
    for (std::size_t b = 0; b < stage.size(); ++b) {
      auto& blk = stage[b];
      const int in_space = b == 0 ? s : s + 1;
      add_consumer(in_space, &blk.conv1);
      add_producer(s + 1, &blk.conv2, &blk.bn2);
      if (blk.has_proj()) {
        add_consumer(in_space, &*blk.proj);
        add_producer(s + 1, &*blk.proj, &*blk.proj_bn);
      }
    }
  }
  add_consumer(4, &model.head);

  std::vector<Group> groups;
  for (int s = 0; s < 5; ++s) {
    if (uf.find(s) != s) continue;
    Group& g = by_root[static_cast<std::size_t>(s)];
    if (!g.producers.empty()) groups.push_back(std::move(g));
  }
  return groups;
}

}  // namespace

double PruneSchedule::cumulative_keep_fraction() const {
  return std::pow(step_keep_ratio, num_steps);
}

std::vector<int> rank_filters(const Tensor& w) {
  require(w.rank() >= 2, Errc::invalid_argument, "rank_filters: weight tensor must have rank >= 2");
  const int c = w.dim(0);
  std::vector<double> scores(static_cast<std::size_t>(c));
  for (int f = 0; f < c; ++f) scores[static_cast<std::size_t>(f)] = filter_l1(w, f);
  std::vector<int> order(static_cast<std::size_t>(c));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[static_cast<std::size_t>(a)] < scores[static_cast<std::size_t>(b)]; });
  return order;
}

int kept_filter_count(double keep_ratio, int channels) {
  require(keep_ratio > 0.0 && keep_ratio <= 1.0, Errc::invalid_argument,
          "keep_ratio must be in (0, 1]");
  const int k = static_cast<int>(std::ceil(keep_ratio * static_cast<double>(channels)));
  require(k >= 1, Errc::invalid_argument, "pruning would leave zero filters");
  return std::min(k, channels);
}

void prune_step(Stage1Model& model, double keep_ratio) {
  Backbone& net = model.backbone;

  // Block-internal widths first: conv1 outputs feed only bn1 and conv2.
  for (auto& stage : net.stages) {
    for (auto& blk : stage) {
      const int mid = blk.conv1.out_channels();
      const int keep = kept_filter_count(keep_ratio, mid);
      if (keep == mid) continue;
      std::vector<double> scores(static_cast<std::size_t>(mid));
      for (int f = 0; f < mid; ++f) scores[static_cast<std::size_t>(f)] = filter_l1(blk.conv1.w.value, f);
      const std::vector<int> kept = kept_indices(scores, keep);
      slice_conv_out(blk.conv1, kept);
      slice_bn(blk.bn1, kept);
      slice_conv_in(blk.conv2, kept);
    }
  }

  // Stage-output groups, ranked by summed producer L1.
  for (Group& g : channel_groups(model)) {
    const int width = g.width;
    const int keep = kept_filter_count(keep_ratio, width);
    if (keep == width) continue;
    std::vector<double> scores(static_cast<std::size_t>(width), 0.0);
    for (ConvLayer* p : g.producers) {
      require(p->out_channels() == width, Errc::shape_mismatch,
              "prune_step: group members disagree on width");
      for (int f = 0; f < width; ++f) scores[static_cast<std::size_t>(f)] += filter_l1(p->w.value, f);
    }
    const std::vector<int> kept = kept_indices(scores, keep);
    for (std::size_t i = 0; i < g.producers.size(); ++i) {
      slice_conv_out(*g.producers[i], kept);
      slice_bn(*g.producer_bns[i], kept);
    }
    for (ConvLayer* c : g.consumers) slice_conv_in(*c, kept);
  }

  validate_channels(net);
}

std::vector<LayerFilterCount> filter_counts(Stage1Model& model) {
  std::vector<LayerFilterCount> out;
  visit_convs<float>(model.backbone, "backbone.", [&](const std::string& name, ConvLayer& l) {
    out.push_back(LayerFilterCount{name, l.out_channels(), l.out_channels()});
  });
  return out;
}

std::int64_t count_params(Stage1Model& model) {
  std::int64_t total = 0;
  visit_params<float>(model, "", [&](const std::string&, Variable& v) { total += v.value.size(); });
  return total;
}

double measure_stage1_latency_ms(Stage1Model& model, int iters) {
  const int h = model.backbone.config.input_hint_h, w = model.backbone.config.input_hint_w;
  Tensor x({1, model.backbone.config.in_channels, h, w});
  Rng rng(7);
  fill_uniform(x, -1.0, 1.0, rng);
  Tape tape;
  tape.set_recording(false);
  (void)stage1_scores(tape, model, tape.constant(x), false);  // warmup
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < iters; ++i) (void)stage1_scores(tape, model, tape.constant(x), false);
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / std::max(1, iters);
}

PruneReport prune_to_target(Stage1Model& model, const PruneSchedule& schedule,
                            const FinetuneFn& finetune) {
  require(schedule.num_steps >= 0, Errc::invalid_argument, "num_steps must be >= 0");
  PruneReport report;
  report.latency_before_ms = measure_stage1_latency_ms(model);
  for (int step = 0; step < schedule.num_steps; ++step) {
    PruneStepReport sr;
    sr.step = step;
    sr.params_before = count_params(model);
    sr.layers = filter_counts(model);
    prune_step(model, schedule.step_keep_ratio);
    const std::vector<LayerFilterCount> after = filter_counts(model);
    for (std::size_t i = 0; i < sr.layers.size(); ++i) sr.layers[i].after = after[i].after;
    sr.params_after = count_params(model);
    report.steps.push_back(std::move(sr));
    if (finetune) {
      const double loss = finetune(model, step);
      if (!std::isfinite(loss)) {
        report.aborted = true;
        report.abort_reason = "finetune returned non-finite loss at step " + std::to_string(step);
        break;
      }
    }
  }
  report.latency_after_ms = measure_stage1_latency_ms(model);
  return report;
}

}  // namespace bgcut
