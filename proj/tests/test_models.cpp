#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "bgcut/model_io.hpp"
#include "bgcut/pruning.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace bgcut;
using testutil::grad_check;
using testutil::random_tensor;

namespace {

BackboneConfig tiny_config() {
  BackboneConfig c;
  c.stem_channels = 8;
  c.stage_channels = {8, 10, 12, 16};
  c.blocks_per_stage = {1, 1, 1, 1};
  c.input_hint_h = 33;
  c.input_hint_w = 33;
  return c;
}

template <class M>
std::vector<Tensor> param_snapshot(M& m) {
  std::vector<Tensor> out;
  visit_params<float>(m, "", [&](const std::string&, Variable& v) { out.push_back(v.value.clone()); });
  return out;
}

Tensor random_frames(int n, int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  return random_tensor<float>({n, 3, h, w}, rng);
}

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("sgd_step semantics") {
  {
    Tensor p = Tensor::from_data({2}, {1.0f, -2.0f});
    Tensor g = Tensor::from_data({2}, {0.5f, 0.25f});
    Tensor v({2});
    sgd_step(p, g, v, 0.1f, 0.0f, 0.0f);
    CHECK(p[0] == doctest::Approx(1.0 - 0.1 * 0.5));
    CHECK(p[1] == doctest::Approx(-2.0 - 0.1 * 0.25));
  }
  {
    Tensor p = Tensor::from_data({1}, {3.0f});
    Tensor g = Tensor::from_data({1}, {7.0f});
    Tensor v({1});
    sgd_step(p, g, v, 0.0f, 0.9f, 0.0f);
    CHECK(p[0] == 3.0f);
  }
  {
    // два steps with momentum 0.9, no decay, constant grad g:
    // v1 = g, p1 = p0 - lr g; v2 = 0.9 g + g, p2 = p1 - lr (1.9 g).
    Tensor p = Tensor::from_data({1}, {1.0f});
    Tensor g = Tensor::from_data({1}, {2.0f});
    Tensor v({1});
    sgd_step(p, g, v, 0.1f, 0.9f, 0.0f);
    sgd_step(p, g, v, 0.1f, 0.9f, 0.0f);
    CHECK(p[0] == doctest::Approx(1.0 - 0.1 * 2.0 - 0.1 * 1.9 * 2.0).epsilon(1e-6));
  }
  {
    Tensor p = Tensor::from_data({1}, {1.0f});
    Tensor g = Tensor::from_data({1}, {std::numeric_limits<float>::quiet_NaN()});
    Tensor v({1});
    CHECK_THROWS_AS(sgd_step(p, g, v, 0.1f, 0.9f, 1e-4f), Error);
  }
}

TEST_CASE("poly_lr schedule") {
  CHECK(poly_lr(1e-3, 0.9, 0, 100) == doctest::Approx(1e-3));
  CHECK(poly_lr(1e-3, 0.9, 100, 100) == doctest::Approx(0.0));
  CHECK(poly_lr(1e-3, 0.9, 50, 100) == doctest::Approx(5.358867312681466e-4).epsilon(1e-12));
  CHECK_THROWS_AS(poly_lr(1e-3, 0.9, 0, 0), Error);
  double prev = poly_lr(1e-3, 0.9, 0, 37);
  for (long i = 1; i <= 37; ++i) {
    const double cur = poly_lr(1e-3, 0.9, i, 37);
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("backbone shape law and determinism") {
  BackboneConfig cfg = BackboneConfig::desk();
  auto net = build_backbone<float>(cfg, 5);
  validate_channels(net);
  Tape tape;
  tape.set_recording(false);
  auto y = backbone_forward(tape, net, tape.constant(random_frames(1, 64, 64, 1)), false);
  CHECK(y.tensor.shape() == Shape{1, 128, 8, 8});
  auto y97 = backbone_forward(tape, net, tape.constant(random_frames(1, 97, 97, 2)), false);
  CHECK(y97.tensor.shape() == Shape{1, 128, 13, 13});  // ceil(97/8)

  BackboneConfig cfg16 = cfg;
  cfg16.output_stride = 16;
  auto net16 = build_backbone<float>(cfg16, 5);
  auto z = backbone_forward(tape, net16, tape.constant(random_frames(1, 64, 64, 1)), false);
  CHECK(z.tensor.shape() == Shape{1, 128, 4, 4});

  auto net_b = build_backbone<float>(cfg, 5);
  auto pa = param_snapshot(net), pb = param_snapshot(net_b);
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(bitwise_equal(pa[i], pb[i]));
  auto net_c = build_backbone<float>(cfg, 6);
  auto pc = param_snapshot(net_c);
  CHECK(!bitwise_equal(pa[0], pc[0]));
}

TEST_CASE("backbone parameter count matches layer-by-layer arithmetic") {
  BackboneConfig cfg = BackboneConfig::desk();
  auto net = build_backbone<float>(cfg, 1);
  // Independent sum straight from the layer specs.
  std::int64_t expect = 0;
  auto conv = [](std::int64_t ci, std::int64_t co, std::int64_t k) { return co * ci * k * k; };
  auto bn = [](std::int64_t c) { return 2 * c; };
  expect += conv(3, 16, 3) + bn(16);
  std::int64_t in = 16;
  const std::int64_t widths[4] = {16, 32, 64, 128};
  for (int s = 0; s < 4; ++s) {
    const std::int64_t w = widths[s];
    for (int b = 0; b < 2; ++b) {
      expect += conv(in, w, 3) + bn(w) + conv(w, w, 3) + bn(w);
      const bool proj = b == 0 && (in != w || (s == 1 || s == 2));  // stride-2 stages 2,3
      if (proj) expect += conv(in, w, 1) + bn(w);
      in = w;
    }
  }
  CHECK(count_params(net) == expect);
}

TEST_CASE("tensor store roundtrip, file size law, corruption errors") {
  Rng rng(77);
  TensorStore store;
  Tensor a = random_tensor<float>({3, 4, 2, 2}, rng);
  TensorD b = random_tensor<double>({5}, rng);
  TensorT<int> c = TensorT<int>::from_data({3}, {7, -2, 100000});
  std::vector<std::uint8_t> meta{1, 2, 3, 250};
  store.put_f32("alpha", a);
  store.put_f64("beta", b);
  store.put_i32("gamma", c);
  store.put_bytes("__meta__", meta);

  const std::string path = tmp_path("bgcut_store_test.bgct");
  store.save(path);
  CHECK(std::filesystem::file_size(path) == store.predicted_file_size());

  TensorStore loaded = TensorStore::load(path);
  CHECK(loaded.names() == std::vector<std::string>{"alpha", "beta", "gamma", "__meta__"});
  CHECK(bitwise_equal(loaded.get_f32("alpha"), a));
  CHECK(bitwise_equal(loaded.get_f64("beta"), b));
  CHECK(bitwise_equal(loaded.get_i32("gamma"), c));
  CHECK(loaded.get_bytes("__meta__") == meta);

  auto corrupt = [&](std::size_t pos, std::uint8_t val, const std::string& suffix) {
    std::ifstream in(path, std::ios::binary);
    std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    buf[pos] = static_cast<char>(val);
    const std::string p2 = tmp_path("bgcut_store_" + suffix + ".bgct");
    std::ofstream out(p2, std::ios::binary);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    return p2;
  };

  try {
    TensorStore::load(corrupt(0, 'X', "magic"));
    FAIL("expected bad_magic");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::bad_magic);
  }
  try {
    TensorStore::load(corrupt(4, 99, "version"));
    FAIL("expected bad_version");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::bad_version);
  }
  try {
    // Flip one payload byte: structure parses, checksum must catch it.
    TensorStore::load(corrupt(std::filesystem::file_size(path) - 10, 0xAB, "payload"));
    FAIL("expected bad_checksum");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::bad_checksum);
  }
  {
    std::ifstream in(path, std::ios::binary);
    std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::string p2 = tmp_path("bgcut_store_trunc.bgct");
    std::ofstream out(p2, std::ios::binary);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size() / 2));
    out.close();
    try {
      TensorStore::load(p2);
      FAIL("expected truncated");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::truncated);
    }
  }
}

TEST_CASE("stage1 checkpoint roundtrip is forward-bitwise") {
  auto m = build_stage1<float>(tiny_config(), 21);
  const std::string path = tmp_path("bgcut_stage1.bgct");
  save_stage1(m, path);
  Stage1Model loaded = load_stage1(path);

  Tensor x = random_frames(2, 33, 33, 9);
  Tape tape;
  tape.set_recording(false);
  auto y1 = stage1_scores(tape, m, tape.constant(x), false);
  auto y2 = stage1_scores(tape, loaded, tape.constant(x), false);
  CHECK(bitwise_equal(y1.tensor, y2.tensor));
  CHECK(checkpoint_kind(path) == "stage1");
}

TEST_CASE("stage1 scores shape and head wiring") {
  auto m = build_stage1<float>(tiny_config(), 3);
  Tape tape;
  tape.set_recording(false);
  auto y = stage1_scores(tape, m, tape.constant(random_frames(1, 40, 56, 4)), false);
  CHECK(y.tensor.shape() == Shape{1, 2, 40, 56});
}

TEST_CASE("attenuation model: shapes, batch equivalence, bg feature laws") {
  AttenuationConfig ac;
  auto model = build_attenuation<float>(tiny_config(), ac, 31);
  const int h = 33, w = 41;

  std::vector<Tensor> bg_frames;
  for (int i = 0; i < 3; ++i) bg_frames.push_back(random_frames(1, h, w, 100 + static_cast<std::uint64_t>(i)));
  GlobalBackgroundFeature feat = compute_bg_global_feature(model, bg_frames);
  CHECK(feat.vec.shape() == Shape{1, model.bg_channels(), 1, 1});
  CHECK(feat.sample_count == 3);

  // Mean of per-sample features, computed one sample at a time.
  Tensor acc({1, model.bg_channels(), 1, 1});
  for (const auto& f : bg_frames) {
    GlobalBackgroundFeature single = compute_bg_global_feature(model, {f});
    axpy(1.0f / 3.0f, single.vec, acc);
  }
  CHECK(max_abs_diff(acc, feat.vec) < 1e-6f);

  // Order invariance.
  GlobalBackgroundFeature perm =
      compute_bg_global_feature(model, {bg_frames[2], bg_frames[0], bg_frames[1]});
  CHECK(max_abs_diff(perm.vec, feat.vec) < 1e-6f);

  CHECK_THROWS_AS(compute_bg_global_feature(model, {}), Error);

  Tensor frame = random_frames(1, h, w, 55);
  Tensor s1 = attenuation_forward(model, frame, feat);
  CHECK(s1.shape() == Shape{1, 2, h, w});
  Tensor s1b = attenuation_forward(model, frame, feat);
  CHECK(bitwise_equal(s1, s1b));

  std::vector<Tensor> window;
  for (int i = 0; i < 5; ++i) window.push_back(random_frames(1, h, w, 200 + static_cast<std::uint64_t>(i)));
  std::vector<Tensor> batch = attenuation_forward_batch(model, window, feat);
  REQUIRE(batch.size() == 5);
  for (int i = 0; i < 5; ++i) {
    Tensor single = attenuation_forward(model, window[static_cast<std::size_t>(i)], feat);
    CHECK(max_abs_diff(single, batch[static_cast<std::size_t>(i)]) < 1e-5f);
  }

  // Stale feature detection after bg-path parameters change.
  model.bg_backbone.stem.w.value[0] += 0.5f;
  try {
    (void)attenuation_forward(model, frame, feat);
    FAIL("expected stale_feature");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::stale_feature);
  }
}

TEST_CASE("predict_mask argmax, ties, shift invariance") {
  Tensor s({1, 2, 2, 2});
  s.at(0, 0, 0, 0) = -1;
  s.at(0, 1, 0, 0) = 1;  // fg
  s.at(0, 0, 0, 1) = 2;
  s.at(0, 1, 0, 1) = 2;  // tie -> bg
  s.at(0, 0, 1, 0) = 3;
  s.at(0, 1, 1, 0) = -3;  // bg
  s.at(0, 0, 1, 1) = 0.25f;
  s.at(0, 1, 1, 1) = 0.5f;  // fg
  Mask m = predict_mask(s);
  CHECK(m[0] == 1);
  CHECK(m[1] == 0);
  CHECK(m[2] == 0);
  CHECK(m[3] == 1);

  // Equal per-pixel shift of both channels leaves the mask unchanged.
  Tensor shifted = s.clone();
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) {
      const float d = static_cast<float>(y * 2 + x) * 1.75f - 2.0f;
      shifted.at(0, 0, y, x) += d;
      shifted.at(0, 1, y, x) += d;
    }
  Mask m2 = predict_mask(shifted);
  CHECK(bitwise_equal(m, m2));

  Rng rng(8);
  Tensor r = random_tensor<float>({1, 2, 9, 7}, rng);
  Mask mr = predict_mask(r);
  for (int y = 0; y < 9; ++y)
    for (int x = 0; x < 7; ++x) {
      const bool fg = r.at(0, 1, y, x) > r.at(0, 0, y, x);
      CHECK(mr[static_cast<std::int64_t>(y) * 7 + x] == (fg ? 1 : 0));
    }
}

TEST_CASE("stage2 checkpoint roundtrip is forward-bitwise") {
  auto stage1 = build_stage1<float>(tiny_config(), 11);
  AttenuationConfig ac;
  AttenuationModel attn = build_attenuation_from_stage1(stage1, ac, 12);
  RefinementConfig rc;
  rc.n = 1;
  rc.encoder_channels = {8, 12, 16};
  RefinementModel rnet = build_refinement<float>(rc, 13);

  const std::string path = tmp_path("bgcut_stage2.bgct");
  save_stage2(attn, rnet, path);
  CHECK(checkpoint_kind(path) == "stage2");
  Stage2Checkpoint loaded = load_stage2(path);

  const int h = 24, wd = 24;
  std::vector<Tensor> bg = {random_frames(1, h, wd, 61)};
  GlobalBackgroundFeature f1 = compute_bg_global_feature(attn, bg);
  GlobalBackgroundFeature f2 = compute_bg_global_feature(loaded.attn, bg);
  CHECK(bitwise_equal(f1.vec, f2.vec));
  Tensor frame = random_frames(1, h, wd, 62);
  CHECK(bitwise_equal(attenuation_forward(attn, frame, f1),
                      attenuation_forward(loaded.attn, frame, f2)));

  ScoreStack stack;
  Rng srng(70);
  for (int i = 0; i < 3; ++i) {
    stack.scores.push_back(random_tensor<float>({1, 2, h, wd}, srng));
    stack.guidance.push_back(random_frames(1, h, wd, 80 + static_cast<std::uint64_t>(i)));
  }
  stack.center_index = 1;
  CHECK(bitwise_equal(refine(rnet, stack), refine(loaded.refine, stack)));
}

TEST_CASE("refinement: channels, shapes, skip wiring, odd sizes") {
  RefinementConfig rc;
  CHECK(rc.input_channels() == 25);  // (2n+1)*2 + (2n+1)*3 with n=2
  rc.n = 0;
  CHECK(rc.input_channels() == 5);
  rc.n = 2;
  rc.center_only_guidance = true;
  CHECK(rc.input_channels() == 13);
  rc.center_only_guidance = false;
  rc.guidance = false;
  CHECK(rc.input_channels() == 10);

  RefinementConfig full;
  auto model = build_refinement<float>(full, 17);
  Rng rng(18);
  Tensor x = random_tensor<float>({1, 25, 64, 64}, rng);
  Tape tape;
  tape.set_recording(false);
  auto y = refinement_forward(tape, model, tape.constant(x), false);
  CHECK(y.tensor.shape() == Shape{1, 2, 64, 64});
  auto y2 = refinement_forward(tape, model, tape.constant(x), false);
  CHECK(bitwise_equal(y.tensor, y2.tensor));

  // Same weights without the fusion links must change the output.
  RefinementModel nofuse = model;
  nofuse.config.skip_fusion = false;
  auto y3 = refinement_forward(tape, nofuse, tape.constant(x), false);
  CHECK(!bitwise_equal(y.tensor, y3.tensor));

  Tensor odd = random_tensor<float>({1, 25, 29, 43}, rng);
  auto yo = refinement_forward(tape, model, tape.constant(odd), false);
  CHECK(yo.tensor.shape() == Shape{1, 2, 29, 43});
}

TEST_CASE("refinement input assembly matches window-major batch reshape") {
  RefinementConfig rc;
  rc.n = 1;
  const int h = 8, w = 6;
  Rng rng(91);
  ScoreStack stack;
  for (int j = 0; j < 3; ++j) {
    stack.scores.push_back(random_tensor<float>({1, 2, h, w}, rng));
    stack.guidance.push_back(random_tensor<float>({1, 3, h, w}, rng));
  }
  stack.center_index = 1;
  Tensor assembled = assemble_refinement_input(rc, stack);
  REQUIRE(assembled.shape() == Shape{1, 15, h, w});

  // The stage-2 trick: stack window tensors along N, then view as channels.
  Tensor sb({3, 2, h, w});
  Tensor gb({3, 3, h, w});
  for (int j = 0; j < 3; ++j) {
    std::copy(stack.scores[static_cast<std::size_t>(j)].data(),
              stack.scores[static_cast<std::size_t>(j)].data() + 2 * h * w, sb.data() + j * 2 * h * w);
    std::copy(stack.guidance[static_cast<std::size_t>(j)].data(),
              stack.guidance[static_cast<std::size_t>(j)].data() + 3 * h * w, gb.data() + j * 3 * h * w);
  }
  Tape tape;
  tape.set_recording(false);
  auto both = tape.concat_channels(
      {tape.constant(sb.reshaped({1, 6, h, w})), tape.constant(gb.reshaped({1, 9, h, w}))});
  CHECK(bitwise_equal(assembled, both.tensor));
}

TEST_CASE("refinement end-to-end gradient check") {
  RefinementConfig rc;
  rc.n = 0;
  rc.encoder_channels = {4, 6, 8};
  auto model = build_refinement<float>(rc, 23);
  auto dmodel = cast_refinement<double>(model);
  Rng rng(24);
  VariableT<double> vx(random_tensor<double>({1, rc.input_channels(), 16, 16}, rng));
  TensorD target = random_tensor<double>({1, 2, 16, 16}, rng, 0.0, 1.0);

  std::vector<VariableT<double>*> params{&vx};
  visit_params<double>(dmodel, "", [&](const std::string&, VariableT<double>& v) { params.push_back(&v); });

  auto res = grad_check(params, [&](TapeD& t) {
    auto y = refinement_forward(t, dmodel, t.leaf(vx), true);
    return t.l2_loss(t.softmax_channel(y), target);
  }, 1e-4, 6);
  CHECK(res.max_rel < 1e-3);
  CHECK(res.checked >= 20);
}

TEST_CASE("rank_filters ordering and tie rule") {
  {
    Tensor w({2, 1, 2, 2});
    for (int i = 0; i < 4; ++i) w[i] = 0.025f;       // filter 0: L1 0.1
    for (int i = 4; i < 8; ++i) w[i] = 1.25f;        // filter 1: L1 5.0
    auto order = rank_filters(w);
    CHECK(order == std::vector<int>{0, 1});
  }
  {
    Tensor w = Tensor::full({4, 2, 1, 1}, 0.5f);
    CHECK(rank_filters(w) == std::vector<int>{0, 1, 2, 3});
  }
  Rng rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    std::uniform_int_distribution<int> dc(2, 9);
    const int c = dc(rng);
    Tensor w = random_tensor<float>({c, dc(rng), 3, 3}, rng);
    auto order = rank_filters(w);
    // Brute-force per-filter |w| sums.
    std::vector<double> sums(static_cast<std::size_t>(c), 0.0);
    const std::int64_t per = w.size() / c;
    for (int f = 0; f < c; ++f)
      for (std::int64_t i = 0; i < per; ++i)
        sums[static_cast<std::size_t>(f)] += std::abs(static_cast<double>(w[f * per + i]));
    for (int i = 0; i + 1 < c; ++i)
      CHECK(sums[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] <=
            sums[static_cast<std::size_t>(order[static_cast<std::size_t>(i + 1)])]);
  }
}

TEST_CASE("prune_step: no-op at ratio 1, exact counts at 0.9, rewiring stays valid") {
  BackboneConfig cfg = BackboneConfig::desk();
  cfg.input_hint_h = cfg.input_hint_w = 33;
  auto model = build_stage1<float>(cfg, 51);
  Tensor x = random_frames(1, 33, 33, 5);

  Tape tape;
  tape.set_recording(false);
  Tensor before = stage1_scores(tape, model, tape.constant(x), false).tensor;
  prune_step(model, 1.0);
  Tensor after = stage1_scores(tape, model, tape.constant(x), false).tensor;
  CHECK(bitwise_equal(before, after));

  const std::int64_t p0 = count_params(model);
  const auto counts0 = filter_counts(model);
  prune_step(model, 0.9);
  const auto counts1 = filter_counts(model);
  REQUIRE(counts0.size() == counts1.size());
  for (std::size_t i = 0; i < counts1.size(); ++i) {
    // All desk widths are 16/32/64/128; one step keeps ceil(0.9 c), so 64 -> 58.
    const int c = counts0[i].after;
    CHECK((c == 16 || c == 32 || c == 64 || c == 128));
    CHECK(counts1[i].after == static_cast<int>(std::ceil(0.9 * c)));
    if (c == 64) CHECK(counts1[i].after == 58);
  }
  CHECK(count_params(model) < p0);
  Tensor pruned = stage1_scores(tape, model, tape.constant(x), false).tensor;
  CHECK(pruned.shape() == before.shape());
  CHECK(pruned.all_finite());
}

TEST_CASE("prune_step handles untied stem and output-stride-16 variants") {
  {
    BackboneConfig cfg = tiny_config();
    cfg.stem_channels = 20;  // != stage 1 width, so stage 1 starts with a projection
    auto model = build_stage1<float>(cfg, 52);
    REQUIRE(model.backbone.stages[0][0].has_proj());
    prune_step(model, 0.9);
    CHECK(model.backbone.stem.out_channels() == 18);  // pruned as its own group
    validate_channels(model.backbone);
    Tape tape;
    tape.set_recording(false);
    Tensor y = stage1_scores(tape, model, tape.constant(random_frames(1, 33, 33, 3)), false).tensor;
    CHECK(y.all_finite());
  }
  {
    BackboneConfig cfg = tiny_config();
    cfg.output_stride = 16;
    auto model = build_stage1<float>(cfg, 53);
    prune_step(model, 0.9);
    validate_channels(model.backbone);
    Tape tape;
    tape.set_recording(false);
    Tensor y = stage1_scores(tape, model, tape.constant(random_frames(1, 33, 33, 3)), false).tensor;
    CHECK(y.all_finite());
  }
}

TEST_CASE("15-step schedule follows the integer recurrence exactly") {
  BackboneConfig cfg = BackboneConfig::desk();
  cfg.input_hint_h = cfg.input_hint_w = 17;
  auto model = build_stage1<float>(cfg, 54);

  PruneSchedule sched;
  CHECK(sched.cumulative_keep_fraction() == doctest::Approx(std::pow(0.9, 15)).epsilon(1e-12));
  CHECK(sched.cumulative_keep_fraction() >= 0.18);
  CHECK(sched.cumulative_keep_fraction() <= 0.21);

  const auto initial = filter_counts(model);
  PruneReport report = prune_to_target(model, sched, nullptr);
  REQUIRE(report.steps.size() == 15);
  CHECK(!report.aborted);

  // Independent recurrence: c_{k+1} = ceil(0.9 c_k), applied 15 times.
  auto recurrence = [](int c) {
    for (int k = 0; k < 15; ++k) c = static_cast<int>(std::ceil(0.9 * static_cast<double>(c)));
    return c;
  };
  const auto final_counts = filter_counts(model);
  REQUIRE(final_counts.size() == initial.size());
  for (std::size_t i = 0; i < final_counts.size(); ++i) {
    CHECK(final_counts[i].after == recurrence(initial[i].before));
  }

  for (std::size_t k = 0; k < report.steps.size(); ++k) {
    CHECK(report.steps[k].params_after < report.steps[k].params_before);
    if (k > 0) CHECK(report.steps[k].params_before == report.steps[k - 1].params_after);
  }
  validate_channels(model.backbone);
}

TEST_CASE("prune_to_target: empty schedule, abort on bad finetune, pruned checkpoint io") {
  BackboneConfig cfg = tiny_config();
  auto model = build_stage1<float>(cfg, 55);
  Tensor x = random_frames(1, 33, 33, 6);
  Tape tape;
  tape.set_recording(false);
  Tensor before = stage1_scores(tape, model, tape.constant(x), false).tensor;

  PruneSchedule none;
  none.num_steps = 0;
  PruneReport r0 = prune_to_target(model, none, nullptr);
  CHECK(r0.steps.empty());
  CHECK(bitwise_equal(before, stage1_scores(tape, model, tape.constant(x), false).tensor));

  PruneSchedule two;
  two.num_steps = 5;
  int calls = 0;
  PruneReport ra = prune_to_target(model, two, [&](Stage1Model&, int) {
    ++calls;
    return calls >= 2 ? std::numeric_limits<double>::quiet_NaN() : 0.5;
  });
  CHECK(ra.aborted);
  CHECK(calls == 2);
  CHECK(ra.steps.size() == 2);

  // A pruned model must survive the checkpoint roundtrip bit-for-bit.
  const std::string path = tmp_path("bgcut_pruned.bgct");
  save_stage1(model, path);
  Stage1Model loaded = load_stage1(path);
  CHECK(bitwise_equal(stage1_scores(tape, model, tape.constant(x), false).tensor,
                      stage1_scores(tape, loaded, tape.constant(x), false).tensor));
}

TEST_CASE("attenuation and stage1 end-to-end gradient checks") {
  BackboneConfig cfg;
  cfg.stem_channels = 4;
  cfg.stage_channels = {4, 5, 6, 7};
  cfg.blocks_per_stage = {1, 1, 1, 1};
  auto s1f = build_stage1<float>(cfg, 61);
  Stage1ModelT<double> s1;
  s1.backbone = cast_backbone<double>(s1f.backbone);
  s1.head = cast_layer<double>(s1f.head);

  Rng rng(62);
  VariableT<double> vx(random_tensor<double>({2, 3, 17, 17}, rng));
  TensorT<int> labels({2, 17, 17});
  for (std::int64_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>((i / 3) % 2);

  std::vector<VariableT<double>*> params{&vx};
  visit_params<double>(s1, "", [&](const std::string&, VariableT<double>& v) { params.push_back(&v); });
  auto res = grad_check(params, [&](TapeD& t) {
    auto y = stage1_scores(t, s1, t.leaf(vx), true);
    return t.softmax_ce_loss(y, labels, 255);
  }, 1e-4, 4);
  CHECK(res.max_rel < 1e-3);

  AttenuationConfig ac;
  auto attnf = build_attenuation<float>(cfg, ac, 63);
  auto attn = cast_attenuation<double>(attnf);
  VariableT<double> frames(random_tensor<double>({2, 3, 17, 17}, rng));
  VariableT<double> bgf(random_tensor<double>({2, 3, 17, 17}, rng));
  std::vector<VariableT<double>*> params2{&frames, &bgf};
  visit_params<double>(attn, "", [&](const std::string&, VariableT<double>& v) { params2.push_back(&v); });
  auto res2 = grad_check(params2, [&](TapeD& t) {
    auto bg_feat = t.global_avg_pool(backbone_forward(t, attn.bg_backbone, t.leaf(bgf), true));
    auto y = attenuation_scores(t, attn, t.leaf(frames), bg_feat, true);
    return t.softmax_ce_loss(y, labels, 255);
  }, 1e-4, 4);
  CHECK(res2.max_rel < 1e-3);
}
