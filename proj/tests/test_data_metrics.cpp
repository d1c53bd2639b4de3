#include <set>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "bgcut/dataset.hpp"
#include "bgcut/metrics.hpp"
#include "doctest.h"
#include "json.hpp"
#include "test_support.hpp"

using namespace bgcut;
namespace fs = std::filesystem;

namespace {

Mask mask_of(int h, int w, const std::vector<int>& v) {
  Mask m({h, w});
  for (std::int64_t i = 0; i < m.size(); ++i) m[i] = static_cast<std::uint8_t>(v[static_cast<std::size_t>(i)]);
  return m;
}

std::string tmp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

SceneSpec small_spec(std::uint64_t seed) {
  SceneSpec s;
  s.clip_id = "clip_" + std::to_string(seed);
  s.frames = 3;
  s.bg_samples = 4;
  s.height = 96;
  s.width = 112;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("png roundtrip and strict mask decoding") {
  Rng rng(5);
  Image img = Image::make(21, 17, 3);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng() & 0xff);
  const std::string dir = tmp_dir("bgcut_png");
  write_png(dir + "/rgb.png", img);
  Image back = read_png(dir + "/rgb.png");
  CHECK(back.h == 21);
  CHECK(back.w == 17);
  CHECK(back.channels == 3);
  CHECK(back.pixels == img.pixels);

  Mask m({4, 5});
  for (std::int64_t i = 0; i < m.size(); ++i) m[i] = (i % 3 == 0) ? 1 : 0;
  write_mask(dir + "/m.png", m);
  CHECK(bitwise_equal(read_mask(dir + "/m.png"), m));

  Image gray = Image::make(2, 2, 1);
  gray.pixels = {0, 255, 7, 255};  // 7 is not a legal mask value
  write_png(dir + "/bad.png", gray);
  CHECK_THROWS_AS(read_mask(dir + "/bad.png"), Error);
  try {
    read_png(dir + "/absent.png");
    FAIL("expected io error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::io);
  }
}

TEST_CASE("frame tensor conversion endpoints and roundtrip") {
  Image img = Image::make(1, 3, 3);
  img.pixels = {0, 0, 0, 255, 255, 255, 128, 64, 191};
  Tensor t = frame_to_tensor(img);
  CHECK(t.shape() == Shape{1, 3, 1, 3});
  CHECK(t.at(0, 0, 0, 0) == doctest::Approx(-1.0));
  CHECK(t.at(0, 0, 0, 1) == doctest::Approx(1.0));
  CHECK(t.at(0, 0, 0, 2) == doctest::Approx(128.0 / 127.5 - 1.0));
  Image back = tensor_to_frame(t);
  CHECK(back.pixels == img.pixels);

  Rng rng(6);
  Image r = Image::make(9, 8, 3);
  for (auto& p : r.pixels) p = static_cast<std::uint8_t>(rng() & 0xff);
  CHECK(tensor_to_frame(frame_to_tensor(r)).pixels == r.pixels);
}

TEST_CASE("image bilinear resize: identity and hand table") {
  Image img = Image::make(2, 2, 1);
  img.pixels = {0, 60, 120, 180};
  Image same = resize_bilinear(img, 2, 2);
  CHECK(same.pixels == img.pixels);

  // Corner-aligned weights per axis: 0, 1/4, 3/4, 1. Hand-interpolated:
  // row0 = 0,15,45,60; row3 = 120,135,165,180; rows 1,2 mix them 3:1 and 1:3.
  Image up = resize_bilinear(img, 4, 4);
  const std::vector<std::uint8_t> expect{0,  15,  45,  60,  30,  45,  75,  90,
                                         90, 105, 135, 150, 120, 135, 165, 180};
  CHECK(up.pixels == expect);
}

TEST_CASE("file_crc32 matches the standard check value") {
  const std::string dir = tmp_dir("bgcut_crc");
  std::ofstream f(dir + "/check.bin", std::ios::binary);
  f << "123456789";
  f.close();
  CHECK(file_crc32(dir + "/check.bin") == 0xCBF43926u);
}

TEST_CASE("mean_iou: identity, complement, hand 2x2, aggregation invariance") {
  Mask a = mask_of(2, 2, {1, 1, 0, 0});
  Mask g = mask_of(2, 2, {1, 0, 0, 0});
  IouResult r = mean_iou({a}, {g});
  CHECK(r.iou(1) == doctest::Approx(0.5));      // fg: inter 1, union 2
  CHECK(r.iou(0) == doctest::Approx(2.0 / 3));  // bg: inter 2, union 3
  CHECK(r.mean() == doctest::Approx(7.0 / 12));

  CHECK(mean_iou({g}, {g}).mean() == doctest::Approx(1.0));
  Mask notg = mask_of(2, 2, {0, 1, 1, 1});
  IouResult rc = mean_iou({notg}, {g});
  CHECK(rc.iou(0) == doctest::Approx(0.0));
  CHECK(rc.iou(1) == doctest::Approx(0.0));

  // All-background everywhere: bg IoU 1 and the absent class scores 1.
  Mask zero = mask_of(2, 2, {0, 0, 0, 0});
  CHECK(mean_iou({zero}, {zero}).mean() == doctest::Approx(1.0));

  // Joint evaluation equals aggregating per-frame counts; order irrelevant.
  Rng rng(9);
  std::vector<Mask> pred, gt;
  for (int i = 0; i < 4; ++i) {
    Mask p({6, 7}), q({6, 7});
    for (std::int64_t k = 0; k < p.size(); ++k) {
      p[k] = rng() & 1;
      q[k] = rng() & 1;
    }
    pred.push_back(p);
    gt.push_back(q);
  }
  IouResult joint = mean_iou(pred, gt);
  IouResult acc;
  for (int i = 3; i >= 0; --i) {
    IouResult one = mean_iou({pred[static_cast<std::size_t>(i)]}, {gt[static_cast<std::size_t>(i)]});
    for (int c = 0; c < 2; ++c) {
      acc.intersection[c] += one.intersection[c];
      acc.union_[c] += one.union_[c];
    }
  }
  CHECK(joint.intersection[0] == acc.intersection[0]);
  CHECK(joint.union_[1] == acc.union_[1]);
  CHECK(joint.mean() == doctest::Approx(acc.mean()));

  CHECK_THROWS_AS(mean_iou({}, {}), Error);
  CHECK_THROWS_AS(mean_iou({a}, {mask_of(2, 2, {1, 0, 0, 0}), g}), Error);
}

TEST_CASE("band_iou: hand 5x5 shifted-edge case") {
  // gt foreground = columns 0..1, prediction = columns 0..2 (one-pixel shift).
  // gt boundary = columns 1,2; the width-1 band = columns 0..3, 20 pixels.
  // In band: fg inter 10 / union 15, bg inter 5 / union 10 -> mean 7/12.
  Mask gt({5, 5}), pred({5, 5});
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) {
      gt[static_cast<std::int64_t>(y) * 5 + x] = x <= 1 ? 1 : 0;
      pred[static_cast<std::int64_t>(y) * 5 + x] = x <= 2 ? 1 : 0;
    }
  IouResult r = band_iou({pred}, {gt}, 1);
  CHECK(r.iou(1) == doctest::Approx(2.0 / 3));
  CHECK(r.iou(0) == doctest::Approx(0.5));
  CHECK(r.mean() == doctest::Approx(7.0 / 12));
  // 15 matched band pixels; the 5 mismatches land in both class unions.
  CHECK(r.intersection[0] + r.intersection[1] == 15);
  CHECK(r.union_[0] + r.union_[1] == 25);
  CHECK(band_iou({gt}, {gt}, 1).mean() == doctest::Approx(1.0));
  CHECK(band_iou({gt}, {gt}, 3).mean() == doctest::Approx(1.0));
}

TEST_CASE("band_iou: wide band equals global iou, band growth is nested, empty band fails") {
  Rng rng(31);
  Mask gt({12, 15}), pred({12, 15});
  for (std::int64_t i = 0; i < gt.size(); ++i) {
    gt[i] = rng() % 4 == 0 ? 1 : 0;
    pred[i] = rng() % 4 == 0 ? 1 : 0;
  }
  IouResult wide = band_iou({pred}, {gt}, 30);  // width > diagonal
  IouResult global = mean_iou({pred}, {gt});
  CHECK(wide.mean() == doctest::Approx(global.mean()));
  CHECK(wide.intersection[0] == global.intersection[0]);
  CHECK(wide.union_[1] == global.union_[1]);

  for (int w = 1; w < 6; ++w) {
    Mask inner = boundary_band(gt, w), outer = boundary_band(gt, w + 1);
    for (std::int64_t i = 0; i < inner.size(); ++i)
      if (inner[i]) CHECK(outer[i]);
  }

  Mask flat({4, 4});
  CHECK_THROWS_AS(band_iou({flat}, {flat}, 1), Error);
  CHECK(boundary_of(flat).size() == 16);
}

TEST_CASE("blob geometry: closed-form area equals the polar integral") {
  BlobShape b;
  b.a = 17.5;
  b.b = 12.25;
  b.wobble = 0.14;
  b.lobes = 5;
  b.phase = 0.8;
  // Area in normalized coordinates is (1/2) int r(phi)^2 dphi, scaled by a*b.
  const int n = 200000;
  double acc = 0;
  for (int i = 0; i < n; ++i) {
    const double phi = 2.0 * 3.14159265358979323846 * (i + 0.5) / n;
    const double r = 1.0 + b.wobble * std::cos(b.lobes * phi + b.phase);
    acc += 0.5 * r * r;
  }
  const double numeric = acc * (2.0 * 3.14159265358979323846 / n) * b.a * b.b;
  CHECK(b.area() == doctest::Approx(numeric).epsilon(1e-9));

  b.cx = 50;
  b.cy = 40;
  CHECK(b.contains(50, 40));
  CHECK(!b.contains(50 + b.max_radius() + 1, 40));
  CHECK(pixel_coverage(b, 50, 40) == doctest::Approx(1.0));
  CHECK(pixel_coverage(b, 95, 40) == doctest::Approx(0.0));
}

TEST_CASE("rendered mask area tracks the analytic blob area within 2 percent") {
  for (std::uint64_t seed : {3u, 14u, 25u, 36u, 47u, 58u}) {
    SceneSpec s = small_spec(seed);
    s.height = 144;
    s.width = 176;
    for (int t = 0; t < s.frames; ++t) {
      RenderedFrame rf = render_frame(s, t);
      std::int64_t count = 0;
      for (std::int64_t i = 0; i < rf.mask.size(); ++i) count += rf.mask[i];
      CHECK(std::abs(count - rf.analytic_area) / rf.analytic_area < 0.02);
    }
  }
}

TEST_CASE("background samples are object-free when the distractor is off") {
  SceneSpec s = small_spec(71);
  s.distractor = false;
  // Warm pixels (R > B) only ever come from painted objects.
  for (int k = 0; k < s.bg_samples; ++k) {
    Image bg = render_bg_sample(s, k);
    int warm = 0;
    for (int y = 0; y < bg.h; ++y)
      for (int x = 0; x < bg.w; ++x)
        if (bg.at(y, x, 0) > bg.at(y, x, 2) + 8) ++warm;
    CHECK(warm == 0);
  }
  RenderedFrame rf = render_frame(s, 0);
  int warm = 0;
  for (int y = 0; y < rf.frame.h; ++y)
    for (int x = 0; x < rf.frame.w; ++x)
      if (rf.frame.at(y, x, 0) > rf.frame.at(y, x, 2) + 8) ++warm;
  CHECK(warm > 100);  // the foreground blob is present and warm

  // Unaligned offsets: samples differ from each other.
  CHECK(render_bg_sample(s, 0).pixels != render_bg_sample(s, 1).pixels);
}

TEST_CASE("dataset generation is byte-identical across runs and loads back") {
  std::vector<SceneSpec> specs{small_spec(81), small_spec(82)};
  specs[1].split = "test";
  const std::string dir_a = tmp_dir("bgcut_ds_a");
  const std::string dir_b = tmp_dir("bgcut_ds_b");
  auto ma = generate_dataset(specs, dir_a);
  auto mb = generate_dataset(specs, dir_b);
  REQUIRE(ma.size() == 2);

  int files = 0;
  for (const auto& entry : fs::recursive_directory_iterator(dir_a)) {
    if (!entry.is_regular_file()) continue;
    ++files;
    const std::string rel = fs::relative(entry.path(), dir_a).string();
    REQUIRE(fs::exists(fs::path(dir_b) / rel));
    CHECK(file_crc32(entry.path().string()) == file_crc32((fs::path(dir_b) / rel).string()));
    CHECK(fs::file_size(entry.path()) == fs::file_size(fs::path(dir_b) / rel));
  }
  // 2 clips x (3 frames + 3 masks + 4 bg) + 2 manifests
  CHECK(files == 2 * 10 + 2);

  DatasetManifest train = load_manifest(dir_a + "/train_manifest.json");
  CHECK(train.split == "train");
  REQUIRE(train.clips.size() == 1);
  CHECK(train.clips[0].frame_paths.size() == 3);
  CHECK(train.clips[0].bg_paths.size() == 4);

  std::vector<ClipData> clips = load_clips(train);
  REQUIRE(clips.size() == 1);
  CHECK(clips[0].frames.size() == 3);
  CHECK(clips[0].masks.size() == 3);
  CHECK(clips[0].bg.size() == 4);
  CHECK(clips[0].frames[0].h == 96);
  CHECK(clips[0].frames[0].w == 112);

  // Manifest checksums describe the files on disk.
  nlohmann::json j;
  std::ifstream(dir_a + "/train_manifest.json") >> j;
  for (const auto& [rel, crc] : j["clips"][0]["crc32"].items()) {
    CHECK(file_crc32((fs::path(dir_a) / rel).string()) == crc.get<std::uint32_t>());
  }

  // A missing referenced file turns into an io error on load.
  fs::remove(fs::path(dir_a) / train.clips[0].mask_paths[1]);
  try {
    load_manifest(dir_a + "/train_manifest.json");
    FAIL("expected io error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::io);
  }
}

TEST_CASE("ambiguity suite layout and determinism") {
  auto suite = make_ambiguity_suite(123);
  REQUIRE(suite.size() == 12);
  int train = 0, test = 0;
  std::set<std::uint64_t> seeds;
  for (const auto& s : suite) {
    (s.split == "train" ? train : test)++;
    seeds.insert(s.seed);
    CHECK(s.theta >= 114.0);
    CHECK(s.theta <= 206.0);
    CHECK(s.distractor);
    CHECK(s.texture_share == doctest::Approx(1.0));
    CHECK(s.bg_samples == 20);
  }
  CHECK(train == 8);
  CHECK(test == 4);
  CHECK(seeds.size() == 12);

  auto again = make_ambiguity_suite(123);
  for (std::size_t i = 0; i < suite.size(); ++i) {
    CHECK(suite[i].theta == again[i].theta);
    CHECK(suite[i].seed == again[i].seed);
  }
  auto other = make_ambiguity_suite(124);
  CHECK(other[0].seed != suite[0].seed);
}
