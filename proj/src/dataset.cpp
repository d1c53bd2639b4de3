#include "bgcut/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "bgcut/error.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace bgcut {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Procedural intensity field sampled at world coordinates.
struct TextureParams {
  int family = 0;
  double base = 60, amp = 18;
  double scale = 24, angle = 0.6, phase = 0;
};

double texture_intensity(const TextureParams& p, double x, double y) {
  const double u = std::cos(p.angle) * x + std::sin(p.angle) * y;
  const double v = -std::sin(p.angle) * x + std::cos(p.angle) * y;
  switch (p.family) {
    case 0:  // stripes
      return p.base + p.amp * std::sin(2 * kPi * u / p.scale + p.phase);
    case 1:  // checker
      return p.base +
             p.amp * (std::sin(kPi * u / p.scale + p.phase) * std::sin(kPi * v / p.scale) > 0
                          ? 1.0
                          : -1.0);
    default:  // layered waves
      return p.base + p.amp *
                          (std::sin(u / (p.scale * 0.31) + p.phase) +
                           std::sin(v / (p.scale * 0.23) + 2 * p.phase) +
                           std::sin((u + v) / (p.scale * 0.17))) /
                          3.0;
  }
}

// Everything a clip's renderer needs, derived from the spec seeds in one fixed
// draw order so frames can be rendered independently and in any order.
struct ClipParams {
  TextureParams bg;
  TextureParams paint;  // high-frequency overlay shared by both objects
  BlobShape fg_shape;
  BlobShape d_shape;
  double fg_phase_offset, d_phase_offset;  // paint alignment, glued to shapes
  double fg_x0, fg_y0, fg_x1, fg_y1;  // path endpoints, screen space
  double d_x0, d_y0, d_x1, d_y1;      // the distractor moves too
  double sway_amp, sway_freq, sway_phase;
  double jit_fx, jit_fy, jit_px, jit_py;  // camera sway frequencies and phases
};

// Centers fall back to the frame middle when the margin does not fit, so tiny
// scenes stay valid instead of feeding an inverted range to the distribution.
double place(Rng& rng, double margin, double extent) {
  return 2 * margin <= extent ? uniform(rng, margin, extent - margin) : extent / 2.0;
}

BlobShape draw_shape(Rng& rng) {
  BlobShape s;
  s.a = uniform(rng, 14, 21);
  s.b = uniform(rng, 12, 19);
  s.wobble = uniform(rng, 0.05, 0.16);
  s.lobes = 3 + static_cast<int>(rng() % 3);
  s.phase = uniform(rng, 0, 2 * kPi);
  return s;
}

ClipParams derive_clip_params(const SceneSpec& spec) {
  // Appearance (textures, shapes, paint alignment) and geometry (paths,
  // placements, camera phases) come from separate streams so that clips with
  // a shared appearance_seed look identical but move independently. With
  // appearance_seed == 0 both streams alias one generator, single-seed specs
  // then behave exactly as before the split.
  Rng g_rng(mix_seed(spec.seed, 0));
  Rng a_store(mix_seed(spec.appearance_seed, 0));
  Rng& a_rng = spec.appearance_seed ? a_store : g_rng;

  ClipParams p;
  p.bg.family = spec.bg_family;
  p.bg.base = uniform(a_rng, 45, 75);
  p.bg.amp = uniform(a_rng, 14, 22);
  p.bg.scale = uniform(a_rng, 18, 34);
  p.bg.angle = uniform(a_rng, 0, kPi);
  p.bg.phase = uniform(a_rng, 0, 2 * kPi);

  p.paint.family = 0;
  p.paint.base = 0;  // overlay only; theta supplies the base
  p.paint.amp = 10;
  p.paint.scale = uniform(a_rng, 5, 9);
  p.paint.angle = uniform(a_rng, 0, kPi);
  p.paint.phase = uniform(a_rng, 0, 2 * kPi);

  // Shapes and their paint alignments bind to the paint level (bright draws
  // first), and the sign of delta decides which level is the foreground. An
  // appearance twin with the opposite sign then shows the same blob at the
  // same intensity under the other label, so neither shape nor brightness
  // carries label information, only membership in the captured background.
  const BlobShape bright = draw_shape(a_rng);
  const BlobShape dark = draw_shape(a_rng);
  const double bright_off = uniform(a_rng, 0.0, 5.0);
  const double dark_off = uniform(a_rng, 0.0, 5.0);
  const bool fg_bright = spec.delta >= 0;
  p.fg_shape = fg_bright ? bright : dark;
  p.d_shape = fg_bright ? dark : bright;
  p.fg_phase_offset = fg_bright ? bright_off : dark_off;
  p.d_phase_offset = fg_bright ? dark_off : bright_off;

  p.sway_amp = uniform(g_rng, 1.0, 2.5);
  p.sway_freq = uniform(g_rng, 0.5, 1.1);
  p.sway_phase = uniform(g_rng, 0, 2 * kPi);
  const double mf = p.fg_shape.max_radius() + p.sway_amp + 3;
  p.fg_x0 = place(g_rng, mf, spec.width);
  p.fg_y0 = place(g_rng, mf, spec.height);
  p.fg_x1 = place(g_rng, mf, spec.width);
  p.fg_y1 = place(g_rng, mf, spec.height);

  // Margin ignores the unaligned component on purpose: background samples may
  // clip the object at the border, as handheld background captures do.
  const double md = p.d_shape.max_radius() + spec.jitter + 2;
  p.d_x0 = place(g_rng, md, spec.width);
  p.d_y0 = place(g_rng, md, spec.height);
  p.d_x1 = place(g_rng, md, spec.width);
  p.d_y1 = place(g_rng, md, spec.height);

  p.jit_fx = uniform(g_rng, 0.5, 0.9);
  p.jit_fy = uniform(g_rng, 0.5, 0.9);
  p.jit_px = uniform(g_rng, 0, 2 * kPi);
  p.jit_py = uniform(g_rng, 0, 2 * kPi);
  return p;
}

struct Vec2 {
  double x, y;
};

Vec2 camera_offset(const SceneSpec& spec, const ClipParams& p, int t) {
  return {spec.jitter * std::sin(p.jit_fx * t + p.jit_px),
          spec.jitter * std::cos(p.jit_fy * t + p.jit_py)};
}

Vec2 fg_center(const SceneSpec& spec, const ClipParams& p, int t) {
  const double u = spec.frames > 1 ? static_cast<double>(t) / (spec.frames - 1) : 0.0;
  return {p.fg_x0 + (p.fg_x1 - p.fg_x0) * u +
              p.sway_amp * std::sin(p.sway_freq * t + p.sway_phase),
          p.fg_y0 + (p.fg_y1 - p.fg_y0) * u +
              p.sway_amp * std::cos(p.sway_freq * t + p.sway_phase)};
}

// World position along the distractor path; u runs over [0, 1] with the clip
// and is drawn at random for background samples taken at other times.
Vec2 d_center(const ClipParams& p, double u) {
  return {p.d_x0 + (p.d_x1 - p.d_x0) * u, p.d_y0 + (p.d_y1 - p.d_y0) * u};
}

std::vector<float> coverage_map(const BlobShape& blob, int h, int w) {
  std::vector<float> cov(static_cast<std::size_t>(h) * w, 0.0f);
  const double r = blob.max_radius() + 1;
  const int x0 = std::max(0, static_cast<int>(std::floor(blob.cx - r)));
  const int x1 = std::min(w - 1, static_cast<int>(std::ceil(blob.cx + r)));
  const int y0 = std::max(0, static_cast<int>(std::floor(blob.cy - r)));
  const int y1 = std::min(h - 1, static_cast<int>(std::ceil(blob.cy + r)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      cov[static_cast<std::size_t>(y) * w + x] = static_cast<float>(pixel_coverage(blob, x, y));
  return cov;
}

std::uint8_t to_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

// Objects are warm, the plain background cool, so object-vs-background is
// easy; foreground-vs-distractor hinges on intensity relative to theta.
void warm_rgb(double i, double* rgb) {
  rgb[0] = i;
  rgb[1] = 0.8 * i;
  rgb[2] = 0.62 * i;
}

void cool_rgb(double j, double* rgb) {
  rgb[0] = 0.62 * j;
  rgb[1] = 0.8 * j;
  rgb[2] = j;
}

Image render_scene(const SceneSpec& spec, const ClipParams& p, Vec2 cam, bool with_fg,
                   int t, double d_u, Rng& noise_rng, Mask* mask_out, double* area_out) {
  const int h = spec.height, w = spec.width;
  Image img = Image::make(h, w, 3);

  std::vector<float> fg_cov, d_cov;
  BlobShape fg = p.fg_shape;
  if (with_fg) {
    const Vec2 c = fg_center(spec, p, t);
    fg.cx = c.x;
    fg.cy = c.y;
    fg_cov = coverage_map(fg, h, w);
  }
  BlobShape dis = p.d_shape;
  if (spec.distractor) {
    const Vec2 c = d_center(p, d_u);
    dis.cx = c.x - cam.x;
    dis.cy = c.y - cam.y;
    d_cov = coverage_map(dis, h, w);
  }

  const double fg_paint = spec.theta + spec.delta;
  const double d_paint =
      (1.0 - spec.texture_share) * 140.0 + spec.texture_share * (spec.theta - spec.delta);

  std::normal_distribution<double> noise(0.0, spec.noise_sigma);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double rgb[3];
      cool_rgb(texture_intensity(p.bg, x + cam.x, y + cam.y), rgb);
      if (spec.distractor) {
        const double c = d_cov[static_cast<std::size_t>(y) * w + x];
        if (c > 0) {
          double obj[3];
          warm_rgb(d_paint + texture_intensity(p.paint, x - dis.cx + p.d_phase_offset,
                                               y - dis.cy - p.d_phase_offset),
                   obj);
          for (int k = 0; k < 3; ++k) rgb[k] = (1 - c) * rgb[k] + c * obj[k];
        }
      }
      if (with_fg) {
        const double c = fg_cov[static_cast<std::size_t>(y) * w + x];
        if (c > 0) {
          double obj[3];
          warm_rgb(fg_paint + texture_intensity(p.paint, x - fg.cx + p.fg_phase_offset,
                                                y - fg.cy - p.fg_phase_offset),
                   obj);
          for (int k = 0; k < 3; ++k) rgb[k] = (1 - c) * rgb[k] + c * obj[k];
        }
      }
      for (int k = 0; k < 3; ++k)
        img.at(y, x, k) = to_u8(rgb[k] + (spec.noise_sigma > 0 ? noise(noise_rng) : 0.0));
    }
  }

  if (mask_out) {
    Mask m({h, w});
    for (std::int64_t i = 0; i < m.size(); ++i)
      m[i] = with_fg && fg_cov[static_cast<std::size_t>(i)] > 0.5f ? 1 : 0;
    *mask_out = m;
  }
  if (area_out) *area_out = with_fg ? fg.area() : 0.0;
  return img;
}

std::string num4(int v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d", v);
  return buf;
}

}  // namespace

double BlobShape::area() const { return kPi * a * b * (1.0 + wobble * wobble / 2.0); }

bool BlobShape::contains(double x, double y) const {
  const double u = (x - cx) / a, v = (y - cy) / b;
  const double r2 = u * u + v * v;
  const double lim = 1.0 + wobble * std::cos(lobes * std::atan2(v, u) + phase);
  return r2 <= lim * lim;
}

double pixel_coverage(const BlobShape& blob, int x, int y) {
  int inside = 0;
  for (int sy = 0; sy < 4; ++sy)
    for (int sx = 0; sx < 4; ++sx)
      if (blob.contains(x + (sx + 0.5) / 4.0, y + (sy + 0.5) / 4.0)) ++inside;
  return inside / 16.0;
}

RenderedFrame render_frame(const SceneSpec& spec, int t) {
  require(t >= 0 && t < spec.frames, Errc::invalid_argument, "render_frame: frame index");
  const ClipParams p = derive_clip_params(spec);
  Rng noise_rng(mix_seed(spec.seed, 1000 + static_cast<std::uint64_t>(t)));
  const double u = spec.frames > 1 ? static_cast<double>(t) / (spec.frames - 1) : 0.0;
  RenderedFrame out;
  out.frame = render_scene(spec, p, camera_offset(spec, p, t), true, t, u, noise_rng,
                           &out.mask, &out.analytic_area);
  return out;
}

Image render_bg_sample(const SceneSpec& spec, int k) {
  require(k >= 0 && k < spec.bg_samples, Errc::invalid_argument, "render_bg_sample: index");
  const ClipParams p = derive_clip_params(spec);
  Rng rng(mix_seed(spec.seed, 2000000 + static_cast<std::uint64_t>(k)));
  const double amp = spec.jitter + spec.unaligned_jitter;
  Vec2 cam{uniform(rng, -amp, amp), uniform(rng, -amp, amp)};
  const double u = uniform(rng, 0.0, 1.0);
  return render_scene(spec, p, cam, false, 0, u, rng, nullptr, nullptr);
}

std::vector<DatasetManifest> generate_dataset(const std::vector<SceneSpec>& specs,
                                              const std::string& out_dir) {
  require(!specs.empty(), Errc::empty_input, "generate_dataset: no scene specs");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  require(!ec, Errc::io, "generate_dataset: cannot create " + out_dir);

  std::map<std::string, DatasetManifest> by_split;
  std::map<std::string, nlohmann::json> json_by_split;

  for (const SceneSpec& spec : specs) {
    const fs::path clip_dir = fs::path(out_dir) / spec.clip_id;
    fs::create_directories(clip_dir, ec);
    require(!ec, Errc::io, "generate_dataset: cannot create " + clip_dir.string());

    ClipManifest cm;
    cm.clip_id = spec.clip_id;
    cm.split = spec.split;
    nlohmann::json crcs = nlohmann::json::object();

    auto emit = [&](const Image& img, const std::string& stem, std::vector<std::string>& list) {
      const std::string rel = spec.clip_id + "/" + stem + ".png";
      const std::string abs = (fs::path(out_dir) / rel).string();
      write_png(abs, img);
      list.push_back(rel);
      crcs[rel] = file_crc32(abs);
    };

    for (int t = 0; t < spec.frames; ++t) {
      RenderedFrame rf = render_frame(spec, t);
      emit(rf.frame, "frame_" + num4(t), cm.frame_paths);
      emit(mask_to_image(rf.mask), "mask_" + num4(t), cm.mask_paths);
    }
    for (int k = 0; k < spec.bg_samples; ++k)
      emit(render_bg_sample(spec, k), "bg_" + num4(k), cm.bg_paths);

    DatasetManifest& dm = by_split[spec.split];
    dm.split = spec.split;
    dm.base_dir = out_dir;
    dm.clips.push_back(cm);

    nlohmann::json jc{{"id", cm.clip_id},
                      {"frames", cm.frame_paths},
                      {"masks", cm.mask_paths},
                      {"bg", cm.bg_paths},
                      {"crc32", crcs}};
    json_by_split[spec.split]["clips"].push_back(jc);
  }

  std::vector<DatasetManifest> out;
  for (auto& [split, dm] : by_split) {
    nlohmann::json j = json_by_split[split];
    j["split"] = split;
    const std::string path = (fs::path(out_dir) / (split + "_manifest.json")).string();
    std::ofstream f(path);
    require(f.good(), Errc::io, "generate_dataset: cannot write " + path);
    f << j.dump(2) << "\n";
    out.push_back(std::move(dm));
  }
  return out;
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), Errc::io, "load_manifest: cannot open " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    fail(Errc::io, "load_manifest: bad JSON in " + path + ": " + e.what());
  }
  DatasetManifest dm;
  dm.base_dir = fs::path(path).parent_path().string();
  if (dm.base_dir.empty()) dm.base_dir = ".";
  dm.split = j.value("split", "");
  for (const auto& jc : j.at("clips")) {
    ClipManifest cm;
    cm.clip_id = jc.at("id").get<std::string>();
    cm.split = dm.split;
    cm.frame_paths = jc.at("frames").get<std::vector<std::string>>();
    cm.mask_paths = jc.at("masks").get<std::vector<std::string>>();
    cm.bg_paths = jc.at("bg").get<std::vector<std::string>>();
    require(cm.frame_paths.size() == cm.mask_paths.size(), Errc::invalid_argument,
            "load_manifest: frame/mask count mismatch in clip " + cm.clip_id);
    for (const auto* list : {&cm.frame_paths, &cm.mask_paths, &cm.bg_paths})
      for (const std::string& rel : *list)
        require(fs::exists(fs::path(dm.base_dir) / rel), Errc::io,
                "load_manifest: missing file " + rel + " referenced by " + path);
    dm.clips.push_back(std::move(cm));
  }
  return dm;
}

ClipData load_clip(const DatasetManifest& manifest, const ClipManifest& clip) {
  ClipData data;
  data.clip_id = clip.clip_id;
  auto abs = [&](const std::string& rel) {
    return (fs::path(manifest.base_dir) / rel).string();
  };
  for (const auto& rel : clip.frame_paths) data.frames.push_back(read_png(abs(rel)));
  for (const auto& rel : clip.mask_paths) data.masks.push_back(read_mask(abs(rel)));
  for (const auto& rel : clip.bg_paths) data.bg.push_back(read_png(abs(rel)));
  require(!data.frames.empty(), Errc::empty_input, "load_clip: no frames in " + clip.clip_id);
  const int h = data.frames[0].h, w = data.frames[0].w;
  for (const auto& f : data.frames)
    require(f.h == h && f.w == w && f.channels == 3, Errc::shape_mismatch,
            "load_clip: frame dimensions differ in " + clip.clip_id);
  for (const auto& m : data.masks)
    require(m.shape() == Shape{h, w}, Errc::shape_mismatch,
            "load_clip: mask dimensions differ in " + clip.clip_id);
  for (const auto& b : data.bg)
    require(b.h == h && b.w == w && b.channels == 3, Errc::shape_mismatch,
            "load_clip: background sample dimensions differ in " + clip.clip_id);
  return data;
}

std::vector<ClipData> load_clips(const DatasetManifest& manifest) {
  std::vector<ClipData> out;
  for (const auto& c : manifest.clips) out.push_back(load_clip(manifest, c));
  return out;
}

std::vector<SceneSpec> make_ambiguity_suite(std::uint64_t seed) {
  std::vector<SceneSpec> specs;
  Rng rng(mix_seed(seed, 7));
  auto add = [&](const std::string& split, int idx, double theta, double delta,
                 std::uint64_t app) {
    SceneSpec s;
    s.clip_id = split + "_" + num4(idx);
    s.split = split;
    s.bg_family = (idx / 2) % 3;
    s.theta = theta;
    s.delta = delta;
    s.seed = mix_seed(seed, (split == "train" ? 100 : 200) + static_cast<std::uint64_t>(idx));
    s.appearance_seed = app;
    specs.push_back(s);
  };
  // Train clips come in appearance twins: the pair shares theta, |delta| and
  // the appearance seed, so both members show the exact same background
  // texture and the same two painted blobs, but with the foreground role
  // swapped and with independent placements and motion. No appearance or
  // position rule fits both members; only the captured background samples,
  // which contain the distractor and not the foreground, tell them apart.
  for (int k = 0; k < 4; ++k) {
    const double theta = 130.0 + 60.0 * k / 3.0 + uniform(rng, -4, 4);
    const double mag = uniform(rng, 22, 28);
    const std::uint64_t app = mix_seed(seed, 300 + static_cast<std::uint64_t>(k));
    add("train", 2 * k, theta, mag, app);
    add("train", 2 * k + 1, theta, -mag, app);
  }
  // Test thetas interleave between the train ones, signs balanced, appearances
  // drawn fresh from each clip's own seed.
  for (int i = 0; i < 4; ++i)
    add("test", i, 140.0 + 20.0 * i + uniform(rng, -4, 4),
        (i % 2 ? -1.0 : 1.0) * uniform(rng, 22, 28), 0);
  return specs;
}

}  // namespace bgcut
