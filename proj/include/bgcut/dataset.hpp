#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "bgcut/image.hpp"

namespace bgcut {

// Closed curve in normalized coordinates: radius 1 + wobble*cos(lobes*phi +
// phase), scaled by semi-axes (a, b) around (cx, cy). Integer lobes keep the
// enclosed area at the closed form pi*a*b*(1 + wobble^2/2).
struct BlobShape {
  double cx = 0, cy = 0;
  double a = 16, b = 13;
  double wobble = 0.1;
  int lobes = 4;
  double phase = 0;

  double area() const;
  bool contains(double x, double y) const;
  double max_radius() const { return std::max(a, b) * (1.0 + wobble); }
};

// Fraction of the unit pixel [x,x+1)x[y,y+1) inside the blob, from a 4x4
// subsample grid. Ground truth is coverage > 0.5.
double pixel_coverage(const BlobShape& blob, int x, int y);

// One synthetic clip: jittered procedural background, an optional background
// distractor object, and a moving textured foreground blob. Object paint
// intensities are theta +- delta; the plain background never encodes theta,
// so telling the foreground from the distractor requires clip-level context.
struct SceneSpec {
  std::string clip_id = "clip_000";
  std::string split = "train";
  int frames = 10;
  int bg_samples = 20;
  int height = 144, width = 176;
  int bg_family = 0;            // procedural background texture family (0..2)
  double jitter = 2.0;          // camera sway amplitude, px
  double unaligned_jitter = 8.0;  // extra offset range for background samples
  bool distractor = true;
  double texture_share = 1.0;   // 1: distractor paint tracks theta-delta; 0: plain
  double theta = 160.0;         // clip-level paint intensity anchor
  double delta = 18.0;
  double noise_sigma = 3.0;
  std::uint64_t seed = 1;
  // When nonzero, textures and blob shapes are drawn from this seed instead of
  // `seed`, while object paths, placements and noise still follow `seed`.
  // Clips sharing an appearance_seed show identical content arranged and
  // labeled differently, which blocks appearance memorization across them.
  std::uint64_t appearance_seed = 0;
};

struct ClipManifest {
  std::string clip_id;
  std::string split;
  std::vector<std::string> frame_paths;  // relative to the manifest directory
  std::vector<std::string> mask_paths;
  std::vector<std::string> bg_paths;
};

struct DatasetManifest {
  std::string split;
  std::string base_dir;
  std::vector<ClipManifest> clips;
};

// Per-frame render products; generate_clip writes these to disk.
struct RenderedFrame {
  Image frame;
  Mask mask;
  double analytic_area = 0;  // exact blob area for the rasterization oracle
};

RenderedFrame render_frame(const SceneSpec& spec, int t);
Image render_bg_sample(const SceneSpec& spec, int k);

// Writes <out_dir>/<clip_id>/{frame,mask,bg}_NNNN.png for every spec, then one
// <split>_manifest.json per split with relative paths and per-file CRC32s.
std::vector<DatasetManifest> generate_dataset(const std::vector<SceneSpec>& specs,
                                              const std::string& out_dir);

DatasetManifest load_manifest(const std::string& path);

// In-memory clip contents for training and evaluation.
struct ClipData {
  std::string clip_id;
  std::vector<Image> frames;
  std::vector<Mask> masks;
  std::vector<Image> bg;
};

ClipData load_clip(const DatasetManifest& manifest, const ClipManifest& clip);
std::vector<ClipData> load_clips(const DatasetManifest& manifest);

// The ablation suite: 8 train and 4 test clips whose theta values interleave,
// every clip with a texture-sharing distractor. Train clips form appearance
// twins: each pair shares textures, shapes and paint levels but swaps which
// blob is the foreground, so only background membership resolves the labels.
// Seed drives all per-clip draws.
std::vector<SceneSpec> make_ambiguity_suite(std::uint64_t seed);

}  // namespace bgcut
