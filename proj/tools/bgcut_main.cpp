// Command-line frontend: dataset generation, two-stage training, pruning,
// sliding-window inference, evaluation, benchmarking, and compositing.
// Numeric defaults live in the config structs; JSON config files (comments
// allowed) override them, and a few common knobs are exposed as flags.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bgcut/dataset.hpp"
#include "bgcut/model_io.hpp"
#include "bgcut/pipeline.hpp"
#include "bgcut/pruning.hpp"
#include "bgcut/runtime.hpp"
#include "bgcut/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bgcut;

namespace {

json load_json(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), Errc::io, "cannot open " + path);
  return json::parse(in, nullptr, true, /*ignore_comments=*/true);
}

void write_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  require(out.good(), Errc::io, "cannot write " + path);
  out << j.dump(2) << "\n";
}

template <class T>
T get_or(const json& j, const std::string& key, T fallback) {
  if (j.contains(key)) return j.at(key).get<T>();
  return fallback;
}

BackboneConfig parse_backbone(const json& j) {
  BackboneConfig c;
  c.stem_channels = get_or(j, "stem_channels", c.stem_channels);
  if (j.contains("stage_channels")) {
    auto v = j.at("stage_channels").get<std::vector<int>>();
    require(v.size() == 4, Errc::invalid_argument, "stage_channels needs 4 entries");
    std::copy(v.begin(), v.end(), c.stage_channels.begin());
  }
  if (j.contains("blocks_per_stage")) {
    auto v = j.at("blocks_per_stage").get<std::vector<int>>();
    require(v.size() == 4, Errc::invalid_argument, "blocks_per_stage needs 4 entries");
    std::copy(v.begin(), v.end(), c.blocks_per_stage.begin());
  }
  c.output_stride = get_or(j, "output_stride", c.output_stride);
  c.input_hint_h = get_or(j, "input_hint_h", c.input_hint_h);
  c.input_hint_w = get_or(j, "input_hint_w", c.input_hint_w);
  c.validate();
  return c;
}

TrainConfig parse_train(const json& j) {
  TrainConfig c;
  c.batch_size = get_or(j, "batch_size", c.batch_size);
  c.crop = get_or(j, "crop", c.crop);
  c.base_lr = get_or(j, "base_lr", c.base_lr);
  c.poly_power = get_or(j, "poly_power", c.poly_power);
  c.epochs = get_or(j, "epochs", c.epochs);
  c.momentum = get_or(j, "momentum", c.momentum);
  c.weight_decay = get_or(j, "weight_decay", c.weight_decay);
  c.refinement_lr_multiplier = get_or(j, "refinement_lr_multiplier", c.refinement_lr_multiplier);
  c.n = get_or(j, "n", c.n);
  c.hflip = get_or(j, "hflip", c.hflip);
  c.train_attenuation = get_or(j, "train_attenuation", c.train_attenuation);
  c.train_refinement = get_or(j, "train_refinement", c.train_refinement);
  c.freeze_backbone_bn = get_or(j, "freeze_backbone_bn", c.freeze_backbone_bn);
  c.max_iterations_override = get_or(j, "max_iterations_override", c.max_iterations_override);
  c.seed = get_or(j, "seed", c.seed);
  c.validate();
  return c;
}

RefinementConfig parse_refinement(const json& j, int n_from_train) {
  RefinementConfig c;
  c.n = n_from_train;
  if (j.contains("encoder_channels")) {
    auto v = j.at("encoder_channels").get<std::vector<int>>();
    require(v.size() == 3, Errc::invalid_argument, "encoder_channels needs 3 entries");
    std::copy(v.begin(), v.end(), c.encoder_channels.begin());
  }
  c.guidance = get_or(j, "guidance", c.guidance);
  c.center_only_guidance = get_or(j, "center_only_guidance", c.center_only_guidance);
  c.skip_fusion = get_or(j, "skip_fusion", c.skip_fusion);
  c.validate();
  return c;
}

AttenuationConfig parse_attenuation(const json& j) {
  AttenuationConfig c;
  c.seg_channels = get_or(j, "seg_channels", c.seg_channels);
  c.use_attenuation = get_or(j, "use_attenuation", c.use_attenuation);
  return c;
}

SceneSpec parse_scene(const json& j, int index) {
  SceneSpec s;
  char fallback[32];
  std::snprintf(fallback, sizeof(fallback), "clip_%03d", index);
  s.clip_id = get_or<std::string>(j, "clip_id", fallback);
  s.split = get_or<std::string>(j, "split", s.split);
  s.frames = get_or(j, "frames", s.frames);
  s.bg_samples = get_or(j, "bg_samples", s.bg_samples);
  s.height = get_or(j, "height", s.height);
  s.width = get_or(j, "width", s.width);
  s.bg_family = get_or(j, "bg_family", s.bg_family);
  s.jitter = get_or(j, "jitter", s.jitter);
  s.unaligned_jitter = get_or(j, "unaligned_jitter", s.unaligned_jitter);
  s.distractor = get_or(j, "distractor", s.distractor);
  s.texture_share = get_or(j, "texture_share", s.texture_share);
  s.theta = get_or(j, "theta", s.theta);
  s.delta = get_or(j, "delta", s.delta);
  s.noise_sigma = get_or(j, "noise_sigma", s.noise_sigma);
  s.seed = get_or(j, "seed", static_cast<std::uint64_t>(index + 1));
  return s;
}

void write_run_metadata(const std::string& checkpoint_path, const std::string& command,
                        const json& config) {
  json meta;
  meta["command"] = command;
  meta["config"] = config;
  meta["commit"] = build_commit();
  meta["machine"] = machine_descriptor();
  meta["threads"] = max_threads();
  write_json(checkpoint_path + ".meta.json", meta);
}

void write_loss_csv(const std::string& checkpoint_path, const TrainResult& r) {
  std::ofstream out(checkpoint_path + ".loss.csv");
  out << "iteration,loss,aux_loss\n";
  for (std::size_t i = 0; i < r.losses.size(); ++i) {
    const double aux = i < r.aux_losses.size() ? r.aux_losses[i] : 0.0;
    char line[96];
    std::snprintf(line, sizeof(line), "%zu,%.9g,%.9g\n", i, r.losses[i], aux);
    out << line;
  }
}

void require_completed(const TrainResult& r) {
  if (r.aborted)
    throw Error(Errc::numeric, "training aborted: " + r.abort_reason);
}

std::vector<std::string> sorted_pngs(const std::string& dir) {
  require(fs::is_directory(dir), Errc::io, dir + " is not a directory");
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".png") files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  require(!files.empty(), Errc::empty_input, "no .png files in " + dir);
  return files;
}

std::string mask_name(int t) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "mask_%04d.png", t);
  return buf;
}

// ---------------------------------------------------------------- dataset gen

int cmd_dataset_gen(const std::string& spec_path, const std::string& out_dir) {
  json spec = load_json(spec_path);
  std::vector<SceneSpec> scenes;
  if (spec.contains("suite")) {
    require(spec.at("suite") == "ambiguity", Errc::invalid_argument,
            "unknown suite: " + spec.at("suite").get<std::string>());
    scenes = make_ambiguity_suite(get_or<std::uint64_t>(spec, "seed", 1));
  } else {
    require(spec.contains("clips"), Errc::invalid_argument,
            "dataset spec needs a \"clips\" array or a \"suite\" name");
    int i = 0;
    for (const auto& c : spec.at("clips")) scenes.push_back(parse_scene(c, i++));
  }
  std::vector<DatasetManifest> manifests = generate_dataset(scenes, out_dir);
  for (const auto& m : manifests)
    std::cout << m.split << ": " << m.clips.size() << " clips -> " << out_dir << "/" << m.split
              << "_manifest.json\n";
  return 0;
}

// ---------------------------------------------------------------------- train

int cmd_train_stage1(const std::string& config_path) {
  json cfg = load_json(config_path);
  const std::string out = cfg.at("out").get<std::string>();
  TrainConfig tc = parse_train(get_or(cfg, "train", json::object()));
  BackboneConfig bc = parse_backbone(get_or(cfg, "backbone", json::object()));
  std::vector<ClipData> clips =
      load_clips(load_manifest(cfg.at("manifest").get<std::string>()));

  Stage1Model model = build_stage1<float>(bc, tc.seed);
  TrainResult r = train_stage1(model, clips, tc);
  write_loss_csv(out, r);
  write_run_metadata(out, "train stage1", cfg);
  require_completed(r);
  save_stage1(model, out);
  std::cout << "stage1: " << r.iterations << " iterations, final loss " << r.losses.back()
            << " -> " << out << "\n";
  return 0;
}

int cmd_train_stage2(const std::string& config_path) {
  json cfg = load_json(config_path);
  const std::string out = cfg.at("out").get<std::string>();
  TrainConfig tc = parse_train(get_or(cfg, "train", json::object()));
  AttenuationConfig ac = parse_attenuation(get_or(cfg, "attenuation", json::object()));
  RefinementConfig rc = parse_refinement(get_or(cfg, "refinement", json::object()), tc.n);
  Stage1Model stage1 = load_stage1(cfg.at("stage1").get<std::string>());
  std::vector<ClipData> clips =
      load_clips(load_manifest(cfg.at("manifest").get<std::string>()));

  AttenuationModel attn = build_attenuation_from_stage1(stage1, ac, tc.seed);
  RefinementModel refine = build_refinement<float>(rc, tc.seed + 1);
  require(tc.train_refinement, Errc::invalid_argument,
          "stage2 checkpoints include refinement; train_refinement must stay on");
  TrainResult r = train_stage2(attn, &refine, clips, tc);
  write_loss_csv(out, r);
  write_run_metadata(out, "train stage2", cfg);
  require_completed(r);
  save_stage2(attn, refine, out);
  std::cout << "stage2: " << r.iterations << " iterations, final loss " << r.losses.back()
            << " -> " << out << "\n";
  return 0;
}

// ---------------------------------------------------------------------- prune

int cmd_prune(const std::string& config_path) {
  json cfg = load_json(config_path);
  const std::string out = cfg.at("out").get<std::string>();
  Stage1Model model = load_stage1(cfg.at("stage1").get<std::string>());

  PruneSchedule sched;
  const json sj = get_or(cfg, "schedule", json::object());
  sched.step_keep_ratio = get_or(sj, "step_keep_ratio", sched.step_keep_ratio);
  sched.num_steps = get_or(sj, "num_steps", sched.num_steps);
  sched.finetune_iters_per_step = get_or(sj, "finetune_iters_per_step", 0);

  std::vector<ClipData> clips;
  TrainConfig tc = parse_train(get_or(cfg, "train", json::object()));
  if (sched.finetune_iters_per_step > 0)
    clips = load_clips(load_manifest(cfg.at("manifest").get<std::string>()));

  FinetuneFn finetune = [&](Stage1Model& m, int step) -> double {
    if (sched.finetune_iters_per_step <= 0) return 0.0;
    TrainConfig ft = tc;
    ft.seed = tc.seed + static_cast<std::uint64_t>(step);
    ft.max_iterations_override = sched.finetune_iters_per_step;
    TrainResult r = train_stage1(m, clips, ft);
    return r.losses.empty() ? 0.0 : r.losses.back();
  };

  PruneReport rep = prune_to_target(model, sched, finetune);
  json jr;
  jr["aborted"] = rep.aborted;
  jr["abort_reason"] = rep.abort_reason;
  jr["cumulative_keep_fraction"] = sched.cumulative_keep_fraction();
  jr["latency_before_ms"] = rep.latency_before_ms;
  jr["latency_after_ms"] = rep.latency_after_ms;
  for (const auto& s : rep.steps) {
    json js;
    js["step"] = s.step;
    js["params_before"] = s.params_before;
    js["params_after"] = s.params_after;
    for (const auto& l : s.layers)
      js["layers"].push_back({{"name", l.name}, {"before", l.before}, {"after", l.after}});
    jr["steps"].push_back(js);
  }
  write_json(out + ".prune.json", jr);
  write_run_metadata(out, "prune", cfg);
  if (rep.aborted) throw Error(Errc::numeric, "pruning aborted: " + rep.abort_reason);
  save_stage1(model, out);
  std::cout << "pruned " << rep.steps.size() << " steps, latency " << rep.latency_before_ms
            << " -> " << rep.latency_after_ms << " ms -> " << out << "\n";
  return 0;
}

// ---------------------------------------------------------------------- infer

Mask stage1_predict(Stage1Model& model, const Tensor& frame) {
  Tape tape;
  tape.set_recording(false);
  ValueT<float> x = tape.constant(frame);
  ValueT<float> s = stage1_scores(tape, model, x, false);
  return predict_mask(s.tensor);
}

int cmd_infer(const std::string& manifest_path, const std::string& ckpt_path,
              const std::string& bg_dir, const std::string& out_dir) {
  DatasetManifest manifest = load_manifest(manifest_path);
  const std::string kind = checkpoint_kind(ckpt_path);

  std::vector<Tensor> shared_bg;
  if (!bg_dir.empty())
    for (const auto& f : sorted_pngs(bg_dir)) shared_bg.push_back(frame_to_tensor(read_png(f)));

  Stage1Model stage1;
  SegmenterModels models;
  if (kind == "stage1") {
    stage1 = load_stage1(ckpt_path);
  } else {
    Stage2Checkpoint ck = load_stage2(ckpt_path);
    models.attn = std::move(ck.attn);
    models.refine = std::move(ck.refine);
  }

  json report;
  report["checkpoint_kind"] = kind;
  double attn_ms_total = 0, refine_ms_total = 0;
  std::int64_t frames_total = 0;

  for (const ClipManifest& cm : manifest.clips) {
    ClipData clip = load_clip(manifest, cm);
    std::vector<Tensor> frames;
    for (const auto& im : clip.frames) frames.push_back(frame_to_tensor(im));

    std::vector<Mask> masks;
    if (kind == "stage1") {
      for (const auto& f : frames) masks.push_back(stage1_predict(stage1, f));
    } else {
      std::vector<Tensor> bg = shared_bg;
      if (bg.empty())
        for (const auto& im : clip.bg) bg.push_back(frame_to_tensor(im));
      VideoSegmenter seg(models, bg);
      for (const auto& f : frames) seg.push(f);
      seg.finish();
      masks = seg.take_ready();
      for (double v : seg.attenuation_ms()) attn_ms_total += v;
      for (double v : seg.refinement_ms()) refine_ms_total += v;
    }

    const fs::path clip_dir = fs::path(out_dir) / cm.clip_id;
    fs::create_directories(clip_dir);
    for (std::size_t t = 0; t < masks.size(); ++t)
      write_mask((clip_dir / mask_name(static_cast<int>(t))).string(), masks[t]);
    frames_total += static_cast<std::int64_t>(masks.size());
    std::cout << cm.clip_id << ": " << masks.size() << " masks\n";
  }

  report["frames"] = frames_total;
  if (kind == "stage2") {
    report["main_passes"] = models.attn.main_passes;
    report["bg_passes"] = models.attn.bg_passes;
    report["refine_passes"] = models.refine->refine_passes;
    report["attenuation_ms_total"] = attn_ms_total;
    report["refinement_ms_total"] = refine_ms_total;
  }
  write_json((fs::path(out_dir) / "infer_report.json").string(), report);
  return 0;
}

// ----------------------------------------------------------------------- eval

int cmd_eval(const std::string& pred_dir, const std::string& manifest_path,
             const std::vector<int>& band_widths) {
  DatasetManifest manifest = load_manifest(manifest_path);
  std::vector<std::string> ids;
  std::vector<std::vector<Mask>> pred, gt;
  for (const ClipManifest& cm : manifest.clips) {
    ClipData clip = load_clip(manifest, cm);
    std::vector<Mask> p;
    for (std::size_t t = 0; t < clip.masks.size(); ++t) {
      const fs::path f = fs::path(pred_dir) / cm.clip_id / mask_name(static_cast<int>(t));
      require(fs::exists(f), Errc::io, "missing prediction " + f.string());
      p.push_back(read_mask(f.string()));
    }
    ids.push_back(cm.clip_id);
    pred.push_back(std::move(p));
    gt.push_back(clip.masks);
  }

  EvalReport rep = evaluate_masks(ids, pred, gt, band_widths);
  std::printf("mean IoU %.4f (bg %.4f, fg %.4f) over %zu clips\n", rep.overall.mean(),
              rep.overall.iou(0), rep.overall.iou(1), ids.size());
  for (const auto& [w, r] : rep.band) std::printf("band %-3d IoU %.4f\n", w, r.mean());
  for (const auto& [id, v] : rep.per_clip) std::printf("  %s %.4f\n", id.c_str(), v);

  write_band_csv((fs::path(pred_dir) / "band_iou.csv").string(), rep);
  write_eval_json((fs::path(pred_dir) / "eval_report.json").string(), rep);
  return 0;
}

// ---------------------------------------------------------------------- bench

int cmd_bench(const std::string& ckpt_path, const std::string& size, int iterations) {
  int h = 0, w = 0;
  require(std::sscanf(size.c_str(), "%dx%d", &h, &w) == 2 && h > 0 && w > 0,
          Errc::invalid_argument, "--size expects HxW, got " + size);

  const std::string kind = checkpoint_kind(ckpt_path);
  json out;
  out["size"] = size;
  out["checkpoint_kind"] = kind;
  out["machine"] = machine_descriptor();
  out["threads"] = max_threads();
  out["iterations"] = iterations;

  if (kind == "stage1") {
    Stage1Model model = load_stage1(ckpt_path);
    Rng rng(42);
    Tensor frame({1, 3, h, w});
    fill_uniform(frame, -1.0, 1.0, rng);
    std::vector<double> ms;
    for (int i = 0; i < iterations + 3; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      stage1_predict(model, frame);
      const auto t1 = std::chrono::steady_clock::now();
      if (i >= 3) ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    StageLatency lat = latency_stats(ms);
    out["forward"] = {{"mean_ms", lat.mean_ms}, {"p95_ms", lat.p95_ms}};
  } else {
    Stage2Checkpoint ck = load_stage2(ckpt_path);
    SegmenterModels models;
    models.attn = std::move(ck.attn);
    models.refine = std::move(ck.refine);
    BenchReport rep = bench_models(models, h, w, iterations);
    out["attenuation"] = {{"mean_ms", rep.attenuation.mean_ms}, {"p95_ms", rep.attenuation.p95_ms}};
    out["refinement"] = {{"mean_ms", rep.refinement.mean_ms}, {"p95_ms", rep.refinement.p95_ms}};
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

// ------------------------------------------------------------------ composite

int cmd_composite(const std::string& clip_dir, const std::string& masks_dir,
                  const std::string& bg_path, const std::string& out_dir, int feather) {
  std::vector<std::string> frames = sorted_pngs(clip_dir);
  std::vector<std::string> masks = sorted_pngs(masks_dir);
  require(frames.size() == masks.size(), Errc::shape_mismatch,
          "frame/mask counts differ: " + std::to_string(frames.size()) + " vs " +
              std::to_string(masks.size()));
  Image bg = read_png(bg_path);
  fs::create_directories(out_dir);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    Image frame = read_png(frames[i]);
    Mask mask = read_mask(masks[i]);
    Image out = composite(frame, mask, bg, feather);
    char name[32];
    std::snprintf(name, sizeof(name), "comp_%04zu.png", i);
    write_png((fs::path(out_dir) / name).string(), out);
  }
  std::cout << frames.size() << " frames composited -> " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"portrait video background cut"};
  app.require_subcommand(1);

  std::string spec_path, out_dir, config_path, manifest_path, ckpt_path;
  std::string bg_dir, size = "144x176", masks_dir, bg_image;
  std::vector<int> band_widths{1, 3, 5, 10, 20};
  int iterations = 10, feather = 2;

  auto* ds = app.add_subcommand("dataset", "synthetic clip generation");
  auto* gen = ds->add_subcommand("gen", "render clips from a JSON spec");
  gen->add_option("spec", spec_path, "dataset spec JSON")->required();
  gen->add_option("out", out_dir, "output directory")->required();

  auto* train = app.add_subcommand("train", "model training");
  auto* s1 = train->add_subcommand("stage1", "single-path segmentation pretraining");
  s1->add_option("config", config_path, "training config JSON")->required();
  auto* s2 = train->add_subcommand("stage2", "joint attenuation + refinement training");
  s2->add_option("config", config_path, "training config JSON")->required();

  auto* prune = app.add_subcommand("prune", "gradual filter pruning of a stage-1 checkpoint");
  prune->add_option("config", config_path, "pruning config JSON")->required();

  auto* infer = app.add_subcommand("infer", "sliding-window segmentation of clips");
  infer->add_option("manifest", manifest_path, "clip manifest JSON")->required();
  infer->add_option("checkpoint", ckpt_path, "model checkpoint")->required();
  infer->add_option("--bg", bg_dir, "directory of background sample PNGs (default: manifest's)");
  infer->add_option("--out", out_dir, "output directory")->required();

  auto* eval = app.add_subcommand("eval", "IoU metrics for predicted masks");
  eval->add_option("pred", out_dir, "prediction directory (infer layout)")->required();
  eval->add_option("manifest", manifest_path, "clip manifest JSON")->required();
  eval->add_option("--band-widths", band_widths, "boundary band widths, px");

  auto* bench = app.add_subcommand("bench", "per-stage forward latency");
  bench->add_option("checkpoint", ckpt_path, "model checkpoint")->required();
  bench->add_option("--size", size, "input size HxW");
  bench->add_option("--iterations", iterations, "timed iterations");

  auto* comp = app.add_subcommand("composite", "background replacement");
  comp->add_option("clip", spec_path, "directory of frame PNGs")->required();
  comp->add_option("masks", masks_dir, "directory of mask PNGs")->required();
  comp->add_option("bg", bg_image, "replacement background image")->required();
  comp->add_option("--out", out_dir, "output directory")->required();
  comp->add_option("--feather", feather, "mask blur radius, px");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_dataset_gen(spec_path, out_dir);
    if (s1->parsed()) return cmd_train_stage1(config_path);
    if (s2->parsed()) return cmd_train_stage2(config_path);
    if (prune->parsed()) return cmd_prune(config_path);
    if (infer->parsed()) return cmd_infer(manifest_path, ckpt_path, bg_dir, out_dir);
    if (eval->parsed()) return cmd_eval(out_dir, manifest_path, band_widths);
    if (bench->parsed()) return cmd_bench(ckpt_path, size, iterations);
    if (comp->parsed()) return cmd_composite(spec_path, masks_dir, bg_image, out_dir, feather);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
