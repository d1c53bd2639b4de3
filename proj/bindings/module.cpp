// Python surface for the main operations: clip segmentation, IoU metrics,
// compositing, synthetic dataset generation, and latency measurement.
// Frames cross the boundary as uint8 HWC arrays, masks as uint8 {0,255}.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "bgcut/dataset.hpp"
#include "bgcut/model_io.hpp"
#include "bgcut/pipeline.hpp"
#include "bgcut/runtime.hpp"

namespace py = pybind11;
using namespace bgcut;

namespace {

using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Image image_from_array(const U8Array& a) {
  require(a.ndim() == 3 && a.shape(2) == 3, Errc::shape_mismatch,
          "expected a [H,W,3] uint8 array");
  Image im = Image::make(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), 3);
  std::copy_n(a.data(), im.pixels.size(), im.pixels.data());
  return im;
}

Mask mask_from_array(const U8Array& a) {
  require(a.ndim() == 2, Errc::shape_mismatch, "expected a [H,W] uint8 mask");
  Image im = Image::make(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), 1);
  std::copy_n(a.data(), im.pixels.size(), im.pixels.data());
  return mask_from_image(im);  // enforces {0,255}
}

py::array mask_to_array(const Mask& m) {
  Image im = mask_to_image(m);
  py::array_t<std::uint8_t> out({im.h, im.w});
  std::copy_n(im.pixels.data(), im.pixels.size(), out.mutable_data());
  return out;
}

py::array image_to_array(const Image& im) {
  py::array_t<std::uint8_t> out({im.h, im.w, im.channels});
  std::copy_n(im.pixels.data(), im.pixels.size(), out.mutable_data());
  return out;
}

std::vector<Mask> masks_from_stack(const U8Array& a) {
  require(a.ndim() == 3, Errc::shape_mismatch, "expected a [T,H,W] uint8 mask stack");
  std::vector<Mask> out;
  const auto frame_px = static_cast<std::size_t>(a.shape(1) * a.shape(2));
  for (py::ssize_t t = 0; t < a.shape(0); ++t) {
    Image im = Image::make(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)), 1);
    std::copy_n(a.data() + static_cast<std::size_t>(t) * frame_px, frame_px, im.pixels.data());
    out.push_back(mask_from_image(im));
  }
  return out;
}

py::array segment_clip(const std::string& checkpoint, const U8Array& frames,
                       py::object bg_frames) {
  require(frames.ndim() == 4 && frames.shape(3) == 3, Errc::shape_mismatch,
          "expected frames as a [T,H,W,3] uint8 array");
  const int T = static_cast<int>(frames.shape(0));
  const int h = static_cast<int>(frames.shape(1)), w = static_cast<int>(frames.shape(2));
  std::vector<Tensor> xs;
  const auto frame_px = static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * 3;
  for (int t = 0; t < T; ++t) {
    Image im = Image::make(h, w, 3);
    std::copy_n(frames.data() + static_cast<std::size_t>(t) * frame_px, frame_px,
                im.pixels.data());
    xs.push_back(frame_to_tensor(im));
  }

  std::vector<Tensor> bg;
  if (!bg_frames.is_none()) {
    U8Array b = bg_frames.cast<U8Array>();
    require(b.ndim() == 4 && b.shape(3) == 3, Errc::shape_mismatch,
            "expected bg as a [K,H,W,3] uint8 array");
    const auto bpx = static_cast<std::size_t>(b.shape(1) * b.shape(2) * 3);
    for (py::ssize_t k = 0; k < b.shape(0); ++k) {
      Image im = Image::make(static_cast<int>(b.shape(1)), static_cast<int>(b.shape(2)), 3);
      std::copy_n(b.data() + static_cast<std::size_t>(k) * bpx, bpx, im.pixels.data());
      bg.push_back(frame_to_tensor(im));
    }
  }

  std::vector<Mask> masks;
  if (checkpoint_kind(checkpoint) == "stage1") {
    Stage1Model model = load_stage1(checkpoint);
    for (const auto& x : xs) {
      Tape tape;
      tape.set_recording(false);
      masks.push_back(predict_mask(stage1_scores(tape, model, tape.constant(x), false).tensor));
    }
  } else {
    Stage2Checkpoint ck = load_stage2(checkpoint);
    SegmenterModels models;
    models.attn = std::move(ck.attn);
    models.refine = std::move(ck.refine);
    masks = segment_video(models, xs, bg);
  }

  py::array_t<std::uint8_t> out({T, h, w});
  for (int t = 0; t < T; ++t) {
    Image im = mask_to_image(masks[static_cast<std::size_t>(t)]);
    std::copy_n(im.pixels.data(), frame_px / 3,
                out.mutable_data() + static_cast<std::size_t>(t) * (frame_px / 3));
  }
  return out;
}

py::dict iou_dict(const IouResult& r) {
  py::dict d;
  d["mean"] = r.mean();
  d["background"] = r.iou(0);
  d["foreground"] = r.iou(1);
  return d;
}

}  // namespace

PYBIND11_MODULE(_bgcut, m) {
  m.doc() = "portrait video background cut: segmentation, metrics, compositing";

  m.def("segment_clip", &segment_clip, py::arg("checkpoint"), py::arg("frames"),
        py::arg("bg_frames") = py::none(),
        "Segment a [T,H,W,3] uint8 clip; returns [T,H,W] uint8 masks with values {0,255}.");

  m.def(
      "mean_iou",
      [](const U8Array& pred, const U8Array& gt) {
        return iou_dict(mean_iou(masks_from_stack(pred), masks_from_stack(gt)));
      },
      py::arg("pred"), py::arg("gt"));

  m.def(
      "band_iou",
      [](const U8Array& pred, const U8Array& gt, int width) {
        return iou_dict(band_iou(masks_from_stack(pred), masks_from_stack(gt), width));
      },
      py::arg("pred"), py::arg("gt"), py::arg("width"),
      "IoU restricted to the ground-truth boundary band of the given Chebyshev width.");

  m.def(
      "composite",
      [](const U8Array& frame, const U8Array& mask, const U8Array& bg, int feather) {
        return image_to_array(
            composite(image_from_array(frame), mask_from_array(mask), image_from_array(bg),
                      feather));
      },
      py::arg("frame"), py::arg("mask"), py::arg("bg"), py::arg("feather") = 2);

  m.def(
      "generate_ambiguity_dataset",
      [](const std::string& out_dir, std::uint64_t seed) {
        std::vector<std::string> paths;
        for (const auto& man : generate_dataset(make_ambiguity_suite(seed), out_dir))
          paths.push_back(out_dir + "/" + man.split + "_manifest.json");
        return paths;
      },
      py::arg("out_dir"), py::arg("seed") = 1,
      "Render the 8+4-clip synthetic ambiguity suite; returns the manifest paths.");

  m.def(
      "bench",
      [](const std::string& checkpoint, int h, int w, int iterations) {
        Stage2Checkpoint ck = load_stage2(checkpoint);
        SegmenterModels models;
        models.attn = std::move(ck.attn);
        models.refine = std::move(ck.refine);
        BenchReport r = bench_models(models, h, w, iterations);
        py::dict d;
        d["attenuation_mean_ms"] = r.attenuation.mean_ms;
        d["attenuation_p95_ms"] = r.attenuation.p95_ms;
        d["refinement_mean_ms"] = r.refinement.mean_ms;
        d["refinement_p95_ms"] = r.refinement.p95_ms;
        d["machine"] = r.machine;
        return d;
      },
      py::arg("checkpoint"), py::arg("h"), py::arg("w"), py::arg("iterations") = 10);

  m.def("checkpoint_kind", &checkpoint_kind, py::arg("path"));
  m.def("set_max_threads", &set_max_threads, py::arg("n"));
  m.def("build_commit", &build_commit);
}
