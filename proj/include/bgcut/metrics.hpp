#pragma once

#include <cstdint>
#include <vector>

#include "bgcut/segmentation.hpp"

namespace bgcut {

// Pixel counts aggregated over all evaluated frames, one slot per class
// (0 background, 1 foreground). A class absent from both prediction and
// ground truth scores IoU 1.
struct IouResult {
  std::int64_t intersection[2] = {0, 0};
  std::int64_t union_[2] = {0, 0};

  double iou(int cls) const;
  double mean() const { return (iou(0) + iou(1)) / 2.0; }
};

IouResult mean_iou(const std::vector<Mask>& pred, const std::vector<Mask>& gt);

// Boundary pixels of a mask: any 4-neighbor carries the other label.
Mask boundary_of(const Mask& m);

// All pixels within Chebyshev distance `width` of a boundary pixel.
Mask boundary_band(const Mask& gt, int width);

// Mean IoU restricted to the ground-truth boundary band. Fails if no frame
// contributes any band pixel.
IouResult band_iou(const std::vector<Mask>& pred, const std::vector<Mask>& gt, int width);

}  // namespace bgcut
