#include "bgcut/metrics.hpp"

#include "bgcut/error.hpp"

namespace bgcut {

namespace {

void check_pair(const Mask& p, const Mask& g) {
  require(p.rank() == 2 && g.rank() == 2, Errc::shape_mismatch, "iou: masks must be [H,W]");
  require(p.shape() == g.shape(), Errc::shape_mismatch, "iou: prediction/gt size mismatch");
}

void accumulate(IouResult& r, const Mask& p, const Mask& g, const Mask* band) {
  for (std::int64_t i = 0; i < p.size(); ++i) {
    if (band && !(*band)[i]) continue;
    const int pc = p[i] ? 1 : 0, gc = g[i] ? 1 : 0;
    if (pc == gc) {
      ++r.intersection[pc];
      ++r.union_[pc];
    } else {
      ++r.union_[pc];
      ++r.union_[gc];
    }
  }
}

}  // namespace

double IouResult::iou(int cls) const {
  if (union_[cls] == 0) return 1.0;  // class absent everywhere
  return static_cast<double>(intersection[cls]) / static_cast<double>(union_[cls]);
}

IouResult mean_iou(const std::vector<Mask>& pred, const std::vector<Mask>& gt) {
  require(pred.size() == gt.size(), Errc::shape_mismatch, "mean_iou: frame count mismatch");
  require(!pred.empty(), Errc::empty_input, "mean_iou: no frames");
  IouResult r;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    check_pair(pred[i], gt[i]);
    accumulate(r, pred[i], gt[i], nullptr);
  }
  return r;
}

Mask boundary_of(const Mask& m) {
  require(m.rank() == 2, Errc::shape_mismatch, "boundary_of: [H,W] expected");
  const int h = static_cast<int>(m.shape()[0]), w = static_cast<int>(m.shape()[1]);
  Mask b({h, w});
  auto at = [&](int y, int x) { return m[static_cast<std::int64_t>(y) * w + x]; };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::uint8_t v = at(y, x);
      const bool edge = (y > 0 && at(y - 1, x) != v) || (y + 1 < h && at(y + 1, x) != v) ||
                        (x > 0 && at(y, x - 1) != v) || (x + 1 < w && at(y, x + 1) != v);
      b[static_cast<std::int64_t>(y) * w + x] = edge ? 1 : 0;
    }
  return b;
}

Mask boundary_band(const Mask& gt, int width) {
  require(width >= 1, Errc::invalid_argument, "boundary_band: width must be >= 1");
  const Mask b = boundary_of(gt);
  const int h = static_cast<int>(b.shape()[0]), w = static_cast<int>(b.shape()[1]);
  // Chebyshev dilation separates into a horizontal then a vertical max filter.
  Mask tmp({h, w}), out({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      std::uint8_t v = 0;
      for (int d = -width; d <= width && !v; ++d) {
        const int xx = x + d;
        if (xx >= 0 && xx < w && b[static_cast<std::int64_t>(y) * w + xx]) v = 1;
      }
      tmp[static_cast<std::int64_t>(y) * w + x] = v;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      std::uint8_t v = 0;
      for (int d = -width; d <= width && !v; ++d) {
        const int yy = y + d;
        if (yy >= 0 && yy < h && tmp[static_cast<std::int64_t>(yy) * w + x]) v = 1;
      }
      out[static_cast<std::int64_t>(y) * w + x] = v;
    }
  return out;
}

IouResult band_iou(const std::vector<Mask>& pred, const std::vector<Mask>& gt, int width) {
  require(pred.size() == gt.size(), Errc::shape_mismatch, "band_iou: frame count mismatch");
  require(!pred.empty(), Errc::empty_input, "band_iou: no frames");
  IouResult r;
  std::int64_t band_pixels = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    check_pair(pred[i], gt[i]);
    const Mask band = boundary_band(gt[i], width);
    for (std::int64_t k = 0; k < band.size(); ++k) band_pixels += band[k];
    accumulate(r, pred[i], gt[i], &band);
  }
  require(band_pixels > 0, Errc::empty_input,
          "band_iou: ground truth has no boundary at width " + std::to_string(width));
  return r;
}

}  // namespace bgcut
