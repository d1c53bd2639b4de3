#include "bgcut/image.hpp"

#include <png.h>
#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "bgcut/error.hpp"

namespace bgcut {

Image Image::make(int h, int w, int channels, std::uint8_t fill) {
  require(h > 0 && w > 0 && (channels == 1 || channels == 3), Errc::invalid_argument,
          "Image::make: bad extent or channel count");
  Image img;
  img.h = h;
  img.w = w;
  img.channels = channels;
  img.pixels.assign(static_cast<std::size_t>(img.size()), fill);
  return img;
}

Image read_png(const std::string& path) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    fail(Errc::io, "read_png: cannot open or parse " + path + ": " + png.message);
  }
  const bool gray = (png.format & PNG_FORMAT_FLAG_COLOR) == 0;
  png.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Image img = Image::make(static_cast<int>(png.height), static_cast<int>(png.width), gray ? 1 : 3);
  if (!png_image_finish_read(&png, nullptr, img.pixels.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    fail(Errc::io, "read_png: decode failed for " + path + ": " + msg);
  }
  return img;
}

void write_png(const std::string& path, const Image& img) {
  require(img.channels == 1 || img.channels == 3, Errc::invalid_argument,
          "write_png: only gray or RGB images");
  require(img.h > 0 && img.w > 0 &&
              img.pixels.size() == static_cast<std::size_t>(img.size()),
          Errc::invalid_argument, "write_png: inconsistent image buffer");
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.w);
  png.height = static_cast<png_uint_32>(img.h);
  png.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, img.pixels.data(), 0, nullptr)) {
    fail(Errc::io, "write_png: cannot write " + path + ": " + png.message);
  }
}

Tensor frame_to_tensor(const Image& rgb) {
  require(rgb.channels == 3, Errc::invalid_argument, "frame_to_tensor: RGB expected");
  Tensor t({1, 3, rgb.h, rgb.w});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < rgb.h; ++y)
      for (int x = 0; x < rgb.w; ++x)
        t.at(0, c, y, x) = static_cast<float>(rgb.at(y, x, c)) / 127.5f - 1.0f;
  return t;
}

Image tensor_to_frame(const Tensor& t) {
  require(t.rank() == 4 && t.shape()[0] == 1 && t.shape()[1] == 3, Errc::shape_mismatch,
          "tensor_to_frame: [1,3,H,W] expected");
  const int h = static_cast<int>(t.shape()[2]), w = static_cast<int>(t.shape()[3]);
  Image img = Image::make(h, w, 3);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const float v = (t.at(0, c, y, x) + 1.0f) * 127.5f;
        img.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
  return img;
}

Mask mask_from_image(const Image& gray) {
  require(gray.channels == 1, Errc::invalid_argument, "mask_from_image: gray expected");
  Mask m({gray.h, gray.w});
  for (std::int64_t i = 0; i < m.size(); ++i) {
    const std::uint8_t v = gray.pixels[static_cast<std::size_t>(i)];
    require(v == 0 || v == 255, Errc::invalid_argument,
            "mask_from_image: pixel value " + std::to_string(v) + " outside {0,255}");
    m[i] = v == 255 ? 1 : 0;
  }
  return m;
}

Image mask_to_image(const Mask& m) {
  require(m.rank() == 2, Errc::shape_mismatch, "mask_to_image: [H,W] expected");
  Image img = Image::make(static_cast<int>(m.shape()[0]), static_cast<int>(m.shape()[1]), 1);
  for (std::int64_t i = 0; i < m.size(); ++i)
    img.pixels[static_cast<std::size_t>(i)] = m[i] ? 255 : 0;
  return img;
}

Mask read_mask(const std::string& path) { return mask_from_image(read_png(path)); }

void write_mask(const std::string& path, const Mask& m) { write_png(path, mask_to_image(m)); }

Image resize_bilinear(const Image& img, int oh, int ow) {
  require(oh > 0 && ow > 0, Errc::invalid_argument, "resize_bilinear: bad target size");
  if (oh == img.h && ow == img.w) return img;
  Image out = Image::make(oh, ow, img.channels);
  // Half-pixel source mapping with edge clamping, same as the tensor op.
  const auto axis = [](int in, int out_n, int i) {
    const double pos = (i + 0.5) * static_cast<double>(in) / out_n - 0.5;
    int lo = static_cast<int>(std::floor(pos));
    double frac = pos - lo;
    if (lo < 0) {
      lo = 0;
      frac = 0.0;
    }
    if (lo >= in - 1) {
      lo = in - 1;
      frac = 0.0;
    }
    return std::pair<int, double>{lo, frac};
  };
  for (int y = 0; y < oh; ++y) {
    const auto [y0, fy] = axis(img.h, oh, y);
    const int y1 = std::min(y0 + 1, img.h - 1);
    for (int x = 0; x < ow; ++x) {
      const auto [x0, fx] = axis(img.w, ow, x);
      const int x1 = std::min(x0 + 1, img.w - 1);
      for (int c = 0; c < img.channels; ++c) {
        const double v = (1 - fy) * ((1 - fx) * img.at(y0, x0, c) + fx * img.at(y0, x1, c)) +
                         fy * ((1 - fx) * img.at(y1, x0, c) + fx * img.at(y1, x1, c));
        out.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

std::uint32_t file_crc32(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Errc::io, "file_crc32: cannot open " + path);
  std::uint32_t crc = static_cast<std::uint32_t>(crc32(0L, Z_NULL, 0));
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    crc = static_cast<std::uint32_t>(
        crc32(crc, reinterpret_cast<const Bytef*>(buf), static_cast<uInt>(in.gcount())));
    if (in.eof()) break;
  }
  return crc;
}

}  // namespace bgcut
