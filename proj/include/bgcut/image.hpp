#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bgcut/segmentation.hpp"
#include "bgcut/tensor.hpp"

namespace bgcut {

// 8-bit image, rows top to bottom, channels interleaved (1 = gray, 3 = RGB).
struct Image {
  int h = 0, w = 0, channels = 0;
  std::vector<std::uint8_t> pixels;

  static Image make(int h, int w, int channels, std::uint8_t fill = 0);

  std::uint8_t& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * static_cast<std::size_t>(w) +
                   static_cast<std::size_t>(x)) *
                      static_cast<std::size_t>(channels) +
                  static_cast<std::size_t>(c)];
  }
  std::uint8_t at(int y, int x, int c) const {
    return const_cast<Image*>(this)->at(y, x, c);
  }
  std::int64_t size() const {
    return static_cast<std::int64_t>(h) * w * channels;
  }
};

// PNG files. Gray files decode to 1 channel, everything else to RGB; alpha is
// composited away. Write emits gray for 1 channel and RGB for 3.
Image read_png(const std::string& path);
void write_png(const std::string& path, const Image& img);

// Frames map [0,255] to [-1,1], shape [1,3,H,W]; the inverse clamps.
Tensor frame_to_tensor(const Image& rgb);
Image tensor_to_frame(const Tensor& t);

// Masks on disk are strict {0,255}; in memory {0,1}.
Mask mask_from_image(const Image& gray);
Image mask_to_image(const Mask& m);
Mask read_mask(const std::string& path);
void write_mask(const std::string& path, const Mask& m);

// Separable bilinear resampling with corner alignment, matching the tensor
// upsampling convention.
Image resize_bilinear(const Image& img, int oh, int ow);

// CRC32 of a file's raw bytes, for manifest checksums.
std::uint32_t file_crc32(const std::string& path);

}  // namespace bgcut
