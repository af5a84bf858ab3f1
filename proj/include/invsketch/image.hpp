#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "invsketch/tensor.hpp"

namespace invsketch {

// 8-bit interleaved raster as stored on disk.
struct ByteImage {
  int width = 0;
  int height = 0;
  int channels = 1;  // 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> pixels;

  bool empty() const { return pixels.empty(); }
  std::uint8_t at(int y, int x, int c = 0) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

// C x H x W image with values in [-1, 1]; +1 is white background.
class ImageTensor {
 public:
  ImageTensor() = default;
  ImageTensor(int channels, int height, int width, double fill = 1.0)
      : tensor_(Shape{channels, height, width}, fill) {}
  explicit ImageTensor(Tensor chw);

  int channels() const { return tensor_.ndim() == 3 ? tensor_.dim(0) : 0; }
  int height() const { return tensor_.ndim() == 3 ? tensor_.dim(1) : 0; }
  int width() const { return tensor_.ndim() == 3 ? tensor_.dim(2) : 0; }
  bool empty() const { return tensor_.ndim() != 3; }

  double& at(int c, int y, int x) {
    return tensor_[(static_cast<std::size_t>(c) * height() + y) * width() + x];
  }
  double at(int c, int y, int x) const {
    return tensor_[(static_cast<std::size_t>(c) * height() + y) * width() + x];
  }
  std::span<double> values() { return tensor_.values(); }
  std::span<const double> values() const { return tensor_.values(); }
  const Tensor& tensor() const { return tensor_; }

  // Channel-mean luminance as a single-channel image.
  ImageTensor to_gray() const;
  // Replicates a gray image to `channels` (no-op if already that many).
  ImageTensor with_channels(int channels) const;

  bool operator==(const ImageTensor&) const = default;

 private:
  Tensor tensor_;
};

// Edge-probability field in [0, 1].
class EdgeMap {
 public:
  EdgeMap() = default;
  EdgeMap(int height, int width) : height_(height), width_(width), p_(static_cast<std::size_t>(height) * width, 0.0) {}
  EdgeMap(int height, int width, std::vector<double> p);

  int height() const { return height_; }
  int width() const { return width_; }
  double& at(int y, int x) { return p_[static_cast<std::size_t>(y) * width_ + x]; }
  double at(int y, int x) const { return p_[static_cast<std::size_t>(y) * width_ + x]; }
  std::span<double> values() { return p_; }
  std::span<const double> values() const { return p_; }

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> p_;
};

// Stacks same-sized images into an N x C x H x W tensor.
Tensor stack_images(std::span<const ImageTensor> images);
ImageTensor unstack_image(const Tensor& batch, int index);

// Linear byte map v / 127.5 - 1 and its rounding inverse.
inline double byte_to_unit(std::uint8_t v) { return v / 127.5 - 1.0; }
std::uint8_t unit_to_byte(double v);

ImageTensor from_bytes(const ByteImage& img);
ByteImage to_bytes(const ImageTensor& img);

// PNG codec (8-bit gray or RGB).
ByteImage decode_png(std::span<const std::uint8_t> data);
std::vector<std::uint8_t> encode_png(const ByteImage& img);
ByteImage read_png(const std::string& path);
void write_png(const std::string& path, const ByteImage& img);

}  // namespace invsketch
