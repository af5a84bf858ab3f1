#include "invsketch/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

namespace invsketch {

ImageTensor::ImageTensor(Tensor chw) : tensor_(std::move(chw)) {
  if (tensor_.ndim() != 3) throw ShapeError("image tensor must be C x H x W, got " + shape_str(tensor_.shape()));
}

ImageTensor ImageTensor::to_gray() const {
  if (channels() == 1) return *this;
  ImageTensor out(1, height(), width());
  for (int y = 0; y < height(); ++y)
    for (int x = 0; x < width(); ++x) {
      double acc = 0;
      for (int c = 0; c < channels(); ++c) acc += at(c, y, x);
      out.at(0, y, x) = acc / channels();
    }
  return out;
}

ImageTensor ImageTensor::with_channels(int n) const {
  if (channels() == n) return *this;
  if (channels() != 1) throw ShapeError("only gray images can be replicated across channels");
  ImageTensor out(n, height(), width());
  for (int c = 0; c < n; ++c)
    for (int y = 0; y < height(); ++y)
      for (int x = 0; x < width(); ++x) out.at(c, y, x) = at(0, y, x);
  return out;
}

EdgeMap::EdgeMap(int height, int width, std::vector<double> p)
    : height_(height), width_(width), p_(std::move(p)) {
  if (p_.size() != static_cast<std::size_t>(height) * width) throw ShapeError("edge map size mismatch");
  for (double v : p_)
    if (!(v >= 0.0 && v <= 1.0)) throw ShapeError("edge probability outside [0,1]");
}

Tensor stack_images(std::span<const ImageTensor> images) {
  if (images.empty()) throw ShapeError("cannot stack an empty image list");
  const ImageTensor& first = images.front();
  Tensor out(Shape{static_cast<int>(images.size()), first.channels(), first.height(), first.width()});
  const std::size_t per = first.values().size();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].channels() != first.channels() || images[i].height() != first.height() ||
        images[i].width() != first.width())
      throw ShapeError("images in a batch must share a shape");
    std::copy(images[i].values().begin(), images[i].values().end(), out.data() + i * per);
  }
  return out;
}

ImageTensor unstack_image(const Tensor& batch, int index) {
  if (batch.ndim() != 4) throw ShapeError("unstack expects NCHW");
  const Shape& s = batch.shape();
  Tensor chw(Shape{s[1], s[2], s[3]});
  const std::size_t per = chw.size();
  std::copy(batch.data() + index * per, batch.data() + (index + 1) * per, chw.data());
  return ImageTensor(std::move(chw));
}

std::uint8_t unit_to_byte(double v) {
  const double b = std::round((std::clamp(v, -1.0, 1.0) + 1.0) * 127.5);
  return static_cast<std::uint8_t>(b);
}

ImageTensor from_bytes(const ByteImage& img) {
  ImageTensor out(img.channels, img.height, img.width);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) out.at(c, y, x) = byte_to_unit(img.at(y, x, c));
  return out;
}

ByteImage to_bytes(const ImageTensor& img) {
  ByteImage out{img.width(), img.height(), img.channels(), {}};
  out.pixels.resize(static_cast<std::size_t>(img.width()) * img.height() * img.channels());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < img.channels(); ++c)
        out.pixels[(static_cast<std::size_t>(y) * img.width() + x) * img.channels() + c] =
            unit_to_byte(img.at(c, y, x));
  return out;
}

ByteImage decode_png(std::span<const std::uint8_t> data) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, data.data(), data.size()))
    throw ParseError(std::string("png decode failed: ") + image.message);
  const bool color = image.format & PNG_FORMAT_FLAG_COLOR;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  ByteImage out{static_cast<int>(image.width), static_cast<int>(image.height), color ? 3 : 1, {}};
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  png_color white{255, 255, 255};
  if (!png_image_finish_read(&image, &white, out.pixels.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw ParseError("png decode failed: " + msg);
  }
  return out;
}

std::vector<std::uint8_t> encode_png(const ByteImage& img) {
  if (img.channels != 1 && img.channels != 3) throw ShapeError("png encode supports 1 or 3 channels");
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_get_memory_size(image, size, 0, img.pixels.data(), 0, nullptr))
    throw IoError(std::string("png encode failed: ") + image.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, img.pixels.data(), 0, nullptr))
    throw IoError(std::string("png encode failed: ") + image.message);
  out.resize(size);
  return out;
}

ByteImage read_png(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_png(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

void write_png(const std::string& path, const ByteImage& img) {
  const auto bytes = encode_png(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace invsketch
