#include "invsketch/contour.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <regex>

#include "invsketch/errors.hpp"

namespace invsketch::contour {

SobelDetector::SobelDetector(double saturation) : saturation_(saturation) {
  if (!(saturation > 0)) throw Error("edge saturation must be positive");
}

EdgeMap SobelDetector::detect(const ImageTensor& photo) const {
  const ImageTensor lum = photo.to_gray();
  const int h = lum.height(), w = lum.width();
  auto px = [&](int y, int x) { return lum.at(0, std::clamp(y, 0, h - 1), std::clamp(x, 0, w - 1)); };

  std::vector<double> mag(static_cast<std::size_t>(h) * w), gx(mag.size()), gy(mag.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double dx = (px(y - 1, x + 1) + 2 * px(y, x + 1) + px(y + 1, x + 1)) -
                        (px(y - 1, x - 1) + 2 * px(y, x - 1) + px(y + 1, x - 1));
      const double dy = (px(y + 1, x - 1) + 2 * px(y + 1, x) + px(y + 1, x + 1)) -
                        (px(y - 1, x - 1) + 2 * px(y - 1, x) + px(y - 1, x + 1));
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      gx[i] = dx / 8;
      gy[i] = dy / 8;
      mag[i] = std::hypot(gx[i], gy[i]);
    }

  auto m = [&](int y, int x) {
    if (y < 0 || y >= h || x < 0 || x >= w) return 0.0;
    return mag[static_cast<std::size_t>(y) * w + x];
  };
  EdgeMap out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      if (mag[i] < 1e-12) continue;
      // Quantise the gradient axis to 0, 45, 90 or 135 degrees.
      double angle = std::atan2(gy[i], gx[i]) * 180.0 / std::numbers::pi;
      if (angle < 0) angle += 180.0;
      int sy = 0, sx = 1;
      if (angle >= 22.5 && angle < 67.5) {
        sy = 1, sx = 1;
      } else if (angle >= 67.5 && angle < 112.5) {
        sy = 1, sx = 0;
      } else if (angle >= 112.5 && angle < 157.5) {
        sy = 1, sx = -1;
      }
      // Strict on the forward side and inclusive on the backward side, so a
      // two-pixel plateau keeps exactly one pixel.
      if (mag[i] > m(y + sy, x + sx) && mag[i] >= m(y - sy, x - sx))
        out.at(y, x) = std::min(1.0, mag[i] / saturation_);
    }
  return out;
}

EdgeMap detect_edges(const ImageTensor& photo, const EdgeDetector& detector) { return detector.detect(photo); }

void ThresholdConfig::validate() const {
  if (!(alpha > 0)) throw Error("threshold alpha must be positive");
  if (!(cap >= 0 && cap <= 1)) throw Error("threshold cap must lie in [0, 1]");
}

double threshold_fraction(double r, const ThresholdConfig& cfg) {
  return std::min(cfg.alpha * std::exp(-cfg.beta * r), cfg.cap);
}

namespace {

std::vector<double> detected_values(const EdgeMap& e) {
  std::vector<double> v;
  for (double p : e.values())
    if (p > 0) v.push_back(p);
  return v;
}

bool keeps(double p, double x, KeepMode mode) { return p > 0 && (mode == KeepMode::kAbove ? p >= x : p <= x); }

}  // namespace

ThresholdStats threshold_stats(const EdgeMap& e, const ThresholdConfig& cfg) {
  cfg.validate();
  ThresholdStats s;
  std::vector<double> det = detected_values(e);
  s.detected = det.size();
  const std::size_t total = e.values().size();
  s.ratio = total ? static_cast<double>(s.detected) / total : 0.0;
  s.fraction = threshold_fraction(s.ratio, cfg);
  if (det.empty()) return s;
  const double raw = std::floor(static_cast<double>(s.detected) * s.fraction);
  s.index = std::min(static_cast<std::size_t>(std::max(raw, 0.0)), s.detected - 1);
  auto nth = det.begin() + static_cast<long>(s.index);
  if (cfg.sort_order == SortOrder::kDescending) {
    std::nth_element(det.begin(), nth, det.end(), std::greater<>());
  } else {
    std::nth_element(det.begin(), nth, det.end());
  }
  s.x = *nth;
  for (double p : e.values()) s.kept += keeps(p, s.x, cfg.keep_mode);
  return s;
}

ImageTensor dynamic_threshold(const EdgeMap& e, const ThresholdConfig& cfg) {
  const ThresholdStats s = threshold_stats(e, cfg);
  ImageTensor out(1, e.height(), e.width(), 1.0);
  if (s.detected == 0) return out;
  for (int y = 0; y < e.height(); ++y)
    for (int x = 0; x < e.width(); ++x)
      if (keeps(e.at(y, x), s.x, cfg.keep_mode)) out.at(0, y, x) = -1.0;
  return out;
}

ImageTensor extract_contour(const ImageTensor& photo, const EdgeDetector& detector, const ThresholdConfig& cfg,
                            int target_size) {
  const ImageTensor binary = dynamic_threshold(detect_edges(photo, detector), cfg);
  const data::NormalizeOptions opts;
  ImageTensor out = data::normalize_image(binary, target_size, opts);
  for (double& v : out.values()) v = (1.0 - v > opts.foreground_threshold) ? -1.0 : 1.0;
  return out;
}

// ---------------------------------------------------------------------------
// Edge-map files

namespace {

constexpr char kGridMagic[4] = {'I', 'S', 'E', 'G'};

static_assert(std::endian::native == std::endian::little, "edge grid I/O assumes a little-endian host");

std::vector<char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

EdgeMap checked_map(const std::string& path, int h, int w, std::vector<double> values) {
  try {
    return EdgeMap(h, w, std::move(values));
  } catch (const ShapeError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

template <typename T>
std::vector<double> read_values(const std::vector<char>& bytes, std::size_t offset, std::size_t count,
                                const std::string& path) {
  if (bytes.size() < offset + count * sizeof(T)) throw ParseError(path + ": truncated data");
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    T v;
    std::memcpy(&v, bytes.data() + offset + i * sizeof(T), sizeof(T));
    out[i] = static_cast<double>(v);
  }
  return out;
}

EdgeMap load_grid(const std::string& path) {
  const auto bytes = slurp(path);
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kGridMagic, 4) != 0) throw ParseError(path + ": not an edge grid");
  std::uint32_t h, w;
  std::memcpy(&h, bytes.data() + 4, 4);
  std::memcpy(&w, bytes.data() + 8, 4);
  if (bytes.size() != 12 + static_cast<std::size_t>(h) * w * 4) throw ParseError(path + ": size does not match header");
  return checked_map(path, static_cast<int>(h), static_cast<int>(w),
                     read_values<float>(bytes, 12, static_cast<std::size_t>(h) * w, path));
}

EdgeMap load_npy(const std::string& path) {
  const auto bytes = slurp(path);
  if (bytes.size() < 10 || std::memcmp(bytes.data(), "\x93NUMPY", 6) != 0) throw ParseError(path + ": not a .npy file");
  const int major = static_cast<unsigned char>(bytes[6]);
  std::size_t header_len = 0, offset = 0;
  if (major == 1) {
    header_len = static_cast<unsigned char>(bytes[8]) | (static_cast<unsigned char>(bytes[9]) << 8);
    offset = 10;
  } else {
    if (bytes.size() < 12) throw ParseError(path + ": truncated header");
    std::uint32_t len;
    std::memcpy(&len, bytes.data() + 8, 4);
    header_len = len;
    offset = 12;
  }
  if (bytes.size() < offset + header_len) throw ParseError(path + ": truncated header");
  const std::string header(bytes.data() + offset, header_len);
  std::smatch descr, shape;
  if (!std::regex_search(header, descr, std::regex(R"('descr'\s*:\s*'([<|=])(f[48])')")))
    throw ParseError(path + ": only little-endian float32/float64 arrays are supported");
  if (header.find("'fortran_order': True") != std::string::npos) throw ParseError(path + ": Fortran order unsupported");
  if (!std::regex_search(header, shape, std::regex(R"('shape'\s*:\s*\(\s*(\d+)\s*,\s*(\d+)\s*,?\s*\))")))
    throw ParseError(path + ": expected a 2-D array");
  const int h = std::stoi(shape[1]), w = std::stoi(shape[2]);
  const std::size_t count = static_cast<std::size_t>(h) * w;
  const std::size_t data_offset = offset + header_len;
  auto values = descr[2] == "f4" ? read_values<float>(bytes, data_offset, count, path)
                                 : read_values<double>(bytes, data_offset, count, path);
  return checked_map(path, h, w, std::move(values));
}

EdgeMap load_png_map(const std::string& path) {
  ByteImage img = read_png(path);
  std::vector<double> values(static_cast<std::size_t>(img.width) * img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double acc = 0;
      for (int c = 0; c < img.channels; ++c) acc += img.at(y, x, c);
      values[static_cast<std::size_t>(y) * img.width + x] = acc / img.channels / 255.0;
    }
  return checked_map(path, img.height, img.width, std::move(values));
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

EdgeMap load_edge_map(const std::string& path) {
  if (ends_with(path, ".npy")) return load_npy(path);
  if (ends_with(path, ".png")) return load_png_map(path);
  return load_grid(path);
}

void save_edge_grid(const std::string& path, const EdgeMap& e) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  const std::uint32_t h = static_cast<std::uint32_t>(e.height()), w = static_cast<std::uint32_t>(e.width());
  out.write(kGridMagic, 4);
  out.write(reinterpret_cast<const char*>(&h), 4);
  out.write(reinterpret_cast<const char*>(&w), 4);
  for (double v : e.values()) {
    const float f = static_cast<float>(v);
    out.write(reinterpret_cast<const char*>(&f), 4);
  }
}

}  // namespace invsketch::contour
