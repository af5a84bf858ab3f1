#pragma once

#include <memory>
#include <string>

#include "invsketch/data.hpp"
#include "invsketch/image.hpp"

namespace invsketch::contour {

class EdgeDetector {
 public:
  virtual ~EdgeDetector() = default;
  // Thin (non-max-suppressed) edge probabilities for an RGB or gray photo.
  virtual EdgeMap detect(const ImageTensor& photo) const = 0;
};

// Built-in detector: Sobel gradient of the channel-mean luminance followed by
// non-max suppression along the quantised gradient direction. Magnitudes are
// mapped to probabilities by p = min(1, |g| / saturation).
class SobelDetector : public EdgeDetector {
 public:
  explicit SobelDetector(double saturation = 0.25);
  EdgeMap detect(const ImageTensor& photo) const override;
  double saturation() const { return saturation_; }

 private:
  double saturation_;
};

// Returns a fixed map regardless of the photo (used for precomputed maps).
class FixedEdgeMap : public EdgeDetector {
 public:
  explicit FixedEdgeMap(EdgeMap map) : map_(std::move(map)) {}
  EdgeMap detect(const ImageTensor&) const override { return map_; }

 private:
  EdgeMap map_;
};

EdgeMap detect_edges(const ImageTensor& photo, const EdgeDetector& detector);

enum class KeepMode { kAbove, kBelow };
enum class SortOrder { kDescending, kAscending };

struct ThresholdConfig {
  double alpha = 0.08;
  double beta = 0.12;
  double cap = 0.9;
  KeepMode keep_mode = KeepMode::kAbove;
  SortOrder sort_order = SortOrder::kDescending;

  void validate() const;  // throws Error on alpha <= 0 or cap outside [0,1]
};

struct ThresholdStats {
  std::size_t detected = 0;  // l_sort
  double ratio = 0;          // r, detected / total
  double fraction = 0;       // min(alpha * exp(-beta * r), cap)
  std::size_t index = 0;
  double x = 0;              // threshold value; undefined when detected == 0
  std::size_t kept = 0;
};

double threshold_fraction(double r, const ThresholdConfig& cfg);
ThresholdStats threshold_stats(const EdgeMap& e, const ThresholdConfig& cfg);

// Binary contour: kept pixels -1, everything else +1.
ImageTensor dynamic_threshold(const EdgeMap& e, const ThresholdConfig& cfg = {});

// detect -> threshold -> scale-and-centre to target_size, re-binarised so any
// pixel touched by a kept edge stays a stroke. Throws BlankImage when nothing
// survives.
ImageTensor extract_contour(const ImageTensor& photo, const EdgeDetector& detector, const ThresholdConfig& cfg = {},
                            int target_size = 64);

// Precomputed edge maps on disk.
//   *.grid : "ISEG" magic, uint32 H, uint32 W (little-endian), then H*W
//            little-endian float32 values, row-major.
//   *.npy  : 2-D float32/float64 array, C order.
//   *.png  : gray value / 255.
EdgeMap load_edge_map(const std::string& path);
void save_edge_grid(const std::string& path, const EdgeMap& e);

}  // namespace invsketch::contour
