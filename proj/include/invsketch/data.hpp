#pragma once

// Dataset ingestion: image normalisation, attribute encoding, on-disk split
// loading and the synthetic toy corpus.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "invsketch/image.hpp"

namespace invsketch::data {

enum class Polarity {
  kDarkOnLight,  // strokes darker than background (the usual sketch convention)
  kLightOnDark,  // input is inverted before mapping
};

struct NormalizeOptions {
  // A pixel is foreground when it deviates from the white background by more
  // than this (in [-1,1] units, darkest channel).
  double foreground_threshold = 1e-3;
  int margin = 0;  // background border kept on every side, in output pixels
};

// Centres the foreground bounding box, scales it to fill target_size (longest
// side; the short side is rounded to whole pixels) and pads with background.
// Output is dark-on-light in [-1,1]. Throws BlankImage when no foreground.
ImageTensor normalize_image(const ByteImage& raw, int target_size, Polarity polarity = Polarity::kDarkOnLight,
                            const NormalizeOptions& opts = {});
ImageTensor normalize_image(const ImageTensor& img, int target_size, const NormalizeOptions& opts = {});

// Plain resize of a whole image (no centring), area-weighted.
ImageTensor resize_image(const ImageTensor& img, int height, int width);

// ---- attributes ----

struct AttributeVocabulary {
  std::vector<std::string> annotated;  // full annotation vocabulary
  std::vector<std::string> dropped;    // removed before encoding

  std::vector<std::string> kept() const;
  static AttributeVocabulary standard();  // 33 part attributes + 4 decoration ones
  static AttributeVocabulary from_json_file(const std::string& path);
};

inline constexpr int kAttributeCount = 33;

struct AttributeVector {
  std::vector<std::uint8_t> flags;
  std::vector<std::string> names;

  std::size_t size() const { return flags.size(); }
};

// Maps a raw label set onto the kept vocabulary. Throws UnknownAttribute.
AttributeVector encode_attributes(const std::set<std::string>& annotation,
                                  const AttributeVocabulary& vocab = AttributeVocabulary::standard());
// Record form: attribute-name -> 0/1.
AttributeVector encode_attributes(const std::map<std::string, int>& record,
                                  const AttributeVocabulary& vocab = AttributeVocabulary::standard());

// ---- splits ----

struct SketchSample {
  ImageTensor image;
  std::string instance_id;
  std::optional<AttributeVector> attributes;
};

struct PhotoSample {
  std::string instance_id;
  ImageTensor image;
};

enum class SplitMode { kPaired, kUnpaired };

struct DatasetSplit {
  std::vector<SketchSample> sketches;
  std::vector<PhotoSample> photos;
  std::vector<SketchSample> contours;
  // Index into `photos` for every sketch; absent in unpaired mode.
  std::optional<std::vector<std::size_t>> pairing;

  std::optional<std::size_t> photo_index(const std::string& instance_id) const;
};

struct LoadOptions {
  int sketch_size = 64;
  int photo_size = 256;
  bool normalize = true;  // scale-and-centre; otherwise images must already be sized
  AttributeVocabulary vocabulary = AttributeVocabulary::standard();
};

// Reads root/{sketches,photos,contours}/<id>[_k].png and root/attributes.json.
// Files are visited in lexicographic order.
DatasetSplit load_split(const std::string& root, SplitMode mode, const LoadOptions& opts = {});

// Writes a split in the layout load_split reads.
void save_split(const std::string& root, const DatasetSplit& split);

// Instance id encoded in a sketch/contour file stem: a trailing _<digits> is stripped.
std::string instance_id_from_stem(const std::string& stem);

// ---- toy corpus ----

struct ToyConfig {
  double warp_amplitude = 1.5;  // pixels at size 32, scaled with size
  int min_vertices = 5;
  int max_vertices = 8;
  int min_details = 1;
  int max_details = 3;
  int sketches_per_instance = 1;
  double stroke_width = 1.2;  // pixels at size 32, scaled with size
};

struct Point {
  double x = 0;
  double y = 0;
};

struct Segment {
  Point a, b;
};

// Ground truth kept for oracles.
struct ToyInstance {
  std::string instance_id;
  std::vector<Point> polygon;   // convex, counter-clockwise, pixel coordinates
  std::vector<Segment> details;
  double fill_rgb[3] = {0, 0, 0};
};

struct ToyDataset {
  DatasetSplit sketch_domain;   // sketches (+attributes), photos, pairing
  DatasetSplit contour_domain;  // contours (unwarped outlines), photos
  std::vector<ToyInstance> instances;
};

ToyDataset make_toy_dataset(std::uint64_t seed, int n_instances, int size, const ToyConfig& cfg = {});

// Rasterisation helpers shared with oracles.
ImageTensor render_outline(const std::vector<Point>& polygon, int size, double stroke_width);
ImageTensor render_segments(const std::vector<Segment>& segments, int size, double stroke_width);
// Binary inside mask (pixel centres), row-major.
std::vector<std::uint8_t> polygon_mask(const std::vector<Point>& polygon, int size);
// Inside pixels with a 4-neighbour outside the polygon.
std::vector<std::uint8_t> polygon_boundary(const std::vector<Point>& polygon, int size);

}  // namespace invsketch::data
