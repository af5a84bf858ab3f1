#include "invsketch/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "json.hpp"

#include "invsketch/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace invsketch::data {

namespace {

struct Tap {
  int index;
  double weight;
};

// Box-filter taps mapping `count` output pixels onto the source interval
// [start, start + extent).
std::vector<std::vector<Tap>> box_taps(int start, int extent, int count) {
  std::vector<std::vector<Tap>> taps(static_cast<std::size_t>(count));
  const double step = static_cast<double>(extent) / count;
  for (int o = 0; o < count; ++o) {
    const double a = start + o * step;
    const double b = start + (o + 1) * step;
    for (int i = static_cast<int>(std::floor(a)); i < static_cast<int>(std::ceil(b)); ++i) {
      const double overlap = std::min(b, i + 1.0) - std::max(a, static_cast<double>(i));
      if (overlap > 1e-12) taps[o].push_back({i, overlap / step});
    }
  }
  return taps;
}

double sample(const ImageTensor& img, int c, int y, int x) {
  if (y < 0 || y >= img.height() || x < 0 || x >= img.width()) return 1.0;
  return img.at(c, y, x);
}

}  // namespace

ImageTensor normalize_image(const ImageTensor& img, int target, const NormalizeOptions& opts) {
  if (img.empty() || img.height() == 0 || img.width() == 0) throw BlankImage("empty image");
  const int avail = target - 2 * opts.margin;
  if (avail < 1) throw ShapeError("target size smaller than margins");
  int y0 = img.height(), y1 = -1, x0 = img.width(), x1 = -1;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      double darkest = 1.0;
      for (int c = 0; c < img.channels(); ++c) darkest = std::min(darkest, img.at(c, y, x));
      if (1.0 - darkest > opts.foreground_threshold) {
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
      }
    }
  if (y1 < 0) throw BlankImage("image has no foreground pixels");
  const int ext_h = y1 - y0 + 1, ext_w = x1 - x0 + 1;
  const int longest = std::max(ext_h, ext_w);
  auto out_extent = [&](int ext) {
    if (ext == longest) return avail;
    const int e = static_cast<int>(std::lround(static_cast<double>(ext) * avail / longest));
    return std::clamp(e, 1, avail);
  };
  const int e_h = out_extent(ext_h), e_w = out_extent(ext_w);
  const int oy = opts.margin + (avail - e_h) / 2;
  const int ox = opts.margin + (avail - e_w) / 2;
  const auto ty = box_taps(y0, ext_h, e_h);
  const auto tx = box_taps(x0, ext_w, e_w);

  ImageTensor out(img.channels(), target, target, 1.0);
  for (int c = 0; c < img.channels(); ++c)
    for (int y = 0; y < e_h; ++y)
      for (int x = 0; x < e_w; ++x) {
        double acc = 0;
        for (const Tap& a : ty[y])
          for (const Tap& b : tx[x]) acc += a.weight * b.weight * sample(img, c, a.index, b.index);
        out.at(c, oy + y, ox + x) = std::clamp(acc, -1.0, 1.0);
      }
  // Downsampling can blend a faint edge row into the background. Keep the
  // first and last row and column visibly foreground so that normalising the
  // result again finds the same box.
  const double faint = 1.0 - 2.0 * opts.foreground_threshold;
  auto ensure_foreground = [&](int ya, int yb, int xa, int xb) {
    int by = ya, bx = xa;
    double best = 2.0;
    for (int y = ya; y <= yb; ++y)
      for (int x = xa; x <= xb; ++x)
        for (int c = 0; c < out.channels(); ++c)
          if (out.at(c, y, x) < best) best = out.at(c, y, x), by = y, bx = x;
    if (1.0 - best > opts.foreground_threshold) return;
    for (int c = 0; c < out.channels(); ++c) out.at(c, by, bx) = std::min(out.at(c, by, bx), faint);
  };
  ensure_foreground(oy, oy, ox, ox + e_w - 1);
  ensure_foreground(oy + e_h - 1, oy + e_h - 1, ox, ox + e_w - 1);
  ensure_foreground(oy, oy + e_h - 1, ox, ox);
  ensure_foreground(oy, oy + e_h - 1, ox + e_w - 1, ox + e_w - 1);
  return out;
}

ImageTensor normalize_image(const ByteImage& raw, int target, Polarity polarity, const NormalizeOptions& opts) {
  if (raw.empty()) throw BlankImage("empty image");
  ImageTensor img = from_bytes(raw);
  if (polarity == Polarity::kLightOnDark)
    for (double& v : img.values()) v = -v;
  return normalize_image(img, target, opts);
}

ImageTensor resize_image(const ImageTensor& img, int height, int width) {
  if (img.height() == height && img.width() == width) return img;
  const auto ty = box_taps(0, img.height(), height);
  const auto tx = box_taps(0, img.width(), width);
  ImageTensor out(img.channels(), height, width);
  for (int c = 0; c < img.channels(); ++c)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        double acc = 0;
        for (const Tap& a : ty[y])
          for (const Tap& b : tx[x]) acc += a.weight * b.weight * sample(img, c, a.index, b.index);
        out.at(c, y, x) = acc;
      }
  return out;
}

// ---------------------------------------------------------------------------
// Attributes

std::vector<std::string> AttributeVocabulary::kept() const {
  std::vector<std::string> out;
  for (const auto& name : annotated)
    if (std::find(dropped.begin(), dropped.end(), name) == dropped.end()) out.push_back(name);
  return out;
}

AttributeVocabulary AttributeVocabulary::standard() {
  AttributeVocabulary v;
  for (int i = 0; i < kAttributeCount; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "part_%02d", i);
    v.annotated.emplace_back(buf);
  }
  v.dropped = {"frontal", "lateral", "others", "no decoration"};
  v.annotated.insert(v.annotated.end(), v.dropped.begin(), v.dropped.end());
  return v;
}

AttributeVocabulary AttributeVocabulary::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    json j = json::parse(in);
    AttributeVocabulary v;
    v.annotated = j.at("annotated").get<std::vector<std::string>>();
    v.dropped = j.value("dropped", std::vector<std::string>{});
    return v;
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

AttributeVector encode_attributes(const std::set<std::string>& annotation, const AttributeVocabulary& vocab) {
  for (const auto& name : annotation)
    if (std::find(vocab.annotated.begin(), vocab.annotated.end(), name) == vocab.annotated.end())
      throw UnknownAttribute("unknown attribute '" + name + "'");
  AttributeVector out;
  out.names = vocab.kept();
  out.flags.resize(out.names.size(), 0);
  for (std::size_t i = 0; i < out.names.size(); ++i) out.flags[i] = annotation.count(out.names[i]) ? 1 : 0;
  return out;
}

AttributeVector encode_attributes(const std::map<std::string, int>& record, const AttributeVocabulary& vocab) {
  std::set<std::string> on;
  for (const auto& [name, v] : record) {
    if (v != 0 && v != 1) throw ParseError("attribute '" + name + "' must be 0 or 1");
    if (std::find(vocab.annotated.begin(), vocab.annotated.end(), name) == vocab.annotated.end())
      throw UnknownAttribute("unknown attribute '" + name + "'");
    if (v) on.insert(name);
  }
  return encode_attributes(on, vocab);
}

// ---------------------------------------------------------------------------
// Splits

std::optional<std::size_t> DatasetSplit::photo_index(const std::string& id) const {
  for (std::size_t i = 0; i < photos.size(); ++i)
    if (photos[i].instance_id == id) return i;
  return std::nullopt;
}

std::string instance_id_from_stem(const std::string& stem) {
  const auto pos = stem.rfind('_');
  if (pos == std::string::npos || pos + 1 == stem.size()) return stem;
  const bool digits = std::all_of(stem.begin() + static_cast<long>(pos) + 1, stem.end(),
                                  [](unsigned char ch) { return std::isdigit(ch); });
  return digits && pos > 0 ? stem.substr(0, pos) : stem;
}

namespace {

std::vector<fs::path> list_pngs(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".png") out.push_back(entry.path());
  std::sort(out.begin(), out.end(), [](const fs::path& a, const fs::path& b) {
    return a.filename().string() < b.filename().string();
  });
  return out;
}

ImageTensor load_image(const fs::path& path, int size, int channels, bool normalize) {
  ByteImage raw = read_png(path.string());
  ImageTensor img = normalize ? normalize_image(raw, size) : from_bytes(raw);
  if (channels == 1) return img.to_gray();
  return img.with_channels(channels);
}

std::map<std::string, AttributeVector> load_attributes(const fs::path& path, const AttributeVocabulary& vocab) {
  std::map<std::string, AttributeVector> out;
  if (!fs::exists(path)) return out;
  std::ifstream in(path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw ParseError(path.string() + ": expected an object of per-photo records");
  for (const auto& [id, rec] : j.items()) {
    if (!rec.is_object()) throw ParseError(path.string() + ": record for '" + id + "' is not an object");
    std::map<std::string, int> flags;
    for (const auto& [name, v] : rec.items()) {
      if (v.is_boolean()) {
        flags[name] = v.get<bool>() ? 1 : 0;
      } else if (v.is_number_integer()) {
        flags[name] = v.get<int>();
      } else {
        throw ParseError(path.string() + ": attribute '" + name + "' of '" + id + "' is not 0/1");
      }
    }
    out.emplace(id, encode_attributes(flags, vocab));
  }
  return out;
}

std::vector<SketchSample> load_strokes(const fs::path& dir, const LoadOptions& opts,
                                       const std::map<std::string, AttributeVector>& attrs) {
  std::vector<SketchSample> out;
  for (const auto& path : list_pngs(dir)) {
    SketchSample s;
    s.instance_id = instance_id_from_stem(path.stem().string());
    s.image = load_image(path, opts.sketch_size, 1, opts.normalize);
    if (auto it = attrs.find(s.instance_id); it != attrs.end()) s.attributes = it->second;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

DatasetSplit load_split(const std::string& root_str, SplitMode mode, const LoadOptions& opts) {
  const fs::path root(root_str);
  if (!fs::is_directory(root)) throw IoError("dataset root " + root_str + " is not a directory");
  const auto attrs = load_attributes(root / "attributes.json", opts.vocabulary);
  DatasetSplit split;
  split.sketches = load_strokes(root / "sketches", opts, attrs);
  split.contours = load_strokes(root / "contours", opts, attrs);
  for (const auto& path : list_pngs(root / "photos"))
    split.photos.push_back({path.stem().string(), load_image(path, opts.photo_size, 3, opts.normalize)});
  if (mode == SplitMode::kPaired) {
    std::map<std::string, std::size_t> by_id;
    for (std::size_t i = 0; i < split.photos.size(); ++i) by_id.emplace(split.photos[i].instance_id, i);
    std::vector<std::size_t> pairing;
    for (const auto& s : split.sketches) {
      auto it = by_id.find(s.instance_id);
      if (it == by_id.end()) throw BrokenPair("sketch of '" + s.instance_id + "' has no photo");
      pairing.push_back(it->second);
    }
    split.pairing = std::move(pairing);
  }
  return split;
}

void save_split(const std::string& root_str, const DatasetSplit& split) {
  const fs::path root(root_str);
  fs::create_directories(root);
  json attrs = json::object();
  auto write_strokes = [&](const std::vector<SketchSample>& samples, const char* sub) {
    if (samples.empty()) return;
    fs::create_directories(root / sub);
    std::map<std::string, int> counter;
    for (const auto& s : samples) {
      const int k = counter[s.instance_id]++;
      write_png((root / sub / (s.instance_id + "_" + std::to_string(k) + ".png")).string(), to_bytes(s.image));
      if (s.attributes) {
        json rec = json::object();
        for (std::size_t i = 0; i < s.attributes->size(); ++i) rec[s.attributes->names[i]] = s.attributes->flags[i];
        attrs[s.instance_id] = rec;
      }
    }
  };
  write_strokes(split.sketches, "sketches");
  write_strokes(split.contours, "contours");
  if (!split.photos.empty()) {
    fs::create_directories(root / "photos");
    for (const auto& p : split.photos)
      write_png((root / "photos" / (p.instance_id + ".png")).string(), to_bytes(p.image));
  }
  if (!attrs.empty()) {
    std::ofstream out(root / "attributes.json");
    out << attrs.dump(1) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Toy corpus

namespace {

double cross(const Point& o, const Point& a, const Point& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

std::vector<Point> convex_hull(std::vector<Point> pts) {
  std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) {
    return a.x < b.x || (a.x == b.x && a.y < b.y);
  });
  std::vector<Point> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

double segment_distance(const Point& p, const Point& a, const Point& b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = a.x + t * dx - p.x, ey = a.y + t * dy - p.y;
  return std::sqrt(ex * ex + ey * ey);
}

bool inside_convex(const std::vector<Point>& poly, const Point& p) {
  for (std::size_t i = 0; i < poly.size(); ++i)
    if (cross(poly[i], poly[(i + 1) % poly.size()], p) < 0) return false;
  return true;
}

double stroke_coverage(double d, double width) { return std::clamp(width / 2 + 0.5 - d, 0.0, 1.0); }

double outline_distance(const std::vector<Point>& poly, const Point& p) {
  double best = 1e30;
  for (std::size_t i = 0; i < poly.size(); ++i)
    best = std::min(best, segment_distance(p, poly[i], poly[(i + 1) % poly.size()]));
  return best;
}

struct Warp {
  double amplitude = 0;
  double fx = 1, fy = 1, px = 0, py = 0;
  double scale_x = 1, scale_y = 1;

  Point apply(const Point& p, int size) const {
    const double two_pi = 2 * std::numbers::pi;
    return {p.x + amplitude * std::sin(two_pi * fy * p.y / size + py),
            p.y + amplitude * std::sin(two_pi * fx * p.x / size + px)};
  }
};

ImageTensor render_warped_outline(const std::vector<Point>& poly, int size, double width, const Warp& warp) {
  ImageTensor out(1, size, size, 1.0);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const Point q = warp.apply({x + 0.5, y + 0.5}, size);
      out.at(0, y, x) = 1.0 - 2.0 * stroke_coverage(outline_distance(poly, q), width);
    }
  return out;
}

ImageTensor render_photo(const ToyInstance& inst, int size, double width) {
  constexpr int kSuper = 4;
  ImageTensor out(3, size, size, 1.0);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      int hits = 0;
      for (int sy = 0; sy < kSuper; ++sy)
        for (int sx = 0; sx < kSuper; ++sx)
          hits += inside_convex(inst.polygon, {x + (sx + 0.5) / kSuper, y + (sy + 0.5) / kSuper});
      const double cover = static_cast<double>(hits) / (kSuper * kSuper);
      double detail = 0;
      for (const auto& seg : inst.details)
        detail = std::max(detail, stroke_coverage(segment_distance({x + 0.5, y + 0.5}, seg.a, seg.b), width));
      for (int c = 0; c < 3; ++c) {
        const double fill = inst.fill_rgb[c] + 0.3 * detail;
        out.at(c, y, x) = cover * fill + (1 - cover) * 1.0;
      }
    }
  return out;
}

}  // namespace

ImageTensor render_outline(const std::vector<Point>& polygon, int size, double width) {
  return render_warped_outline(polygon, size, width, Warp{});
}

ImageTensor render_segments(const std::vector<Segment>& segments, int size, double width) {
  ImageTensor out(1, size, size, 1.0);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double cov = 0;
      for (const auto& s : segments) cov = std::max(cov, stroke_coverage(segment_distance({x + 0.5, y + 0.5}, s.a, s.b), width));
      out.at(0, y, x) = 1.0 - 2.0 * cov;
    }
  return out;
}

std::vector<std::uint8_t> polygon_mask(const std::vector<Point>& polygon, int size) {
  std::vector<std::uint8_t> m(static_cast<std::size_t>(size) * size, 0);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) m[y * size + x] = inside_convex(polygon, {x + 0.5, y + 0.5});
  return m;
}

std::vector<std::uint8_t> polygon_boundary(const std::vector<Point>& polygon, int size) {
  const auto m = polygon_mask(polygon, size);
  std::vector<std::uint8_t> b(m.size(), 0);
  auto in = [&](int y, int x) { return y >= 0 && y < size && x >= 0 && x < size && m[y * size + x]; };
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      if (in(y, x) && (!in(y - 1, x) || !in(y + 1, x) || !in(y, x - 1) || !in(y, x + 1))) b[y * size + x] = 1;
  return b;
}

ToyDataset make_toy_dataset(std::uint64_t seed, int n_instances, int size, const ToyConfig& cfg) {
  if (n_instances < 2) throw Error("toy dataset needs at least two instances");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  auto uniform_int = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  const double unit = size / 32.0;
  const double width = cfg.stroke_width * unit;
  const auto vocab = AttributeVocabulary::standard();
  const auto kept = vocab.kept();

  ToyDataset out;
  out.sketch_domain.pairing = std::vector<std::size_t>{};
  for (int i = 0; i < n_instances; ++i) {
    ToyInstance inst;
    char id[32];
    std::snprintf(id, sizeof id, "toy_%04d", i);
    inst.instance_id = id;
    const int n_vertices = uniform_int(cfg.min_vertices, cfg.max_vertices);
    const Point centre{size / 2.0 + uniform(-0.04, 0.04) * size, size / 2.0 + uniform(-0.04, 0.04) * size};
    const double radius = size * 0.36;
    const double rot = uniform(0, 2 * std::numbers::pi);
    std::vector<Point> pts;
    for (int v = 0; v < n_vertices; ++v) {
      const double theta = rot + 2 * std::numbers::pi * (v + uniform(-0.25, 0.25)) / n_vertices;
      const double r = radius * uniform(0.7, 1.0);
      pts.push_back({centre.x + r * std::cos(theta), centre.y + r * std::sin(theta)});
    }
    inst.polygon = convex_hull(pts);
    const int n_details = uniform_int(cfg.min_details, cfg.max_details);
    for (int d = 0; d < n_details; ++d) {
      auto interior = [&] {
        const auto& a = inst.polygon[uniform_int(0, static_cast<int>(inst.polygon.size()) - 1)];
        const double t = uniform(0.15, 0.55);
        return Point{centre.x + t * (a.x - centre.x) + uniform(-1, 1) * unit,
                     centre.y + t * (a.y - centre.y) + uniform(-1, 1) * unit};
      };
      inst.details.push_back({interior(), interior()});
    }
    for (double& c : inst.fill_rgb) c = uniform(-0.8, 0.0);

    std::map<std::string, int> record;
    for (const auto& name : kept) record[name] = 0;
    record[kept[static_cast<std::size_t>(std::clamp(n_vertices - 5, 0, 3))]] = 1;
    record[kept[static_cast<std::size_t>(4 + std::clamp(n_details - 1, 0, 2))]] = 1;
    for (std::size_t k = 7; k < kept.size(); ++k) record[kept[k]] = u01(rng) < 0.3 ? 1 : 0;
    const AttributeVector attrs = encode_attributes(record, vocab);

    const ImageTensor details_img = render_segments(inst.details, size, width);
    const std::size_t photo_idx = out.sketch_domain.photos.size();
    const ImageTensor photo = render_photo(inst, size, width);
    out.sketch_domain.photos.push_back({inst.instance_id, photo});
    out.contour_domain.photos.push_back({inst.instance_id, photo});
    for (int k = 0; k < cfg.sketches_per_instance; ++k) {
      Warp warp;
      warp.amplitude = cfg.warp_amplitude * unit;
      warp.fx = uniform(0.5, 1.5);
      warp.fy = uniform(0.5, 1.5);
      warp.px = uniform(0, 2 * std::numbers::pi);
      warp.py = uniform(0, 2 * std::numbers::pi);
      ImageTensor sketch = render_warped_outline(inst.polygon, size, width, warp);
      for (std::size_t p = 0; p < sketch.values().size(); ++p)
        sketch.values()[p] = std::min(sketch.values()[p], details_img.values()[p]);
      out.sketch_domain.sketches.push_back({std::move(sketch), inst.instance_id, attrs});
      out.sketch_domain.pairing->push_back(photo_idx);
      out.contour_domain.contours.push_back({render_outline(inst.polygon, size, width), inst.instance_id, std::nullopt});
    }
    out.instances.push_back(std::move(inst));
  }
  return out;
}

}  // namespace invsketch::data
