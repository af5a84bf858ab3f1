#include "invsketch/fgsbir.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "invsketch/checkpoint.hpp"
#include "invsketch/errors.hpp"

namespace invsketch::sbir {

using nlohmann::json;
using nn::PadMode;

// ---------------------------------------------------------------------------
// Configuration

SbirNetConfig SbirNetConfig::toy() { return SbirNetConfig{}; }

SbirNetConfig SbirNetConfig::resnet50() {
  SbirNetConfig c;
  c.backbone = "bottleneck";
  c.blocks = {3, 4, 6, 3};
  c.bottleneck_widths = {64, 128, 256, 512};
  c.stem_width = 64;
  c.imagenet_input = true;
  c.input_size = 256;
  c.feature_dim = 2048;
  return c;
}

json SbirNetConfig::to_json() const {
  return {{"backbone", backbone},
          {"widths", widths},
          {"feature_dim", feature_dim},
          {"blocks", blocks},
          {"bottleneck_widths", bottleneck_widths},
          {"stem_width", stem_width},
          {"imagenet_input", imagenet_input},
          {"input_size", input_size},
          {"renormalize_fused", renormalize_fused},
          {"weights", weights},
          {"seed", seed}};
}

SbirNetConfig SbirNetConfig::from_json(const json& j) {
  SbirNetConfig c;
  c.backbone = j.value("backbone", c.backbone);
  c.widths = j.value("widths", c.widths);
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.blocks = j.value("blocks", c.blocks);
  c.bottleneck_widths = j.value("bottleneck_widths", c.bottleneck_widths);
  c.stem_width = j.value("stem_width", c.stem_width);
  c.imagenet_input = j.value("imagenet_input", c.imagenet_input);
  c.input_size = j.value("input_size", c.input_size);
  c.renormalize_fused = j.value("renormalize_fused", c.renormalize_fused);
  c.weights = j.value("weights", std::string());
  c.seed = j.value("seed", std::uint64_t{0});
  return c;
}

void SbirTrainConfig::validate() const {
  if (!(margin > 0)) throw Error("triplet margin must be positive");
  if (!(lambda_decorr >= 0)) throw Error("lambda_decorr must be non-negative");
  if (batch < 1) throw Error("batch must be positive");
  if (iterations < 0) throw Error("iterations must be non-negative");
  if (checkpoint_every > 0 && checkpoint_path.empty()) throw Error("checkpoint_every needs checkpoint_path");
}

SbirTrainConfig SbirTrainConfig::toy() {
  SbirTrainConfig c;
  c.iterations = 1000;
  c.adam.lr = 1e-3;
  // The decorrelation term is a sum over d*d entries of up to n each, so at
  // batch 16 and d = 32 it starts near 3e4 while the hinge sits near 0.1.
  // This weight brings the two to the same order on the toy backbone.
  c.lambda_decorr = 1e-6;
  return c;
}

void SbirTrainConfig::apply(const std::map<std::string, std::string>& kv) {
  auto parse_bool = [](const std::string& key, const std::string& v) {
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw ParseError("bad boolean for '" + key + "': " + v);
  };
  for (const auto& [key, value] : kv) {
    try {
      if (key == "margin") margin = std::stod(value);
      else if (key == "lambda_decorr") lambda_decorr = std::stod(value);
      else if (key == "batch") batch = std::stoi(value);
      else if (key == "iterations") iterations = std::stol(value);
      else if (key == "lr") adam.lr = std::stod(value);
      else if (key == "beta1") adam.beta1 = std::stod(value);
      else if (key == "beta2") adam.beta2 = std::stod(value);
      else if (key == "decorr_gradient") decorr_gradient = parse_bool(key, value);
      else if (key == "checkpoint_every") checkpoint_every = std::stol(value);
      else if (key == "checkpoint_path") checkpoint_path = value;
      else if (key == "log_path") log_path = value;
      else throw ParseError("unknown sbir training key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw ParseError("bad value for '" + key + "': " + value);
    } catch (const std::out_of_range&) {
      throw ParseError("value out of range for '" + key + "': " + value);
    }
  }
  validate();
}

json SbirTrainConfig::to_json() const {
  return {{"margin", margin},   {"lambda_decorr", lambda_decorr}, {"batch", batch},
          {"iterations", iterations}, {"lr", adam.lr},          {"beta1", adam.beta1},
          {"beta2", adam.beta2}, {"decorr_gradient", decorr_gradient}};
}

// ---------------------------------------------------------------------------
// Backbones

ToyBackbone::ToyBackbone(const std::vector<int>& widths, int feature_dim, nn::Initializer& init) : dim_(feature_dim) {
  if (widths.empty() || feature_dim < 1) throw Error("toy backbone needs widths and a positive feature size");
  convs_.resize(widths.size());
  int in = 3;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    register_module("conv" + std::to_string(i), convs_[i],
                    std::make_unique<nn::Conv2d>(in, widths[i], 3, 1, 1, PadMode::kZero, true, init));
    in = widths[i];
  }
  register_module("head", head_, std::make_unique<nn::Linear>(in, feature_dim, init));
}

Backbone::Output ToyBackbone::forward(const Var& x) {
  Var h = x;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    if (i > 0) h = nn::max_pool2d(h, 2);
    h = ag::relu(convs_[i]->forward(h));
  }
  return {h, head_->forward(nn::global_avg_pool(h))};
}

Bottleneck::Bottleneck(int in_ch, int width, int stride, nn::Initializer& init) {
  const int out = 4 * width;
  register_module("conv1", c1_, std::make_unique<nn::Conv2d>(in_ch, width, 1, 1, 0, PadMode::kZero, false, init));
  register_module("bn1", b1_, std::make_unique<nn::BatchNorm2d>(width));
  register_module("conv2", c2_, std::make_unique<nn::Conv2d>(width, width, 3, stride, 1, PadMode::kZero, false, init));
  register_module("bn2", b2_, std::make_unique<nn::BatchNorm2d>(width));
  register_module("conv3", c3_, std::make_unique<nn::Conv2d>(width, out, 1, 1, 0, PadMode::kZero, false, init));
  register_module("bn3", b3_, std::make_unique<nn::BatchNorm2d>(out));
  if (stride != 1 || in_ch != out) {
    register_module("proj", proj_, std::make_unique<nn::Conv2d>(in_ch, out, 1, stride, 0, PadMode::kZero, false, init));
    register_module("proj_bn", bproj_, std::make_unique<nn::BatchNorm2d>(out));
  }
}

Var Bottleneck::forward(const Var& x) {
  Var y = ag::relu(b1_->forward(c1_->forward(x)));
  y = ag::relu(b2_->forward(c2_->forward(y)));
  y = b3_->forward(c3_->forward(y));
  Var skip = proj_ ? bproj_->forward(proj_->forward(x)) : x;
  return ag::relu(ag::add(y, skip));
}

BottleneckBackbone::BottleneckBackbone(const SbirNetConfig& cfg, nn::Initializer& init)
    : imagenet_input_(cfg.imagenet_input) {
  if (cfg.blocks.empty() || cfg.blocks.size() != cfg.bottleneck_widths.size())
    throw Error("bottleneck backbone needs one width per stage");
  register_module("stem", stem_, std::make_unique<nn::Conv2d>(3, cfg.stem_width, 7, 2, 3, PadMode::kZero, false, init));
  register_module("stem_bn", stem_bn_, std::make_unique<nn::BatchNorm2d>(cfg.stem_width));
  int in = cfg.stem_width;
  for (std::size_t s = 0; s < cfg.blocks.size(); ++s) {
    for (int b = 0; b < cfg.blocks[s]; ++b) {
      const int stride = (b == 0 && s > 0) ? 2 : 1;
      blocks_.emplace_back();
      register_module("layer" + std::to_string(s + 1) + "_" + std::to_string(b), blocks_.back(),
                      std::make_unique<Bottleneck>(in, cfg.bottleneck_widths[s], stride, init));
      in = 4 * cfg.bottleneck_widths[s];
    }
  }
  dim_ = in;
}

Backbone::Output BottleneckBackbone::forward(const Var& x0) {
  Var x = imagenet_input_ ? nn::imagenet_normalize(x0) : x0;
  x = nn::max_pool2d(ag::relu(stem_bn_->forward(stem_->forward(x))), 3, 2, 1);
  for (auto& b : blocks_) x = b->forward(x);
  return {x, nn::global_avg_pool(x)};
}

// ---------------------------------------------------------------------------
// Model

namespace {

std::unique_ptr<Backbone> make_backbone(const SbirNetConfig& cfg) {
  nn::Initializer init(cfg.seed * 104729 + 3);
  if (cfg.backbone == "toy") return std::make_unique<ToyBackbone>(cfg.widths, cfg.feature_dim, init);
  if (cfg.backbone == "bottleneck") return std::make_unique<BottleneckBackbone>(cfg, init);
  throw Error("unknown backbone '" + cfg.backbone + "'");
}

}  // namespace

SbirModel::SbirModel(const SbirNetConfig& cfg) : SbirModel(cfg, make_backbone(cfg)) {
  if (!cfg.weights.empty()) restore(*backbone_, load_checkpoint(cfg.weights), "backbone.");
}

SbirModel::SbirModel(const SbirNetConfig& cfg, std::unique_ptr<Backbone> backbone) : cfg_(cfg) {
  if (!backbone) throw Error("SbirModel needs a backbone");
  register_module("backbone", backbone_, std::move(backbone));
}

Var SbirModel::prepare(const Var& x) const {
  const Shape& s = x.shape();
  if (s.size() != 4) throw ShapeError("expected an NCHW batch, got " + shape_str(s));
  if (cfg_.input_size > 0 && (s[2] != cfg_.input_size || s[3] != cfg_.input_size))
    throw ShapeError("backbone expects " + std::to_string(cfg_.input_size) + "x" + std::to_string(cfg_.input_size) +
                     " inputs, got " + shape_str(s));
  if (s[1] == 3) return x;
  if (s[1] == 1) return ag::broadcast_to(x, Shape{s[0], 3, s[2], s[3]});
  throw ShapeError("expected 1 or 3 channels, got " + shape_str(s));
}

Var SbirModel::embed(const Var& x) { return l2_normalize_rows(backbone_->forward(prepare(x)).raw); }

std::vector<double> SbirModel::embed(const ImageTensor& x) {
  const bool was_training = training();
  set_training(false);
  ag::NoGradGuard guard;
  Var f = embed(ag::constant(stack_images(std::vector<ImageTensor>{x})));
  set_training(was_training);
  return {f.value().values().begin(), f.value().values().end()};
}

Var l2_normalize_rows(const Var& raw) {
  if (raw.shape().size() != 2) throw ShapeError("expected [N,d] features, got " + shape_str(raw.shape()));
  const int n = raw.shape()[0];
  Var norm = ag::sqrt(ag::sum_to(ag::square(raw), Shape{n, 1}));
  // A NaN norm passes so that training reports it as divergence.
  for (double v : norm.value().values())
    if (v < 1e-12) throw DegenerateFeature("raw feature has (near) zero norm");
  return ag::div(raw, norm);
}

Var fuse(const Var& f_s, const Var& f_sc) {
  if (f_s.shape() != f_sc.shape())
    throw ShapeError("cannot fuse " + shape_str(f_s.shape()) + " with " + shape_str(f_sc.shape()));
  return ag::add(f_s, f_sc);
}

std::vector<double> fuse(const std::vector<double>& f_s, const std::vector<double>& f_sc) {
  if (f_s.size() != f_sc.size()) throw ShapeError("cannot fuse features of different length");
  std::vector<double> out(f_s.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f_s[i] + f_sc[i];
  return out;
}

Var loss_decorr(const Var& f_s, const Var& f_sc, double eps) {
  if (f_s.shape().size() != 2 || f_s.shape() != f_sc.shape())
    throw ShapeError("decorrelation needs two [n,d] matrices of equal shape");
  const int n = f_s.shape()[0], d = f_s.shape()[1];
  if (n < 2) throw BatchTooSmall("decorrelation needs at least two rows, got " + std::to_string(n));
  auto standardize = [&](const Var& f) {
    Var centred = ag::sub(f, ag::scale(ag::sum_to(f, Shape{1, d}), 1.0 / n));
    Var var = ag::scale(ag::sum_to(ag::square(centred), Shape{1, d}), 1.0 / n);
    return ag::div(centred, ag::sqrt(ag::add_scalar(var, eps)));
  };
  Var cross = ag::matmul(ag::transpose(standardize(f_s)), standardize(f_sc));
  return ag::sum(ag::square(cross));
}

Var squared_distance(const Var& a, const Var& b) {
  if (a.shape().size() != 2 || a.shape() != b.shape()) throw ShapeError("distance needs two [N,d] batches");
  const int n = a.shape()[0];
  return ag::reshape(ag::sum_to(ag::square(ag::sub(a, b)), Shape{n, 1}), Shape{n});
}

Var triplet_hinge(const Var& d_pos, const Var& d_neg, double margin) {
  if (d_pos.shape() != d_neg.shape()) throw ShapeError("positive and negative distances differ in shape");
  return ag::mean(ag::relu(ag::add_scalar(ag::sub(d_pos, d_neg), margin)));
}

Var loss_triplet(const Var& query, const Var& positive, const Var& negative, double margin) {
  return triplet_hinge(squared_distance(query, positive), squared_distance(query, negative), margin);
}

// ---------------------------------------------------------------------------
// Training

namespace {

// Eval-mode features in chunks, nothing recorded.
std::vector<std::vector<double>> embed_images(SbirModel& model, const std::vector<ImageTensor>& images) {
  const bool was_training = model.training();
  model.set_training(false);
  ag::NoGradGuard guard;
  std::vector<std::vector<double>> out;
  constexpr std::size_t kChunk = 32;
  for (std::size_t b = 0; b < images.size(); b += kChunk) {
    std::vector<ImageTensor> chunk;
    for (std::size_t i = b; i < std::min(images.size(), b + kChunk); ++i) chunk.push_back(images[i].with_channels(3));
    const Tensor f = model.embed(ag::constant(stack_images(chunk))).value();
    const std::size_t d = f.size() / chunk.size();
    for (std::size_t i = 0; i < chunk.size(); ++i) out.emplace_back(f.data() + i * d, f.data() + (i + 1) * d);
  }
  model.set_training(was_training);
  return out;
}

}  // namespace

std::vector<ImageTensor> synthesize_contours(style::StyleModel& style_model,
                                             const std::vector<data::SketchSample>& sketches) {
  std::vector<ImageTensor> out;
  out.reserve(sketches.size());
  for (const auto& s : sketches) out.push_back(style_model.translate(s.image, style::Direction::kSketchToContour));
  return out;
}

SbirTrainResult train_sbir(SbirModel& model, const data::DatasetSplit& split, const std::vector<ImageTensor>& contours,
                           const SbirTrainConfig& cfg, std::uint64_t seed,
                           const std::function<void(const SbirLogRow&)>& on_iteration) {
  cfg.validate();
  SbirTrainResult result;
  if (cfg.iterations == 0) return result;
  if (!split.pairing) throw BrokenPair("SBIR training needs a paired split");
  if (contours.size() != split.sketches.size()) throw ShapeError("one synthesised contour per sketch expected");

  // Candidate negatives per sketch: every photo of another instance.
  std::vector<std::vector<std::size_t>> negatives(split.sketches.size());
  for (std::size_t i = 0; i < split.sketches.size(); ++i) {
    for (std::size_t p = 0; p < split.photos.size(); ++p)
      if (split.photos[p].instance_id != split.sketches[i].instance_id) negatives[i].push_back(p);
    if (negatives[i].empty()) throw Error("triplets need at least two photo instances");
  }

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_sketch(0, split.sketches.size() - 1);
  nn::Adam opt(model.trainable_parameters(), cfg.adam);
  const bool measure_decorr = cfg.batch >= 2;
  const int b = cfg.batch;

  std::ofstream log;
  if (!cfg.log_path.empty()) {
    log.open(cfg.log_path);
    if (!log) throw IoError("cannot write " + cfg.log_path);
    log << "iteration,triplet,decorr,total\n";
  }
  model.set_training(true);

  for (long it = 0; it < cfg.iterations; ++it) {
    // Branch-major batch [s; s_c; p+; p-] so the backbone sees all four
    // branches in a single pass with shared weights.
    std::vector<ImageTensor> images(static_cast<std::size_t>(4 * b));
    for (int k = 0; k < b; ++k) {
      const std::size_t i = pick_sketch(rng);
      const auto& neg = negatives[i];
      const std::size_t n = neg[std::uniform_int_distribution<std::size_t>(0, neg.size() - 1)(rng)];
      images[k] = split.sketches[i].image.with_channels(3);
      images[b + k] = contours[i].with_channels(3);
      images[2 * b + k] = split.photos[(*split.pairing)[i]].image.with_channels(3);
      images[3 * b + k] = split.photos[n].image.with_channels(3);
    }
    Var f = model.embed(ag::constant(stack_images(images)));
    Var f_s = ag::slice0(f, 0, b), f_sc = ag::slice0(f, b, 2 * b);
    Var f_pos = ag::slice0(f, 2 * b, 3 * b), f_neg = ag::slice0(f, 3 * b, 4 * b);
    Var q = fuse(f_s, f_sc);
    if (model.config().renormalize_fused) q = l2_normalize_rows(q);

    Var tri = loss_triplet(q, f_pos, f_neg, cfg.margin);
    Var dec = measure_decorr ? loss_decorr(f_s, f_sc) : ag::constant(Tensor::scalar(0.0));
    Var objective = cfg.decorr_gradient ? ag::add(tri, ag::scale(dec, cfg.lambda_decorr)) : tri;

    SbirLogRow row;
    row.iteration = it;
    row.triplet = tri.item();
    row.decorr = dec.item();
    row.total = row.triplet + cfg.lambda_decorr * row.decorr;
    if (!std::isfinite(row.triplet)) throw NumericalDivergence(it, "triplet loss");
    if (!std::isfinite(row.decorr)) throw NumericalDivergence(it, "decorrelation loss");
    opt.step(ag::grad(objective, opt.params()));

    result.log.push_back(row);
    if (log) log << row.iteration << ',' << row.triplet << ',' << row.decorr << ',' << row.total << '\n';
    if (on_iteration) on_iteration(row);
    if (cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0)
      save_sbir_model(cfg.checkpoint_path, model, it + 1);
  }
  model.set_training(false);
  return result;
}

SbirTrainResult train_sbir(SbirModel& model, const data::DatasetSplit& split, style::StyleModel& style_model,
                           const SbirTrainConfig& cfg, std::uint64_t seed,
                           const std::function<void(const SbirLogRow&)>& on_iteration) {
  return train_sbir(model, split, synthesize_contours(style_model, split.sketches), cfg, seed, on_iteration);
}

void save_sbir_model(const std::string& path, SbirModel& model, long iteration) {
  save_checkpoint(path, snapshot(model, "sbir", model.config().to_json(), iteration));
}

std::unique_ptr<SbirModel> load_sbir_model(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.kind != "sbir") throw ParseError(path + ": expected an sbir checkpoint, found '" + ck.kind + "'");
  SbirNetConfig cfg = SbirNetConfig::from_json(ck.config);
  cfg.weights.clear();
  auto model = std::make_unique<SbirModel>(cfg);
  restore(*model, ck);
  model->set_training(false);
  return model;
}

// ---------------------------------------------------------------------------
// Retrieval

Gallery build_gallery(SbirModel& model, const std::vector<data::PhotoSample>& photos) {
  Gallery g;
  std::vector<ImageTensor> images;
  for (const auto& p : photos) {
    g.ids.push_back(p.instance_id);
    images.push_back(p.image);
  }
  g.features = embed_images(model, images);
  g.model_fingerprint = module_fingerprint(model);
  return g;
}

namespace {
constexpr char kGalleryMagic[4] = {'I', 'S', 'G', 'C'};
constexpr std::uint32_t kGalleryVersion = 1;
}  // namespace

void save_gallery_cache(const std::string& path, const Gallery& gallery) {
  const std::uint32_t count = static_cast<std::uint32_t>(gallery.size());
  const std::uint32_t dim = gallery.features.empty() ? 0 : static_cast<std::uint32_t>(gallery.features[0].size());
  std::string fp = gallery.model_fingerprint;
  fp.resize(64, ' ');
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out.write(kGalleryMagic, 4);
    out.write(reinterpret_cast<const char*>(&kGalleryVersion), 4);
    out.write(reinterpret_cast<const char*>(&count), 4);
    out.write(reinterpret_cast<const char*>(&dim), 4);
    out.write(fp.data(), 64);
    for (std::size_t i = 0; i < gallery.size(); ++i) {
      if (gallery.features[i].size() != dim) throw ShapeError("gallery features differ in length");
      const std::uint32_t len = static_cast<std::uint32_t>(gallery.ids[i].size());
      out.write(reinterpret_cast<const char*>(&len), 4);
      out.write(gallery.ids[i].data(), len);
      out.write(reinterpret_cast<const char*>(gallery.features[i].data()),
                static_cast<std::streamsize>(dim * sizeof(double)));
    }
    if (!out) throw IoError("short write to " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("cannot move gallery cache into " + path);
}

Gallery load_gallery_cache(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[4];
  std::uint32_t version = 0, count = 0, dim = 0;
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kGalleryMagic, 4) != 0) throw ParseError(path + ": not a gallery cache");
  in.read(reinterpret_cast<char*>(&version), 4);
  if (version != kGalleryVersion) throw ParseError(path + ": unsupported gallery cache version");
  in.read(reinterpret_cast<char*>(&count), 4);
  in.read(reinterpret_cast<char*>(&dim), 4);
  std::string fp(64, ' ');
  in.read(fp.data(), 64);
  Gallery g;
  g.model_fingerprint = fp.substr(0, fp.find_last_not_of(' ') + 1);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 4);
    if (!in || len > (1u << 20)) throw ParseError(path + ": corrupt gallery entry");
    std::string id(len, '\0');
    in.read(id.data(), len);
    std::vector<double> f(dim);
    in.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(dim * sizeof(double)));
    if (!in) throw ParseError(path + ": truncated gallery cache");
    g.ids.push_back(std::move(id));
    g.features.push_back(std::move(f));
  }
  return g;
}

std::size_t RetrievalResult::rank_of(const std::string& instance_id) const {
  for (std::size_t i = 0; i < ranking.size(); ++i)
    if (ranking[i].instance_id == instance_id) return i + 1;
  return 0;
}

std::vector<double> query_feature(SbirModel& model, const ImageTensor& sketch, const ImageTensor& contour) {
  auto f = embed_images(model, {sketch, contour});
  std::vector<double> q = fuse(f[0], f[1]);
  if (model.config().renormalize_fused) {
    double n = 0;
    for (double v : q) n += v * v;
    n = std::sqrt(n);
    if (!(n >= 1e-12)) throw DegenerateFeature("fused query has zero norm");
    for (double& v : q) v /= n;
  }
  return q;
}

RetrievalResult rank_gallery(const std::vector<double>& query, const Gallery& gallery, std::string query_id) {
  if (gallery.size() == 0) throw EmptyGallery("cannot rank against an empty gallery");
  RetrievalResult r;
  r.query_id = std::move(query_id);
  r.ranking.reserve(gallery.size());
  for (std::size_t i = 0; i < gallery.size(); ++i) {
    const auto& p = gallery.features[i];
    if (p.size() != query.size()) throw ShapeError("query and gallery features differ in length");
    double d = 0;
    for (std::size_t k = 0; k < p.size(); ++k) d += (query[k] - p[k]) * (query[k] - p[k]);
    r.ranking.push_back({gallery.ids[i], d, i});
  }
  std::sort(r.ranking.begin(), r.ranking.end(), [](const RankedPhoto& a, const RankedPhoto& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.gallery_index < b.gallery_index;
  });
  return r;
}

RetrievalResult retrieve(const ImageTensor& sketch, const Gallery& gallery, SbirModel& model,
                         style::StyleModel& style_model, std::string query_id) {
  if (gallery.size() == 0) throw EmptyGallery("cannot retrieve from an empty gallery");
  const ImageTensor contour = style_model.translate(sketch, style::Direction::kSketchToContour);
  return rank_gallery(query_feature(model, sketch, contour), gallery, std::move(query_id));
}

RetrievalResult retrieve(const ImageTensor& sketch, const std::vector<data::PhotoSample>& photos, SbirModel& model,
                         style::StyleModel& style_model, std::string query_id) {
  if (photos.empty()) throw EmptyGallery("cannot retrieve from an empty gallery");
  return retrieve(sketch, build_gallery(model, photos), model, style_model, std::move(query_id));
}

// ---------------------------------------------------------------------------
// Attribution

Heatmap gradcam(SbirModel& model, const ImageTensor& input, Branch /*branch*/, const std::vector<int>& dims) {
  const int d = model.feature_dim();
  if (dims.empty()) throw IndexError("gradcam needs at least one feature dimension");
  for (int k : dims)
    if (k < 0 || k >= d) throw IndexError("feature dimension " + std::to_string(k) + " outside [0, " +
                                          std::to_string(d) + ")");

  const bool was_training = model.training();
  model.set_training(false);
  Var x(model.prepare(ag::constant(stack_images(std::vector<ImageTensor>{input}))).value(), true);
  Backbone::Output out = model.backbone().forward(x);
  Var f = l2_normalize_rows(out.raw);
  Tensor select(f.shape());
  for (int k : dims) select[k] = 1.0;
  Var target = ag::sum(ag::mul_const(f, select));
  const Tensor g = ag::grad(target, {out.maps})[0].value();
  const Tensor& a = out.maps.value();
  model.set_training(was_training);

  const int c = a.dim(1), h = a.dim(2), w = a.dim(3);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  Tensor cam(Shape{1, 1, h, w});
  for (int ch = 0; ch < c; ++ch) {
    double alpha = 0;
    for (std::size_t i = 0; i < hw; ++i) alpha += g[ch * hw + i];
    alpha /= static_cast<double>(hw);
    for (std::size_t i = 0; i < hw; ++i) cam[i] += alpha * a[ch * hw + i];
  }
  for (double& v : cam.values()) v = std::max(0.0, v);

  Heatmap map;
  map.height = input.height();
  map.width = input.width();
  const Tensor up = nn::resize_bilinear(ag::constant(cam), map.height, map.width).value();
  map.values.assign(up.values().begin(), up.values().end());
  for (double& v : map.values) v = std::max(0.0, v);
  return map;
}

std::vector<int> top_contributing_dims(const std::vector<double>& query, const std::vector<double>& photo, int k) {
  if (query.size() != photo.size()) throw ShapeError("query and photo features differ in length");
  std::vector<int> idx;
  for (std::size_t i = 0; i < query.size(); ++i)
    if (query[i] * photo[i] > 0) idx.push_back(static_cast<int>(i));
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return query[a] * photo[a] > query[b] * photo[b]; });
  if (static_cast<int>(idx.size()) > k) idx.resize(static_cast<std::size_t>(std::max(k, 0)));
  return idx;
}

}  // namespace invsketch::sbir
