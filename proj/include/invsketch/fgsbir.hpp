#pragma once

// Fine-grained sketch-based photo retrieval with a four-branch Siamese
// network. One feature extractor f embeds the sketch s, its synthesised
// contour s_c and the positive/negative photos; the query is f(s) + f(s_c).

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "invsketch/data.hpp"
#include "invsketch/nn.hpp"
#include "invsketch/styletransfer.hpp"

namespace invsketch::sbir {

using ag::Var;

struct SbirNetConfig {
  // "toy": conv-ReLU-pool blocks, pooled affine head of size feature_dim.
  // "bottleneck": ResNet-style stem + bottleneck stages, pooled output of
  // 4 * bottleneck_widths.back() channels (feature_dim is derived).
  std::string backbone = "toy";
  std::vector<int> widths = {16, 32, 64};
  int feature_dim = 32;
  std::vector<int> blocks = {3, 4, 6, 3};
  std::vector<int> bottleneck_widths = {64, 128, 256, 512};
  int stem_width = 64;
  bool imagenet_input = false;
  int input_size = 32;  // 0 accepts any size
  bool renormalize_fused = false;
  std::string weights;  // optional pretrained backbone (checkpoint with backbone.* blocks)
  std::uint64_t seed = 0;

  static SbirNetConfig toy();
  static SbirNetConfig resnet50();  // 256x256 inputs, 2048-d features
  nlohmann::json to_json() const;
  static SbirNetConfig from_json(const nlohmann::json& j);
};

// Anything that maps [N,3,S,S] images to a spatial map and a raw feature.
class Backbone : public nn::Module {
 public:
  struct Output {
    Var maps;  // last convolutional activations, [N,C,h,w]
    Var raw;   // [N,d], before normalisation
  };
  virtual Output forward(const Var& x) = 0;
  virtual int feature_dim() const = 0;
};

class ToyBackbone : public Backbone {
 public:
  ToyBackbone(const std::vector<int>& widths, int feature_dim, nn::Initializer& init);
  Output forward(const Var& x) override;
  int feature_dim() const override { return dim_; }

 private:
  std::vector<std::unique_ptr<nn::Conv2d>> convs_;
  std::unique_ptr<nn::Linear> head_;
  int dim_;
};

class Bottleneck : public nn::Module {
 public:
  Bottleneck(int in_ch, int width, int stride, nn::Initializer& init);
  Var forward(const Var& x);

 private:
  std::unique_ptr<nn::Conv2d> c1_, c2_, c3_, proj_;
  std::unique_ptr<nn::BatchNorm2d> b1_, b2_, b3_, bproj_;
};

class BottleneckBackbone : public Backbone {
 public:
  BottleneckBackbone(const SbirNetConfig& cfg, nn::Initializer& init);
  Output forward(const Var& x) override;
  int feature_dim() const override { return dim_; }

 private:
  std::unique_ptr<nn::Conv2d> stem_;
  std::unique_ptr<nn::BatchNorm2d> stem_bn_;
  std::vector<std::unique_ptr<Bottleneck>> blocks_;
  bool imagenet_input_;
  int dim_;
};

class SbirModel : public nn::Module {
 public:
  explicit SbirModel(const SbirNetConfig& cfg);
  SbirModel(const SbirNetConfig& cfg, std::unique_ptr<Backbone> backbone);

  const SbirNetConfig& config() const { return cfg_; }
  Backbone& backbone() { return *backbone_; }
  int feature_dim() const { return backbone_->feature_dim(); }

  // Gray inputs are replicated to RGB; the spatial size must match the
  // configured input size. Rows are unit norm; throws DegenerateFeature
  // when a raw feature vanishes.
  Var prepare(const Var& x) const;
  Var embed(const Var& x);
  // Single image, eval mode, nothing recorded.
  std::vector<double> embed(const ImageTensor& x);

 private:
  SbirNetConfig cfg_;
  std::unique_ptr<Backbone> backbone_;
};

// Divides every row by its Euclidean norm; DegenerateFeature below 1e-12.
Var l2_normalize_rows(const Var& raw);

Var fuse(const Var& f_s, const Var& f_sc);
std::vector<double> fuse(const std::vector<double>& f_s, const std::vector<double>& f_sc);

// Column-standardised cross-correlation, squared Frobenius norm.
Var loss_decorr(const Var& f_s, const Var& f_sc, double eps = 1e-8);
// Row-wise squared Euclidean distance, [N,d] x [N,d] -> [N].
Var squared_distance(const Var& a, const Var& b);
// mean max(0, margin + d_pos - d_neg) over [N] distance vectors.
Var triplet_hinge(const Var& d_pos, const Var& d_neg, double margin);
Var loss_triplet(const Var& query, const Var& positive, const Var& negative, double margin);

struct SbirTrainConfig {
  double margin = 0.1;
  double lambda_decorr = 1.0;
  int batch = 16;
  long iterations = 60000;
  nn::AdamConfig adam;
  // Ablation switch: the decorrelation term is still measured and logged but
  // contributes no gradient.
  bool decorr_gradient = true;
  long checkpoint_every = 0;
  std::string checkpoint_path;
  std::string log_path;

  void validate() const;
  static SbirTrainConfig toy();
  void apply(const std::map<std::string, std::string>& kv);
  nlohmann::json to_json() const;
};

struct SbirLogRow {
  long iteration = 0;
  double triplet = 0, decorr = 0, total = 0;
};

struct SbirTrainResult {
  std::vector<SbirLogRow> log;
};

// s_c for every sketch, translated once by the frozen style model.
std::vector<ImageTensor> synthesize_contours(style::StyleModel& style_model,
                                             const std::vector<data::SketchSample>& sketches);

// `split` must be paired; `contours[i]` is the synthesised contour of sketch i.
SbirTrainResult train_sbir(SbirModel& model, const data::DatasetSplit& split, const std::vector<ImageTensor>& contours,
                           const SbirTrainConfig& cfg, std::uint64_t seed,
                           const std::function<void(const SbirLogRow&)>& on_iteration = {});
SbirTrainResult train_sbir(SbirModel& model, const data::DatasetSplit& split, style::StyleModel& style_model,
                           const SbirTrainConfig& cfg, std::uint64_t seed,
                           const std::function<void(const SbirLogRow&)>& on_iteration = {});

void save_sbir_model(const std::string& path, SbirModel& model, long iteration = 0);
std::unique_ptr<SbirModel> load_sbir_model(const std::string& path);

// ---- retrieval ----

struct Gallery {
  std::vector<std::string> ids;
  std::vector<std::vector<double>> features;
  std::string model_fingerprint;  // of the SBIR model that produced the features

  std::size_t size() const { return ids.size(); }
};

Gallery build_gallery(SbirModel& model, const std::vector<data::PhotoSample>& photos);

// Cache layout: "ISGC" | uint32 version | uint32 count | uint32 dim |
// 64-byte hex fingerprint | per entry: uint32 id length, id bytes, dim float64.
void save_gallery_cache(const std::string& path, const Gallery& gallery);
Gallery load_gallery_cache(const std::string& path);

struct RankedPhoto {
  std::string instance_id;
  double distance = 0;
  std::size_t gallery_index = 0;
};

struct RetrievalResult {
  std::string query_id;
  std::vector<RankedPhoto> ranking;  // ascending distance, ties by gallery index

  // 1-based rank of `instance_id`, 0 when absent.
  std::size_t rank_of(const std::string& instance_id) const;
};

std::vector<double> query_feature(SbirModel& model, const ImageTensor& sketch, const ImageTensor& contour);
RetrievalResult rank_gallery(const std::vector<double>& query, const Gallery& gallery, std::string query_id = "");
// Full pipeline: s_c = translate(s), q = f(s) + f(s_c), ranked against the gallery.
RetrievalResult retrieve(const ImageTensor& sketch, const Gallery& gallery, SbirModel& model,
                         style::StyleModel& style_model, std::string query_id = "");
RetrievalResult retrieve(const ImageTensor& sketch, const std::vector<data::PhotoSample>& photos, SbirModel& model,
                         style::StyleModel& style_model, std::string query_id = "");

// ---- attribution ----

enum class Branch { kSketch, kContour, kPhoto };

struct Heatmap {
  int height = 0;
  int width = 0;
  std::vector<double> values;  // row-major, >= 0

  double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

// Grad-CAM of the summed selected feature dimensions w.r.t. the branch's last
// convolutional map. The fused query is linear in each branch feature, so the
// gradient of q[dims] w.r.t. one branch equals that of f(branch input)[dims].
Heatmap gradcam(SbirModel& model, const ImageTensor& input, Branch branch, const std::vector<int>& dims);

// Indices of the k largest positive products q_i * p_i.
std::vector<int> top_contributing_dims(const std::vector<double>& query, const std::vector<double>& photo, int k = 2);

}  // namespace invsketch::sbir
