#pragma once

// Unsupervised sketch <-> contour translation through a shared embedding.
//
//   E      frozen multi-tap encoder, shared by both domains
//   G_H    one residual upsampling block; h = G_H(E(x))
//   G_HS   three blocks decoding h into the sketch domain
//   G_HC   three blocks decoding h into the contour domain
//   D_S/D_C patch discriminators with LayerNorm, D_cls attribute head on h
//
// Images are NCHW batches with values in [-1, 1]; one channel per image.

#include <array>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "invsketch/data.hpp"
#include "invsketch/nn.hpp"

namespace invsketch::style {

using ag::Var;

enum class Domain { kSketch, kContour };
enum class Direction { kSketchToContour, kContourToSketch };

struct StyleNetConfig {
  // Encoder geometry: convs per stage and stage widths; taps sit on the last
  // conv of every stage, before the pooling.
  std::vector<int> encoder_convs = {1, 1, 1, 1, 1};
  std::vector<int> encoder_widths = {8, 16, 16, 32, 32};
  // Optional pretrained encoder weights (checkpoint with encoder.* blocks).
  std::string encoder_weights;
  // Maps [-1,1] inputs to ImageNet-normalised RGB before the encoder.
  bool imagenet_input = false;
  std::vector<int> disc_widths = {8, 16, 32};
  int attributes = data::kAttributeCount;
  std::uint64_t seed = 0;

  static StyleNetConfig toy();
  static StyleNetConfig vgg16();  // conv1_2 ... conv5_3 geometry
  nlohmann::json to_json() const;
  static StyleNetConfig from_json(const nlohmann::json& j);
};

struct StyleTrainConfig {
  double lambda_adv = 10;
  double lambda_embed = 100;
  double lambda_recons = 100;
  double lambda_cls = 1;
  double lambda_gp = 10;
  int batch = 64;
  long iterations = 50000;
  int disc_steps = 1;  // discriminator updates per generator update
  nn::AdamConfig adam;
  long checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::string checkpoint_path;
  std::string log_path;       // CSV metrics; empty disables

  void validate() const;
  static StyleTrainConfig toy();
  // Overrides from a flat key-value map (keys mirror the field names).
  void apply(const std::map<std::string, std::string>& kv);
  nlohmann::json to_json() const;
};

struct EncoderTaps {
  std::array<Var, 5> taps;  // strides 1, 2, 4, 8, 16
};

class Encoder : public nn::Module {
 public:
  Encoder(const StyleNetConfig& cfg, nn::Initializer& init);
  EncoderTaps forward(const Var& x) const;  // x: [N,1|3,H,W], H and W divisible by 16
  const std::vector<int>& widths() const { return widths_; }

 private:
  std::vector<std::vector<std::unique_ptr<nn::Conv2d>>> stages_;
  std::vector<int> widths_;
  bool imagenet_input_;
};

// 1x1 conv -> bilinear x2 -> + encoder tap -> 3x3 residual -> 3x3 conv.
class DecoderBlock : public nn::Module {
 public:
  DecoderBlock(int in_ch, int tap_ch, int out_ch, bool final, nn::Initializer& init);
  Var forward(const Var& x, const Var& tap);

 private:
  std::unique_ptr<nn::Conv2d> lateral_, res1_, res2_, out_;
  std::unique_ptr<nn::BatchNorm2d> bn1_, bn2_, bn_out_;
  bool final_;
};

class SharedEmbedding : public nn::Module {
 public:
  SharedEmbedding(const std::vector<int>& widths, nn::Initializer& init);
  Var forward(const EncoderTaps& taps);  // deepest tap -> h at stride 8

 private:
  std::unique_ptr<DecoderBlock> block_;
};

class DomainDecoder : public nn::Module {
 public:
  DomainDecoder(const std::vector<int>& widths, nn::Initializer& init);
  Var forward(const Var& h, const EncoderTaps& taps);

 private:
  std::array<std::unique_ptr<DecoderBlock>, 3> blocks_;
};

// 4x4 convs: stride 2 for all but the last width, then a 1-channel score map.
class PatchDiscriminator : public nn::Module {
 public:
  PatchDiscriminator(const std::vector<int>& widths, nn::Initializer& init);
  Var forward(const Var& x) const;

 private:
  std::vector<std::unique_ptr<nn::Conv2d>> convs_;
  std::vector<std::unique_ptr<nn::LayerNorm>> norms_;
  std::unique_ptr<nn::Conv2d> head_;
};

// Global average pool of h, one affine layer; returns logits [N, attributes].
class AttributeHead : public nn::Module {
 public:
  AttributeHead(int channels, int attributes, nn::Initializer& init);
  Var forward(const Var& h) const;

 private:
  std::unique_ptr<nn::Linear> fc_;
};

// The pieces the losses are written against. StyleModel is the real thing;
// tests substitute hand-built stand-ins.
class StyleNetwork {
 public:
  virtual ~StyleNetwork() = default;
  virtual EncoderTaps encode(const Var& x) const = 0;
  virtual Var embed(const EncoderTaps& taps) = 0;
  virtual Var decode(Domain domain, const Var& h, const EncoderTaps& taps) = 0;
  virtual Var discriminate(Domain domain, const Var& x) const = 0;
  virtual Var classify(const Var& h) const = 0;
};

class StyleModel : public nn::Module, public StyleNetwork {
 public:
  explicit StyleModel(const StyleNetConfig& cfg);

  const StyleNetConfig& config() const { return cfg_; }

  EncoderTaps encode(const Var& x) const override;
  Var embed(const EncoderTaps& taps) override;
  Var decode(Domain domain, const Var& h, const EncoderTaps& taps) override;
  // G_S(E(x)) or G_C(E(x)).
  Var generate(Domain target, const Var& x);
  Var translate(const Var& x, Direction dir);
  // Inference on one image (eval mode, nothing recorded).
  ImageTensor translate(const ImageTensor& x, Direction dir);

  Var discriminate(Domain domain, const Var& x) const override;
  Var classify(const Var& h) const override;

  std::vector<Var> generator_parameters();      // G_H, G_HS, G_HC, D_cls
  std::vector<Var> discriminator_parameters();  // D_S, D_C

  Encoder& encoder() { return *encoder_; }

 private:
  StyleNetConfig cfg_;
  std::unique_ptr<Encoder> encoder_;
  std::unique_ptr<SharedEmbedding> g_h_;
  std::unique_ptr<DomainDecoder> g_hs_, g_hc_;
  std::unique_ptr<PatchDiscriminator> d_s_, d_c_;
  std::unique_ptr<AttributeHead> d_cls_;
};

// ---- losses (batches are [N,1,H,W]) ----

Var loss_embed(StyleNetwork& m, const Var& s, const Var& c);
Var loss_recons(StyleNetwork& m, const Var& s, const Var& c);
// attrs: [N, attributes] in {0,1}; mask: [N] 1 where the sample is annotated
// (empty Var = all annotated). Mean over attributes and annotated samples.
Var loss_cls(StyleNetwork& m, const Var& h_s, const Tensor& attrs, const Tensor& mask = Tensor());
Var loss_adv_generator(StyleNetwork& m, const Var& s, const Var& c);

struct DiscriminatorLoss {
  Var real;     // mean (D(real) - 1)^2
  Var fake;     // mean D(fake)^2
  Var penalty;  // mean over samples of (||grad D(x~)|| - 1)^2, unweighted
  Var total;    // real + fake + lambda_gp * penalty
};
// `u` holds one interpolation weight per sample; drawn from `rng` when empty.
DiscriminatorLoss loss_adv_discriminator(StyleNetwork& m, Domain domain, const Var& real, const Var& fake,
                                         double lambda_gp, std::mt19937_64& rng, std::vector<double> u = {});
// Per-sample input-gradient penalty of an arbitrary critic.
Var gradient_penalty(const std::function<Var(const Var&)>& critic, const Var& x_interp);

// ---- training ----

struct StyleLogRow {
  long iteration = 0;
  double d_real = 0, d_fake = 0, d_gp = 0, d_total = 0;
  double embed = 0, recons = 0, adv = 0, cls = 0, g_total = 0;
};

struct StyleTrainResult {
  std::vector<StyleLogRow> log;
};

// Trains on unpaired sketch and contour streams. Sketch attributes, when
// present, feed the attribute loss.
StyleTrainResult train_style(StyleModel& model, const std::vector<data::SketchSample>& sketches,
                             const std::vector<data::SketchSample>& contours, const StyleTrainConfig& cfg,
                             std::uint64_t seed, const std::function<void(const StyleLogRow&)>& on_iteration = {});

void save_style_model(const std::string& path, StyleModel& model, long iteration = 0);
std::unique_ptr<StyleModel> load_style_model(const std::string& path);

// Stacks single-channel images into a constant batch.
Var batch_of(const std::vector<ImageTensor>& images);

}  // namespace invsketch::style
