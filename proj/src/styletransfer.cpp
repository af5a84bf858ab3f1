#include "invsketch/styletransfer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "invsketch/checkpoint.hpp"
#include "invsketch/errors.hpp"

namespace invsketch::style {

using nlohmann::json;
using nn::PadMode;

// ---------------------------------------------------------------------------
// Configs

StyleNetConfig StyleNetConfig::toy() { return StyleNetConfig{}; }

StyleNetConfig StyleNetConfig::vgg16() {
  StyleNetConfig c;
  c.encoder_convs = {2, 2, 3, 3, 3};
  c.encoder_widths = {64, 128, 256, 512, 512};
  c.disc_widths = {64, 128, 256, 512};
  c.imagenet_input = true;
  return c;
}

json StyleNetConfig::to_json() const {
  return {{"encoder_convs", encoder_convs}, {"encoder_widths", encoder_widths},
          {"encoder_weights", encoder_weights}, {"imagenet_input", imagenet_input},
          {"disc_widths", disc_widths}, {"attributes", attributes}, {"seed", seed}};
}

StyleNetConfig StyleNetConfig::from_json(const json& j) {
  StyleNetConfig c;
  c.encoder_convs = j.at("encoder_convs").get<std::vector<int>>();
  c.encoder_widths = j.at("encoder_widths").get<std::vector<int>>();
  c.encoder_weights = j.value("encoder_weights", std::string());
  c.imagenet_input = j.value("imagenet_input", false);
  c.disc_widths = j.at("disc_widths").get<std::vector<int>>();
  c.attributes = j.value("attributes", data::kAttributeCount);
  c.seed = j.value("seed", std::uint64_t{0});
  return c;
}

void StyleTrainConfig::validate() const {
  for (double l : {lambda_adv, lambda_embed, lambda_recons, lambda_cls, lambda_gp})
    if (!(l >= 0)) throw Error("loss weights must be non-negative");
  if (batch < 1) throw Error("batch must be positive");
  if (iterations < 0) throw Error("iterations must be non-negative");
  if (disc_steps < 0) throw Error("disc_steps must be non-negative");
  if (checkpoint_every > 0 && checkpoint_path.empty()) throw Error("checkpoint_every needs checkpoint_path");
}

StyleTrainConfig StyleTrainConfig::toy() {
  StyleTrainConfig c;
  c.batch = 8;
  c.iterations = 2000;
  // The short toy schedule needs a larger step than the full-scale 1e-4.
  c.adam.lr = 1e-3;
  return c;
}

void StyleTrainConfig::apply(const std::map<std::string, std::string>& kv) {
  for (const auto& [key, value] : kv) {
    try {
      if (key == "lambda_adv") lambda_adv = std::stod(value);
      else if (key == "lambda_embed") lambda_embed = std::stod(value);
      else if (key == "lambda_recons") lambda_recons = std::stod(value);
      else if (key == "lambda_cls") lambda_cls = std::stod(value);
      else if (key == "lambda_gp") lambda_gp = std::stod(value);
      else if (key == "batch") batch = std::stoi(value);
      else if (key == "iterations") iterations = std::stol(value);
      else if (key == "disc_steps") disc_steps = std::stoi(value);
      else if (key == "lr") adam.lr = std::stod(value);
      else if (key == "beta1") adam.beta1 = std::stod(value);
      else if (key == "beta2") adam.beta2 = std::stod(value);
      else if (key == "checkpoint_every") checkpoint_every = std::stol(value);
      else if (key == "checkpoint_path") checkpoint_path = value;
      else if (key == "log_path") log_path = value;
      else throw ParseError("unknown style training key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw ParseError("bad value for '" + key + "': " + value);
    } catch (const std::out_of_range&) {
      throw ParseError("value out of range for '" + key + "': " + value);
    }
  }
  validate();
}

json StyleTrainConfig::to_json() const {
  return {{"lambda_adv", lambda_adv}, {"lambda_embed", lambda_embed}, {"lambda_recons", lambda_recons},
          {"lambda_cls", lambda_cls}, {"lambda_gp", lambda_gp}, {"batch", batch},
          {"iterations", iterations}, {"disc_steps", disc_steps}, {"lr", adam.lr},
          {"beta1", adam.beta1}, {"beta2", adam.beta2}};
}

// ---------------------------------------------------------------------------
// Networks

Encoder::Encoder(const StyleNetConfig& cfg, nn::Initializer& init)
    : widths_(cfg.encoder_widths), imagenet_input_(cfg.imagenet_input) {
  if (cfg.encoder_widths.size() != 5 || cfg.encoder_convs.size() != 5)
    throw Error("encoder needs exactly five stages");
  stages_.resize(5);
  int in = 3;
  for (int s = 0; s < 5; ++s) {
    stages_[s].resize(static_cast<std::size_t>(cfg.encoder_convs[s]));
    for (int k = 0; k < cfg.encoder_convs[s]; ++k) {
      register_module("stage" + std::to_string(s) + "_" + std::to_string(k), stages_[s][k],
                      std::make_unique<nn::Conv2d>(in, widths_[s], 3, 1, 1, PadMode::kZero, true, init));
      in = widths_[s];
    }
  }
}

EncoderTaps Encoder::forward(const Var& x0) const {
  const Shape& s = x0.shape();
  if (s.size() != 4) throw ShapeError("encoder expects NCHW, got " + shape_str(s));
  if (s[2] % 16 || s[3] % 16) throw ShapeError("encoder input size must be divisible by 16, got " + shape_str(s));
  Var x = x0;
  if (s[1] == 1) x = ag::broadcast_to(x, Shape{s[0], 3, s[2], s[3]});
  if (x.shape()[1] != 3) throw ShapeError("encoder expects 1 or 3 channels");
  if (imagenet_input_) x = nn::imagenet_normalize(x);
  EncoderTaps out;
  for (int st = 0; st < 5; ++st) {
    if (st > 0) x = nn::max_pool2d(x, 2);
    for (const auto& conv : stages_[st]) x = ag::relu(conv->forward(x));
    out.taps[st] = x;
  }
  return out;
}

DecoderBlock::DecoderBlock(int in_ch, int tap_ch, int out_ch, bool final, nn::Initializer& init) : final_(final) {
  register_module("lateral", lateral_, std::make_unique<nn::Conv2d>(in_ch, tap_ch, 1, 1, 0, PadMode::kZero, true, init));
  register_module("res1", res1_, std::make_unique<nn::Conv2d>(tap_ch, tap_ch, 3, 1, 1, PadMode::kReflect, false, init));
  register_module("bn1", bn1_, std::make_unique<nn::BatchNorm2d>(tap_ch));
  register_module("res2", res2_, std::make_unique<nn::Conv2d>(tap_ch, tap_ch, 3, 1, 1, PadMode::kReflect, false, init));
  register_module("bn2", bn2_, std::make_unique<nn::BatchNorm2d>(tap_ch));
  register_module("out", out_, std::make_unique<nn::Conv2d>(tap_ch, out_ch, 3, 1, 1, PadMode::kReflect, final, init));
  if (!final) register_module("bn_out", bn_out_, std::make_unique<nn::BatchNorm2d>(out_ch));
}

Var DecoderBlock::forward(const Var& x, const Var& tap) {
  Var y = ag::add(nn::upsample_bilinear2x(lateral_->forward(x)), tap);
  Var r = ag::relu(bn1_->forward(res1_->forward(y)));
  r = ag::relu(bn2_->forward(res2_->forward(r)));
  y = ag::add(y, r);
  if (final_) return ag::tanh(out_->forward(y));
  return ag::relu(bn_out_->forward(out_->forward(y)));
}

SharedEmbedding::SharedEmbedding(const std::vector<int>& w, nn::Initializer& init) {
  register_module("block", block_, std::make_unique<DecoderBlock>(w[4], w[3], w[3], false, init));
}

Var SharedEmbedding::forward(const EncoderTaps& taps) { return block_->forward(taps.taps[4], taps.taps[3]); }

DomainDecoder::DomainDecoder(const std::vector<int>& w, nn::Initializer& init) {
  register_module("block0", blocks_[0], std::make_unique<DecoderBlock>(w[3], w[2], w[2], false, init));
  register_module("block1", blocks_[1], std::make_unique<DecoderBlock>(w[2], w[1], w[1], false, init));
  register_module("block2", blocks_[2], std::make_unique<DecoderBlock>(w[1], w[0], 1, true, init));
}

Var DomainDecoder::forward(const Var& h, const EncoderTaps& taps) {
  Var x = blocks_[0]->forward(h, taps.taps[2]);
  x = blocks_[1]->forward(x, taps.taps[1]);
  return blocks_[2]->forward(x, taps.taps[0]);
}

PatchDiscriminator::PatchDiscriminator(const std::vector<int>& widths, nn::Initializer& init) {
  if (widths.empty()) throw Error("discriminator needs at least one width");
  convs_.resize(widths.size());
  norms_.resize(widths.size());
  int in = 1;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const int stride = i + 1 < widths.size() ? 2 : 1;
    register_module("conv" + std::to_string(i), convs_[i],
                    std::make_unique<nn::Conv2d>(in, widths[i], 4, stride, 1, PadMode::kZero, true, init));
    if (i > 0) register_module("norm" + std::to_string(i), norms_[i], std::make_unique<nn::LayerNorm>(widths[i]));
    in = widths[i];
  }
  register_module("head", head_, std::make_unique<nn::Conv2d>(in, 1, 4, 1, 1, PadMode::kZero, true, init));
}

Var PatchDiscriminator::forward(const Var& x0) const {
  Var x = x0;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    x = convs_[i]->forward(x);
    if (norms_[i]) x = norms_[i]->forward(x);
    x = ag::leaky_relu(x, 0.2);
  }
  return head_->forward(x);
}

AttributeHead::AttributeHead(int channels, int attributes, nn::Initializer& init) {
  register_module("fc", fc_, std::make_unique<nn::Linear>(channels, attributes, init));
}

Var AttributeHead::forward(const Var& h) const { return fc_->forward(nn::global_avg_pool(h)); }

StyleModel::StyleModel(const StyleNetConfig& cfg) : cfg_(cfg) {
  nn::Initializer enc_init(cfg.seed);
  nn::Initializer init(cfg.seed * 7919 + 1);
  register_module("encoder", encoder_, std::make_unique<Encoder>(cfg, enc_init));
  if (!cfg.encoder_weights.empty()) restore(*encoder_, load_checkpoint(cfg.encoder_weights), "encoder.");
  encoder_->freeze();
  const auto& w = cfg.encoder_widths;
  register_module("g_h", g_h_, std::make_unique<SharedEmbedding>(w, init));
  register_module("g_hs", g_hs_, std::make_unique<DomainDecoder>(w, init));
  register_module("g_hc", g_hc_, std::make_unique<DomainDecoder>(w, init));
  register_module("d_s", d_s_, std::make_unique<PatchDiscriminator>(cfg.disc_widths, init));
  register_module("d_c", d_c_, std::make_unique<PatchDiscriminator>(cfg.disc_widths, init));
  register_module("d_cls", d_cls_, std::make_unique<AttributeHead>(w[3], cfg.attributes, init));
}

EncoderTaps StyleModel::encode(const Var& x) const { return encoder_->forward(x); }

Var StyleModel::embed(const EncoderTaps& taps) { return g_h_->forward(taps); }

Var StyleModel::decode(Domain domain, const Var& h, const EncoderTaps& taps) {
  return domain == Domain::kSketch ? g_hs_->forward(h, taps) : g_hc_->forward(h, taps);
}

Var StyleModel::generate(Domain target, const Var& x) {
  EncoderTaps taps = encode(x);
  return decode(target, embed(taps), taps);
}

Var StyleModel::translate(const Var& x, Direction dir) {
  return generate(dir == Direction::kSketchToContour ? Domain::kContour : Domain::kSketch, x);
}

ImageTensor StyleModel::translate(const ImageTensor& x, Direction dir) {
  const bool was_training = training();
  set_training(false);
  ag::NoGradGuard guard;
  Var out = translate(batch_of({x.to_gray()}), dir);
  set_training(was_training);
  // tanh rounds to exactly +-1 in double for large logits; keep the open range.
  const double edge = std::nextafter(1.0, 0.0);
  ImageTensor img = unstack_image(out.value(), 0);
  for (double& v : img.values()) v = std::clamp(v, -edge, edge);
  return img;
}

Var StyleModel::discriminate(Domain domain, const Var& x) const {
  return domain == Domain::kSketch ? d_s_->forward(x) : d_c_->forward(x);
}

Var StyleModel::classify(const Var& h) const { return d_cls_->forward(h); }

std::vector<Var> StyleModel::generator_parameters() {
  std::vector<Var> out;
  for (nn::Module* m : std::initializer_list<nn::Module*>{g_h_.get(), g_hs_.get(), g_hc_.get(), d_cls_.get()}) {
    auto p = m->trainable_parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<Var> StyleModel::discriminator_parameters() {
  std::vector<Var> out = d_s_->trainable_parameters();
  auto p = d_c_->trainable_parameters();
  out.insert(out.end(), p.begin(), p.end());
  return out;
}

Var batch_of(const std::vector<ImageTensor>& images) { return ag::constant(stack_images(images)); }

// ---------------------------------------------------------------------------
// Losses

namespace {

Var mean_squared_to(const Var& x, double target) { return ag::mean(ag::square(ag::add_scalar(x, -target))); }

Var embed_distance(const Var& a, const Var& b) { return ag::mean(ag::sample_norm(ag::sub(a, b))); }

// One generator-side forward pass shared by all generator losses.
struct Pass {
  EncoderTaps taps_s, taps_c;
  Var h_s, h_c;
  Var s_c, c_s;      // cross-domain translations
  Var s_rec, c_rec;  // same-domain reconstructions
};

Pass forward_pass(StyleNetwork& m, const Var& s, const Var& c, bool need_recons) {
  Pass p;
  p.taps_s = m.encode(s);
  p.taps_c = m.encode(c);
  p.h_s = m.embed(p.taps_s);
  p.h_c = m.embed(p.taps_c);
  p.s_c = m.decode(Domain::kContour, p.h_s, p.taps_s);
  p.c_s = m.decode(Domain::kSketch, p.h_c, p.taps_c);
  if (need_recons) {
    p.s_rec = m.decode(Domain::kSketch, p.h_s, p.taps_s);
    p.c_rec = m.decode(Domain::kContour, p.h_c, p.taps_c);
  }
  return p;
}

Var embed_term(StyleNetwork& m, const Pass& p) {
  Var h_sc = m.embed(m.encode(p.s_c));
  Var h_cs = m.embed(m.encode(p.c_s));
  return ag::add(embed_distance(p.h_s, h_sc), embed_distance(p.h_c, h_cs));
}

Var recons_term(const Var& s, const Var& c, const Pass& p) {
  return ag::add(ag::mean(ag::abs(ag::sub(s, p.s_rec))), ag::mean(ag::abs(ag::sub(c, p.c_rec))));
}

Var adv_term(StyleNetwork& m, const Pass& p) {
  return ag::add(mean_squared_to(m.discriminate(Domain::kContour, p.s_c), 1.0),
                 mean_squared_to(m.discriminate(Domain::kSketch, p.c_s), 1.0));
}

}  // namespace

Var loss_embed(StyleNetwork& m, const Var& s, const Var& c) { return embed_term(m, forward_pass(m, s, c, false)); }

Var loss_recons(StyleNetwork& m, const Var& s, const Var& c) {
  Pass p;
  p.taps_s = m.encode(s);
  p.taps_c = m.encode(c);
  p.s_rec = m.decode(Domain::kSketch, m.embed(p.taps_s), p.taps_s);
  p.c_rec = m.decode(Domain::kContour, m.embed(p.taps_c), p.taps_c);
  return recons_term(s, c, p);
}

Var loss_cls(StyleNetwork& m, const Var& h_s, const Tensor& attrs, const Tensor& mask) {
  Var z = m.classify(h_s);
  const int n = z.shape()[0], k = z.shape()[1];
  if (attrs.shape() != Shape{n, k})
    throw ShapeError("attribute targets must be " + shape_str(Shape{n, k}) + ", got " + shape_str(attrs.shape()));
  Tensor weights(Shape{n, k}, 1.0);
  double annotated = n;
  if (mask.ndim() == 1) {
    if (mask.dim(0) != n) throw ShapeError("attribute mask length mismatch");
    annotated = 0;
    for (int i = 0; i < n; ++i) {
      annotated += mask[i];
      for (int j = 0; j < k; ++j) weights[i * k + j] = mask[i];
    }
  }
  if (annotated == 0) return ag::constant(Tensor::scalar(0.0));
  // -log sigmoid(z) for positives, -log(1 - sigmoid(z)) for negatives.
  Var nll = ag::sub(ag::softplus(z), ag::mul_const(z, attrs));
  return ag::scale(ag::sum(ag::mul_const(nll, weights)), 1.0 / (annotated * k));
}

Var loss_adv_generator(StyleNetwork& m, const Var& s, const Var& c) { return adv_term(m, forward_pass(m, s, c, false)); }

Var gradient_penalty(const std::function<Var(const Var&)>& critic, const Var& x_interp) {
  Var score = critic(x_interp);
  Var g = ag::grad(ag::sum(score), {x_interp}, true)[0];
  const int n = g.shape()[0];
  Var flat = ag::reshape(g, Shape{n, static_cast<int>(g.size() / n)});
  // The tiny offset keeps the norm differentiable if a gradient vanishes.
  Var norm = ag::sqrt(ag::add_scalar(ag::sum_to(ag::square(flat), Shape{n, 1}), 1e-12));
  return mean_squared_to(norm, 1.0);
}

DiscriminatorLoss loss_adv_discriminator(StyleNetwork& m, Domain domain, const Var& real, const Var& fake,
                                         double lambda_gp, std::mt19937_64& rng, std::vector<double> u) {
  const Shape& shape = real.shape();
  if (fake.shape() != shape) throw ShapeError("real and fake batches differ in shape");
  const int n = shape[0];
  if (u.empty()) {
    std::uniform_real_distribution<double> U(0.0, 1.0);
    for (int i = 0; i < n; ++i) u.push_back(U(rng));
  }
  if (static_cast<int>(u.size()) != n) throw ShapeError("one interpolation weight per sample expected");
  Tensor mix = real.value();
  const std::size_t per = mix.size() / n;
  for (int i = 0; i < n; ++i)
    for (std::size_t k = 0; k < per; ++k)
      mix[i * per + k] = u[i] * real.value()[i * per + k] + (1 - u[i]) * fake.value()[i * per + k];

  DiscriminatorLoss out;
  out.real = mean_squared_to(m.discriminate(domain, real), 1.0);
  out.fake = mean_squared_to(m.discriminate(domain, ag::constant(fake.value())), 0.0);
  out.penalty = gradient_penalty([&](const Var& x) { return m.discriminate(domain, x); }, Var(mix, true));
  out.total = ag::add(ag::add(out.real, out.fake), ag::scale(out.penalty, lambda_gp));
  return out;
}

// ---------------------------------------------------------------------------
// Training

namespace {

void check_finite(double v, long it, const char* term) {
  if (!std::isfinite(v)) throw NumericalDivergence(it, term);
}

struct Sampler {
  const std::vector<data::SketchSample>& pool;
  std::mt19937_64& rng;

  std::vector<const data::SketchSample*> draw(int n) {
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    std::vector<const data::SketchSample*> out;
    for (int i = 0; i < n; ++i) out.push_back(&pool[pick(rng)]);
    return out;
  }
};

Var stack(const std::vector<const data::SketchSample*>& samples) {
  std::vector<ImageTensor> imgs;
  for (const auto* s : samples) imgs.push_back(s->image.to_gray());
  return batch_of(imgs);
}

}  // namespace

StyleTrainResult train_style(StyleModel& model, const std::vector<data::SketchSample>& sketches,
                             const std::vector<data::SketchSample>& contours, const StyleTrainConfig& cfg,
                             std::uint64_t seed, const std::function<void(const StyleLogRow&)>& on_iteration) {
  cfg.validate();
  StyleTrainResult result;
  if (cfg.iterations == 0) return result;
  if (sketches.empty() || contours.empty()) throw Error("style training needs both sketches and contours");

  std::mt19937_64 rng(seed);
  Sampler sketch_stream{sketches, rng}, contour_stream{contours, rng};
  nn::Adam g_opt(model.generator_parameters(), cfg.adam);
  nn::Adam d_opt(model.discriminator_parameters(), cfg.adam);
  const int k = model.config().attributes;

  std::ofstream log;
  if (!cfg.log_path.empty()) {
    log.open(cfg.log_path);
    if (!log) throw IoError("cannot write " + cfg.log_path);
    log << "iteration,d_real,d_fake,d_gp,d_total,embed,recons,adv,cls,g_total\n";
  }
  model.set_training(true);

  for (long it = 0; it < cfg.iterations; ++it) {
    const auto s_samples = sketch_stream.draw(cfg.batch);
    const auto c_samples = contour_stream.draw(cfg.batch);
    const Var s = stack(s_samples), c = stack(c_samples);
    Tensor attrs(Shape{cfg.batch, k}), mask(Shape{cfg.batch});
    for (int i = 0; i < cfg.batch; ++i) {
      const auto& a = s_samples[i]->attributes;
      if (!a || static_cast<int>(a->size()) != k) continue;
      mask[i] = 1;
      for (int j = 0; j < k; ++j) attrs[i * k + j] = a->flags[j];
    }

    StyleLogRow row;
    row.iteration = it;
    // The generator forward pass comes first: its translations double as the
    // discriminator's fakes because the generator does not change until its
    // own step below.
    Pass p = forward_pass(model, s, c, true);
    for (int d = 0; d < cfg.disc_steps; ++d) {
      Var real_s = s, real_c = c, fake_s = p.c_s, fake_c = p.s_c;
      if (d > 0) {
        real_s = stack(sketch_stream.draw(cfg.batch));
        real_c = stack(contour_stream.draw(cfg.batch));
        ag::NoGradGuard guard;
        fake_c = model.translate(real_s, Direction::kSketchToContour);
        fake_s = model.translate(real_c, Direction::kContourToSketch);
      }
      DiscriminatorLoss ls = loss_adv_discriminator(model, Domain::kSketch, real_s, fake_s, cfg.lambda_gp, rng);
      DiscriminatorLoss lc = loss_adv_discriminator(model, Domain::kContour, real_c, fake_c, cfg.lambda_gp, rng);
      Var total = ag::scale(ag::add(ls.total, lc.total), cfg.lambda_adv);
      row.d_real = ls.real.item() + lc.real.item();
      row.d_fake = ls.fake.item() + lc.fake.item();
      row.d_gp = ls.penalty.item() + lc.penalty.item();
      row.d_total = total.item();
      check_finite(row.d_total, it, "discriminator loss");
      d_opt.step(ag::grad(total, d_opt.params()));
    }

    Var embed = embed_term(model, p);
    Var recons = recons_term(s, c, p);
    Var adv = adv_term(model, p);
    Var cls = loss_cls(model, p.h_s, attrs, mask);
    Var total = ag::add(ag::add(ag::scale(embed, cfg.lambda_embed), ag::scale(recons, cfg.lambda_recons)),
                        ag::add(ag::scale(adv, cfg.lambda_adv), ag::scale(cls, cfg.lambda_cls)));
    row.embed = embed.item();
    row.recons = recons.item();
    row.adv = adv.item();
    row.cls = cls.item();
    row.g_total = total.item();
    check_finite(row.embed, it, "embedding loss");
    check_finite(row.recons, it, "reconstruction loss");
    check_finite(row.adv, it, "generator adversarial loss");
    check_finite(row.cls, it, "attribute loss");
    g_opt.step(ag::grad(total, g_opt.params()));

    result.log.push_back(row);
    if (log) {
      log << row.iteration << ',' << row.d_real << ',' << row.d_fake << ',' << row.d_gp << ',' << row.d_total << ','
          << row.embed << ',' << row.recons << ',' << row.adv << ',' << row.cls << ',' << row.g_total << '\n';
    }
    if (on_iteration) on_iteration(row);
    if (cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0)
      save_style_model(cfg.checkpoint_path, model, it + 1);
  }
  model.set_training(false);
  return result;
}

void save_style_model(const std::string& path, StyleModel& model, long iteration) {
  save_checkpoint(path, snapshot(model, "style", model.config().to_json(), iteration));
}

std::unique_ptr<StyleModel> load_style_model(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.kind != "style") throw ParseError(path + ": expected a style checkpoint, found '" + ck.kind + "'");
  StyleNetConfig cfg = StyleNetConfig::from_json(ck.config);
  cfg.encoder_weights.clear();  // the archive already holds the encoder
  auto model = std::make_unique<StyleModel>(cfg);
  restore(*model, ck);
  model->set_training(false);
  return model;
}

}  // namespace invsketch::style
