#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "gradcheck.hpp"
#include "style_stubs.hpp"
#include "tiny_style_net.hpp"
#include "invsketch/checkpoint.hpp"
#include "invsketch/data.hpp"
#include "invsketch/styletransfer.hpp"

namespace ag = invsketch::ag;
namespace style = invsketch::style;
namespace data = invsketch::data;
using invsketch::ImageTensor;
using invsketch::Shape;
using invsketch::Tensor;
using invsketch::testing::grad_check_sampled;
using invsketch::testing::StubNet;
using invsketch::testing::constant_critic;
using invsketch::testing::linear_critic;
using style::Domain;
using style::Var;

namespace {

Tensor random_tensor(const Shape& s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(s);
  for (double& v : t.values()) v = d(rng);
  return t;
}

// Two channels per stage, 16x16 inputs: every decoder path runs, but a full
// forward pass costs milliseconds.
style::StyleNetConfig micro_config() {
  style::StyleNetConfig c;
  c.encoder_widths = {2, 2, 2, 2, 2};
  c.disc_widths = {2, 2};
  c.attributes = 3;
  c.seed = 5;
  return c;
}

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "invsketch_style_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

double mean_abs_diff(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::fabs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

double mean_sq_to(const Tensor& a, double target) {
  double s = 0;
  for (double v : a.values()) s += (v - target) * (v - target);
  return s / static_cast<double>(a.size());
}

double mean_sample_distance(const Tensor& a, const Tensor& b) {
  const int n = a.dim(0);
  const std::size_t per = a.size() / n;
  double total = 0;
  for (int i = 0; i < n; ++i) {
    double d2 = 0;
    for (std::size_t k = 0; k < per; ++k) d2 += std::pow(a[i * per + k] - b[i * per + k], 2);
    total += std::sqrt(d2);
  }
  return total / n;
}

struct MicroFixture : ::testing::Test {
  std::mt19937_64 rng{11};
  std::unique_ptr<style::StyleModel> model = std::make_unique<style::StyleModel>(micro_config());
  Var s = ag::constant(random_tensor(Shape{2, 1, 16, 16}, rng));
  Var c = ag::constant(random_tensor(Shape{2, 1, 16, 16}, rng));
};

}  // namespace

// ---------------------------------------------------------------------------
// Shapes and contracts

TEST(StyleShapes, ToyTapsHalveFrom32) {
  style::StyleModel m(style::StyleNetConfig::toy());
  std::mt19937_64 rng(1);
  auto taps = m.encode(ag::constant(random_tensor(Shape{1, 1, 32, 32}, rng)));
  const int expected[5] = {32, 16, 8, 4, 2};
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(taps.taps[i].shape()[2], expected[i]);
    EXPECT_EQ(taps.taps[i].shape()[3], expected[i]);
  }
}

TEST(StyleShapes, TapsHalveFrom64) {
  style::StyleModel m(micro_config());
  std::mt19937_64 rng(1);
  auto taps = m.encode(ag::constant(random_tensor(Shape{1, 3, 64, 64}, rng)));
  const int expected[5] = {64, 32, 16, 8, 4};
  for (int i = 0; i < 5; ++i) EXPECT_EQ(taps.taps[i].shape()[2], expected[i]);
}

TEST(StyleShapes, SizeNotDivisibleBy16Throws) {
  style::StyleModel m(micro_config());
  EXPECT_THROW(m.encode(ag::constant(Tensor(Shape{1, 1, 24, 24}))), invsketch::ShapeError);
  EXPECT_THROW(m.encode(ag::constant(Tensor(Shape{1, 1, 32, 40}))), invsketch::ShapeError);
}

TEST_F(MicroFixture, EncodeIsPure) {
  auto a = model->encode(s), b = model->encode(s);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(a.taps[i].value().values()[0], b.taps[i].value().values()[0]);
  for (int i = 0; i < 5; ++i)
    EXPECT_TRUE(std::equal(a.taps[i].value().values().begin(), a.taps[i].value().values().end(),
                           b.taps[i].value().values().begin()));
}

TEST_F(MicroFixture, EmbeddingsShareShapeAndReproduce) {
  model->set_training(false);
  Var hs = model->embed(model->encode(s));
  Var hc = model->embed(model->encode(c));
  EXPECT_EQ(hs.shape(), hc.shape());
  EXPECT_EQ(hs.shape(), (Shape{2, 2, 2, 2}));  // stride 8 of 16x16
  Var again = model->embed(model->encode(s));
  EXPECT_TRUE(std::equal(hs.value().values().begin(), hs.value().values().end(), again.value().values().begin()));
}

TEST(StyleShapes, TranslateStaysInsideOpenRange) {
  style::StyleModel m(style::StyleNetConfig::toy());
  std::mt19937_64 rng(3);
  for (auto dir : {style::Direction::kSketchToContour, style::Direction::kContourToSketch}) {
    ImageTensor x(random_tensor(Shape{1, 32, 32}, rng));
    ImageTensor y = m.translate(x, dir);
    EXPECT_EQ(y.height(), 32);
    EXPECT_EQ(y.width(), 32);
    for (double v : y.values()) {
      EXPECT_GT(v, -1.0);
      EXPECT_LT(v, 1.0);
    }
  }
}

TEST(StyleShapes, SaturatedInferenceIsStillOpen) {
  // A huge final bias drives tanh to exactly 1.0 in double arithmetic.
  style::StyleModel m(micro_config());
  for (auto& p : m.named_parameters())
    if (p.name == "g_hc.block2.out.bias") p.var->mutable_value()[0] = 1e6;
  ImageTensor y = m.translate(ImageTensor(1, 16, 16, 1.0), style::Direction::kSketchToContour);
  for (double v : y.values()) EXPECT_LT(v, 1.0);
}

TEST(StyleShapes, EncoderHoldsNoTrainableParameters) {
  style::StyleModel m(micro_config());
  EXPECT_EQ(m.encoder().parameter_count(true), 0U);
  EXPECT_GT(m.encoder().parameter_count(false), 0U);
  EXPECT_GT(m.generator_parameters().size(), 0U);
  EXPECT_GT(m.discriminator_parameters().size(), 0U);
}

// ---------------------------------------------------------------------------
// Loss values on constructed optima

TEST(StyleLossValues, IdentityRoundTripsGiveZeroEmbedAndRecons) {
  StubNet net;
  std::mt19937_64 rng(2);
  Var s = ag::constant(random_tensor(Shape{3, 1, 4, 4}, rng));
  Var c = ag::constant(random_tensor(Shape{3, 1, 4, 4}, rng));
  EXPECT_NEAR(style::loss_embed(net, s, c).item(), 0.0, 1e-12);
  EXPECT_NEAR(style::loss_recons(net, s, c).item(), 0.0, 1e-12);
}

TEST(StyleLossValues, UnitShiftCostsOnePerTerm) {
  StubNet net;
  Tensor e(Shape{1, 1, 4, 4});
  e[5] = 1.0;
  std::mt19937_64 rng(3);
  Var s = ag::constant(random_tensor(Shape{2, 1, 4, 4}, rng));
  Var c = ag::constant(random_tensor(Shape{2, 1, 4, 4}, rng));

  // Only the sketch-to-contour decoder shifts: one term contributes.
  net.decoder = [&](Domain d, const Var& h) { return d == Domain::kContour ? ag::add(h, ag::constant(e)) : h; };
  EXPECT_NEAR(style::loss_embed(net, s, c).item(), 1.0, 1e-12);

  net.decoder = [&](Domain, const Var& h) { return ag::add(h, ag::constant(e)); };
  EXPECT_NEAR(style::loss_embed(net, s, c).item(), 2.0, 1e-12);
}

TEST(StyleLossValues, ConstantResidualGivesQuarter) {
  StubNet net;
  Var half = ag::constant(Tensor(Shape{2, 1, 4, 4}, 0.5));
  Var quarter = ag::constant(Tensor(Shape{2, 1, 4, 4}, 0.25));
  net.decoder = [&](Domain d, const Var& h) { return d == Domain::kSketch ? quarter : h; };
  EXPECT_NEAR(style::loss_recons(net, half, half).item(), 0.25, 1e-12);
  // Mirror the mismatch onto the contour side: same value.
  net.decoder = [&](Domain d, const Var& h) { return d == Domain::kContour ? quarter : h; };
  EXPECT_NEAR(style::loss_recons(net, half, half).item(), 0.25, 1e-12);
}

TEST(StyleLossValues, AttributeLossAtUniformAndPerfectPredictions) {
  StubNet net;
  Var h = ag::constant(Tensor(Shape{2, 1, 4, 4}));
  Tensor attrs(Shape{2, 33});
  for (int j = 0; j < 33; j += 3) attrs[j] = attrs[33 + j + 1] = 1;

  net.logits = Tensor(Shape{2, 33});
  EXPECT_NEAR(style::loss_cls(net, h, attrs).item(), std::log(2.0), 1e-12);

  for (std::size_t i = 0; i < attrs.size(); ++i) net.logits[i] = attrs[i] ? 60.0 : -60.0;
  EXPECT_NEAR(style::loss_cls(net, h, attrs).item(), 0.0, 1e-12);
}

TEST(StyleLossValues, AttributeMaskIgnoresUnannotatedSamples) {
  StubNet net;
  Var h = ag::constant(Tensor(Shape{2, 1, 4, 4}));
  Tensor attrs(Shape{2, 4});
  attrs[0] = 1;
  net.logits = Tensor(Shape{2, 4});
  // Sample 0 predicted perfectly, sample 1 badly; masking sample 1 leaves 0.
  net.logits[0] = 60;
  for (int j = 1; j < 4; ++j) net.logits[j] = -60;
  for (int j = 4; j < 8; ++j) net.logits[j] = 5;
  Tensor mask(Shape{2});
  mask[0] = 1;
  EXPECT_NEAR(style::loss_cls(net, h, attrs, mask).item(), 0.0, 1e-12);
  EXPECT_GT(style::loss_cls(net, h, attrs).item(), 1.0);
  EXPECT_EQ(style::loss_cls(net, h, attrs, Tensor(Shape{2})).item(), 0.0);
}

TEST(StyleLossValues, AttributeLengthMismatchThrows) {
  style::StyleModel m(micro_config());
  std::mt19937_64 rng(4);
  Var x = ag::constant(random_tensor(Shape{2, 1, 16, 16}, rng));
  Var h = m.embed(m.encode(x));
  EXPECT_THROW(style::loss_cls(m, h, Tensor(Shape{2, 33})), invsketch::ShapeError);
  EXPECT_NO_THROW(style::loss_cls(m, h, Tensor(Shape{2, 3})));
}

TEST(StyleLossValues, GeneratorAdversarialAtFixedScores) {
  StubNet net;
  std::mt19937_64 rng(5);
  Var s = ag::constant(random_tensor(Shape{2, 1, 4, 4}, rng));
  Var c = ag::constant(random_tensor(Shape{2, 1, 4, 4}, rng));
  net.critic = [](Domain, const Var& x) { return constant_critic(x, 1.0); };
  EXPECT_NEAR(style::loss_adv_generator(net, s, c).item(), 0.0, 1e-12);
  net.critic = [](Domain d, const Var& x) { return constant_critic(x, d == Domain::kContour ? 0.0 : 1.0); };
  EXPECT_NEAR(style::loss_adv_generator(net, s, c).item(), 1.0, 1e-12);
  net.critic = [](Domain, const Var& x) { return constant_critic(x, 0.0); };
  EXPECT_NEAR(style::loss_adv_generator(net, s, c).item(), 2.0, 1e-12);
}

TEST(StyleLossValues, DiscriminatorAtOptimumIsZero) {
  StubNet net;
  Tensor w(Shape{1, 1, 4, 4});
  w[0] = 1.0;  // unit-norm linear critic reading pixel 0
  net.critic = [&](Domain, const Var& x) { return linear_critic(x, w); };
  std::mt19937_64 rng(6);
  Tensor real = random_tensor(Shape{3, 1, 4, 4}, rng), fake = random_tensor(Shape{3, 1, 4, 4}, rng);
  for (int i = 0; i < 3; ++i) {
    real[i * 16] = 1.0;
    fake[i * 16] = 0.0;
  }
  auto l = style::loss_adv_discriminator(net, Domain::kSketch, ag::constant(real), ag::constant(fake), 10.0, rng);
  EXPECT_NEAR(l.real.item(), 0.0, 1e-12);
  EXPECT_NEAR(l.fake.item(), 0.0, 1e-12);
  EXPECT_NEAR(l.penalty.item(), 0.0, 1e-9);
  EXPECT_NEAR(l.total.item(), 0.0, 1e-6);
}

TEST(StyleLossValues, LinearCriticWithNormTwoPenalisedByTen) {
  StubNet net;
  Tensor w(Shape{1, 1, 4, 4}, 0.5);  // ||w|| = sqrt(16 * 0.25) = 2
  net.critic = [&](Domain, const Var& x) { return linear_critic(x, w); };
  std::mt19937_64 rng(7);
  Var real = ag::constant(random_tensor(Shape{4, 1, 4, 4}, rng));
  Var fake = ag::constant(random_tensor(Shape{4, 1, 4, 4}, rng));
  auto l = style::loss_adv_discriminator(net, Domain::kContour, real, fake, 10.0, rng);
  EXPECT_NEAR(l.penalty.item(), 1.0, 1e-9);
  EXPECT_NEAR(l.total.item() - l.real.item() - l.fake.item(), 10.0, 1e-6);
}

TEST(StyleLossValues, DiscriminatorRejectsMismatchedBatches) {
  StubNet net;
  net.critic = [](Domain, const Var& x) { return constant_critic(x, 0.0); };
  std::mt19937_64 rng(8);
  EXPECT_THROW(style::loss_adv_discriminator(net, Domain::kSketch, ag::constant(Tensor(Shape{2, 1, 4, 4})),
                                             ag::constant(Tensor(Shape{3, 1, 4, 4})), 10.0, rng),
               invsketch::ShapeError);
  EXPECT_THROW(style::loss_adv_discriminator(net, Domain::kSketch, ag::constant(Tensor(Shape{2, 1, 4, 4})),
                                             ag::constant(Tensor(Shape{2, 1, 4, 4})), 10.0, rng, {0.5}),
               invsketch::ShapeError);
}

// ---------------------------------------------------------------------------
// Same losses recomposed from the public network calls

TEST_F(MicroFixture, EmbedLossMatchesRecomposition) {
  model->set_training(false);
  auto ts = model->encode(s), tc = model->encode(c);
  Var hs = model->embed(ts), hc = model->embed(tc);
  Var sc = model->decode(Domain::kContour, hs, ts);
  Var cs = model->decode(Domain::kSketch, hc, tc);
  Var hsc = model->embed(model->encode(sc)), hcs = model->embed(model->encode(cs));
  const double expected = mean_sample_distance(hs.value(), hsc.value()) + mean_sample_distance(hc.value(), hcs.value());
  EXPECT_NEAR(style::loss_embed(*model, s, c).item(), expected, 1e-6);
  EXPECT_GT(expected, 0.0);
}

TEST_F(MicroFixture, ReconsLossMatchesRecomposition) {
  model->set_training(false);
  auto ts = model->encode(s), tc = model->encode(c);
  Var srec = model->decode(Domain::kSketch, model->embed(ts), ts);
  Var crec = model->decode(Domain::kContour, model->embed(tc), tc);
  const double expected = mean_abs_diff(s.value(), srec.value()) + mean_abs_diff(c.value(), crec.value());
  EXPECT_NEAR(style::loss_recons(*model, s, c).item(), expected, 1e-6);
}

TEST_F(MicroFixture, GeneratorAdversarialMatchesRecomposition) {
  model->set_training(false);
  auto ts = model->encode(s), tc = model->encode(c);
  Var sc = model->decode(Domain::kContour, model->embed(ts), ts);
  Var cs = model->decode(Domain::kSketch, model->embed(tc), tc);
  const double expected = mean_sq_to(model->discriminate(Domain::kContour, sc).value(), 1.0) +
                          mean_sq_to(model->discriminate(Domain::kSketch, cs).value(), 1.0);
  EXPECT_NEAR(style::loss_adv_generator(*model, s, c).item(), expected, 1e-6);
}

TEST_F(MicroFixture, AttributeLossMatchesBinaryCrossEntropy) {
  model->set_training(false);
  Var h = model->embed(model->encode(s));
  Tensor attrs(Shape{2, 3}, {1, 0, 1, 0, 0, 1});
  const Tensor z = model->classify(h).value();
  auto bce = [&](int i) {
    double t = 0;
    for (int j = 0; j < 3; ++j) {
      const double p = 1.0 / (1.0 + std::exp(-z[i * 3 + j]));
      t -= attrs[i * 3 + j] ? std::log(p) : std::log(1 - p);
    }
    return t / 3;
  };
  EXPECT_NEAR(style::loss_cls(*model, h, attrs).item(), (bce(0) + bce(1)) / 2, 1e-6);
  Tensor mask(Shape{2});
  mask[1] = 1;
  EXPECT_NEAR(style::loss_cls(*model, h, attrs, mask).item(), bce(1), 1e-6);
}

TEST_F(MicroFixture, DiscriminatorLossMatchesNumericRecomposition) {
  model->set_training(false);
  const Tensor fake = random_tensor(Shape{2, 1, 16, 16}, rng);
  const std::vector<double> u = {0.3, 0.8};
  auto l = style::loss_adv_discriminator(*model, Domain::kSketch, s, ag::constant(fake), 10.0, rng, u);

  auto score = [&](const Tensor& x) { return model->discriminate(Domain::kSketch, ag::constant(x)).value(); };
  EXPECT_NEAR(l.real.item(), mean_sq_to(score(s.value()), 1.0), 1e-6);
  EXPECT_NEAR(l.fake.item(), mean_sq_to(score(fake), 0.0), 1e-6);

  // Input gradients of the summed score by central differences.
  Tensor mix(Shape{2, 1, 16, 16});
  for (std::size_t k = 0; k < mix.size(); ++k) {
    const double w = u[k / 256];
    mix[k] = w * s.value()[k] + (1 - w) * fake[k];
  }
  auto total_score = [&](const Tensor& x) {
    const Tensor sc = score(x);
    double t = 0;
    for (double v : sc.values()) t += v;
    return t;
  };
  double penalty = 0;
  for (int i = 0; i < 2; ++i) {
    double g2 = 0;
    for (int k = 0; k < 256; ++k) {
      Tensor up = mix, down = mix;
      up[i * 256 + k] += 1e-5;
      down[i * 256 + k] -= 1e-5;
      const double g = (total_score(up) - total_score(down)) / 2e-5;
      g2 += g * g;
    }
    penalty += std::pow(std::sqrt(g2) - 1.0, 2) / 2;
  }
  EXPECT_NEAR(l.penalty.item(), penalty, 1e-6);
  EXPECT_NEAR(l.total.item(), l.real.item() + l.fake.item() + 10.0 * l.penalty.item(), 1e-12);
}

// ---------------------------------------------------------------------------
// Finite-difference gradients (64 coordinates spread over every tensor)

TEST(StyleGradients, EveryLossOnTinyNetworkAllCoordinates) {
  invsketch::testing::TinyStyleNet net(3);
  ASSERT_LE(net.parameter_count(), 64U);
  std::mt19937_64 rng(12);
  Var s = ag::constant(random_tensor(Shape{2, 1, 6, 6}, rng));
  Var c = ag::constant(random_tensor(Shape{2, 1, 6, 6}, rng));
  Tensor attrs(Shape{2, 3}, {1, 0, 1, 0, 1, 1});
  using invsketch::testing::grad_check;
  const auto g = net.generator_parameters();
  EXPECT_LT(grad_check([&] { return style::loss_embed(net, s, c); }, g).rel_error, 1e-3);
  EXPECT_LT(grad_check([&] { return style::loss_recons(net, s, c); }, g).rel_error, 1e-3);
  EXPECT_LT(grad_check([&] { return style::loss_cls(net, net.embed(net.encode(s)), attrs); }, g).rel_error, 1e-3);
  EXPECT_LT(grad_check([&] { return style::loss_adv_generator(net, s, c); }, g).rel_error, 1e-3);
  auto disc = [&] {
    std::mt19937_64 unused(0);
    Var fake = net.decode(Domain::kContour, net.embed(net.encode(s)), net.encode(s));
    return style::loss_adv_discriminator(net, Domain::kContour, c, ag::constant(fake.value()), 10.0, unused, {0.3, 0.7}).total;
  };
  EXPECT_LT(grad_check(disc, net.discriminator_parameters()).rel_error, 1e-3);
}

TEST_F(MicroFixture, EmbedLossGradient) {
  auto r = grad_check_sampled([&] { return style::loss_embed(*model, s, c); }, model->generator_parameters(), 64, 1);
  EXPECT_EQ(r.count, 64U);
  EXPECT_LT(r.rel_error, 1e-3);
}

TEST_F(MicroFixture, ReconsLossGradient) {
  auto r = grad_check_sampled([&] { return style::loss_recons(*model, s, c); }, model->generator_parameters(), 64, 2);
  EXPECT_LT(r.rel_error, 1e-3);
}

TEST_F(MicroFixture, AttributeLossGradient) {
  Tensor attrs(Shape{2, 3}, {1, 0, 1, 0, 1, 1});
  auto r = grad_check_sampled([&] { return style::loss_cls(*model, model->embed(model->encode(s)), attrs); },
                              model->generator_parameters(), 64, 3);
  EXPECT_LT(r.rel_error, 1e-3);
}

TEST_F(MicroFixture, GeneratorAdversarialGradient) {
  auto r = grad_check_sampled([&] { return style::loss_adv_generator(*model, s, c); }, model->generator_parameters(),
                              64, 4);
  EXPECT_LT(r.rel_error, 1e-3);
}

TEST_F(MicroFixture, DiscriminatorLossGradientThroughPenalty) {
  Var fake = ag::constant(random_tensor(Shape{2, 1, 16, 16}, rng));
  std::mt19937_64 unused(0);
  auto loss = [&] {
    return style::loss_adv_discriminator(*model, Domain::kContour, c, fake, 10.0, unused, {0.4, 0.7}).total;
  };
  auto r = grad_check_sampled(loss, model->discriminator_parameters(), 64, 5);
  EXPECT_EQ(r.count, 64U);
  EXPECT_LT(r.rel_error, 1e-3);
}

// ---------------------------------------------------------------------------
// Training

namespace {

style::StyleTrainConfig micro_train(long iterations) {
  style::StyleTrainConfig cfg = style::StyleTrainConfig::toy();
  cfg.batch = 2;
  cfg.iterations = iterations;
  return cfg;
}

std::vector<Tensor> values_of(const std::vector<Var>& params) {
  std::vector<Tensor> out;
  for (const auto& p : params) out.push_back(p.value());
  return out;
}

std::vector<data::SketchSample> with_three_attributes(std::vector<data::SketchSample> v) {
  for (auto& s : v) {
    if (!s.attributes) continue;
    s.attributes->flags.resize(3);
    s.attributes->names.resize(3);
  }
  return v;
}

}  // namespace

TEST(StyleTraining, EncoderFrozenAndLossesFinite) {
  auto toy = data::make_toy_dataset(3, 6, 16);
  style::StyleModel m(micro_config());
  std::vector<Tensor> enc_before;
  for (auto& p : m.encoder().named_parameters()) enc_before.push_back(p.var->value());
  const auto gen_before = values_of(m.generator_parameters());
  const auto disc_before = values_of(m.discriminator_parameters());

  auto sketches = with_three_attributes(toy.sketch_domain.sketches);
  auto res = style::train_style(m, sketches, toy.contour_domain.contours, micro_train(4), 9);
  ASSERT_EQ(res.log.size(), 4U);
  for (const auto& r : res.log) {
    for (double v : {r.d_real, r.d_fake, r.d_gp, r.d_total, r.embed, r.recons, r.adv, r.cls, r.g_total}) {
      EXPECT_TRUE(std::isfinite(v));
      EXPECT_GE(v, 0.0);
    }
  }
  EXPECT_GT(res.log[0].cls, 0.0);  // attributes reached the head

  std::size_t i = 0;
  for (auto& p : m.encoder().named_parameters()) {
    const Tensor& now = p.var->value();
    EXPECT_TRUE(std::equal(now.values().begin(), now.values().end(), enc_before[i].values().begin())) << p.name;
    ++i;
  }
  auto changed = [](const std::vector<Tensor>& before, const std::vector<Var>& after) {
    for (std::size_t k = 0; k < before.size(); ++k)
      if (!std::equal(before[k].values().begin(), before[k].values().end(), after[k].value().values().begin()))
        return true;
    return false;
  };
  EXPECT_TRUE(changed(gen_before, m.generator_parameters()));
  EXPECT_TRUE(changed(disc_before, m.discriminator_parameters()));
  EXPECT_FALSE(m.training());
}

TEST(StyleTraining, ZeroIterationsLeavesModelUntouched) {
  auto toy = data::make_toy_dataset(3, 4, 16);
  style::StyleModel m(micro_config());
  auto before = invsketch::snapshot(m, "style", {}, 0);
  auto res = style::train_style(m, toy.sketch_domain.sketches, toy.contour_domain.contours, micro_train(0), 1);
  EXPECT_TRUE(res.log.empty());
  auto after = invsketch::snapshot(m, "style", {}, 0);
  for (const auto& [name, t] : before.blocks) {
    const Tensor& u = after.blocks.at(name);
    EXPECT_TRUE(std::equal(t.values().begin(), t.values().end(), u.values().begin())) << name;
  }
}

TEST(StyleTraining, NonFiniteLossRaisesWithIteration) {
  auto toy = data::make_toy_dataset(3, 4, 16);
  style::StyleModel m(micro_config());
  m.generator_parameters()[0].mutable_value()[0] = std::nan("");
  try {
    style::train_style(m, toy.sketch_domain.sketches, toy.contour_domain.contours, micro_train(3), 1);
    FAIL() << "expected NumericalDivergence";
  } catch (const invsketch::NumericalDivergence& e) {
    EXPECT_EQ(e.iteration(), 0);
  }
}

TEST(StyleTraining, SeededRunsAreIdentical) {
  auto toy = data::make_toy_dataset(3, 4, 16);
  style::StyleModel a(micro_config()), b(micro_config());
  auto ra = style::train_style(a, toy.sketch_domain.sketches, toy.contour_domain.contours, micro_train(2), 4);
  auto rb = style::train_style(b, toy.sketch_domain.sketches, toy.contour_domain.contours, micro_train(2), 4);
  EXPECT_EQ(ra.log.back().g_total, rb.log.back().g_total);
  EXPECT_EQ(ra.log.back().d_total, rb.log.back().d_total);
}

TEST(StyleTraining, ExtraDiscriminatorStepsRun) {
  auto toy = data::make_toy_dataset(3, 4, 16);
  style::StyleModel m(micro_config());
  auto cfg = micro_train(2);
  cfg.disc_steps = 2;
  auto res = style::train_style(m, toy.sketch_domain.sketches, toy.contour_domain.contours, cfg, 4);
  EXPECT_EQ(res.log.size(), 2U);
  EXPECT_TRUE(std::isfinite(res.log.back().d_total));
}

TEST(StyleTraining, LogsCsvAndCheckpointsAtCadence) {
  auto toy = data::make_toy_dataset(3, 4, 16);
  style::StyleModel m(micro_config());
  auto cfg = micro_train(4);
  cfg.log_path = temp_path("train.csv").string();
  cfg.checkpoint_path = temp_path("periodic.ckpt").string();
  cfg.checkpoint_every = 2;
  std::filesystem::remove(cfg.checkpoint_path);
  long seen = 0;
  style::train_style(m, toy.sketch_domain.sketches, toy.contour_domain.contours, cfg, 2,
                     [&](const style::StyleLogRow& r) { EXPECT_EQ(r.iteration, seen++); });
  EXPECT_EQ(seen, 4);

  std::ifstream in(cfg.log_path);
  std::string header, line;
  std::getline(in, header);
  EXPECT_EQ(header, "iteration,d_real,d_fake,d_gp,d_total,embed,recons,adv,cls,g_total");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 4);

  auto ck = invsketch::load_checkpoint(cfg.checkpoint_path);
  EXPECT_EQ(ck.kind, "style");
  EXPECT_EQ(ck.iteration, 4);
}

TEST(StyleTraining, RejectsEmptyStreams) {
  style::StyleModel m(micro_config());
  EXPECT_THROW(style::train_style(m, {}, {}, micro_train(1), 1), invsketch::Error);
}

// ---------------------------------------------------------------------------
// Persistence and configuration

TEST(StylePersistence, CheckpointRoundTripReproducesTranslation) {
  auto toy = data::make_toy_dataset(3, 4, 16);
  style::StyleModel m(micro_config());
  style::train_style(m, toy.sketch_domain.sketches, toy.contour_domain.contours, micro_train(2), 3);
  const auto path = temp_path("roundtrip.ckpt").string();
  style::save_style_model(path, m, 2);
  auto loaded = style::load_style_model(path);
  EXPECT_EQ(loaded->config().encoder_widths, micro_config().encoder_widths);
  const ImageTensor& x = toy.sketch_domain.sketches[0].image;
  for (auto dir : {style::Direction::kSketchToContour, style::Direction::kContourToSketch})
    EXPECT_EQ(m.translate(x, dir), loaded->translate(x, dir));
}

TEST(StylePersistence, WrongKindOrGeometryRejected) {
  style::StyleModel m(micro_config());
  const auto path = temp_path("kind.ckpt").string();
  invsketch::save_checkpoint(path, invsketch::snapshot(m, "sbir", m.config().to_json(), 0));
  EXPECT_THROW(style::load_style_model(path), invsketch::ParseError);

  style::save_style_model(path, m);
  auto ck = invsketch::load_checkpoint(path);
  style::StyleModel other(style::StyleNetConfig::toy());
  EXPECT_THROW(invsketch::restore(other, ck), invsketch::ShapeError);
}

TEST(StyleConfig, FullScaleDefaults) {
  style::StyleTrainConfig c;
  EXPECT_EQ(c.lambda_adv, 10);
  EXPECT_EQ(c.lambda_embed, 100);
  EXPECT_EQ(c.lambda_recons, 100);
  EXPECT_EQ(c.lambda_cls, 1);
  EXPECT_EQ(c.lambda_gp, 10);
  EXPECT_EQ(c.batch, 64);
  EXPECT_EQ(c.iterations, 50000);
  EXPECT_EQ(c.disc_steps, 1);
  EXPECT_DOUBLE_EQ(c.adam.lr, 1e-4);
  EXPECT_DOUBLE_EQ(c.adam.beta1, 0.5);
  EXPECT_DOUBLE_EQ(c.adam.beta2, 0.9);
  auto t = style::StyleTrainConfig::toy();
  EXPECT_EQ(t.batch, 8);
  EXPECT_EQ(t.iterations, 2000);
}

TEST(StyleConfig, KeyValueOverrides) {
  style::StyleTrainConfig c;
  c.apply(invsketch::parse_kv("# toy\nbatch = 4\niterations=10 \nlambda_gp = 2.5\nlr = 0.001\n"));
  EXPECT_EQ(c.batch, 4);
  EXPECT_EQ(c.iterations, 10);
  EXPECT_DOUBLE_EQ(c.lambda_gp, 2.5);
  EXPECT_DOUBLE_EQ(c.adam.lr, 1e-3);
  EXPECT_THROW(c.apply({{"lambda_typo", "1"}}), invsketch::ParseError);
  EXPECT_THROW(c.apply({{"batch", "many"}}), invsketch::ParseError);
  EXPECT_THROW(c.apply({{"lambda_adv", "-1"}}), invsketch::Error);
}

TEST(StyleConfig, NetConfigJsonRoundTrip) {
  auto v = style::StyleNetConfig::vgg16();
  auto back = style::StyleNetConfig::from_json(v.to_json());
  EXPECT_EQ(back.encoder_convs, (std::vector<int>{2, 2, 3, 3, 3}));
  EXPECT_EQ(back.encoder_widths, (std::vector<int>{64, 128, 256, 512, 512}));
  EXPECT_TRUE(back.imagenet_input);
  EXPECT_EQ(back.disc_widths, v.disc_widths);
}
