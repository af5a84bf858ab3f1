#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "invsketch/checkpoint.hpp"
#include "invsketch/eval.hpp"

namespace eval = invsketch::eval;
namespace sbir = invsketch::sbir;
namespace data = invsketch::data;
namespace style = invsketch::style;

namespace {

// A result whose true match sits at `rank` (1-based) among `n` photos.
sbir::RetrievalResult ranked_at(std::size_t rank, std::size_t n, const std::string& id = "target") {
  sbir::RetrievalResult r;
  r.query_id = id;
  for (std::size_t i = 1; i <= n; ++i)
    r.ranking.push_back({i == rank ? id : "other" + std::to_string(i), static_cast<double>(i), i - 1});
  return r;
}

}  // namespace

TEST(AccAtK, DefinitionExamples) {
  std::vector<sbir::RetrievalResult> all_first = {ranked_at(1, 5, "a"), ranked_at(1, 5, "b")};
  EXPECT_EQ(eval::acc_at_k(all_first, 1), 1.0);
  std::vector<sbir::RetrievalResult> third = {ranked_at(3, 10)};
  EXPECT_EQ(eval::acc_at_k(third, 1), 0.0);
  EXPECT_EQ(eval::acc_at_k(third, 5), 1.0);
  std::vector<sbir::RetrievalResult> mixed = {ranked_at(1, 10, "a"), ranked_at(2, 10, "b"), ranked_at(7, 10, "c"),
                                              ranked_at(10, 10, "d")};
  EXPECT_DOUBLE_EQ(eval::acc_at_k(mixed, 1), 0.25);
  EXPECT_DOUBLE_EQ(eval::acc_at_k(mixed, 5), 0.5);
  EXPECT_DOUBLE_EQ(eval::acc_at_k(mixed, 10), 1.0);
}

TEST(AccAtK, RejectsBadK) {
  std::vector<sbir::RetrievalResult> r = {ranked_at(1, 3)};
  EXPECT_THROW(eval::acc_at_k(r, 0), invsketch::InvalidK);
  EXPECT_THROW(eval::acc_at_k(r, -2), invsketch::InvalidK);
  EXPECT_THROW(eval::acc_at_k({}, 1), invsketch::Error);
}

TEST(AccAtK, MonotoneInK) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<sbir::RetrievalResult> results;
    std::uniform_int_distribution<std::size_t> pick(1, 20);
    for (int q = 0; q < 15; ++q) results.push_back(ranked_at(pick(rng), 20, "q" + std::to_string(q)));
    double prev = 0;
    for (int k = 1; k <= 20; ++k) {
      const double a = eval::acc_at_k(results, k);
      EXPECT_GE(a, prev);
      EXPECT_LE(a, 1.0);
      prev = a;
    }
    EXPECT_EQ(prev, 1.0);
  }
}

TEST(AccAtK, RandomFeaturesMatchChance) {
  const std::size_t n = 10, queries = 1000, d = 8;
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  sbir::Gallery gallery;
  for (std::size_t i = 0; i < n; ++i) {
    gallery.ids.push_back("p" + std::to_string(i));
    std::vector<double> f(d);
    for (double& v : f) v = g(rng);
    gallery.features.push_back(f);
  }
  std::vector<sbir::RetrievalResult> results;
  std::uniform_int_distribution<std::size_t> target(0, n - 1);
  for (std::size_t q = 0; q < queries; ++q) {
    std::vector<double> f(d);
    for (double& v : f) v = g(rng);
    results.push_back(sbir::rank_gallery(f, gallery, gallery.ids[target(rng)]));
  }
  const double p = eval::chance_accuracy(n);
  const double sigma = std::sqrt(p * (1 - p) / queries);
  EXPECT_NEAR(eval::acc_at_k(results, 1), p, 4 * sigma);
  EXPECT_NEAR(eval::acc_at_k(results, 5), eval::chance_accuracy(n, 5), 4 * std::sqrt(0.25 / queries));
}

// ---------------------------------------------------------------------------

namespace {

struct Models {
  data::ToyDataset toy = data::make_toy_dataset(21, 6, 32);
  sbir::SbirModel sbir_model{sbir::SbirNetConfig::toy()};
  style::StyleModel style_model{style::StyleNetConfig::toy()};
};

}  // namespace

TEST(Evaluate, SyntheticEqualsManualComposition) {
  Models m;
  const auto& split = m.toy.sketch_domain;
  auto report = eval::evaluate_synthetic(m.style_model, m.sbir_model, split);
  EXPECT_EQ(report.mode, eval::QueryMode::kSynthetic);

  const auto gallery = sbir::build_gallery(m.sbir_model, split.photos);
  std::vector<sbir::RetrievalResult> manual;
  for (std::size_t i = 0; i < split.sketches.size(); ++i) {
    auto synth = m.style_model.translate(split.sketches[i].image, style::Direction::kSketchToContour);
    manual.push_back(sbir::retrieve(synth, gallery, m.sbir_model, m.style_model,
                                    split.photos[(*split.pairing)[i]].instance_id));
  }
  for (int k : {1, 5, 10}) EXPECT_EQ(report.accuracy.at(k), eval::acc_at_k(manual, k));
  ASSERT_EQ(report.ranks.size(), manual.size());
  for (std::size_t i = 0; i < manual.size(); ++i)
    EXPECT_EQ(report.ranks[i].rank, manual[i].rank_of(manual[i].query_id));
}

TEST(Evaluate, SketchModeAndDeterminism) {
  Models m;
  const auto& split = m.toy.sketch_domain;
  auto a = eval::evaluate(m.style_model, m.sbir_model, split);
  auto b = eval::evaluate(m.style_model, m.sbir_model, split);
  EXPECT_EQ(a.to_json(), b.to_json());
  EXPECT_EQ(a.gallery_size, 6U);
  EXPECT_LE(a.accuracy.at(1), a.accuracy.at(5));
  EXPECT_LE(a.accuracy.at(5), a.accuracy.at(10));
  EXPECT_EQ(a.accuracy.at(10), 1.0);  // 6 photos, every match is within the top 10
  EXPECT_EQ(a.sbir_model_id, invsketch::module_fingerprint(m.sbir_model));
  EXPECT_EQ(a.style_model_id, invsketch::module_fingerprint(m.style_model));
  EXPECT_EQ(a.config_fingerprint.size(), 64U);
  auto synth = eval::evaluate_synthetic(m.style_model, m.sbir_model, split);
  EXPECT_NE(synth.config_fingerprint, a.config_fingerprint);

  const auto j = a.to_json();
  EXPECT_EQ(j.at("mode"), "sbir");
  EXPECT_TRUE(j.at("accuracy").contains("acc@1"));
  EXPECT_EQ(j.at("queries").size(), 6U);
}

TEST(Evaluate, GalleryLimitSkipsUnreachableQueries) {
  Models m;
  eval::EvalOptions opt;
  opt.gallery_limit = 3;
  opt.ks = {1, 3};
  auto r = eval::evaluate(m.style_model, m.sbir_model, m.toy.sketch_domain, opt);
  EXPECT_EQ(r.gallery_size, 3U);
  EXPECT_EQ(r.ranks.size(), 3U);
  EXPECT_EQ(r.accuracy.at(3), 1.0);
}

TEST(Evaluate, InputContracts) {
  Models m;
  auto unpaired = m.toy.sketch_domain;
  unpaired.pairing.reset();
  EXPECT_THROW(eval::evaluate(m.style_model, m.sbir_model, unpaired), invsketch::BrokenPair);
  eval::EvalOptions bad;
  bad.ks = {0};
  EXPECT_THROW(eval::evaluate(m.style_model, m.sbir_model, m.toy.sketch_domain, bad), invsketch::InvalidK);
  EXPECT_EQ(eval::parse_query_mode("synthetic"), eval::QueryMode::kSynthetic);
  EXPECT_THROW(eval::parse_query_mode("table1"), invsketch::ParseError);
}

// ---------------------------------------------------------------------------

TEST(Preference, HandExamples) {
  eval::PreferenceTally t;
  t.correspondence = {1, 1, 1, 1, 1, 1, 1, 1, 1, 0};
  t.naturalness = {1, 1, 1, 1, 1, 1, 1, 0, 0, 0};
  t.w_c = 0.9;
  t.w_n = 0.1;
  EXPECT_NEAR(eval::aggregate_preference(t), 0.88, 1e-12);

  eval::PreferenceTally all{std::vector<int>(7, 1), std::vector<int>(7, 1), 0.3, 0.7};
  EXPECT_NEAR(eval::aggregate_preference(all), 1.0, 1e-12);
  eval::PreferenceTally none{std::vector<int>(4, 0), std::vector<int>(4, 0), 0.5, 0.5};
  EXPECT_EQ(eval::aggregate_preference(none), 0.0);
}

TEST(Preference, LinearAndBounded) {
  std::mt19937_64 rng(3);
  std::bernoulli_distribution vote(0.5);
  std::uniform_real_distribution<double> w(0, 1);
  for (int trial = 0; trial < 100; ++trial) {
    eval::PreferenceTally t;
    t.w_c = w(rng);
    t.w_n = 1 - t.w_c;
    for (int i = 0; i < 8; ++i) {
      t.correspondence.push_back(vote(rng));
      t.naturalness.push_back(vote(rng));
    }
    const double base = eval::aggregate_preference(t);
    EXPECT_GE(base, 0.0);
    EXPECT_LE(base, 1.0);
    // Flipping one correspondence vote from 0 to 1 adds exactly w_c / N.
    for (auto& c : t.correspondence)
      if (c == 0) {
        c = 1;
        EXPECT_NEAR(eval::aggregate_preference(t) - base, t.w_c / 8, 1e-12);
        break;
      }
  }
}

TEST(Preference, Contracts) {
  eval::PreferenceTally t{{1}, {0}, 0.6, 0.6};
  EXPECT_THROW(eval::aggregate_preference(t), invsketch::InvalidWeights);
  t.w_n = 0.4;
  EXPECT_NEAR(eval::aggregate_preference(t), 0.6, 1e-12);
  t.w_c = 1.2;
  t.w_n = -0.2;
  EXPECT_THROW(eval::aggregate_preference(t), invsketch::InvalidWeights);
  EXPECT_THROW(eval::aggregate_preference({{}, {}, 0.5, 0.5}), invsketch::Error);
  EXPECT_THROW(eval::aggregate_preference({{2}, {0}, 0.5, 0.5}), invsketch::Error);
  EXPECT_THROW(eval::aggregate_preference({{1, 0}, {0}, 0.5, 0.5}), invsketch::Error);
}
