#pragma once

// A 64-parameter retrieval model (widths {1,1,2}, d = 2) at a point where all
// four branches produce distinct features for a given batch.
//
// Zero-bias ReLU stacks this narrow are positively homogeneous and often
// dead, which makes every feature row identical. Random biases and a check on
// the per-column spread select a usable initialisation.

#include <cmath>
#include <memory>
#include <random>

#include "invsketch/fgsbir.hpp"

namespace invsketch::testing {

inline std::unique_ptr<sbir::SbirModel> make_live_tiny_sbir(const ag::Var& images, int input_size = 16) {
  sbir::SbirNetConfig c;
  c.widths = {1, 1, 2};
  c.feature_dim = 2;
  c.input_size = input_size;
  const int n = images.shape()[0];
  auto spread_ok = [&](sbir::SbirModel& model) {
    try {
      const Tensor f = model.embed(images).value();
      for (int k = 0; k < 2; ++k) {
        double mean = 0, var = 0;
        for (int i = 0; i < n; ++i) mean += f[2 * i + k] / n;
        for (int i = 0; i < n; ++i) var += std::pow(f[2 * i + k] - mean, 2) / n;
        if (var < 0.05 * 0.05) return false;
      }
      return true;
    } catch (const DegenerateFeature&) {
      return false;
    }
  };
  for (c.seed = 1;; ++c.seed) {
    auto model = std::make_unique<sbir::SbirModel>(c);
    std::mt19937_64 rng(c.seed);
    std::normal_distribution<double> nb(0.0, 0.3);
    for (auto& p : model->named_parameters())
      if (p.name.find("bias") != std::string::npos)
        for (double& v : p.var->mutable_value().values()) v = nb(rng);
    if (spread_ok(*model)) return model;
  }
}

}  // namespace invsketch::testing
