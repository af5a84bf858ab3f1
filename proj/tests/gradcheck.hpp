#pragma once

// Central finite-difference oracle used by the gradient tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <functional>
#include <vector>

#include "invsketch/autograd.hpp"

namespace invsketch::testing {

struct GradCheckResult {
  double rel_error = 0.0;     // ||analytic - numeric|| / max(||analytic||, ||numeric||, tiny)
  double max_abs_error = 0.0;
  std::size_t count = 0;
};

// `loss` must recompute its value from the current contents of `params`.
inline GradCheckResult grad_check(const std::function<ag::Var()>& loss, std::vector<ag::Var> params,
                                  double h = 1e-6) {
  ag::Var out = loss();
  std::vector<ag::Var> analytic = ag::grad(out, params);
  double diff2 = 0, a2 = 0, n2 = 0;
  GradCheckResult res;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& v = params[p].mutable_value();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double orig = v[i];
      v[i] = orig + h;
      // Evaluated with recording on: losses may take inner gradients.
      const double up = loss().item();
      v[i] = orig - h;
      const double down = loss().item();
      v[i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[p].value()[i];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
      res.max_abs_error = std::max(res.max_abs_error, std::fabs(a - numeric));
      ++res.count;
    }
  }
  res.rel_error = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
  return res;
}

// Same oracle restricted to at most `budget` coordinates, spread across every
// tensor in `params` (at least one per tensor while the budget lasts).
inline GradCheckResult grad_check_sampled(const std::function<ag::Var()>& loss, std::vector<ag::Var> params,
                                          std::size_t budget, std::uint64_t seed = 0, double h = 1e-6) {
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  std::mt19937_64 rng(seed);
  std::size_t total = 0;
  for (const auto& p : params) total += p.size();
  for (std::size_t p = 0; p < params.size() && coords.size() < budget; ++p)
    coords.emplace_back(p, std::uniform_int_distribution<std::size_t>(0, params[p].size() - 1)(rng));
  while (coords.size() < std::min(budget, total)) {
    std::size_t pick = std::uniform_int_distribution<std::size_t>(0, total - 1)(rng), p = 0;
    while (pick >= params[p].size()) pick -= params[p++].size();
    if (std::find(coords.begin(), coords.end(), std::make_pair(p, pick)) == coords.end()) coords.emplace_back(p, pick);
  }

  ag::Var out = loss();
  std::vector<ag::Var> analytic = ag::grad(out, params);
  double diff2 = 0, a2 = 0, n2 = 0;
  GradCheckResult res;
  for (const auto& [p, i] : coords) {
    Tensor& v = params[p].mutable_value();
    const double orig = v[i];
    v[i] = orig + h;
    const double up = loss().item();
    v[i] = orig - h;
    const double down = loss().item();
    v[i] = orig;
    const double numeric = (up - down) / (2 * h);
    const double a = analytic[p].value()[i];
    diff2 += (a - numeric) * (a - numeric);
    a2 += a * a;
    n2 += numeric * numeric;
    res.max_abs_error = std::max(res.max_abs_error, std::fabs(a - numeric));
    ++res.count;
  }
  res.rel_error = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
  return res;
}

}  // namespace invsketch::testing
