#include "invsketch/nn.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <tuple>

namespace invsketch::nn {

namespace {

using MapKey = std::tuple<int, int, int, int, int, int, int, int>;


// Process-wide memo for shape-only operator maps.
class MapCache {
 public:
  template <typename Build>
  std::shared_ptr<const ag::SparseMap> get(const MapKey& key, Build&& build) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = maps_.find(key);
    if (it != maps_.end()) return it->second;
    std::shared_ptr<const ag::SparseMap> map = build();
    maps_.emplace(key, map);
    return map;
  }

 private:
  std::mutex mu_;
  std::map<MapKey, std::shared_ptr<const ag::SparseMap>> maps_;
};

MapCache& cache() {
  static MapCache c;
  return c;
}

int reflect(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

std::shared_ptr<const ag::SparseMap> im2col_map(int c, int h, int w, int k, int stride, int pad,
                                                PadMode mode, int* out_h, int* out_w) {
  const int oh = (h + 2 * pad - k) / stride + 1;
  const int ow = (w + 2 * pad - k) / stride + 1;
  if (oh <= 0 || ow <= 0) throw ShapeError("convolution output would be empty");
  *out_h = oh;
  *out_w = ow;
  const MapKey key{0, c, h, w, k, stride, pad, static_cast<int>(mode)};
  return cache().get(key, [&] {
    std::vector<std::vector<std::pair<int, double>>> rows(static_cast<std::size_t>(c) * k * k * oh * ow);
    std::size_t r = 0;
    for (int ci = 0; ci < c; ++ci)
      for (int ki = 0; ki < k; ++ki)
        for (int kj = 0; kj < k; ++kj)
          for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x, ++r) {
              int sy = y * stride + ki - pad;
              int sx = x * stride + kj - pad;
              if (mode == PadMode::kReflect) {
                sy = reflect(sy, h);
                sx = reflect(sx, w);
              } else if (sy < 0 || sy >= h || sx < 0 || sx >= w) {
                continue;
              }
              rows[r].emplace_back((ci * h + sy) * w + sx, 1.0);
            }
    return ag::build_sparse_map(c * h * w, rows);
  });
}

// 1-d bilinear taps with half-pixel centres.
std::vector<std::vector<std::pair<int, double>>> bilinear_taps(int in, int out) {
  std::vector<std::vector<std::pair<int, double>>> taps(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const int i0 = static_cast<int>(std::floor(src));
    const int i1 = std::min(i0 + 1, in - 1);
    const double t = src - i0;
    if (i1 == i0 || t == 0.0) {
      taps[o].emplace_back(i0, 1.0);
    } else {
      taps[o].emplace_back(i0, 1.0 - t);
      taps[o].emplace_back(i1, t);
    }
  }
  return taps;
}

std::shared_ptr<const ag::SparseMap> resize_map(int h, int w, int oh, int ow) {
  const MapKey key{1, h, w, oh, ow, 0, 0, 0};
  return cache().get(key, [&] {
    const auto ty = bilinear_taps(h, oh);
    const auto tx = bilinear_taps(w, ow);
    std::vector<std::vector<std::pair<int, double>>> rows(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x)
        for (const auto& [iy, wy] : ty[y])
          for (const auto& [ix, wx] : tx[x]) rows[y * ow + x].emplace_back(iy * w + ix, wy * wx);
    return ag::build_sparse_map(h * w, rows);
  });
}

void require_nchw(const Var& x, const char* what) {
  if (x.value().ndim() != 4) throw ShapeError(std::string(what) + " expects NCHW, got " + shape_str(x.shape()));
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad, PadMode mode) {
  require_nchw(x, "conv2d");
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (ws.size() != 4 || ws[1] != xs[1] || ws[2] != ws[3])
    throw ShapeError("conv2d weight " + shape_str(ws) + " incompatible with input " + shape_str(xs));
  const int n = xs[0], c = xs[1], h = xs[2], w = xs[3], o = ws[0], k = ws[2];
  int oh = 0, ow = 0;
  auto map = im2col_map(c, h, w, k, stride, pad, mode, &oh, &ow);
  Var cols = ag::linear_map(x, map, Shape{n, c * k * k, oh * ow});
  Var out = ag::mm_wx(weight, cols, Shape{n, o, oh, ow});
  if (bias.defined()) out = ag::add(out, ag::reshape(bias, Shape{1, o, 1, 1}));
  return out;
}

Var max_pool2d(const Var& x, int size) {
  require_nchw(x, "max_pool2d");
  const Shape& s = x.shape();
  const int n = s[0], c = s[1], h = s[2], w = s[3];
  const int oh = h / size, ow = w / size;
  if (oh == 0 || ow == 0) throw ShapeError("max_pool2d input smaller than window");
  const double* v = x.value().data();
  std::vector<std::vector<std::pair<int, double>>> rows(static_cast<std::size_t>(n) * c * oh * ow);
  std::size_t r = 0;
  for (int sl = 0; sl < n * c; ++sl)
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx, ++r) {
        int best = -1;
        double best_v = 0;
        for (int dy = 0; dy < size; ++dy)
          for (int dx = 0; dx < size; ++dx) {
            const int idx = (sl * h + y * size + dy) * w + xx * size + dx;
            if (best < 0 || v[idx] > best_v) {
              best = idx;
              best_v = v[idx];
            }
          }
        rows[r].emplace_back(best, 1.0);
      }
  auto map = ag::build_sparse_map(n * c * h * w, rows);
  return ag::linear_map(x, map, Shape{n, c, oh, ow});
}

Var max_pool2d(const Var& x, int kernel, int stride, int pad) {
  require_nchw(x, "max_pool2d");
  const Shape& s = x.shape();
  const int n = s[0], c = s[1], h = s[2], w = s[3];
  const int oh = (h + 2 * pad - kernel) / stride + 1, ow = (w + 2 * pad - kernel) / stride + 1;
  if (oh <= 0 || ow <= 0 || pad >= kernel) throw ShapeError("max_pool2d window does not fit the input");
  const double* v = x.value().data();
  std::vector<std::vector<std::pair<int, double>>> rows(static_cast<std::size_t>(n) * c * oh * ow);
  std::size_t r = 0;
  for (int sl = 0; sl < n * c; ++sl)
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx, ++r) {
        int best = -1;
        double best_v = 0;
        for (int dy = 0; dy < kernel; ++dy) {
          const int iy = y * stride - pad + dy;
          if (iy < 0 || iy >= h) continue;
          for (int dx = 0; dx < kernel; ++dx) {
            const int ix = xx * stride - pad + dx;
            if (ix < 0 || ix >= w) continue;
            const int idx = (sl * h + iy) * w + ix;
            if (best < 0 || v[idx] > best_v) {
              best = idx;
              best_v = v[idx];
            }
          }
        }
        rows[r].emplace_back(best, 1.0);
      }
  auto map = ag::build_sparse_map(n * c * h * w, rows);
  return ag::linear_map(x, map, Shape{n, c, oh, ow});
}

Var imagenet_normalize(const Var& x) {
  require_nchw(x, "imagenet_normalize");
  if (x.shape()[1] != 3) throw ShapeError("imagenet_normalize expects 3 channels");
  Tensor mean(Shape{1, 3, 1, 1}), inv_std(Shape{1, 3, 1, 1});
  const double m[3] = {0.485, 0.456, 0.406}, sd[3] = {0.229, 0.224, 0.225};
  for (int c = 0; c < 3; ++c) {
    mean[c] = m[c];
    inv_std[c] = 1.0 / sd[c];
  }
  return ag::mul(ag::sub(ag::scale(ag::add_scalar(x, 1.0), 0.5), ag::constant(mean)), ag::constant(inv_std));
}

Var resize_bilinear(const Var& x, int out_h, int out_w) {
  require_nchw(x, "resize_bilinear");
  const Shape& s = x.shape();
  if (s[2] == out_h && s[3] == out_w) return x;
  auto map = resize_map(s[2], s[3], out_h, out_w);
  return ag::linear_map(x, map, Shape{s[0], s[1], out_h, out_w});
}

Var upsample_bilinear2x(const Var& x) {
  require_nchw(x, "upsample_bilinear2x");
  return resize_bilinear(x, x.shape()[2] * 2, x.shape()[3] * 2);
}

Var global_avg_pool(const Var& x) {
  require_nchw(x, "global_avg_pool");
  const Shape& s = x.shape();
  Var pooled = ag::sum_to(x, Shape{s[0], s[1], 1, 1});
  return ag::reshape(ag::scale(pooled, 1.0 / (s[2] * s[3])), Shape{s[0], s[1]});
}

// ---------------------------------------------------------------------------

void Module::set_training(bool training) {
  training_ = training;
  for (auto& [name, child] : children_) child->set_training(training);
}

std::vector<NamedParam> Module::named_parameters(const std::string& prefix) {
  std::vector<NamedParam> out;
  for (auto& [name, var] : params_) out.push_back({prefix + name, var});
  for (auto& [name, child] : children_) {
    auto sub = child->named_parameters(prefix + name + ".");
    out.insert(out.end(), sub.begin(), sub.end());
  }
  return out;
}

std::vector<NamedBuffer> Module::named_buffers(const std::string& prefix) {
  std::vector<NamedBuffer> out;
  for (auto& [name, t] : buffers_) out.push_back({prefix + name, t});
  for (auto& [name, child] : children_) {
    auto sub = child->named_buffers(prefix + name + ".");
    out.insert(out.end(), sub.begin(), sub.end());
  }
  return out;
}

std::vector<Var> Module::trainable_parameters() {
  std::vector<Var> out;
  for (auto& p : named_parameters())
    if (p.var->requires_grad()) out.push_back(*p.var);
  return out;
}

std::size_t Module::parameter_count(bool trainable_only) {
  std::size_t n = 0;
  for (auto& p : named_parameters())
    if (!trainable_only || p.var->requires_grad()) n += p.var->size();
  return n;
}

void Module::freeze() {
  for (auto& p : named_parameters()) p.var->node()->requires_grad = false;
}

Var& Module::register_parameter(const std::string& name, Var& slot, Tensor init) {
  slot = Var(std::move(init), true);
  params_.push_back({name, &slot});
  return slot;
}

void Module::register_buffer(const std::string& name, Tensor& slot) { buffers_.push_back({name, &slot}); }

// ---------------------------------------------------------------------------

Tensor Initializer::he_normal(const Shape& shape, int fan_in) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / std::max(1, fan_in)));
  Tensor t(shape);
  for (double& v : t.values()) v = dist(rng_);
  return t;
}

Tensor Initializer::uniform(const Shape& shape, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(shape);
  for (double& v : t.values()) v = dist(rng_);
  return t;
}

Conv2d::Conv2d(int in_ch_, int out_ch_, int kernel_, int stride_, int pad_, PadMode mode_,
               bool with_bias, Initializer& init)
    : in_ch(in_ch_), out_ch(out_ch_), kernel(kernel_), stride(stride_), pad(pad_), mode(mode_) {
  register_parameter("weight", weight,
                     init.he_normal(Shape{out_ch, in_ch, kernel, kernel}, in_ch * kernel * kernel));
  if (with_bias) register_parameter("bias", bias, Tensor(Shape{out_ch}));
}

Var Conv2d::forward(const Var& x) const { return conv2d(x, weight, bias, stride, pad, mode); }

BatchNorm2d::BatchNorm2d(int channels, double momentum_, double eps_)
    : running_mean(Shape{1, channels, 1, 1}, 0.0),
      running_var(Shape{1, channels, 1, 1}, 1.0),
      momentum(momentum_),
      eps(eps_) {
  register_parameter("gamma", gamma, Tensor(Shape{1, channels, 1, 1}, 1.0));
  register_parameter("beta", beta, Tensor(Shape{1, channels, 1, 1}, 0.0));
  register_buffer("running_mean", running_mean);
  register_buffer("running_var", running_var);
}

Var BatchNorm2d::forward(const Var& x) {
  require_nchw(x, "batch_norm");
  const Shape& s = x.shape();
  const Shape stat{1, s[1], 1, 1};
  const double count = static_cast<double>(s[0]) * s[2] * s[3];
  if (!training()) {
    Tensor inv(stat);
    for (int c = 0; c < s[1]; ++c) inv[c] = 1.0 / std::sqrt(running_var[c] + eps);
    Var xhat = ag::mul(ag::sub(x, ag::constant(running_mean)), ag::constant(inv));
    return ag::add(ag::mul(xhat, gamma), beta);
  }
  Var mu = ag::scale(ag::sum_to(x, stat), 1.0 / count);
  Var centred = ag::sub(x, mu);
  Var var = ag::scale(ag::sum_to(ag::square(centred), stat), 1.0 / count);
  Var xhat = ag::div(centred, ag::sqrt(ag::add_scalar(var, eps)));
  const double unbias = count > 1 ? count / (count - 1) : 1.0;
  for (int c = 0; c < s[1]; ++c) {
    running_mean[c] = (1 - momentum) * running_mean[c] + momentum * mu.value()[c];
    running_var[c] = (1 - momentum) * running_var[c] + momentum * var.value()[c] * unbias;
  }
  return ag::add(ag::mul(xhat, gamma), beta);
}

LayerNorm::LayerNorm(int channels, double eps_) : eps(eps_) {
  register_parameter("gamma", gamma, Tensor(Shape{1, channels, 1, 1}, 1.0));
  register_parameter("beta", beta, Tensor(Shape{1, channels, 1, 1}, 0.0));
}

Var LayerNorm::forward(const Var& x) const {
  require_nchw(x, "layer_norm");
  const Shape& s = x.shape();
  const Shape stat{s[0], 1, 1, 1};
  const double count = static_cast<double>(s[1]) * s[2] * s[3];
  Var mu = ag::scale(ag::sum_to(x, stat), 1.0 / count);
  Var centred = ag::sub(x, mu);
  Var var = ag::scale(ag::sum_to(ag::square(centred), stat), 1.0 / count);
  Var xhat = ag::div(centred, ag::sqrt(ag::add_scalar(var, eps)));
  return ag::add(ag::mul(xhat, gamma), beta);
}

Linear::Linear(int in, int out, Initializer& init) {
  register_parameter("weight", weight, init.he_normal(Shape{out, in}, in));
  register_parameter("bias", bias, Tensor(Shape{1, out}));
}

Var Linear::forward(const Var& x) const {
  return ag::add(ag::matmul(x, ag::transpose(weight)), bias);
}

// ---------------------------------------------------------------------------

Adam::Adam(std::vector<Var> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const Var& p : params_) {
    m_.emplace_back(p.shape());
    v_.emplace_back(p.shape());
  }
}

void Adam::step(const std::vector<Var>& grads) {
  if (grads.size() != params_.size()) throw ShapeError("Adam::step gradient count mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].mutable_value();
    const Tensor& g = grads[i].value();
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = cfg_.beta1 * m[j] + (1 - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1 - cfg_.beta2) * g[j] * g[j];
      p[j] -= cfg_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg_.eps);
    }
  }
}

std::vector<Tensor*> Adam::state() {
  std::vector<Tensor*> out;
  for (auto& m : m_) out.push_back(&m);
  for (auto& v : v_) out.push_back(&v);
  return out;
}

}  // namespace invsketch::nn
