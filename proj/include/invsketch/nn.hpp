#pragma once

// Layers and optimiser on top of the autograd core. Tensors are NCHW.

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "invsketch/autograd.hpp"

namespace invsketch::nn {

using ag::Var;

enum class PadMode { kZero, kReflect };

// ---- functional ops ----
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad,
           PadMode mode = PadMode::kZero);
Var max_pool2d(const Var& x, int size);
// Windowed max with padding; padded cells never win.
Var max_pool2d(const Var& x, int kernel, int stride, int pad);
Var upsample_bilinear2x(const Var& x);
Var global_avg_pool(const Var& x);  // [N,C,H,W] -> [N,C]
// [-1,1] RGB -> ImageNet mean/std normalised RGB.
Var imagenet_normalize(const Var& x);
// Resamples to (out_h, out_w) with bilinear weights (half-pixel centres).
Var resize_bilinear(const Var& x, int out_h, int out_w);

struct NamedParam {
  std::string name;
  Var* var;
};

struct NamedBuffer {
  std::string name;
  Tensor* tensor;
};

// Owns parameters and child modules by address, so modules are neither
// copyable nor movable; hold them through unique_ptr.
class Module {
 public:
  Module() = default;
  virtual ~Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;

  void set_training(bool training);
  bool training() const { return training_; }

  // Trainable and frozen parameters in registration order, dotted names.
  std::vector<NamedParam> named_parameters(const std::string& prefix = "");
  std::vector<NamedBuffer> named_buffers(const std::string& prefix = "");
  std::vector<Var> trainable_parameters();
  std::size_t parameter_count(bool trainable_only = true);

  // Detaches every parameter from gradient tracking.
  void freeze();

 protected:
  Var& register_parameter(const std::string& name, Var& slot, Tensor init);
  void register_buffer(const std::string& name, Tensor& slot);
  template <typename M>
  M& register_module(const std::string& name, std::unique_ptr<M>& slot, std::unique_ptr<M> module) {
    slot = std::move(module);
    children_.push_back({name, slot.get()});
    return *slot;
  }

 private:
  bool training_ = true;
  std::vector<std::pair<std::string, Var*>> params_;
  std::vector<std::pair<std::string, Tensor*>> buffers_;
  std::vector<std::pair<std::string, Module*>> children_;
};

// He-normal initialiser fed from a seeded engine.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}
  Tensor he_normal(const Shape& shape, int fan_in);
  Tensor uniform(const Shape& shape, double lo, double hi);
  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

class Conv2d : public Module {
 public:
  Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad, PadMode mode, bool bias,
         Initializer& init);
  Var forward(const Var& x) const;
  Var weight, bias;
  int in_ch, out_ch, kernel, stride, pad;
  PadMode mode;
};

// Batch statistics while training, running averages otherwise.
class BatchNorm2d : public Module {
 public:
  explicit BatchNorm2d(int channels, double momentum = 0.1, double eps = 1e-5);
  Var forward(const Var& x);
  Var gamma, beta;
  Tensor running_mean, running_var;
  double momentum, eps;
};

// Per-sample normalisation over (C,H,W) with a per-channel affine.
class LayerNorm : public Module {
 public:
  explicit LayerNorm(int channels, double eps = 1e-5);
  Var forward(const Var& x) const;
  Var gamma, beta;
  double eps;
};

class Linear : public Module {
 public:
  Linear(int in, int out, Initializer& init);
  Var forward(const Var& x) const;  // [N,in] -> [N,out]
  Var weight, bias;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(std::vector<Var> params, AdamConfig cfg);
  void step(const std::vector<Var>& grads);
  long steps() const { return t_; }
  const std::vector<Var>& params() const { return params_; }

  // State blocks for checkpointing: m then v per parameter.
  std::vector<Tensor*> state();

 private:
  std::vector<Var> params_;
  AdamConfig cfg_;
  std::vector<Tensor> m_, v_;
  long t_ = 0;
};

}  // namespace invsketch::nn
