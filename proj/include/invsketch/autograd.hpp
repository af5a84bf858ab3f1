#pragma once

// Reverse-mode automatic differentiation over Tensor values.
//
// Every backward rule is written in terms of differentiable ops, so the
// gradient graph can itself be differentiated (needed for input-gradient
// penalties). Outside create_graph mode the backward pass runs under
// NoGradGuard and records nothing.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "invsketch/tensor.hpp"

namespace invsketch::ag {

struct Node;

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& value() const;
  Tensor& mutable_value();
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  double item() const { return value().item(); }
  bool requires_grad() const;
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Backward rule: receives the upstream gradient and the node's own output
// and returns one gradient per input (undefined Var for "no gradient").
using BackwardFn = std::function<std::vector<Var>(const Var& grad, const Var& self)>;

struct Node {
  Tensor value;
  bool requires_grad = false;
  std::vector<Var> inputs;
  BackwardFn backward;
  const char* op = "leaf";
};

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Records a result node when any input requires grad and recording is on.
Var make_result(Tensor value, std::vector<Var> inputs, BackwardFn backward, const char* op);

Var constant(Tensor value);

// Gradients of `output` (seeded with ones, or `seed`) with respect to each of
// `wrt`. Inputs unreachable from the output receive zero tensors.
std::vector<Var> grad(const Var& output, const std::vector<Var>& wrt, bool create_graph = false,
                      const Var& seed = Var());

// Fixed sparse linear operator applied independently to contiguous slices of
// length in_size; each slice maps to out_size outputs.
struct SparseMap : std::enable_shared_from_this<SparseMap> {
  int in_size = 0;
  int out_size = 0;
  std::vector<int> row_ptr;  // out_size + 1 entries
  std::vector<int> cols;
  std::vector<double> weights;
  mutable std::shared_ptr<const SparseMap> transpose_owned;
  mutable std::weak_ptr<const SparseMap> transpose_of;

  std::shared_ptr<const SparseMap> transposed() const;
  void apply(const double* in, double* out) const;
};

// Builds a CSR map from per-output (input index, weight) lists.
std::shared_ptr<SparseMap> build_sparse_map(int in_size,
                                            const std::vector<std::vector<std::pair<int, double>>>& rows);

// ---- elementwise (with numpy-style broadcasting) ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var mul_const(const Var& a, const Tensor& c);  // c has a's shape and is not differentiated

Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);
Var square(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var softplus(const Var& a);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var abs(const Var& a);

// ---- shape ----
Shape broadcast_shape(const Shape& a, const Shape& b);
Var broadcast_to(const Var& a, const Shape& shape);
Var sum_to(const Var& a, const Shape& shape);
Var reshape(const Var& a, const Shape& shape);
Var sum(const Var& a);
Var mean(const Var& a);
Var transpose(const Var& a);  // 2-d
// Euclidean norm of each sample along axis 0: [N, ...] -> [N].
Var sample_norm(const Var& a);
// Concatenates along axis 0.
Var concat0(const std::vector<Var>& parts);
// Rows [begin, end) along axis 0.
Var slice0(const Var& a, int begin, int end);

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);  // [m,k] x [k,n]
// Batched products on flattened views. w is read as [O, K] (first axis O),
// x as [N, K, P] and g as [N, O, P]; output shapes default to those views.
Var mm_wx(const Var& w, const Var& x, Shape out_shape = {});  // w x[n] per sample
Var mm_gx(const Var& g, const Var& x, Shape w_shape = {});    // sum_n g[n] x[n]^T
Var linear_map(const Var& a, std::shared_ptr<const SparseMap> map, Shape out_shape = {});

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }
inline Var operator+(const Var& a, double s) { return add_scalar(a, s); }
inline Var operator-(const Var& a, double s) { return add_scalar(a, -s); }

}  // namespace invsketch::ag
