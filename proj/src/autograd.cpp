#include "invsketch/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <unordered_map>
#include <unordered_set>

#include <Eigen/Core>

namespace invsketch::ag {

namespace {

thread_local bool g_grad_enabled = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using MapM = Eigen::Map<RowMat>;

Shape aligned(const Shape& s, std::size_t nd) {
  Shape out(nd - s.size(), 1);
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

// Walks `big` in row-major order while tracking the matching flat offset into
// `small`, which broadcasts against it.
template <typename F>
void for_each_broadcast(const Shape& big, const Shape& small_raw, F&& f) {
  const std::size_t nd = big.size();
  const Shape small = aligned(small_raw, nd);
  // Merge neighbouring axes that are both broadcast or both full, so the
  // innermost loop runs over the longest contiguous stretch.
  std::vector<std::size_t> ext, stride;
  std::vector<bool> bcast;
  for (std::size_t d = 0; d < nd; ++d) {
    if (small[d] != 1 && small[d] != big[d])
      throw ShapeError("cannot broadcast " + shape_str(small_raw) + " to " + shape_str(big));
    if (big[d] == 1) continue;
    const bool b = small[d] == 1;
    if (!ext.empty() && bcast.back() == b) {
      ext.back() *= static_cast<std::size_t>(big[d]);
    } else {
      ext.push_back(static_cast<std::size_t>(big[d]));
      bcast.push_back(b);
    }
  }
  const std::size_t total = numel(big);
  if (total == 0) return;
  if (ext.empty()) {
    f(std::size_t{0}, std::size_t{0});
    return;
  }
  const std::size_t m = ext.size();
  stride.assign(m, 0);
  std::size_t acc = 1;
  for (std::size_t d = m; d-- > 0;) {
    stride[d] = bcast[d] ? 0 : acc;
    if (!bcast[d]) acc *= ext[d];
  }
  const std::size_t inner = ext[m - 1];
  const std::size_t inner_stride = stride[m - 1];
  std::vector<std::size_t> idx(m, 0);
  std::size_t pos = 0;
  for (std::size_t flat = 0; flat < total; flat += inner) {
    if (inner_stride == 0) {
      for (std::size_t i = 0; i < inner; ++i) f(flat + i, pos);
    } else {
      for (std::size_t i = 0; i < inner; ++i) f(flat + i, pos + i);
    }
    for (std::size_t d = m - 1; d-- > 0;) {
      ++idx[d];
      pos += stride[d];
      if (idx[d] < ext[d]) break;
      pos -= stride[d] * ext[d];
      idx[d] = 0;
    }
  }
}

template <typename F>
Tensor unary_values(const Tensor& a, F&& f) {
  Tensor out = Tensor::uninitialized(a.shape());
  const double* src = a.data();
  double* dst = out.data();
  for (std::size_t i = 0; i < a.size(); ++i) dst[i] = f(src[i]);
  return out;
}

template <typename F>
Tensor binary_values(const Tensor& a, const Tensor& b, F&& f) {
  Tensor out = Tensor::uninitialized(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* dst = out.data();
  for (std::size_t i = 0; i < a.size(); ++i) dst[i] = f(pa[i], pb[i]);
  return out;
}

// Brings both operands to a common shape by inserting broadcast nodes.
std::pair<Var, Var> broadcast_pair(const Var& a, const Var& b) {
  if (a.shape() == b.shape()) return {a, b};
  const Shape out = broadcast_shape(a.shape(), b.shape());
  return {broadcast_to(a, out), broadcast_to(b, out)};
}

}  // namespace

// ---------------------------------------------------------------------------

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

const Tensor& Var::value() const {
  if (!node_) throw Error("access to undefined Var");
  return node_->value;
}

Tensor& Var::mutable_value() {
  if (!node_) throw Error("access to undefined Var");
  return node_->value;
}

bool Var::requires_grad() const { return node_ && node_->requires_grad; }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_result(Tensor value, std::vector<Var> inputs, BackwardFn backward, const char* op) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  if (g_grad_enabled) {
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Var& v) { return v.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->inputs = std::move(inputs);
      node->backward = std::move(backward);
    }
  }
  return Var(std::move(node));
}

Var constant(Tensor value) { return Var(std::move(value), false); }

std::vector<Var> grad(const Var& output, const std::vector<Var>& wrt, bool create_graph,
                      const Var& seed) {
  std::vector<Var> result;
  result.reserve(wrt.size());
  auto zeros_for = [&]() {
    result.clear();
    for (const Var& w : wrt) result.push_back(constant(Tensor(w.shape())));
    return result;
  };
  if (!output.requires_grad()) return zeros_for();

  // Iterative post-order DFS for a topological ordering.
  std::vector<std::shared_ptr<Node>> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<std::shared_ptr<Node>, std::size_t>> stack;
  stack.emplace_back(output.shared(), 0);
  visited.insert(output.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      const Var& in = node->inputs[next++];
      if (in.requires_grad() && !visited.count(in.node())) {
        visited.insert(in.node());
        stack.emplace_back(in.shared(), 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  std::unordered_set<Node*> targets;
  for (const Var& w : wrt)
    if (w.defined()) targets.insert(w.node());

  std::unique_ptr<NoGradGuard> guard;
  if (!create_graph) guard = std::make_unique<NoGradGuard>();

  std::unordered_map<Node*, Var> grads;
  grads[output.node()] =
      seed.defined() ? seed : constant(Tensor(output.shape(), 1.0));

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = it->get();
    auto found = grads.find(node);
    if (found == grads.end()) continue;
    Var g = found->second;
    if (!targets.count(node)) grads.erase(found);
    if (!node->backward) continue;
    std::vector<Var> in_grads = node->backward(g, Var(*it));
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      const Var& in = node->inputs[i];
      if (!in.requires_grad() || i >= in_grads.size() || !in_grads[i].defined()) continue;
      auto slot = grads.find(in.node());
      if (slot == grads.end()) {
        grads.emplace(in.node(), in_grads[i]);
      } else {
        slot->second = add(slot->second, in_grads[i]);
      }
    }
  }

  for (const Var& w : wrt) {
    auto found = w.defined() ? grads.find(w.node()) : grads.end();
    if (found == grads.end()) {
      result.push_back(constant(Tensor(w.shape())));
    } else {
      result.push_back(found->second);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// SparseMap

std::shared_ptr<SparseMap> build_sparse_map(
    int in_size, const std::vector<std::vector<std::pair<int, double>>>& rows) {
  auto map = std::make_shared<SparseMap>();
  map->in_size = in_size;
  map->out_size = static_cast<int>(rows.size());
  map->row_ptr.reserve(rows.size() + 1);
  map->row_ptr.push_back(0);
  for (const auto& row : rows) {
    for (const auto& [col, w] : row) {
      map->cols.push_back(col);
      map->weights.push_back(w);
    }
    map->row_ptr.push_back(static_cast<int>(map->cols.size()));
  }
  return map;
}

std::shared_ptr<const SparseMap> SparseMap::transposed() const {
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  if (transpose_owned) return transpose_owned;
  if (auto back = transpose_of.lock()) return back;
  auto t = std::make_shared<SparseMap>();
  t->in_size = out_size;
  t->out_size = in_size;
  t->row_ptr.assign(static_cast<std::size_t>(in_size) + 1, 0);
  for (int c : cols) ++t->row_ptr[static_cast<std::size_t>(c) + 1];
  for (int i = 0; i < in_size; ++i) t->row_ptr[i + 1] += t->row_ptr[i];
  t->cols.resize(cols.size());
  t->weights.resize(cols.size());
  std::vector<int> fill(t->row_ptr.begin(), t->row_ptr.end() - 1);
  for (int r = 0; r < out_size; ++r) {
    for (int k = row_ptr[r]; k < row_ptr[r + 1]; ++k) {
      const int pos = fill[cols[k]]++;
      t->cols[pos] = r;
      t->weights[pos] = weights[k];
    }
  }
  // Back-link is weak so the pair does not form an ownership cycle.
  t->transpose_of = weak_from_this();
  transpose_owned = t;
  return t;
}

void SparseMap::apply(const double* in, double* out) const {
  for (int r = 0; r < out_size; ++r) {
    double acc = 0.0;
    for (int k = row_ptr[r]; k < row_ptr[r + 1]; ++k) acc += weights[k] * in[cols[k]];
    out[r] = acc;
  }
}

// ---------------------------------------------------------------------------
// Elementwise

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t nd = std::max(a.size(), b.size());
  const Shape aa = aligned(a, nd), bb = aligned(b, nd);
  Shape out(nd);
  for (std::size_t d = 0; d < nd; ++d) {
    if (aa[d] == bb[d] || bb[d] == 1) {
      out[d] = aa[d];
    } else if (aa[d] == 1) {
      out[d] = bb[d];
    } else {
      throw ShapeError("incompatible shapes " + shape_str(a) + " and " + shape_str(b));
    }
  }
  return out;
}

Var add(const Var& a0, const Var& b0) {
  auto [a, b] = broadcast_pair(a0, b0);
  Tensor v = binary_values(a.value(), b.value(), [](double x, double y) { return x + y; });
  return make_result(std::move(v), {a, b},
                     [](const Var& g, const Var&) { return std::vector<Var>{g, g}; }, "add");
}

Var sub(const Var& a0, const Var& b0) {
  auto [a, b] = broadcast_pair(a0, b0);
  Tensor v = binary_values(a.value(), b.value(), [](double x, double y) { return x - y; });
  return make_result(std::move(v), {a, b},
                     [](const Var& g, const Var&) { return std::vector<Var>{g, neg(g)}; }, "sub");
}

Var mul(const Var& a0, const Var& b0) {
  auto [a, b] = broadcast_pair(a0, b0);
  Tensor v = binary_values(a.value(), b.value(), [](double x, double y) { return x * y; });
  return make_result(
      std::move(v), {a, b},
      [a, b](const Var& g, const Var&) {
        return std::vector<Var>{a.requires_grad() ? mul(g, b) : Var(),
                                b.requires_grad() ? mul(g, a) : Var()};
      },
      "mul");
}

Var div(const Var& a0, const Var& b0) {
  auto [a, b] = broadcast_pair(a0, b0);
  Tensor v = binary_values(a.value(), b.value(), [](double x, double y) { return x / y; });
  return make_result(
      std::move(v), {a, b},
      [a, b](const Var& g, const Var& self) {
        Var gb;
        if (b.requires_grad()) gb = neg(div(mul(g, self), b));
        return std::vector<Var>{a.requires_grad() ? div(g, b) : Var(), gb};
      },
      "div");
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double s) {
  Tensor v = unary_values(a.value(), [s](double x) { return s * x; });
  return make_result(std::move(v), {a},
                     [s](const Var& g, const Var&) { return std::vector<Var>{scale(g, s)}; },
                     "scale");
}

Var add_scalar(const Var& a, double s) {
  Tensor v = unary_values(a.value(), [s](double x) { return x + s; });
  return make_result(std::move(v), {a},
                     [](const Var& g, const Var&) { return std::vector<Var>{g}; }, "add_scalar");
}

Var mul_const(const Var& a, const Tensor& c) {
  if (a.shape() != c.shape()) throw ShapeError("mul_const shape mismatch");
  Tensor v = binary_values(a.value(), c, [](double x, double y) { return x * y; });
  return make_result(std::move(v), {a},
                     [c](const Var& g, const Var&) { return std::vector<Var>{mul_const(g, c)}; },
                     "mul_const");
}

Var exp(const Var& a) {
  Tensor v = unary_values(a.value(), [](double x) { return std::exp(x); });
  return make_result(std::move(v), {a},
                     [](const Var& g, const Var& self) { return std::vector<Var>{mul(g, self)}; },
                     "exp");
}

Var log(const Var& a) {
  Tensor v = unary_values(a.value(), [](double x) { return std::log(x); });
  return make_result(std::move(v), {a},
                     [a](const Var& g, const Var&) { return std::vector<Var>{div(g, a)}; }, "log");
}

Var sqrt(const Var& a) {
  Tensor v = unary_values(a.value(), [](double x) { return std::sqrt(x); });
  return make_result(
      std::move(v), {a},
      [](const Var& g, const Var& self) { return std::vector<Var>{scale(div(g, self), 0.5)}; },
      "sqrt");
}

Var square(const Var& a) {
  Tensor v = unary_values(a.value(), [](double x) { return x * x; });
  return make_result(
      std::move(v), {a},
      [a](const Var& g, const Var&) { return std::vector<Var>{scale(mul(g, a), 2.0)}; }, "square");
}

Var tanh(const Var& a) {
  Tensor v = unary_values(a.value(), [](double x) { return std::tanh(x); });
  return make_result(
      std::move(v), {a},
      [](const Var& g, const Var& self) {
        return std::vector<Var>{mul(g, add_scalar(neg(square(self)), 1.0))};
      },
      "tanh");
}

Var sigmoid(const Var& a) {
  Tensor v = unary_values(a.value(), [](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  return make_result(
      std::move(v), {a},
      [](const Var& g, const Var& self) {
        return std::vector<Var>{mul(g, mul(self, add_scalar(neg(self), 1.0)))};
      },
      "sigmoid");
}

Var softplus(const Var& a) {
  Tensor v = unary_values(a.value(), [](double x) {
    return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  });
  return make_result(
      std::move(v), {a}, [a](const Var& g, const Var&) { return std::vector<Var>{mul(g, sigmoid(a))}; },
      "softplus");
}

Var relu(const Var& a) { return leaky_relu(a, 0.0); }

Var leaky_relu(const Var& a, double slope) {
  Tensor mask = unary_values(a.value(), [slope](double x) { return x > 0 ? 1.0 : slope; });
  Tensor v = binary_values(a.value(), mask, [](double x, double m) { return x * m; });
  return make_result(
      std::move(v), {a},
      [mask = std::move(mask)](const Var& g, const Var&) { return std::vector<Var>{mul_const(g, mask)}; },
      "leaky_relu");
}

Var abs(const Var& a) {
  Tensor sign = unary_values(a.value(), [](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
  Tensor v = unary_values(a.value(), [](double x) { return std::fabs(x); });
  return make_result(
      std::move(v), {a},
      [sign = std::move(sign)](const Var& g, const Var&) { return std::vector<Var>{mul_const(g, sign)}; },
      "abs");
}

// ---------------------------------------------------------------------------
// Shape ops

Var broadcast_to(const Var& a, const Shape& shape) {
  if (a.shape() == shape) return a;
  Tensor out = Tensor::uninitialized(shape);
  const double* src = a.value().data();
  double* dst = out.data();
  for_each_broadcast(shape, a.shape(), [&](std::size_t flat, std::size_t pos) { dst[flat] = src[pos]; });
  const Shape from = a.shape();
  return make_result(
      std::move(out), {a},
      [from](const Var& g, const Var&) { return std::vector<Var>{sum_to(g, from)}; }, "broadcast_to");
}

Var sum_to(const Var& a, const Shape& shape) {
  if (a.shape() == shape) return a;
  Tensor out(shape);
  const double* src = a.value().data();
  double* dst = out.data();
  for_each_broadcast(a.shape(), shape, [&](std::size_t flat, std::size_t pos) { dst[pos] += src[flat]; });
  const Shape from = a.shape();
  return make_result(
      std::move(out), {a},
      [from](const Var& g, const Var&) { return std::vector<Var>{broadcast_to(g, from)}; }, "sum_to");
}

Var reshape(const Var& a, const Shape& shape) {
  if (a.shape() == shape) return a;
  Tensor out = a.value().reshaped(shape);
  const Shape from = a.shape();
  return make_result(
      std::move(out), {a},
      [from](const Var& g, const Var&) { return std::vector<Var>{reshape(g, from)}; }, "reshape");
}

Var sum(const Var& a) { return reshape(sum_to(a, Shape(a.shape().size(), 1)), Shape{}); }

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Var sample_norm(const Var& a) {
  if (a.value().ndim() < 1) throw ShapeError("sample_norm expects a batch axis");
  const int n = a.shape()[0];
  const std::size_t per = n ? a.size() / n : 0;
  Tensor out(Shape{n});
  Tensor zero_rows(Shape{n});
  const double* src = a.value().data();
  for (int i = 0; i < n; ++i) {
    double acc = 0;
    for (std::size_t k = 0; k < per; ++k) acc += src[i * per + k] * src[i * per + k];
    out[i] = std::sqrt(acc);
    zero_rows[i] = out[i] == 0.0 ? 1.0 : 0.0;
  }
  const Shape full = a.shape();
  return make_result(
      std::move(out), {a},
      [a, full, zero_rows](const Var& g, const Var& self) {
        // Rows with zero norm are all-zero, so dividing by 1 there yields a zero gradient.
        Shape column(full.size(), 1);
        column[0] = full[0];
        Var safe = reshape(add(self, constant(zero_rows)), column);
        Var gc = reshape(g, column);
        return std::vector<Var>{mul(broadcast_to(div(gc, safe), full), a)};
      },
      "sample_norm");
}

Var transpose(const Var& a) {
  if (a.value().ndim() != 2) throw ShapeError("transpose expects a 2-d tensor");
  const int r = a.shape()[0], c = a.shape()[1];
  Tensor out = Tensor::uninitialized(Shape{c, r});
  MapM(out.data(), c, r) = MapC(a.value().data(), r, c).transpose();
  return make_result(std::move(out), {a},
                     [](const Var& g, const Var&) { return std::vector<Var>{transpose(g)}; },
                     "transpose");
}

namespace {

Var embed0(const Var& g, int begin, const Shape& full);

}  // namespace

Var slice0(const Var& a, int begin, int end) {
  const Shape& s = a.shape();
  if (s.empty() || begin < 0 || end > s[0] || begin > end) throw ShapeError("slice0 out of range");
  Shape os = s;
  os[0] = end - begin;
  const std::size_t row = numel(s) / static_cast<std::size_t>(s[0]);
  Tensor out(os);
  std::copy(a.value().data() + begin * row, a.value().data() + end * row, out.data());
  const Shape full = s;
  return make_result(
      std::move(out), {a},
      [begin, full](const Var& g, const Var&) { return std::vector<Var>{embed0(g, begin, full)}; },
      "slice0");
}

namespace {

// Places g at rows [begin, begin + g.rows) of a zero tensor shaped `full`.
Var embed0(const Var& g, int begin, const Shape& full) {
  Tensor out(full);
  const std::size_t row = numel(full) / static_cast<std::size_t>(full[0]);
  std::copy(g.value().data(), g.value().data() + g.size(), out.data() + begin * row);
  const int end = begin + g.shape()[0];
  return make_result(
      std::move(out), {g},
      [begin, end](const Var& gg, const Var&) { return std::vector<Var>{slice0(gg, begin, end)}; },
      "embed0");
}

}  // namespace

Var concat0(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat0 of nothing");
  Shape s = parts[0].shape();
  int rows = 0;
  for (const Var& p : parts) {
    Shape ps = p.shape();
    if (ps.size() != s.size() || !std::equal(ps.begin() + 1, ps.end(), s.begin() + 1))
      throw ShapeError("concat0 shape mismatch");
    rows += ps[0];
  }
  s[0] = rows;
  Tensor out(s);
  std::vector<int> offsets;
  std::size_t pos = 0;
  int row = 0;
  for (const Var& p : parts) {
    offsets.push_back(row);
    std::copy(p.value().data(), p.value().data() + p.size(), out.data() + pos);
    pos += p.size();
    row += p.shape()[0];
  }
  offsets.push_back(row);
  return make_result(
      std::move(out), parts,
      [offsets](const Var& g, const Var&) {
        std::vector<Var> gs;
        for (std::size_t i = 0; i + 1 < offsets.size(); ++i)
          gs.push_back(slice0(g, offsets[i], offsets[i + 1]));
        return gs;
      },
      "concat0");
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(const Var& a, const Var& b) {
  if (a.value().ndim() != 2 || b.value().ndim() != 2 || a.shape()[1] != b.shape()[0])
    throw ShapeError("matmul shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor out = Tensor::uninitialized(Shape{m, n});
  MapM(out.data(), m, n).noalias() = MapC(a.value().data(), m, k) * MapC(b.value().data(), k, n);
  return make_result(
      std::move(out), {a, b},
      [a, b](const Var& g, const Var&) {
        return std::vector<Var>{a.requires_grad() ? matmul(g, transpose(b)) : Var(),
                                b.requires_grad() ? matmul(transpose(a), g) : Var()};
      },
      "matmul");
}

Var mm_wx(const Var& w, const Var& x, Shape out_shape) {
  const Shape& ws = w.shape();
  if (ws.empty() || x.value().ndim() < 1) throw ShapeError("mm_wx needs a matrix and a batch");
  const int o = ws[0];
  const int k = static_cast<int>(w.size() / o);
  const int n = x.shape()[0];
  if (n == 0 || x.size() % (static_cast<std::size_t>(n) * k) != 0)
    throw ShapeError("mm_wx shapes " + shape_str(ws) + " x " + shape_str(x.shape()));
  const int p = static_cast<int>(x.size() / (static_cast<std::size_t>(n) * k));
  if (out_shape.empty()) out_shape = Shape{n, o, p};
  if (numel(out_shape) != static_cast<std::size_t>(n) * o * p)
    throw ShapeError("mm_wx output shape " + shape_str(out_shape) + " has the wrong size");
  Tensor out = Tensor::uninitialized(out_shape);
  MapC wm(w.value().data(), o, k);
  for (int i = 0; i < n; ++i) {
    MapM(out.data() + static_cast<std::size_t>(i) * o * p, o, p).noalias() =
        wm * MapC(x.value().data() + static_cast<std::size_t>(i) * k * p, k, p);
  }
  return make_result(
      std::move(out), {w, x},
      [w, x, o, k](const Var& g, const Var&) {
        return std::vector<Var>{
            w.requires_grad() ? mm_gx(g, x, w.shape()) : Var(),
            x.requires_grad() ? mm_wx(transpose(reshape(w, Shape{o, k})), g, x.shape()) : Var()};
      },
      "mm_wx");
}

Var mm_gx(const Var& g, const Var& x, Shape w_shape) {
  if (g.value().ndim() < 1 || x.value().ndim() < 1 || g.shape()[0] != x.shape()[0])
    throw ShapeError("mm_gx shapes " + shape_str(g.shape()) + " x " + shape_str(x.shape()));
  const int n = g.shape()[0];
  const int o = w_shape.empty() ? g.shape()[1] : w_shape[0];
  const int p = static_cast<int>(g.size() / (static_cast<std::size_t>(n) * o));
  const int k = static_cast<int>(x.size() / (static_cast<std::size_t>(n) * p));
  if (static_cast<std::size_t>(n) * o * p != g.size() || static_cast<std::size_t>(n) * k * p != x.size())
    throw ShapeError("mm_gx shapes " + shape_str(g.shape()) + " x " + shape_str(x.shape()));
  if (w_shape.empty()) w_shape = Shape{o, k};
  if (numel(w_shape) != static_cast<std::size_t>(o) * k) throw ShapeError("mm_gx weight shape mismatch");
  Tensor out(w_shape);
  MapM om(out.data(), o, k);
  for (int i = 0; i < n; ++i) {
    om.noalias() += MapC(g.value().data() + static_cast<std::size_t>(i) * o * p, o, p) *
                    MapC(x.value().data() + static_cast<std::size_t>(i) * k * p, k, p).transpose();
  }
  return make_result(
      std::move(out), {g, x},
      [g, x, o, k](const Var& h, const Var&) {
        return std::vector<Var>{
            g.requires_grad() ? mm_wx(h, x, g.shape()) : Var(),
            x.requires_grad() ? mm_wx(transpose(reshape(h, Shape{o, k})), g, x.shape()) : Var()};
      },
      "mm_gx");
}

Var linear_map(const Var& a, std::shared_ptr<const SparseMap> map, Shape out_shape) {
  if (a.size() % static_cast<std::size_t>(map->in_size) != 0)
    throw ShapeError("linear_map input size " + std::to_string(a.size()) +
                     " is not a multiple of " + std::to_string(map->in_size));
  const std::size_t slices = a.size() / static_cast<std::size_t>(map->in_size);
  if (out_shape.empty()) out_shape = Shape{static_cast<int>(slices), map->out_size};
  if (numel(out_shape) != slices * map->out_size)
    throw ShapeError("linear_map output shape " + shape_str(out_shape) + " has the wrong size");
  Tensor out = Tensor::uninitialized(out_shape);
  for (std::size_t s = 0; s < slices; ++s)
    map->apply(a.value().data() + s * map->in_size, out.data() + s * map->out_size);
  const Shape from = a.shape();
  return make_result(
      std::move(out), {a},
      [map, from](const Var& g, const Var&) { return std::vector<Var>{linear_map(g, map->transposed(), from)}; },
      "linear_map");
}

}  // namespace invsketch::ag
