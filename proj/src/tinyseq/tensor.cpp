#include "tinyseq/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_map>

namespace tinyseq {

namespace {

std::atomic<std::uint64_t> g_fully_masked_rows{0};

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

void require_defined(const Tensor& t, std::string_view op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

std::span<double> detail::Node::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  if (shape.empty() || shape.size() > 3) {
    throw ContractError("tensor rank must be 1..3, got " + std::to_string(shape.size()));
  }
  if (numel(shape) != data.size()) {
    throw DimensionError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->data, false); }

Tape Tape::record(const Tensor& root) {
  Tape tape;
  if (!root.defined() || !root.requires_grad()) return tape;
  // Iterative post-order DFS; parents precede children in nodes_.
  std::unordered_map<const detail::Node*, std::shared_ptr<detail::Node>> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  seen.emplace(root.node().get(), root.node());
  stack.emplace_back(root.node().get(), 0);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      const auto& parent = node->parents[next++];
      if (parent->requires_grad && seen.emplace(parent.get(), parent).second) {
        stack.emplace_back(parent.get(), 0);
      }
      continue;
    }
    tape.nodes_.push_back(seen.at(node));
    stack.pop_back();
  }
  return tape;
}

std::size_t Tape::operation_count() const {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [](const auto& n) { return !n->is_leaf(); }));
}

std::size_t Tape::replay_backward() const {
  std::size_t visited = 0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    auto& node = **it;
    if (node.is_leaf() || !node.backward || node.grad.empty()) continue;
    node.backward(node.grad);
    ++visited;
  }
  return visited;
}

void Tape::reset_interior_grads() const {
  for (const auto& n : nodes_)
    if (!n->is_leaf() && !n->grad.empty()) std::fill(n->grad.begin(), n->grad.end(), 0.0);
}

void backward(const Tensor& loss) {
  require_defined(loss, "backward");
  if (loss.size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  auto tape = Tape::record(loss);
  tape.reset_interior_grads();
  loss.node()->grad_buffer()[0] += 1.0;
  tape.replay_backward();
}

std::uint64_t fully_masked_softmax_rows() { return g_fully_masked_rows.load(); }

namespace detail {

void count_fully_masked_row() { g_fully_masked_rows.fetch_add(1, std::memory_order_relaxed); }

Tensor make_result(std::string_view op, Shape shape, std::vector<double> data,
                   std::vector<Tensor> parents,
                   std::function<void(std::span<const double>)> backward) {
  Tensor out(std::move(shape), std::move(data), false);
  auto& node = *out.node();
  node.op = op;
  bool any = std::any_of(parents.begin(), parents.end(),
                         [](const Tensor& p) { return p.defined() && p.requires_grad(); });
  if (any) {
    node.requires_grad = true;
    for (auto& p : parents)
      if (p.defined()) node.parents.push_back(p.node());
    node.backward = std::move(backward);
  }
  return out;
}

}  // namespace detail

namespace {

// Accumulation target for a parent, or an empty span when it takes no gradient.
std::span<double> grad_of(const Tensor& t) {
  if (!t.defined() || !t.requires_grad()) return {};
  return t.node()->grad_buffer();
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  auto A = a.data();
  auto B = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * B[p * n + j];
    }
  return detail::make_result("matmul", {m, n}, std::move(out), {a, b},
                             [a, b, m, k, n](std::span<const double> g) {
                               auto A = a.data();
                               auto B = b.data();
                               if (auto ga = grad_of(a); !ga.empty())
                                 for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t p = 0; p < k; ++p) {
                                     double s = 0.0;
                                     for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * B[p * n + j];
                                     ga[i * k + p] += s;
                                   }
                               if (auto gb = grad_of(b); !gb.empty())
                                 for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t p = 0; p < k; ++p) {
                                     const double av = A[i * k + p];
                                     for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
                                   }
                             });
}

Tensor transpose(const Tensor& a) {
  require_defined(a, "transpose");
  if (a.rank() != 2) throw DimensionError("transpose: expected rank 2, got " + shape_str(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(r * c);
  auto A = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = A[i * c + j];
  return detail::make_result("transpose", {c, r}, std::move(out), {a},
                             [a, r, c](std::span<const double> g) {
                               auto ga = grad_of(a);
                               for (std::size_t i = 0; i < r; ++i)
                                 for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
                             });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_defined(a, "add");
  require_defined(b, "add");
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  std::transform(a.data().begin(), a.data().end(), b.data().begin(), out.begin(), std::plus<>{});
  return detail::make_result("add", a.shape(), std::move(out), {a, b},
                             [a, b](std::span<const double> g) {
                               if (auto ga = grad_of(a); !ga.empty())
                                 for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                               if (auto gb = grad_of(b); !gb.empty())
                                 for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                             });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_defined(a, "sub");
  require_defined(b, "sub");
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  std::transform(a.data().begin(), a.data().end(), b.data().begin(), out.begin(), std::minus<>{});
  return detail::make_result("sub", a.shape(), std::move(out), {a, b},
                             [a, b](std::span<const double> g) {
                               if (auto ga = grad_of(a); !ga.empty())
                                 for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                               if (auto gb = grad_of(b); !gb.empty())
                                 for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                             });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_defined(a, "mul");
  require_defined(b, "mul");
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  std::transform(a.data().begin(), a.data().end(), b.data().begin(), out.begin(), std::multiplies<>{});
  return detail::make_result("mul", a.shape(), std::move(out), {a, b},
                             [a, b](std::span<const double> g) {
                               if (auto ga = grad_of(a); !ga.empty())
                                 for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.data()[i];
                               if (auto gb = grad_of(b); !gb.empty())
                                 for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.data()[i];
                             });
}

Tensor mul_scalar(const Tensor& a, double s) {
  require_defined(a, "mul_scalar");
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= s;
  return detail::make_result("mul_scalar", a.shape(), std::move(out), {a},
                             [a, s](std::span<const double> g) {
                               auto ga = grad_of(a);
                               for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
                             });
}

Tensor relu(const Tensor& a) {
  require_defined(a, "relu");
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  return detail::make_result("relu", a.shape(), std::move(out), {a},
                             [a](std::span<const double> g) {
                               auto ga = grad_of(a);
                               auto x = a.data();
                               for (std::size_t i = 0; i < g.size(); ++i)
                                 if (x[i] > 0.0) ga[i] += g[i];
                             });
}

Tensor sum_all(const Tensor& a) {
  require_defined(a, "sum_all");
  double s = 0.0;
  for (double v : a.data()) s += v;
  return detail::make_result("sum_all", {1}, {s}, {a}, [a](std::span<const double> g) {
    auto ga = grad_of(a);
    for (auto& v : ga) v += g[0];
  });
}

Tensor mean_all(const Tensor& a) {
  require_defined(a, "mean_all");
  const double n = static_cast<double>(a.size());
  double s = 0.0;
  for (double v : a.data()) s += v;
  return detail::make_result("mean_all", {1}, {s / n}, {a}, [a, n](std::span<const double> g) {
    auto ga = grad_of(a);
    for (auto& v : ga) v += g[0] / n;
  });
}

Tensor softmax_lastdim(const Tensor& x, const Tensor& additive_mask) {
  require_defined(x, "softmax_lastdim");
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.size() / cols;
  std::size_t mask_rows = 0;
  if (additive_mask.defined()) {
    const std::size_t x_rows = x.rank() == 1 ? 1 : x.dim(x.rank() - 2);
    const std::size_t m_rows = additive_mask.rank() == 1 ? 1 : additive_mask.dim(0);
    if (additive_mask.rank() > 2 || additive_mask.shape().back() != cols ||
        (m_rows != x_rows && m_rows != 1)) {
      throw DimensionError("softmax_lastdim: mask " + shape_str(additive_mask.shape()) +
                           " not broadcastable to " + shape_str(x.shape()));
    }
    mask_rows = m_rows;
  }
  std::vector<double> out(x.size());
  auto X = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* m = mask_rows ? additive_mask.data().data() + (r % mask_rows) * cols : nullptr;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) {
      double v = X[r * cols + c] + (m ? m[c] : 0.0);
      out[r * cols + c] = v;
      mx = std::max(mx, v);
    }
    if (mx == -std::numeric_limits<double>::infinity()) {
      std::fill_n(out.begin() + r * cols, cols, 0.0);
      detail::count_fully_masked_row();
      continue;
    }
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      double& v = out[r * cols + c];
      v = std::exp(v - mx);
      s += v;
    }
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= s;
  }
  auto probs = std::make_shared<std::vector<double>>(out);
  return detail::make_result("softmax_lastdim", x.shape(), std::move(out), {x},
                             [x, probs, rows, cols](std::span<const double> g) {
                               auto gx = grad_of(x);
                               const auto& P = *probs;
                               for (std::size_t r = 0; r < rows; ++r) {
                                 double dot = 0.0;
                                 for (std::size_t c = 0; c < cols; ++c) dot += P[r * cols + c] * g[r * cols + c];
                                 for (std::size_t c = 0; c < cols; ++c)
                                   gx[r * cols + c] += P[r * cols + c] * (g[r * cols + c] - dot);
                               }
                             });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_defined(x, "linear");
  require_defined(weight, "linear");
  if (weight.rank() != 2 || x.shape().back() != weight.dim(1)) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
  }
  const std::size_t in = weight.dim(1), out_dim = weight.dim(0);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_dim)) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                         shape_str(weight.shape()));
  }
  const std::size_t rows = x.size() / in;
  Shape shape = x.shape();
  shape.back() = out_dim;
  std::vector<double> out(rows * out_dim);
  auto X = x.data();
  auto W = weight.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t o = 0; o < out_dim; ++o) {
      double s = bias.defined() ? bias.data()[o] : 0.0;
      for (std::size_t i = 0; i < in; ++i) s += X[r * in + i] * W[o * in + i];
      out[r * out_dim + o] = s;
    }
  return detail::make_result(
      "linear", std::move(shape), std::move(out), {x, weight, bias},
      [x, weight, bias, rows, in, out_dim](std::span<const double> g) {
        auto X = x.data();
        auto W = weight.data();
        if (auto gx = grad_of(x); !gx.empty())
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t o = 0; o < out_dim; ++o) {
              const double go = g[r * out_dim + o];
              for (std::size_t i = 0; i < in; ++i) gx[r * in + i] += go * W[o * in + i];
            }
        if (auto gw = grad_of(weight); !gw.empty())
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t o = 0; o < out_dim; ++o) {
              const double go = g[r * out_dim + o];
              for (std::size_t i = 0; i < in; ++i) gw[o * in + i] += go * X[r * in + i];
            }
        if (auto gb = grad_of(bias); !gb.empty())
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t o = 0; o < out_dim; ++o) gb[o] += g[r * out_dim + o];
      });
}

Tensor narrow(const Tensor& x, std::size_t start, std::size_t count) {
  require_defined(x, "narrow");
  if (count == 0 || start + count > x.dim(0)) {
    throw DimensionError("narrow: rows [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of range for " + shape_str(x.shape()));
  }
  const std::size_t stride = x.size() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = count;
  std::vector<double> out(x.data().begin() + start * stride,
                          x.data().begin() + (start + count) * stride);
  return detail::make_result("narrow", std::move(shape), std::move(out), {x},
                             [x, start, stride](std::span<const double> g) {
                               auto gx = grad_of(x);
                               for (std::size_t i = 0; i < g.size(); ++i) gx[start * stride + i] += g[i];
                             });
}

Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng) {
  require_defined(x, "dropout");
  if (!(p >= 0.0 && p < 1.0)) throw ContractError("dropout: p must lie in [0, 1)");
  if (p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto scale = std::make_shared<std::vector<double>>(x.size());
  std::vector<double> out(x.size());
  auto X = x.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    (*scale)[i] = u(rng) < p ? 0.0 : keep_scale;
    out[i] = X[i] * (*scale)[i];
  }
  return detail::make_result("dropout", x.shape(), std::move(out), {x},
                             [x, scale](std::span<const double> g) {
                               auto gx = grad_of(x);
                               for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*scale)[i];
                             });
}

}  // namespace tinyseq
