#pragma once

// Dense row-major float64 tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a shared handle to a graph node. Operations on tensors that
// require gradients record their inputs and a backward rule; backward(loss)
// orders the reachable nodes into a Tape and replays it in reverse.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tinyseq/errors.hpp"

namespace tinyseq {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::string_view op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Receives d(loss)/d(this) and accumulates into the parents.
  std::function<void(std::span<const double>)> backward;

  bool is_leaf() const { return parents.empty(); }
  std::span<double> grad_buffer();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  // In-place access for optimizers and initializers; never use on graph interiors.
  std::span<double> mutable_data() { return node_->data; }
  double at(std::size_t i) const { return node_->data.at(i); }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf(); }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad();

  // Copy of the values with no history.
  Tensor detach() const;
  std::string_view op_name() const { return node_->op; }

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Topologically ordered record of the differentiable operations that produced
// a tensor. Only nodes that require gradients are recorded.
class Tape {
 public:
  static Tape record(const Tensor& root);

  std::size_t size() const { return nodes_.size(); }
  std::size_t operation_count() const;
  // Propagates the root's gradient back through the record. Returns the number
  // of backward rules executed.
  std::size_t replay_backward() const;
  void reset_interior_grads() const;

 private:
  std::vector<std::shared_ptr<detail::Node>> nodes_;
};

// Populates .grad of every reachable leaf that requires gradients. Leaf
// gradients accumulate across calls; interior gradients are recomputed.
void backward(const Tensor& loss);

// Number of softmax rows seen with every entry masked to -inf (those rows
// produce zeros). Process-wide diagnostic.
std::uint64_t fully_masked_softmax_rows();

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor mul_scalar(const Tensor& a, double s);
Tensor relu(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor sum_all(const Tensor& a);

// Softmax over the last dimension. additive_mask, when defined, has the shape
// of x's trailing two dimensions (or x's shape for rank 1) and is added to the
// logits; -inf entries get weight exactly 0. Rows that are entirely -inf
// produce zeros.
Tensor softmax_lastdim(const Tensor& x, const Tensor& additive_mask = {});

// x[..., in] -> x W^T + b, with W [out x in] and optional b [out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

// Rows [start, start + count) along dimension 0.
Tensor narrow(const Tensor& x, std::size_t start, std::size_t count);

// Zeroes each element with probability p and scales survivors by 1/(1-p).
Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng);

namespace detail {

// Builds an op result. Parents and the backward rule are kept only when some
// parent requires gradients.
Tensor make_result(std::string_view op, Shape shape, std::vector<double> data,
                   std::vector<Tensor> parents,
                   std::function<void(std::span<const double>)> backward);

void count_fully_masked_row();

}  // namespace detail

}  // namespace tinyseq
