#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace perfuseg::nn {

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename Scalar>
using MatrixR = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MatrixMap = Eigen::Map<MatrixR<Scalar>>;
template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const MatrixR<Scalar>>;

/// One vertex of the recorded computation graph. Leaves own parameters or
/// inputs; interior nodes carry the closure that pushes their gradient to
/// their inputs.
template <typename Scalar>
struct Node {
  Shape shape;
  std::vector<Scalar> value;
  std::vector<Scalar> grad;  // empty until a backward pass reaches the node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;
  const char* op = "leaf";

  bool is_leaf() const { return !backward_fn; }
};

/// Shared handle to a graph node. Copies alias the same storage.
template <typename Scalar>
class Tensor {
 public:
  using NodePtr = std::shared_ptr<Node<Scalar>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, Scalar v, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<Scalar> values, bool requires_grad = false);
  static Tensor scalar(Scalar v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int axis) const { return node_->shape[axis < 0 ? axis + rank() : axis]; }
  std::size_t size() const { return node_->value.size(); }

  std::span<const Scalar> values() const { return node_->value; }
  std::span<Scalar> values() { return node_->value; }
  const Scalar* data() const { return node_->value.data(); }
  Scalar* data() { return node_->value.data(); }
  Scalar item() const;

  /// Accumulated gradient; empty when no backward pass has reached the node.
  std::span<const Scalar> grad() const { return node_->grad; }
  std::span<Scalar> grad() { return node_->grad; }
  void zero_grad();

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  /// A new leaf sharing no graph history, with copied values.
  Tensor detach() const;

  Node<Scalar>& node() const { return *node_; }
  const NodePtr& ptr() const { return node_; }

 private:
  NodePtr node_;
};

/// Reverse-mode accumulation from a scalar root. Leaf gradients add onto
/// whatever they already hold, so two calls without zero_grad() sum;
/// interior gradients are reset at the start of every call.
template <typename Scalar>
void backward(const Tensor<Scalar>& root);

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Builds the result of an op. Graph links are recorded only when some input
/// requires a gradient and recording is enabled.
template <typename Scalar>
Tensor<Scalar> make_result(const char* op, Shape shape, std::vector<Scalar> value,
                           std::vector<std::shared_ptr<Node<Scalar>>> inputs,
                           std::function<void(Node<Scalar>&)> backward_fn);

/// Gradient buffer of an input node, allocated on first use.
template <typename Scalar>
std::vector<Scalar>& grad_of(Node<Scalar>& node);

}  // namespace perfuseg::nn
