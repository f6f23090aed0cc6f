#include "perfuseg/nn/tensor.hpp"

#include <algorithm>
#include <unordered_set>

#include "perfuseg/error.hpp"

namespace perfuseg::nn {

namespace {
thread_local bool t_grad_enabled = true;
}

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::string to_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::zeros(Shape shape, bool requires_grad) {
  return filled(std::move(shape), Scalar(0), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::filled(Shape shape, Scalar v, bool requires_grad) {
  for (int d : shape) require(d >= 0, ErrorKind::Shape, "negative extent in shape " + to_string(shape));
  std::vector<Scalar> values(numel(shape), v);
  return from(std::move(shape), std::move(values), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::from(Shape shape, std::vector<Scalar> values, bool requires_grad) {
  require(values.size() == numel(shape), ErrorKind::Shape,
          std::to_string(values.size()) + " values for shape " + to_string(shape));
  auto node = std::make_shared<Node<Scalar>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  require(size() == 1, ErrorKind::Usage, "item() on a tensor of shape " + to_string(shape()));
  return node_->value[0];
}

template <typename Scalar>
void Tensor<Scalar>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), Scalar(0));
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::detach() const {
  return from(shape(), node_->value, false);
}

template <typename Scalar>
std::vector<Scalar>& grad_of(Node<Scalar>& node) {
  if (node.grad.size() != node.value.size()) node.grad.assign(node.value.size(), Scalar(0));
  return node.grad;
}

template <typename Scalar>
Tensor<Scalar> make_result(const char* op, Shape shape, std::vector<Scalar> value,
                           std::vector<std::shared_ptr<Node<Scalar>>> inputs,
                           std::function<void(Node<Scalar>&)> backward_fn) {
  auto node = std::make_shared<Node<Scalar>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  const bool track = t_grad_enabled && std::any_of(inputs.begin(), inputs.end(),
                                                   [](const auto& n) { return n && n->requires_grad; });
  if (track) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor<Scalar>(std::move(node));
}

template <typename Scalar>
void backward(const Tensor<Scalar>& root) {
  require(root.defined() && root.size() == 1, ErrorKind::Usage,
          "backward() needs a scalar root, got shape " + (root.defined() ? to_string(root.shape()) : "(undefined)"));
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<Node<Scalar>*> order;
  std::unordered_set<Node<Scalar>*> seen;
  std::vector<std::pair<Node<Scalar>*, std::size_t>> stack{{&root.node(), 0}};
  seen.insert(&root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<Scalar>* child = node->inputs[next++].get();
      if (child && child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* node : order) {
    auto& g = grad_of(*node);
    if (!node->is_leaf()) std::fill(g.begin(), g.end(), Scalar(0));
  }
  root.node().grad[0] += Scalar(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if (!(*it)->is_leaf()) (*it)->backward_fn(**it);
}

#define PERFUSEG_INSTANTIATE(S)                                                                                   \
  template class Tensor<S>;                                                                                       \
  template void backward<S>(const Tensor<S>&);                                                                    \
  template std::vector<S>& grad_of<S>(Node<S>&);                                                                  \
  template Tensor<S> make_result<S>(const char*, Shape, std::vector<S>, std::vector<std::shared_ptr<Node<S>>>,    \
                                    std::function<void(Node<S>&)>);

PERFUSEG_INSTANTIATE(float)
PERFUSEG_INSTANTIATE(double)

}  // namespace perfuseg::nn
