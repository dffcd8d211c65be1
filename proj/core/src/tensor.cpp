#include "ecgx/tensor.hpp"

#include <cmath>
#include <iostream>
#include <mutex>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "ecgx/errors.hpp"

namespace ecgx {

namespace {

thread_local bool g_grad_enabled = true;

std::mutex g_sink_mutex;
WarningSink g_sink;

void run_backward(const detail::NodePtr& root, std::span<const double> seed,
                  std::span<const Tensor> wrt, bool restricted) {
  using detail::Node;
  if (!root->requires_grad) {
    throw std::logic_error("backward() on a tensor that does not require gradients");
  }
  if (seed.size() != root->value.size()) {
    throw ShapeError("backward seed size " + std::to_string(seed.size()) +
                     " does not match tensor size " + std::to_string(root->value.size()));
  }

  // Iterative post-order DFS; parents precede children in `order`.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  if (restricted) {
    std::unordered_set<Node*> targets;
    for (const auto& t : wrt) targets.insert(t.node().get());
    for (Node* node : order) {
      bool dep = targets.contains(node);
      for (const auto& p : node->parents) dep = dep || (p->active && p->requires_grad);
      node->active = dep;
    }
  } else {
    for (Node* node : order) node->active = true;
  }

  for (Node* node : order) {
    if (!node->active) continue;
    if (!node->is_leaf() || node->grad.size() != node->value.size()) {
      node->grad.assign(node->value.size(), 0.0);
    }
  }
  if (root->active) {
    for (std::size_t i = 0; i < seed.size(); ++i) root->grad[i] += seed[i];
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* node = *it;
      if (node->active && !node->is_leaf()) node->backward(*node);
    }
  }
  for (Node* node : order) node->active = false;
}

}  // namespace

void set_warning_sink(WarningSink sink) {
  std::lock_guard lock(g_sink_mutex);
  g_sink = std::move(sink);
}

void warn(std::string_view message) {
  std::lock_guard lock(g_sink_mutex);
  if (g_sink) {
    g_sink(message);
  } else {
    std::cerr << "warning: " << message << '\n';
  }
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[' << shape.batch << ',' << shape.time << ',' << shape.channels << ']';
  return os.str();
}

namespace detail {

Node::~Node() {
  // Release long parent chains (unrolled recurrences) without deep recursion.
  std::vector<NodePtr> pending = std::move(parents);
  while (!pending.empty()) {
    NodePtr p = std::move(pending.back());
    pending.pop_back();
    if (p && p.use_count() == 1) {
      for (auto& q : p->parents) pending.push_back(std::move(q));
      p->parents.clear();
      p->backward = nullptr;
    }
  }
}

Tensor make_result(Shape shape, std::vector<double> value, const char* op,
                   std::vector<Tensor> parents, std::function<void(Node&)> backward) {
  for (double v : value) {
    if (!std::isfinite(v)) {
      throw NumericalError(std::string("non-finite value produced by ") + op);
    }
  }
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) needs = needs || (p.defined() && p.requires_grad());
  }
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward);
  }
  return Tensor::from_node(std::move(node));
}

}  // namespace detail

Tensor::Tensor(Shape shape, double fill) : node_(std::make_shared<detail::Node>()) {
  node_->shape = shape;
  node_->value.assign(shape.size(), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : node_(std::make_shared<detail::Node>()) {
  if (values.size() != shape.size()) {
    throw ShapeError("tensor value count " + std::to_string(values.size()) +
                     " does not match shape " + to_string(shape));
  }
  node_->shape = shape;
  node_->value = std::move(values);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1, 1, 1}, value); }

Tensor Tensor::from_node(detail::NodePtr node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

const Shape& Tensor::shape() const {
  static const Shape empty{0, 0, 0};
  return node_ ? node_->shape : empty;
}

std::span<const double> Tensor::values() const { return node_->value; }
std::span<double> Tensor::mutable_values() { return node_->value; }

double Tensor::at(std::size_t b, std::size_t t, std::size_t c) const {
  const Shape& s = node_->shape;
  return node_->value[(b * s.time + t) * s.channels + c];
}

double& Tensor::at(std::size_t b, std::size_t t, std::size_t c) {
  const Shape& s = node_->shape;
  return node_->value[(b * s.time + t) * s.channels + c];
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (!node_->is_leaf()) throw std::logic_error("requires_grad can only be set on leaves");
  node_->requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }

std::span<const double> Tensor::grad() const { return node_->grad; }

void Tensor::zero_grad() {
  if (node_) node_->grad.assign(node_->value.size(), 0.0);
}

void Tensor::backward() const {
  if (size() != 1) throw ShapeError("backward() without seed needs a scalar, got " + to_string(shape()));
  const double one = 1.0;
  run_backward(node_, std::span<const double>(&one, 1), {}, false);
}

void Tensor::backward(std::span<const double> seed) const { run_backward(node_, seed, {}, false); }

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->value); }

void backward_wrt(const Tensor& root, std::span<const Tensor> wrt) {
  if (root.size() != 1) throw ShapeError("backward_wrt() needs a scalar root");
  const double one = 1.0;
  run_backward(root.node(), std::span<const double>(&one, 1), wrt, true);
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

}  // namespace ecgx
