#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ecgx {

/// Every tensor is (batch, time, channels). Weights reuse the three slots,
/// e.g. a conv kernel is (kernel, in_channels, out_channels).
struct Shape {
  std::size_t batch = 1;
  std::size_t time = 1;
  std::size_t channels = 1;

  constexpr std::size_t size() const { return batch * time * channels; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& shape);

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool active = false;  // set only while a backward pass runs through this node
  const char* op = "leaf";
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward;

  Node() = default;
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;
  ~Node();

  bool is_leaf() const { return !backward; }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor from_node(detail::NodePtr node);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t size() const { return shape().size(); }
  std::size_t batch() const { return shape().batch; }
  std::size_t time() const { return shape().time; }
  std::size_t channels() const { return shape().channels; }

  std::span<const double> values() const;
  /// Direct write access; only meaningful on leaves (parameters, inputs).
  std::span<double> mutable_values();

  double at(std::size_t b, std::size_t t, std::size_t c) const;
  double& at(std::size_t b, std::size_t t, std::size_t c);
  double item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);

  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// Reverse pass from a single-element tensor, accumulating into every leaf
  /// that requires gradients.
  void backward() const;
  void backward(std::span<const double> seed) const;

  /// Value copy without graph linkage.
  Tensor detach() const;

  const detail::NodePtr& node() const { return node_; }

 private:
  detail::NodePtr node_;
};

/// Reverse pass restricted to the sub-graph that depends on `wrt`. Only the
/// leaves in `wrt` receive gradients; other leaves (e.g. frozen model
/// parameters) are left untouched.
void backward_wrt(const Tensor& root, std::span<const Tensor> wrt);

bool grad_enabled();

/// Disables graph construction for its lifetime (inference).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

/// Wraps an op result. Finiteness is verified here; parents and the backward
/// closure are attached only when some parent requires gradients.
Tensor make_result(Shape shape, std::vector<double> value, const char* op,
                   std::vector<Tensor> parents, std::function<void(Node&)> backward);

/// Gradient buffer of a parent during a backward pass, or nullptr if that
/// parent does not take part in the pass.
inline double* grad_of(Node& self, std::size_t parent) {
  Node& p = *self.parents[parent];
  return p.active ? p.grad.data() : nullptr;
}

}  // namespace detail

}  // namespace ecgx
