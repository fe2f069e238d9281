#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace hode {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Raised on any shape contract violation; the message names the offending shapes.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when backward is asked to do something it cannot (non-scalar loss, consumed graph).
class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

namespace detail {

struct Node;

// Receives the output gradient and adds the contribution for each input into
// `input_grads[i]` (null when input i does not require a gradient).
using BackwardFn = std::function<void(const Node& self, std::span<const double> grad_out,
                                      std::span<std::vector<double>*> input_grads)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
  bool consumed = false;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;

  Node() = default;
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;
  ~Node();
};

}  // namespace detail

/// Dense row-major array of doubles that can take part in a reverse-mode graph.
///
/// Copies are cheap handles sharing the same node. Tensors created by operations on
/// inputs that require gradients are recorded on the tape; everything else is a plain
/// immutable value.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return node_->value.size(); }
  bool is_scalar() const { return node_->shape.empty(); }

  std::span<const double> values() const { return node_->value; }
  const std::vector<double>& data() const { return node_->value; }
  double item() const;
  double operator[](std::size_t flat) const { return node_->value[flat]; }
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->inputs.empty(); }

  /// Same values, detached from any graph.
  Tensor detach() const;
  Tensor clone(bool requires_grad) const;

  /// Writable storage of a leaf. Used by optimizers and checkpoint loading; must not be
  /// called while a graph that reads this tensor is alive on another thread.
  std::span<double> mutable_values();

  const detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

  /// Builds an op result. If any input requires grad, the node is recorded with
  /// `backward`; otherwise the result is a constant.
  static Tensor make_result(Shape shape, std::vector<double> values,
                            std::vector<Tensor> inputs, detail::BackwardFn backward);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Gradients of one backward pass, keyed by the leaf tensors that required them.
class GradientMap {
 public:
  bool contains(const Tensor& leaf) const;
  /// Gradient for `leaf`; zero-filled when the leaf was not reached.
  std::vector<double> get(const Tensor& leaf) const;
  const std::vector<double>* find(const Tensor& leaf) const;
  std::size_t size() const { return grads_.size(); }
  bool empty() const { return grads_.empty(); }

  void insert(const std::shared_ptr<detail::Node>& leaf, std::vector<double> grad);

 private:
  struct Entry {
    std::shared_ptr<detail::Node> leaf;
    std::vector<double> grad;
  };
  std::unordered_map<const detail::Node*, Entry> grads_;
};

/// Reverse sweep from a scalar loss. Returns the gradient of every reachable leaf that
/// requires grad. Interior nodes of the graph are released afterwards; calling backward
/// again on the same loss throws GraphError.
GradientMap backward(const Tensor& loss);

/// Same as `backward` but seeds the sweep with `seed` (shape of `output`), computing the
/// vector-Jacobian product seedᵀ·∂output/∂leaves.
GradientMap backward(const Tensor& output, std::span<const double> seed);

}  // namespace hode
