#include "hydroode/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>

namespace hode {

namespace {

std::atomic<std::uint64_t> g_next_node_id{1};

std::shared_ptr<detail::Node> new_node(Shape shape, std::vector<double> values, bool requires_grad) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  node->id = g_next_node_id.fetch_add(1, std::memory_order_relaxed);
  return node;
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace detail {

// Unrolled ODE graphs are long chains; tear them down iteratively so the default
// recursive shared_ptr destruction cannot exhaust the stack.
Node::~Node() {
  std::vector<std::shared_ptr<Node>> pending = std::move(inputs);
  while (!pending.empty()) {
    std::shared_ptr<Node> n = std::move(pending.back());
    pending.pop_back();
    if (n && n.use_count() == 1) {
      for (auto& in : n->inputs) pending.push_back(std::move(in));
      n->inputs.clear();
    }
  }
}

}  // namespace detail

Tensor::Tensor() : node_(new_node({}, {0.0}, false)) {}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_string(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor shape " + shape_string(shape) + " has a zero dimension");
  }
  node_ = new_node(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) { return Tensor({}, {v}, requires_grad); }

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, v), requires_grad);
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  Shape s{values.size()};
  return Tensor(std::move(s), std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows, bool requires_grad) {
  const std::size_t m = rows.size();
  const std::size_t k = m ? rows.begin()->size() : 0;
  std::vector<double> v;
  v.reserve(m * k);
  for (const auto& r : rows) {
    if (r.size() != k) throw DimensionError("ragged matrix literal");
    v.insert(v.end(), r.begin(), r.end());
  }
  return Tensor({m, k}, std::move(v), requires_grad);
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape()));
  }
  return node_->shape[axis];
}

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) {
    throw DimensionError("index of rank " + std::to_string(index.size()) + " for shape " +
                         shape_string(shape()));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= node_->shape[axis]) throw DimensionError("index out of range for shape " + shape_string(shape()));
    flat = flat * node_->shape[axis] + i;
    ++axis;
  }
  return node_->value[flat];
}

Tensor Tensor::detach() const {
  if (!requires_grad()) return *this;
  return Tensor(new_node(node_->shape, node_->value, false));
}

Tensor Tensor::clone(bool requires_grad) const {
  return Tensor(new_node(node_->shape, node_->value, requires_grad));
}

std::span<double> Tensor::mutable_values() {
  if (!is_leaf()) throw GraphError("mutable_values() on a non-leaf tensor");
  return node_->value;
}

Tensor Tensor::make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                           detail::BackwardFn backward) {
  const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  auto node = new_node(std::move(shape), std::move(values), any);
  if (any) {
    node->inputs.reserve(inputs.size());
    for (auto& t : inputs) node->inputs.push_back(t.node_);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

bool GradientMap::contains(const Tensor& leaf) const { return grads_.count(leaf.node()) != 0; }

std::vector<double> GradientMap::get(const Tensor& leaf) const {
  auto it = grads_.find(leaf.node());
  if (it == grads_.end()) return std::vector<double>(leaf.size(), 0.0);
  return it->second.grad;
}

const std::vector<double>* GradientMap::find(const Tensor& leaf) const {
  auto it = grads_.find(leaf.node());
  return it == grads_.end() ? nullptr : &it->second.grad;
}

void GradientMap::insert(const std::shared_ptr<detail::Node>& leaf, std::vector<double> grad) {
  grads_[leaf.get()] = Entry{leaf, std::move(grad)};
}

GradientMap backward(const Tensor& loss) {
  if (!loss.is_scalar() && loss.size() != 1) {
    throw GraphError("backward needs a scalar loss, got shape " + shape_string(loss.shape()));
  }
  const double one = 1.0;
  return backward(loss, std::span<const double>(&one, 1));
}

GradientMap backward(const Tensor& output, std::span<const double> seed) {
  using detail::Node;
  if (seed.size() != output.size()) {
    throw DimensionError("backward seed of length " + std::to_string(seed.size()) + " for output shape " +
                         shape_string(output.shape()));
  }
  GradientMap result;
  const std::shared_ptr<Node>& root = output.node_ptr();
  if (root->consumed) throw GraphError("backward on a graph that was already consumed");
  if (!root->requires_grad) return result;

  // Collect reachable nodes that need gradients.
  std::vector<std::shared_ptr<Node>> order;
  std::unordered_map<const Node*, std::size_t> index;
  std::vector<std::shared_ptr<Node>> pending{root};
  index.emplace(root.get(), 0);
  while (!pending.empty()) {
    std::shared_ptr<Node> n = std::move(pending.back());
    pending.pop_back();
    if (n->consumed) throw GraphError("backward reached a node of an already consumed graph");
    for (const auto& in : n->inputs) {
      if (in->requires_grad && index.emplace(in.get(), 0).second) pending.push_back(in);
    }
    order.push_back(std::move(n));
  }
  // Node ids grow with creation time, so descending id is a reverse topological order.
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a->id > b->id; });
  for (std::size_t i = 0; i < order.size(); ++i) index[order[i].get()] = i;

  std::vector<std::vector<double>> grads(order.size());
  grads[index[root.get()]].assign(seed.begin(), seed.end());

  std::vector<std::vector<double>*> input_grads;
  for (std::size_t i = 0; i < order.size(); ++i) {
    Node& n = *order[i];
    if (n.inputs.empty() || grads[i].empty()) continue;
    input_grads.assign(n.inputs.size(), nullptr);
    for (std::size_t j = 0; j < n.inputs.size(); ++j) {
      const auto& in = n.inputs[j];
      if (!in->requires_grad) continue;
      auto& g = grads[index[in.get()]];
      if (g.empty()) g.assign(in->value.size(), 0.0);
      input_grads[j] = &g;
    }
    n.backward(n, grads[i], input_grads);
    std::vector<double>().swap(grads[i]);
  }

  // Leaves report their gradients; interior nodes release the tape.
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& n = order[i];
    if (!n->inputs.empty()) continue;
    std::vector<double> g = std::move(grads[i]);
    if (g.empty()) g.assign(n->value.size(), 0.0);
    result.insert(n, std::move(g));
  }
  for (const auto& n : order) {
    if (n->inputs.empty()) continue;
    n->consumed = true;
    n->backward = nullptr;
    n->inputs.clear();
  }
  return result;
}

}  // namespace hode
