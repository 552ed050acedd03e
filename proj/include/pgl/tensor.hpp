#pragma once

// Dense row-major tensors and the dynamic reverse-mode tape.
//
// A tensor is a cheap handle: copies share the value buffer and the tape
// node. Every differentiable op result carries a node that points at the
// nodes of its differentiable inputs, so the tape for a given loss is the
// set of nodes reachable from it. Node ids are allocated from a monotone
// counter, which makes "sort by id" a valid topological order. The graph
// is dropped as soon as the last handle referencing it goes away.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "pgl/error.hpp"

namespace pgl {

using Shape = std::vector<std::size_t>;
using NodeId = std::uint64_t;

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("invalid shape: rank 0");
  for (auto d : shape)
    if (d == 0) throw ShapeError("invalid shape " + to_string(shape) + ": zero dimension");
}

/// Builds a Shape from signed extents, rejecting zero or negative entries.
inline Shape make_shape(std::initializer_list<long long> dims) {
  Shape out;
  for (auto d : dims) {
    if (d <= 0) throw ShapeError("invalid shape: dimension " + std::to_string(d));
    out.push_back(static_cast<std::size_t>(d));
  }
  if (out.empty()) throw ShapeError("invalid shape: rank 0");
  return out;
}

template <class T>
class BasicTensor;

namespace detail {

inline NodeId next_node_id() {
  static std::atomic<NodeId> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

/// Gradient slots handed to a node's backward function, one per input.
/// Slots for inputs that do not require grad are never materialized.
template <class T>
class ParentGrads {
 public:
  ParentGrads(std::vector<std::size_t> sizes, std::vector<char> wanted)
      : grads_(sizes.size()), sizes_(std::move(sizes)), wanted_(std::move(wanted)) {}

  bool wants(std::size_t i) const { return wanted_[i] != 0; }

  std::vector<T>& slot(std::size_t i) {
    if (grads_[i].empty()) grads_[i].assign(sizes_[i], T(0));
    return grads_[i];
  }

  std::vector<T>& raw(std::size_t i) { return grads_[i]; }
  std::size_t size() const { return grads_.size(); }

 private:
  std::vector<std::vector<T>> grads_;
  std::vector<std::size_t> sizes_;
  std::vector<char> wanted_;
};

template <class T>
struct Node {
  using BackwardFn = std::function<void(const std::vector<T>& grad_out, ParentGrads<T>& parents)>;

  NodeId id = 0;
  std::string op;
  Shape shape;
  // One entry per op input; nullptr marks an input without gradient tracking.
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
};

}  // namespace detail

/// Initialization rule for `create`.
struct Init {
  enum class Kind { zeros, ones, constant, uniform, kaiming_normal };
  Kind kind = Kind::zeros;
  double value = 0.0;
  std::size_t fan_in = 0;

  static Init zeros() { return {Kind::zeros, 0.0, 0}; }
  static Init ones() { return {Kind::ones, 1.0, 0}; }
  static Init constant(double c) { return {Kind::constant, c, 0}; }
  /// Uniform on [-a, a].
  static Init uniform(double a) { return {Kind::uniform, a, 0}; }
  /// Normal with std sqrt(2 / fan_in).
  static Init kaiming_normal(std::size_t fan_in) { return {Kind::kaiming_normal, 0.0, fan_in}; }
};

template <class T>
class BasicTensor {
 public:
  using value_type = T;
  using NodeType = detail::Node<T>;

  /// An empty handle; only useful as a placeholder before assignment.
  BasicTensor() = default;

  BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : shape_(std::move(shape)), data_(std::make_shared<std::vector<T>>(std::move(data))) {
    check_shape(shape_);
    if (data_->size() != numel_of(shape_))
      throw ShapeError("data length " + std::to_string(data_->size()) + " does not match shape " +
                       to_string(shape_));
    if (requires_grad) set_requires_grad(true);
  }

  static BasicTensor full(Shape shape, T value, bool requires_grad = false) {
    check_shape(shape);
    auto n = numel_of(shape);
    return BasicTensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }
  static BasicTensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }
  static BasicTensor scalar(T value, bool requires_grad = false) {
    return BasicTensor(Shape{1}, std::vector<T>{value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(data_); }
  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const { return data_ ? data_->size() : 0; }

  std::span<const T> data() const { return {data_->data(), data_->size()}; }
  /// In-place access. Mutating a buffer that a live tape still references
  /// changes what its backward pass sees; optimizers step only after backward.
  std::span<T> mutable_data() { return {data_->data(), data_->size()}; }
  const std::vector<T>& values() const { return *data_; }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape_));
    return (*data_)[0];
  }
  T operator[](std::size_t flat) const { return (*data_)[flat]; }

  bool requires_grad() const { return static_cast<bool>(node_); }

  /// Turns this handle into a fresh tape leaf (or drops tracking).
  void set_requires_grad(bool on) {
    if (!on) {
      node_.reset();
      return;
    }
    if (node_) return;
    node_ = std::make_shared<NodeType>();
    node_->id = detail::next_node_id();
    node_->op = "leaf";
    node_->shape = shape_;
  }

  std::optional<NodeId> node_id() const {
    if (!node_) return std::nullopt;
    return node_->id;
  }

  /// True when the tensor was produced by a recorded op (not a leaf).
  bool has_lineage() const { return node_ && !node_->parents.empty(); }

  const std::shared_ptr<NodeType>& node() const { return node_; }
  const std::shared_ptr<std::vector<T>>& buffer() const { return data_; }

  /// Deep copy of the values, untracked.
  BasicTensor clone() const { return BasicTensor(shape_, *data_); }

  // Used by ops to assemble results without re-validating.
  static BasicTensor from_parts(Shape shape, std::shared_ptr<std::vector<T>> data,
                                std::shared_ptr<NodeType> node) {
    BasicTensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    t.node_ = std::move(node);
    return t;
  }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<T>> data_;
  std::shared_ptr<NodeType> node_;
};

using Tensor = BasicTensor<float>;

template <class T>
BasicTensor<T> create(const Shape& shape, const Init& init, std::mt19937_64& rng,
                      bool requires_grad = false) {
  check_shape(shape);
  std::vector<T> data(numel_of(shape));
  switch (init.kind) {
    case Init::Kind::zeros:
      break;
    case Init::Kind::ones:
      std::fill(data.begin(), data.end(), T(1));
      break;
    case Init::Kind::constant:
      std::fill(data.begin(), data.end(), static_cast<T>(init.value));
      break;
    case Init::Kind::uniform: {
      std::uniform_real_distribution<double> dist(-init.value, init.value);
      for (auto& v : data) v = static_cast<T>(dist(rng));
      break;
    }
    case Init::Kind::kaiming_normal: {
      if (init.fan_in == 0) throw ContractError("kaiming_normal requires fan_in >= 1");
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(init.fan_in)));
      for (auto& v : data) v = static_cast<T>(dist(rng));
      break;
    }
  }
  return BasicTensor<T>(shape, std::move(data), requires_grad);
}

template <class T>
BasicTensor<T> create(const Shape& shape, const Init& init, std::uint64_t seed,
                      bool requires_grad = false) {
  std::mt19937_64 rng(seed);
  return create<T>(shape, init, rng, requires_grad);
}

/// Same values, no tape edge back to the source. The buffer is shared, so
/// this is a view rather than a copy.
template <class T>
BasicTensor<T> detach(const BasicTensor<T>& t) {
  return BasicTensor<T>::from_parts(t.shape(), t.buffer(), nullptr);
}

/// Gradients keyed by tape node id.
template <class T>
class GradMap {
 public:
  bool contains(const BasicTensor<T>& t) const { return find(t) != nullptr; }

  const BasicTensor<T>* find(const BasicTensor<T>& t) const {
    auto id = t.node_id();
    if (!id) return nullptr;
    auto it = grads_.find(*id);
    return it == grads_.end() ? nullptr : &it->second;
  }

  const BasicTensor<T>& at(const BasicTensor<T>& t) const {
    auto* g = find(t);
    if (!g) throw ContractError("no gradient recorded for tensor");
    return *g;
  }

  void insert(NodeId id, BasicTensor<T> grad) { grads_.insert_or_assign(id, std::move(grad)); }

  std::size_t size() const { return grads_.size(); }
  bool empty() const { return grads_.empty(); }
  auto begin() const { return grads_.begin(); }
  auto end() const { return grads_.end(); }

 private:
  std::unordered_map<NodeId, BasicTensor<T>> grads_;
};

struct TapeRecord {
  NodeId output = 0;
  std::string op;
  std::vector<NodeId> parents;  // differentiable inputs only
};
using Tape = std::vector<TapeRecord>;

namespace detail {

template <class T>
std::vector<Node<T>*> reachable_nodes(const std::shared_ptr<Node<T>>& root) {
  std::vector<Node<T>*> out;
  if (!root) return out;
  std::unordered_set<Node<T>*> seen;
  std::vector<Node<T>*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto* n = stack.back();
    stack.pop_back();
    out.push_back(n);
    for (auto& p : n->parents)
      if (p && seen.insert(p.get()).second) stack.push_back(p.get());
  }
  std::sort(out.begin(), out.end(), [](auto* a, auto* b) { return a->id < b->id; });
  return out;
}

}  // namespace detail

/// The recorded ops reachable from `root`, parents before children.
template <class T>
Tape tape_of(const BasicTensor<T>& root) {
  Tape tape;
  for (auto* n : detail::reachable_nodes(root.node())) {
    TapeRecord r{n->id, n->op, {}};
    for (auto& p : n->parents)
      if (p) r.parents.push_back(p->id);
    tape.push_back(std::move(r));
  }
  return tape;
}

/// Reverse sweep from a scalar loss. The returned map holds a gradient for
/// every tracked tensor reachable from the loss (leaves and intermediates);
/// anything unreachable is absent. Untracked losses yield an empty map.
template <class T>
GradMap<T> backward(const BasicTensor<T>& loss) {
  if (loss.numel() != 1)
    throw ContractError("backward requires a scalar loss, got shape " + to_string(loss.shape()));
  GradMap<T> result;
  if (!loss.requires_grad()) return result;

  auto nodes = detail::reachable_nodes(loss.node());
  std::unordered_map<NodeId, std::vector<T>> grads;
  grads[loss.node()->id] = std::vector<T>{T(1)};

  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    auto* node = *it;
    auto g = grads.find(node->id);
    if (g == grads.end() || !node->backward) continue;

    std::vector<std::size_t> sizes;
    std::vector<char> wanted;
    for (auto& p : node->parents) {
      sizes.push_back(p ? numel_of(p->shape) : 0);
      wanted.push_back(p ? 1 : 0);
    }
    detail::ParentGrads<T> pg(std::move(sizes), std::move(wanted));
    node->backward(g->second, pg);

    for (std::size_t i = 0; i < node->parents.size(); ++i) {
      auto& p = node->parents[i];
      auto& contrib = pg.raw(i);
      if (!p || contrib.empty()) continue;
      auto& acc = grads[p->id];
      if (acc.empty()) {
        acc = std::move(contrib);
      } else {
        for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += contrib[k];
      }
    }
  }

  for (auto* n : nodes) {
    auto g = grads.find(n->id);
    if (g == grads.end()) continue;
    result.insert(n->id, BasicTensor<T>(n->shape, std::move(g->second)));
  }
  return result;
}

}  // namespace pgl
