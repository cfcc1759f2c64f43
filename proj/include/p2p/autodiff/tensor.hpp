#pragma once

#ifdef P2P_TAPE_PROFILE
#include <chrono>
#include <map>
#endif

// Dense f64 tensors participating in a reverse-mode gradient tape.
//
// A Tensor is a cheap handle onto a shared graph node. Leaves are created by
// the factory functions; every primitive in ops.hpp produces a new node that
// remembers its parents and a backward rule, provided gradient recording is
// enabled and at least one parent needs a gradient.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "p2p/errors.hpp"

namespace p2p::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

inline void check_shape(const Shape& shape) {
  for (auto e : shape)
    if (e == 0) throw ShapeError("zero extent in shape " + to_string(shape));
}

namespace detail {

inline std::uint64_t next_sequence() {
  static std::atomic<std::uint64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

struct Node {
  Shape shape;
  std::vector<double> value;
  // Empty until the node receives a gradient.
  std::vector<double> grad;
  bool requires_grad = false;  // leaf flag
  bool needs_grad = false;     // leaf: == requires_grad; op: any parent needs_grad
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad (and value, if needed) and accumulates into parents.
  std::function<void(const Node&)> backward_fn;
  std::uint64_t seq = next_sequence();
  const char* op = "leaf";

  bool is_leaf() const { return parents.empty() && !backward_fn; }

  // Gradient buffer of a node that participates in backward, or an empty span.
  std::span<double> grad_sink() {
    if (!needs_grad) return {};
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// RAII guard disabling tape recording on the current thread.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    check_shape(shape);
    if (ad::numel(shape) != values.size())
      throw ShapeError("data length " + std::to_string(values.size()) +
                       " does not match shape " + to_string(shape));
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    node->needs_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    check_shape(shape);
    auto n = ad::numel(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    check_shape(shape);
    auto n = ad::numel(shape);
    return from(std::move(shape), std::vector<double>(n, v), requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  /// Writable view. Only meaningful on leaves (parameters, inputs).
  std::span<double> mutable_data() { return node_->value; }
  double item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
    return node_->value[0];
  }
  double at(std::size_t i) const { return node_->value.at(i); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) {
    if (!is_leaf()) throw ContractError("requires_grad can only be set on leaf tensors");
    node_->requires_grad = on;
    node_->needs_grad = on;
    if (!on) node_->grad.clear();
  }
  bool needs_grad() const { return node_->needs_grad; }
  bool is_leaf() const { return node_->is_leaf(); }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }
  void clear_grad() { node_->grad.clear(); }

  /// Fresh leaf holding a copy of the values, cut off from the tape.
  Tensor detach(bool requires_grad = false) const {
    return from(shape(), node_->value, requires_grad);
  }

  std::uint64_t sequence() const { return node_->seq; }
  const char* op_name() const { return node_->op; }

  void backward() const;

  detail::Node& node() const { return *node_; }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

/// Builds the result node of a primitive. The backward rule is attached only
/// when recording is on and some parent needs a gradient.
inline Tensor make_result(Shape shape, std::vector<double> value,
                          std::vector<Tensor> parents,
                          std::function<void(const Node&)> backward_fn,
                          const char* op) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.needs_grad();
  if (needs && grad_enabled()) {
    node->needs_grad = true;
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.node_ptr());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

}  // namespace detail

/// Ordered record of the operations reachable from a root, parents first.
#ifdef P2P_TAPE_PROFILE
inline std::map<std::string, double>& tape_profile() {
  static std::map<std::string, double> m;
  return m;
}
#endif

class Tape {
 public:
  static Tape record(const Tensor& root) {
    Tape tape;
    std::vector<detail::Node*> stack{&root.node()};
    std::vector<detail::Node*> seen;
    std::unordered_set<const detail::Node*> visited;
    while (!stack.empty()) {
      auto* n = stack.back();
      stack.pop_back();
      if (!n->needs_grad) continue;
      if (!visited.insert(n).second) continue;
      seen.push_back(n);
      for (const auto& p : n->parents) stack.push_back(p.get());
    }
    // Parents are always created before their children, so creation order is
    // a valid topological order.
    std::sort(seen.begin(), seen.end(),
              [](const detail::Node* a, const detail::Node* b) { return a->seq < b->seq; });
    tape.nodes_ = std::move(seen);
    return tape;
  }

  std::span<detail::Node* const> nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(root)/d(root) = 1 and replays backward rules in reverse order.
  void backward(const Tensor& root) const {
    if (nodes_.empty()) return;
    // Interior gradients start empty and are allocated by the first
    // consumer that writes to them; a node nobody wrote to is skipped.
    for (auto* n : nodes_)
      if (!n->is_leaf()) n->grad.clear();
    auto& r = root.node();
    r.grad_sink()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      auto* n = *it;
#ifdef P2P_TAPE_PROFILE
      auto t0 = std::chrono::steady_clock::now();
      if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
      tape_profile()[n->op] += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
#else
      if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
#endif
    }
    for (auto* n : nodes_)
      if (!n->is_leaf()) std::vector<double>().swap(n->grad);
  }

 private:
  std::vector<detail::Node*> nodes_;
};

/// Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable from loss.
inline void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ContractError("backward() requires a scalar loss, got shape " +
                        (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  if (!loss.needs_grad()) return;
  Tape::record(loss).backward(loss);
}

inline void Tensor::backward() const { ad::backward(*this); }

}  // namespace p2p::ad
