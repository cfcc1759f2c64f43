#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "p2p/autodiff/tensor.hpp"
#include "p2p/errors.hpp"

namespace p2p::nn {

/// Which part of the model a parameter belongs to, for tuning purposes.
enum class TuningClass { prompt, head, norm, bias, backbone_other };

/// How much of the image backbone is trained.
enum class TuningPolicy { scratch, full, norm, bias, frozen };

inline constexpr std::array<TuningClass, 5> kTuningClasses{
    TuningClass::prompt, TuningClass::head, TuningClass::norm, TuningClass::bias,
    TuningClass::backbone_other};

inline std::string_view to_string(TuningClass c) {
  switch (c) {
    case TuningClass::prompt: return "prompt";
    case TuningClass::head: return "head";
    case TuningClass::norm: return "norm";
    case TuningClass::bias: return "bias";
    case TuningClass::backbone_other: return "backbone-other";
  }
  return "?";
}

inline std::string_view to_string(TuningPolicy p) {
  switch (p) {
    case TuningPolicy::scratch: return "scratch";
    case TuningPolicy::full: return "full";
    case TuningPolicy::norm: return "norm";
    case TuningPolicy::bias: return "bias";
    case TuningPolicy::frozen: return "frozen";
  }
  return "?";
}

inline TuningPolicy parse_policy(std::string_view s) {
  for (auto p : {TuningPolicy::scratch, TuningPolicy::full, TuningPolicy::norm, TuningPolicy::bias,
                 TuningPolicy::frozen})
    if (to_string(p) == s) return p;
  throw ConfigError("unknown tuning policy '" + std::string(s) + "'");
}

inline bool is_trainable(TuningPolicy policy, TuningClass cls) {
  switch (cls) {
    case TuningClass::prompt:
    case TuningClass::head: return true;
    case TuningClass::norm:
      return policy == TuningPolicy::norm || policy == TuningPolicy::full ||
             policy == TuningPolicy::scratch;
    case TuningClass::bias:
      return policy == TuningPolicy::bias || policy == TuningPolicy::full ||
             policy == TuningPolicy::scratch;
    case TuningClass::backbone_other:
      return policy == TuningPolicy::full || policy == TuningPolicy::scratch;
  }
  return false;
}

struct Param {
  ad::Tensor tensor;
  TuningClass cls;
};

/// Named parameter map. Iteration is in lexicographic name order, which is
/// also the on-disk order of checkpoints.
class LayerParams {
 public:
  ad::Tensor& add(const std::string& name, ad::Tensor t, TuningClass cls) {
    if (!t.is_leaf()) throw ContractError("parameter '" + name + "' must be a leaf tensor");
    auto [it, inserted] = entries_.emplace(name, Param{std::move(t), cls});
    if (!inserted) throw ConfigError("duplicate parameter '" + name + "'");
    return it->second.tensor;
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  ad::Tensor& get(const std::string& name) { return lookup(name).tensor; }
  const ad::Tensor& get(const std::string& name) const {
    return const_cast<LayerParams*>(this)->lookup(name).tensor;
  }
  ad::Tensor& operator[](const std::string& name) { return get(name); }

  TuningClass tuning_class(const std::string& name) const {
    return const_cast<LayerParams*>(this)->lookup(name).cls;
  }
  void set_tuning_class(const std::string& name, TuningClass cls) { lookup(name).cls = cls; }

  /// Replace the values of an existing parameter (shape must match).
  void assign(const std::string& name, std::vector<double> values) {
    auto& t = get(name);
    if (values.size() != t.numel())
      throw ShapeError("assign '" + name + "': size mismatch");
    std::copy(values.begin(), values.end(), t.mutable_data().begin());
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  std::size_t size() const { return entries_.size(); }

  /// Marks requires_grad on exactly the parameters the policy trains.
  void apply(TuningPolicy policy) {
    for (auto& [name, p] : entries_) p.tensor.set_requires_grad(is_trainable(policy, p.cls));
  }

  std::vector<std::string> trainable_names(TuningPolicy policy) const {
    std::vector<std::string> out;
    for (const auto& [name, p] : entries_)
      if (is_trainable(policy, p.cls)) out.push_back(name);
    return out;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, p] : entries_) n += p.tensor.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [name, p] : entries_) p.tensor.zero_grad();
  }

 private:
  Param& lookup(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("no parameter named '" + name + "'");
    return it->second;
  }

  std::map<std::string, Param> entries_;
};

}  // namespace p2p::nn
