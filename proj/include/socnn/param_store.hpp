#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "socnn/error.hpp"
#include "socnn/rng.hpp"
#include "socnn/tensor.hpp"

namespace socnn {

// Named parameter tensors plus non-trainable buffers (batch-norm running
// statistics). Iteration follows registration order so optimizer steps,
// gradient checks and checkpoints are reproducible.
template <typename T>
class ParamStore {
 public:
  Tensor<T>& create(const std::string& name, Shape shape, std::vector<T> values) {
    if (entries_.count(name)) throw ValueError("ParamStore: duplicate name '" + name + "'");
    param_names_.push_back(name);
    auto [it, ok] = entries_.emplace(name, Tensor<T>::leaf(std::move(shape), std::move(values), true));
    return it->second;
  }

  // Fan-in scaled uniform init: U[-1/sqrt(fan_in), 1/sqrt(fan_in)].
  Tensor<T>& create_fan_in(const std::string& name, Shape shape, int fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in > 0 ? fan_in : 1));
    std::vector<T> v(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
    return create(name, std::move(shape), std::move(v));
  }

  Tensor<T>& create_buffer(const std::string& name, Shape shape, std::vector<T> values) {
    if (entries_.count(name)) throw ValueError("ParamStore: duplicate name '" + name + "'");
    buffer_names_.push_back(name);
    auto [it, ok] = entries_.emplace(name, Tensor<T>::leaf(std::move(shape), std::move(values), false));
    return it->second;
  }

  bool has(const std::string& name) const { return entries_.count(name) > 0; }

  Tensor<T>& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw MissingParameterError("parameter '" + name + "' not found");
    return it->second;
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw MissingParameterError("parameter '" + name + "' not found");
    return it->second;
  }

  const std::vector<std::string>& param_names() const { return param_names_; }
  const std::vector<std::string>& buffer_names() const { return buffer_names_; }

  int64_t parameter_count() const {
    int64_t n = 0;
    for (const auto& name : param_names_) n += at(name).numel();
    return n;
  }

  void zero_grads() {
    for (const auto& name : param_names_) at(name).zero_grad();
  }

  void clear_grads() {
    for (const auto& name : param_names_) at(name).clear_grad();
  }

  // Folds a backward sink into the published grads, in registration order.
  void accumulate_grads(GradMap<T>& sink) {
    for (const auto& name : param_names_) {
      Tensor<T>& p = at(name);
      if (!sink.contains(p.node().get())) continue;
      const auto& g = sink.get(p.node().get());
      if (!p.has_grad()) p.zero_grad();
      auto* node = p.node().get();
      for (size_t i = 0; i < g.size(); ++i) node->grad[i] += g[i];
    }
  }

 private:
  std::vector<std::string> param_names_;
  std::vector<std::string> buffer_names_;
  std::unordered_map<std::string, Tensor<T>> entries_;
};

}  // namespace socnn
