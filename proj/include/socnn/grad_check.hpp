#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "socnn/param_store.hpp"
#include "socnn/tensor.hpp"

namespace socnn {

template <typename T>
struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  int64_t worst_index = -1;
  double worst_analytic = 0.0;
  double worst_fd = 0.0;
};

// Compares the analytic gradient of `loss_fn` against central finite
// differences for every element of every parameter in the store. The loss
// closure must be deterministic; this is verified by evaluating it twice
// before probing. 64-bit only: finite differences at h=1e-5 are meaningless
// in single precision.
template <typename T>
GradCheckResult<T> grad_check(const std::function<Tensor<T>()>& loss_fn, ParamStore<T>& params,
                              double h = 1e-5) {
  static_assert(std::is_same_v<T, double>, "grad_check requires 64-bit tensors");
  if (!(h > 0.0)) throw ValueError("grad_check: h must be positive");

  const T l_first = loss_fn().item();
  const T l_second = loss_fn().item();
  if (l_first != l_second) {
    throw ValueError("grad_check: loss_fn is not deterministic (got " + std::to_string(l_first) +
                     " then " + std::to_string(l_second) + ")");
  }

  params.clear_grads();
  Tensor<T> loss = loss_fn();
  loss.backward();
  std::unordered_map<std::string, std::vector<T>> analytic;
  for (const auto& name : params.param_names()) {
    Tensor<T>& p = params.at(name);
    analytic[name] = p.has_grad() ? p.grad() : std::vector<T>(p.values().size(), T(0));
  }

  GradCheckResult<T> result;
  for (const auto& name : params.param_names()) {
    Tensor<T>& p = params.at(name);
    auto& values = p.mutable_values();
    const auto& a = analytic[name];
    for (size_t i = 0; i < values.size(); ++i) {
      const T saved = values[i];
      values[i] = saved + static_cast<T>(h);
      const T lp = loss_fn().item();
      values[i] = saved - static_cast<T>(h);
      const T lm = loss_fn().item();
      values[i] = saved;
      const double fd = static_cast<double>(lp - lm) / (2.0 * h);
      const double an = static_cast<double>(a[i]);
      const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-8});
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = name;
        result.worst_index = static_cast<int64_t>(i);
        result.worst_analytic = an;
        result.worst_fd = fd;
      }
    }
  }
  params.clear_grads();
  return result;
}

}  // namespace socnn
