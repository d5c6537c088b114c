#pragma once

#include <string>
#include <vector>

#include "socnn/param_store.hpp"
#include "socnn/rng.hpp"
#include "socnn/tensor.hpp"

namespace socnn {

enum class Mode { kTrain, kEval };

struct Activation {
  enum Kind { kLeakyRelu, kIdentity };
  Kind kind = kLeakyRelu;
  double slope = 0.2;

  static Activation leaky_relu(double slope = 0.2) { return {kLeakyRelu, slope}; }
  static Activation identity() { return {kIdentity, 0.0}; }
};

// A stack of linear layers. Hidden layers run linear -> batchnorm (optional)
// -> activation -> dropout (train only). The final layer does the same unless
// plain_output is set, in which case it is a bare linear map (logit heads).
struct MLPSpec {
  std::vector<int> layer_widths;
  bool use_batchnorm = true;
  Activation activation = Activation::leaky_relu();
  double dropout_rate = 0.0;
  bool plain_output = false;

  int in_width() const { return layer_widths.front(); }
  int out_width() const { return layer_widths.back(); }
  int num_layers() const { return static_cast<int>(layer_widths.size()) - 1; }

  void validate() const {
    if (layer_widths.size() < 2) throw ValueError("MLPSpec: need at least 2 layer widths");
    for (int w : layer_widths) {
      if (w < 1) throw ValueError("MLPSpec: layer widths must be positive");
    }
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw ValueError("MLPSpec: dropout_rate must be in [0,1)");
    if (activation.kind == Activation::kLeakyRelu && !(activation.slope > 0.0 && activation.slope < 1.0)) {
      throw ValueError("MLPSpec: leaky relu slope must be in (0,1)");
    }
  }
};

// Deferred batch-norm running statistic update. Training forwards never read
// the running buffers, so updates captured here and applied later (in a fixed
// order) are equivalent to in-place updates.
template <typename T>
struct BnPendingUpdate {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  std::vector<T> batch_mean;
  std::vector<T> batch_var;
  double momentum = 0.9;
};

template <typename T>
using BnPendingQueue = std::vector<BnPendingUpdate<T>>;

template <typename T>
struct ForwardCtx {
  Mode mode = Mode::kEval;
  double bn_momentum = 0.9;
  double bn_eps = 1e-5;
  Rng* rng = nullptr;                      // required when dropout is active
  BnPendingQueue<T>* bn_queue = nullptr;   // null: apply running updates in place

  static ForwardCtx train(Rng* rng = nullptr) {
    ForwardCtx c;
    c.mode = Mode::kTrain;
    c.rng = rng;
    return c;
  }
  static ForwardCtx eval() { return {}; }
};

inline const char* bn_gamma_suffix = ".bn.gamma";
inline const char* bn_beta_suffix = ".bn.beta";
inline const char* bn_rmean_suffix = ".bn.running_mean";
inline const char* bn_rvar_suffix = ".bn.running_var";

template <typename T>
void register_batch_norm_params(ParamStore<T>& ps, const std::string& prefix, int width) {
  ps.create(prefix + bn_gamma_suffix, {1, width}, std::vector<T>(static_cast<size_t>(width), T(1)));
  ps.create(prefix + bn_beta_suffix, {1, width}, std::vector<T>(static_cast<size_t>(width), T(0)));
  ps.create_buffer(prefix + bn_rmean_suffix, {1, width}, std::vector<T>(static_cast<size_t>(width), T(0)));
  ps.create_buffer(prefix + bn_rvar_suffix, {1, width}, std::vector<T>(static_cast<size_t>(width), T(1)));
}

// Batch normalization over the row axis of x [B,C]. Train mode normalizes by
// the batch statistics (biased variance) and blends the running buffers as
// running <- momentum * running + (1 - momentum) * batch. Eval mode applies
// the running statistics as constants.
template <typename T>
Tensor<T> batch_norm_rows(ParamStore<T>& ps, const std::string& prefix, const Tensor<T>& x,
                          ForwardCtx<T>& ctx) {
  detail::require_rank2(x, "batch_norm_rows");
  const int rows = x.dim(0);
  const int cols = x.dim(1);
  Tensor<T>& gamma = ps.at(prefix + bn_gamma_suffix);
  Tensor<T>& beta = ps.at(prefix + bn_beta_suffix);
  if (gamma.dim(1) != cols) {
    throw ShapeError("batch_norm_rows: " + prefix + " expects width " + std::to_string(gamma.dim(1)) +
                     ", got " + std::to_string(cols));
  }
  if (ctx.mode == Mode::kTrain) {
    if (rows < 2) {
      throw ValueError("batch_norm_rows: batch too small for train mode (" + std::to_string(rows) +
                       " rows, need >= 2)");
    }
    Tensor<T> mean = colwise_mean(x);
    Tensor<T> centered = sub_rowvec(x, mean);
    Tensor<T> var = colwise_mean(mul(centered, centered));
    Tensor<T> inv_std = rsqrt(add_scalar(var, static_cast<T>(ctx.bn_eps)));
    Tensor<T> normalized = mul_rowvec(centered, inv_std);
    Tensor<T> out = add_rowvec(mul_rowvec(normalized, gamma), beta);

    BnPendingUpdate<T> update{ps.at(prefix + bn_rmean_suffix), ps.at(prefix + bn_rvar_suffix),
                              mean.values(), var.values(), ctx.bn_momentum};
    if (ctx.bn_queue) {
      ctx.bn_queue->push_back(std::move(update));
    } else {
      apply_bn_update(update);
    }
    return out;
  }
  // Eval: running stats as constants; gradients flow to gamma/beta/x only.
  Tensor<T> rm = Tensor<T>::leaf({1, cols}, ps.at(prefix + bn_rmean_suffix).values());
  Tensor<T> rv = Tensor<T>::leaf({1, cols}, ps.at(prefix + bn_rvar_suffix).values());
  Tensor<T> inv_std = rsqrt(add_scalar(rv, static_cast<T>(ctx.bn_eps)));
  Tensor<T> normalized = mul_rowvec(sub_rowvec(x, rm), inv_std);
  return add_rowvec(mul_rowvec(normalized, gamma), beta);
}

template <typename T>
void apply_bn_update(BnPendingUpdate<T>& u) {
  auto& rm = u.running_mean.mutable_values();
  auto& rv = u.running_var.mutable_values();
  const T m = static_cast<T>(u.momentum);
  for (size_t i = 0; i < rm.size(); ++i) {
    rm[i] = m * rm[i] + (T(1) - m) * u.batch_mean[i];
    rv[i] = m * rv[i] + (T(1) - m) * u.batch_var[i];
  }
}

template <typename T>
void apply_bn_queue(BnPendingQueue<T>& queue) {
  for (auto& u : queue) apply_bn_update(u);
  queue.clear();
}

inline std::string layer_prefix(const std::string& prefix, int layer) {
  return prefix + ".l" + std::to_string(layer);
}

template <typename T>
void register_mlp_params(ParamStore<T>& ps, const std::string& prefix, const MLPSpec& spec, Rng& rng) {
  spec.validate();
  for (int l = 0; l < spec.num_layers(); ++l) {
    const int in = spec.layer_widths[static_cast<size_t>(l)];
    const int out = spec.layer_widths[static_cast<size_t>(l) + 1];
    const std::string lp = layer_prefix(prefix, l);
    ps.create_fan_in(lp + ".weight", {in, out}, in, rng);
    ps.create_fan_in(lp + ".bias", {1, out}, in, rng);
    const bool plain = spec.plain_output && l == spec.num_layers() - 1;
    if (spec.use_batchnorm && !plain) register_batch_norm_params(ps, lp, out);
  }
}

template <typename T>
Tensor<T> linear_layer(ParamStore<T>& ps, const std::string& lp, const Tensor<T>& x) {
  Tensor<T>& w = ps.at(lp + ".weight");
  Tensor<T>& b = ps.at(lp + ".bias");
  if (x.dim(1) != w.dim(0)) {
    throw ShapeError("linear " + lp + ": input width " + std::to_string(x.dim(1)) +
                     " != weight rows " + std::to_string(w.dim(0)));
  }
  return add_rowvec(matmul(x, w), b);
}

template <typename T>
Tensor<T> apply_activation(const Tensor<T>& x, const Activation& act) {
  if (act.kind == Activation::kIdentity) return x;
  return leaky_relu(x, static_cast<T>(act.slope));
}

// Forward through an MLP registered under `prefix`.
template <typename T>
Tensor<T> mlp_forward(const MLPSpec& spec, ParamStore<T>& ps, const std::string& prefix, Tensor<T> x,
                      ForwardCtx<T>& ctx) {
  spec.validate();
  if (x.rank() != 2 || x.dim(1) != spec.in_width()) {
    throw ShapeError("mlp_forward " + prefix + ": input " + shape_str(x.shape()) + " incompatible with width " +
                     std::to_string(spec.in_width()));
  }
  const bool train = ctx.mode == Mode::kTrain;
  for (int l = 0; l < spec.num_layers(); ++l) {
    const std::string lp = layer_prefix(prefix, l);
    const bool last = l == spec.num_layers() - 1;
    x = linear_layer(ps, lp, x);
    if (last && spec.plain_output) break;
    if (spec.use_batchnorm) x = batch_norm_rows(ps, lp, x, ctx);
    x = apply_activation(x, spec.activation);
    if (!last && spec.dropout_rate > 0.0 && train) {
      if (!ctx.rng) throw ValueError("mlp_forward: dropout requires an rng in train mode");
      x = dropout(x, spec.dropout_rate, *ctx.rng, true);
    }
  }
  return x;
}

}  // namespace socnn
