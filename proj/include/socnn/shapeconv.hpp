#pragma once

#include <cmath>
#include <string>

#include "socnn/geometry.hpp"
#include "socnn/layers.hpp"
#include "socnn/param_store.hpp"
#include "socnn/tensor.hpp"

namespace socnn {

// One ShapeConv stage: local (intra-shape) aggregation over each kNN
// neighborhood plus global (inter-shape) attention over the neighborhood
// moment features, fused by elementwise sum.
struct ShapeConvConfig {
  int c_in = 0;
  int c_out = 0;
  int k = 16;
  bool enable_mp = true;     // subtract the neighborhood moment before mapping
  bool enable_intra = true;
  bool enable_inter = true;
  KnnSpace knn_space = KnnSpace::kFeature;
  bool use_batchnorm = true;
  Activation activation = Activation::leaky_relu();

  void validate() const {
    if (c_in < 1 || c_out < 1) throw ValueError("ShapeConvConfig: channel counts must be >= 1");
    if (k < 1) throw ValueError("ShapeConvConfig: k must be >= 1");
    if (!enable_intra && !enable_inter) {
      throw ConfigError("ShapeConvConfig: at least one of intra/inter must be enabled");
    }
  }

  MLPSpec intra_spec() const {
    MLPSpec s;
    s.layer_widths = {c_in, c_out};
    s.use_batchnorm = use_batchnorm;
    s.activation = activation;
    return s;
  }
  MLPSpec inter_spec() const { return intra_spec(); }
};

template <typename T>
void register_shapeconv_params(ParamStore<T>& ps, const std::string& prefix,
                               const ShapeConvConfig& cfg, Rng& rng) {
  cfg.validate();
  if (cfg.enable_intra) register_mlp_params(ps, prefix + ".intra", cfg.intra_spec(), rng);
  if (cfg.enable_inter) {
    // theta/phi are pure projections: a phi bias shifts every attention row
    // uniformly and is cancelled exactly by the row softmax.
    for (const char* map : {"g", "theta", "phi", "alpha"}) {
      ps.create_fan_in(prefix + ".place." + map + ".weight", {cfg.c_in, cfg.c_in}, cfg.c_in, rng);
      if (map[0] == 'g' || map[0] == 'a') {
        ps.create_fan_in(prefix + ".place." + map + ".bias", {1, cfg.c_in}, cfg.c_in, rng);
      }
    }
    register_mlp_params(ps, prefix + ".inter", cfg.inter_spec(), rng);
  }
}

// Neighborhood moment features: mean over each point's kNN block.
template <typename T>
Tensor<T> neighborhood_moments(const Tensor<T>& features, const NeighborIndex& nbr) {
  return moment_features(gather_neighbors(features, nbr));
}

// Intra-shape branch. With moment subtraction enabled the per-neighbor input
// is X_j - X_M; the first linear map is applied before gathering, which is
// algebraically identical and k times cheaper:
//   (X_j - X_M) W = (X W)_j - (X_M W)_i.
// Batch norm runs over the flattened N*k axis; channelwise max-pool over each
// neighbor block makes the aggregation order-free.
template <typename T>
Tensor<T> intra_shape_forward(ParamStore<T>& ps, const std::string& prefix,
                              const ShapeConvConfig& cfg, const Tensor<T>& features,
                              const NeighborIndex& nbr, ForwardCtx<T>& ctx) {
  cfg.validate();
  if (features.dim(0) != nbr.n || nbr.k != cfg.k) {
    throw ShapeError("intra_shape_forward: neighbor table " + std::to_string(nbr.n) + "x" +
                     std::to_string(nbr.k) + " does not match " + std::to_string(features.dim(0)) +
                     " points with k=" + std::to_string(cfg.k));
  }
  if (features.dim(1) != cfg.c_in) {
    throw ShapeError("intra_shape_forward: expected " + std::to_string(cfg.c_in) + " channels, got " +
                     std::to_string(features.dim(1)));
  }
  const int n = nbr.n, k = nbr.k;
  const std::string lp = prefix + ".intra.l0";
  Tensor<T>& w = ps.at(lp + ".weight");
  Tensor<T>& b = ps.at(lp + ".bias");

  Tensor<T> mapped = matmul(features, w);                  // [N, c_out], bias deferred
  Tensor<T> blocks = gather_rows3(mapped, nbr.indices, n, k);
  if (cfg.enable_mp) {
    Tensor<T> moment_mapped = matmul(neighborhood_moments(features, nbr), w);
    blocks = sub_bcast_mid(blocks, moment_mapped);
  }
  Tensor<T> flat = add_rowvec(reshape(blocks, {n * k, cfg.c_out}), b);
  if (cfg.use_batchnorm) flat = batch_norm_rows(ps, lp, flat, ctx);
  flat = apply_activation(flat, cfg.activation);
  return max_axis1(reshape(flat, {n, k, cfg.c_out}));
}

namespace detail {

template <typename T>
Tensor<T> place_map(ParamStore<T>& ps, const std::string& place_prefix, const char* name,
                    const Tensor<T>& moments) {
  Tensor<T>& w = ps.at(place_prefix + "." + std::string(name) + ".weight");
  Tensor<T> out = matmul(moments, w);
  const std::string bias_name = place_prefix + "." + std::string(name) + ".bias";
  if (ps.has(bias_name)) out = add_rowvec(out, ps.at(bias_name));
  return out;
}

}  // namespace detail

// Row-stochastic attention over the moment matrix:
// softmax_rows(theta(M) phi(M)^T / sqrt(C)).
template <typename T>
Tensor<T> place_attention(ParamStore<T>& ps, const std::string& place_prefix,
                          const Tensor<T>& moments) {
  detail::require_rank2(moments, "place_attention");
  const int c = moments.dim(1);
  Tensor<T> queries = detail::place_map(ps, place_prefix, "theta", moments);
  Tensor<T> keys = detail::place_map(ps, place_prefix, "phi", moments);
  Tensor<T> logits =
      scale(matmul_nt(queries, keys), static_cast<T>(1.0 / std::sqrt(static_cast<double>(c))));
  return softmax_rows(logits);
}

// PLACE block over the global moment matrix M [N,C]:
//   A = softmax_rows(theta(M) phi(M)^T / sqrt(C));  out = alpha(A g(M)) + M.
template <typename T>
Tensor<T> place_forward(ParamStore<T>& ps, const std::string& place_prefix, const Tensor<T>& moments) {
  Tensor<T> attention = place_attention(ps, place_prefix, moments);
  Tensor<T> context = matmul(attention, detail::place_map(ps, place_prefix, "g", moments));
  Tensor<T>& aw = ps.at(place_prefix + ".alpha.weight");
  Tensor<T>& ab = ps.at(place_prefix + ".alpha.bias");
  return add(add_rowvec(matmul(context, aw), ab), moments);
}

// Inter-shape branch: pointwise channel map applied to the PLACE-enhanced
// moment features. Batch norm inside f_inter runs over the N axis.
template <typename T>
Tensor<T> inter_shape_forward(ParamStore<T>& ps, const std::string& prefix,
                              const ShapeConvConfig& cfg, const Tensor<T>& moments,
                              ForwardCtx<T>& ctx) {
  cfg.validate();
  if (moments.dim(1) != cfg.c_in) {
    throw ShapeError("inter_shape_forward: expected " + std::to_string(cfg.c_in) + " channels, got " +
                     std::to_string(moments.dim(1)));
  }
  Tensor<T> enhanced = place_forward(ps, prefix + ".place", moments);
  return mlp_forward(cfg.inter_spec(), ps, prefix + ".inter", enhanced, ctx);
}

// Full operator. Builds the kNN graph in the configured space, evaluates the
// enabled branches and sums them. Disabled-branch ablations return the single
// enabled branch unchanged.
template <typename T>
Tensor<T> shapeconv_forward(ParamStore<T>& ps, const std::string& prefix, const ShapeConvConfig& cfg,
                            const Tensor<T>& features, const Tensor<T>& coords, ForwardCtx<T>& ctx) {
  cfg.validate();
  const int n = features.dim(0);
  if (n < cfg.k) {
    throw ValueError("shapeconv_forward: " + std::to_string(n) + " points < k=" + std::to_string(cfg.k));
  }
  NeighborIndex nbr;
  if (cfg.knn_space == KnnSpace::kCoordinate) {
    if (coords.dim(0) != n) throw ShapeError("shapeconv_forward: coords row mismatch");
    std::vector<double> buf(coords.values().begin(), coords.values().end());
    nbr = knn_graph(buf.data(), n, coords.dim(1), cfg.k, KnnSpace::kCoordinate);
  } else {
    nbr = knn_graph_features(features, cfg.k);
  }

  Tensor<T> intra_out, inter_out;
  if (cfg.enable_intra) intra_out = intra_shape_forward(ps, prefix, cfg, features, nbr, ctx);
  if (cfg.enable_inter) {
    Tensor<T> source = cfg.enable_mp ? neighborhood_moments(features, nbr) : features;
    inter_out = inter_shape_forward(ps, prefix, cfg, source, ctx);
  }
  if (cfg.enable_intra && cfg.enable_inter) return add(intra_out, inter_out);
  return cfg.enable_intra ? intra_out : inter_out;
}

}  // namespace socnn
