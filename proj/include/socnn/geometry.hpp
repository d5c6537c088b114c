#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "socnn/error.hpp"
#include "socnn/rng.hpp"
#include "socnn/tensor.hpp"

namespace socnn {

struct PointCloud {
  std::vector<std::array<double, 3>> coords;
  std::vector<int> point_labels;  // empty or one per point
  int object_label = -1;          // -1 = unlabeled

  int num_points() const { return static_cast<int>(coords.size()); }
  bool has_point_labels() const { return !point_labels.empty(); }
};

enum class KnnSpace { kCoordinate, kFeature };

// N x k neighbor table. Every row is sorted by (distance, index) and starts
// with the point itself.
struct NeighborIndex {
  std::vector<int> indices;  // row-major N*k
  int n = 0;
  int k = 0;
  KnnSpace space = KnnSpace::kCoordinate;

  int at(int i, int j) const { return indices[static_cast<size_t>(i) * k + j]; }
};

struct AugmentationSpec {
  double scale_lo = 2.0 / 3.0;
  double scale_hi = 1.5;
  double translate = 0.2;      // per-axis uniform in [-translate, translate]
  double jitter_sigma = 0.01;  // Gaussian per coordinate
  double jitter_clip = 0.05;   // absolute clip on the jitter
  uint64_t seed = 0;

  static AugmentationSpec identity(uint64_t seed = 0) {
    AugmentationSpec s;
    s.scale_lo = 1.0;
    s.scale_hi = 1.0;
    s.translate = 0.0;
    s.jitter_sigma = 0.0;
    s.jitter_clip = 0.0;
    s.seed = seed;
    return s;
  }

  void validate() const {
    if (!(scale_lo > 0.0 && scale_lo <= scale_hi)) throw ValueError("AugmentationSpec: need 0 < scale_lo <= scale_hi");
    if (translate < 0.0) throw ValueError("AugmentationSpec: translate must be >= 0");
    if (jitter_sigma < 0.0 || jitter_clip < 0.0) throw ValueError("AugmentationSpec: jitter must be >= 0");
  }
};

// Centers the cloud on its centroid and scales the farthest point to norm 1.
// A degenerate cloud (all points identical) is centered with scale 1.
PointCloud normalize_unit_sphere(const PointCloud& cloud);

// Exact k-nearest-neighbor rows over a dense row-major matrix, self included,
// ties broken by lower index. The point itself is always a member of its row.
NeighborIndex knn_graph(const double* data, int n, int dim, int k,
                        KnnSpace space = KnnSpace::kCoordinate);

NeighborIndex knn_graph(const std::vector<std::array<double, 3>>& points, int k);

// coords * s + t + clip(eps); deterministic given spec.seed.
PointCloud augment(const PointCloud& cloud, const AugmentationSpec& spec);
PointCloud augment(const PointCloud& cloud, const AugmentationSpec& spec, uint64_t seed);

// --- tensor bridges -------------------------------------------------------

template <typename T>
Tensor<T> coords_tensor(const PointCloud& cloud, bool requires_grad = false) {
  const int n = cloud.num_points();
  std::vector<T> v(static_cast<size_t>(n) * 3);
  for (int i = 0; i < n; ++i) {
    for (int d = 0; d < 3; ++d) v[static_cast<size_t>(i) * 3 + d] = static_cast<T>(cloud.coords[static_cast<size_t>(i)][static_cast<size_t>(d)]);
  }
  return Tensor<T>::leaf({n, 3}, std::move(v), requires_grad);
}

// kNN in the current feature space; distances are evaluated in double.
template <typename T>
NeighborIndex knn_graph_features(const Tensor<T>& features, int k) {
  detail::require_rank2(features, "knn_graph_features");
  const int n = features.dim(0), dim = features.dim(1);
  std::vector<double> buf(static_cast<size_t>(n) * dim);
  const auto& fv = features.values();
  for (size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<double>(fv[i]);
  return knn_graph(buf.data(), n, dim, k, KnnSpace::kFeature);
}

// Materializes per-point neighborhood features: [N,C] -> [N,k,C].
template <typename T>
Tensor<T> gather_neighbors(const Tensor<T>& features, const NeighborIndex& nbr) {
  detail::require_rank2(features, "gather_neighbors");
  if (features.dim(0) != nbr.n) {
    throw ShapeError("gather_neighbors: " + std::to_string(features.dim(0)) + " feature rows vs neighbor table for " +
                     std::to_string(nbr.n) + " points");
  }
  return gather_rows3(features, nbr.indices, nbr.n, nbr.k);
}

// Mean feature of each local neighborhood: [N,k,C] -> [N,C].
template <typename T>
Tensor<T> moment_features(const Tensor<T>& gathered) {
  return mean_axis1(gathered);
}

// Pairwise-interaction aggregation computed by the explicit double loop over
// all neighbor pairs: E[i][a] = (1/k) * sum_b (X_a - X_b). Verification-only
// reference for the moment-subtraction shortcut; carries no gradients.
template <typename T>
Tensor<T> intra_pairwise_oracle(const Tensor<T>& gathered) {
  if (gathered.rank() != 3) throw ShapeError("intra_pairwise_oracle: expected [N,k,C]");
  const int n = gathered.dim(0), k = gathered.dim(1), c = gathered.dim(2);
  std::vector<T> out(static_cast<size_t>(n) * k * c, T(0));
  const auto& g = gathered.values();
  for (int i = 0; i < n; ++i) {
    for (int a = 0; a < k; ++a) {
      const T* xa = g.data() + (static_cast<size_t>(i) * k + a) * c;
      T* e = out.data() + (static_cast<size_t>(i) * k + a) * c;
      for (int b = 0; b < k; ++b) {
        const T* xb = g.data() + (static_cast<size_t>(i) * k + b) * c;
        for (int q = 0; q < c; ++q) e[q] += xa[q] - xb[q];
      }
      const T inv = T(1) / T(k);
      for (int q = 0; q < c; ++q) e[q] *= inv;
    }
  }
  return Tensor<T>::leaf({n, k, c}, std::move(out));
}

}  // namespace socnn
