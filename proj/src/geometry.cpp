#include "socnn/geometry.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace socnn {

PointCloud normalize_unit_sphere(const PointCloud& cloud) {
  const int n = cloud.num_points();
  if (n < 1) throw ValueError("normalize_unit_sphere: empty cloud");
  std::array<double, 3> centroid{0.0, 0.0, 0.0};
  for (const auto& p : cloud.coords) {
    for (int d = 0; d < 3; ++d) centroid[static_cast<size_t>(d)] += p[static_cast<size_t>(d)];
  }
  for (int d = 0; d < 3; ++d) centroid[static_cast<size_t>(d)] /= n;

  PointCloud out = cloud;
  double max_norm = 0.0;
  for (auto& p : out.coords) {
    for (int d = 0; d < 3; ++d) p[static_cast<size_t>(d)] -= centroid[static_cast<size_t>(d)];
    const double norm = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
    max_norm = std::max(max_norm, norm);
  }
  if (max_norm > 0.0) {
    const double inv = 1.0 / max_norm;
    for (auto& p : out.coords) {
      for (int d = 0; d < 3; ++d) p[static_cast<size_t>(d)] *= inv;
    }
  }
  return out;
}

namespace {

struct Candidate {
  double d2;
  int index;
  bool operator<(const Candidate& o) const {
    if (d2 != o.d2) return d2 < o.d2;
    return index < o.index;
  }
};

}  // namespace

NeighborIndex knn_graph(const double* data, int n, int dim, int k, KnnSpace space) {
  if (k < 1) throw ValueError("knn_graph: k must be >= 1");
  if (k > n) throw ValueError("knn_graph: k = " + std::to_string(k) + " exceeds point count " + std::to_string(n));
  NeighborIndex nbr;
  nbr.n = n;
  nbr.k = k;
  nbr.space = space;
  nbr.indices.resize(static_cast<size_t>(n) * k);

  // Squared-distance matrix. Small dimensions use the direct loop; wide
  // feature spaces go through a Gram product. Both are deterministic.
  std::vector<double> d2;
  if (dim > 8) {
    using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const Mat> x(data, n, dim);
    Mat gram = x * x.transpose();
    d2.resize(static_cast<size_t>(n) * n);
    std::vector<double> norms(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) norms[static_cast<size_t>(i)] = gram(i, i);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        d2[static_cast<size_t>(i) * n + j] = norms[static_cast<size_t>(i)] + norms[static_cast<size_t>(j)] - 2.0 * gram(i, j);
      }
    }
  } else {
    d2.resize(static_cast<size_t>(n) * n);
    for (int i = 0; i < n; ++i) {
      const double* xi = data + static_cast<size_t>(i) * dim;
      for (int j = 0; j < n; ++j) {
        const double* xj = data + static_cast<size_t>(j) * dim;
        double acc = 0.0;
        for (int d = 0; d < dim; ++d) {
          const double diff = xi[d] - xj[d];
          acc += diff * diff;
        }
        d2[static_cast<size_t>(i) * n + j] = acc;
      }
    }
  }

  std::vector<Candidate> cands;
  cands.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    cands.clear();
    const double* row = d2.data() + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      cands.push_back({row[j], j});
    }
    // The point itself is always first; the remaining k-1 slots take the
    // nearest other points by (distance, index).
    int* out = nbr.indices.data() + static_cast<size_t>(i) * k;
    out[0] = i;
    const int rest = k - 1;
    if (rest > 0) {
      std::nth_element(cands.begin(), cands.begin() + rest - 1, cands.end());
      std::sort(cands.begin(), cands.begin() + rest);
      for (int j = 0; j < rest; ++j) out[j + 1] = cands[static_cast<size_t>(j)].index;
    }
  }
  return nbr;
}

NeighborIndex knn_graph(const std::vector<std::array<double, 3>>& points, int k) {
  static_assert(sizeof(std::array<double, 3>) == 3 * sizeof(double));
  return knn_graph(points.empty() ? nullptr : points[0].data(), static_cast<int>(points.size()), 3, k,
                   KnnSpace::kCoordinate);
}

PointCloud augment(const PointCloud& cloud, const AugmentationSpec& spec) {
  return augment(cloud, spec, spec.seed);
}

PointCloud augment(const PointCloud& cloud, const AugmentationSpec& spec, uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  const double s = rng.uniform(spec.scale_lo, spec.scale_hi);
  std::array<double, 3> t{};
  for (int d = 0; d < 3; ++d) t[static_cast<size_t>(d)] = rng.uniform(-spec.translate, spec.translate);
  PointCloud out = cloud;
  for (auto& p : out.coords) {
    for (int d = 0; d < 3; ++d) {
      double jitter = spec.jitter_sigma > 0.0 ? rng.normal(0.0, spec.jitter_sigma) : 0.0;
      jitter = std::clamp(jitter, -spec.jitter_clip, spec.jitter_clip);
      p[static_cast<size_t>(d)] = p[static_cast<size_t>(d)] * s + t[static_cast<size_t>(d)] + jitter;
    }
  }
  return out;
}

}  // namespace socnn
