#pragma once

// Test-only reference implementations. Straight-line loops, full sorts, no
// shared code with the library paths they verify.

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "socnn/geometry.hpp"
#include "socnn/param_store.hpp"

namespace socnn::oracle {

// kNN by full sort of explicitly accumulated squared distances, ties broken
// by lower index, the point itself forced first.
inline std::vector<std::vector<int>> brute_force_knn(const std::vector<double>& data, int n, int dim,
                                                     int k) {
  std::vector<std::vector<int>> rows(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    std::vector<std::pair<double, int>> cands;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      double d2 = 0.0;
      for (int d = 0; d < dim; ++d) {
        const double diff = data[static_cast<size_t>(i) * dim + d] - data[static_cast<size_t>(j) * dim + d];
        d2 += diff * diff;
      }
      cands.emplace_back(d2, j);
    }
    std::sort(cands.begin(), cands.end());
    rows[static_cast<size_t>(i)].push_back(i);
    for (int j = 0; j < k - 1; ++j) rows[static_cast<size_t>(i)].push_back(cands[static_cast<size_t>(j)].second);
  }
  return rows;
}

// Dense attention block recomputation with explicit loops and a plain
// (unfused, non-compensated) softmax. theta/phi carry no bias.
inline std::vector<double> dense_place_oracle(const std::vector<double>& m, int n, int c,
                                              const std::vector<double>& wg, const std::vector<double>& bg,
                                              const std::vector<double>& wt, const std::vector<double>& wp,
                                              const std::vector<double>& wa, const std::vector<double>& ba) {
  auto apply_map = [&](const std::vector<double>& w, const std::vector<double>* b) {
    std::vector<double> out(static_cast<size_t>(n) * c);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < c; ++j) {
        double acc = b ? (*b)[static_cast<size_t>(j)] : 0.0;
        for (int q = 0; q < c; ++q) acc += m[static_cast<size_t>(i) * c + q] * w[static_cast<size_t>(q) * c + j];
        out[static_cast<size_t>(i) * c + j] = acc;
      }
    }
    return out;
  };
  const std::vector<double> g = apply_map(wg, &bg);
  const std::vector<double> theta = apply_map(wt, nullptr);
  const std::vector<double> phi = apply_map(wp, nullptr);

  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(c));
  std::vector<double> attn(static_cast<size_t>(n) * n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      double dot = 0.0;
      for (int q = 0; q < c; ++q) dot += theta[static_cast<size_t>(i) * c + q] * phi[static_cast<size_t>(j) * c + q];
      attn[static_cast<size_t>(i) * n + j] = dot * inv_scale;
    }
  }
  for (int i = 0; i < n; ++i) {
    double mx = attn[static_cast<size_t>(i) * n];
    for (int j = 1; j < n; ++j) mx = std::max(mx, attn[static_cast<size_t>(i) * n + j]);
    double denom = 0.0;
    for (int j = 0; j < n; ++j) {
      attn[static_cast<size_t>(i) * n + j] = std::exp(attn[static_cast<size_t>(i) * n + j] - mx);
      denom += attn[static_cast<size_t>(i) * n + j];
    }
    for (int j = 0; j < n; ++j) attn[static_cast<size_t>(i) * n + j] /= denom;
  }
  std::vector<double> ctx(static_cast<size_t>(n) * c, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double a = attn[static_cast<size_t>(i) * n + j];
      for (int q = 0; q < c; ++q) ctx[static_cast<size_t>(i) * c + q] += a * g[static_cast<size_t>(j) * c + q];
    }
  }
  std::vector<double> out(static_cast<size_t>(n) * c);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < c; ++j) {
      double acc = ba[static_cast<size_t>(j)];
      for (int q = 0; q < c; ++q) acc += ctx[static_cast<size_t>(i) * c + q] * wa[static_cast<size_t>(q) * c + j];
      out[static_cast<size_t>(i) * c + j] = acc + m[static_cast<size_t>(i) * c + j];
    }
  }
  return out;
}

// Per-shape IoU via std::set intersection/union arithmetic.
inline double set_arithmetic_shape_iou(const std::vector<int>& preds, const std::vector<int>& labels,
                                       const std::vector<int>& parts) {
  double total = 0.0;
  for (int part : parts) {
    std::set<int> pred_idx, gt_idx;
    for (size_t i = 0; i < preds.size(); ++i) {
      if (preds[i] == part) pred_idx.insert(static_cast<int>(i));
      if (labels[i] == part) gt_idx.insert(static_cast<int>(i));
    }
    std::vector<int> inter, uni;
    std::set_intersection(pred_idx.begin(), pred_idx.end(), gt_idx.begin(), gt_idx.end(),
                          std::back_inserter(inter));
    std::set_union(pred_idx.begin(), pred_idx.end(), gt_idx.begin(), gt_idx.end(),
                   std::back_inserter(uni));
    total += uni.empty() ? 1.0 : static_cast<double>(inter.size()) / static_cast<double>(uni.size());
  }
  return total / static_cast<double>(parts.size());
}

// Relative difference at tensor scale: max |a-b| / max(1, max|a|, max|b|).
inline double max_rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, mag = 1.0;
  for (size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    mag = std::max({mag, std::abs(a[i]), std::abs(b[i])});
  }
  return diff / mag;
}

template <typename T>
inline double max_rel_diff(const Tensor<T>& a, const Tensor<T>& b) {
  std::vector<double> av(a.values().begin(), a.values().end());
  std::vector<double> bv(b.values().begin(), b.values().end());
  return max_rel_diff(av, bv);
}

}  // namespace socnn::oracle
