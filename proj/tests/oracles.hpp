#pragma once

// Slow, independent reference implementations used only by tests.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <span>
#include <vector>

#include "mosforge/common.hpp"

namespace oracle {

/// Average ranks by counting: 1 + #smaller + (#equal - 1) / 2.
inline std::vector<double> count_ranks(std::span<const double> v) {
  std::vector<double> r(v.size());
  for (size_t i = 0; i < v.size(); ++i) {
    size_t less = 0, equal = 0;
    for (size_t j = 0; j < v.size(); ++j) {
      less += v[j] < v[i];
      equal += v[j] == v[i];
    }
    r[i] = 1.0 + static_cast<double>(less) + (static_cast<double>(equal) - 1.0) / 2.0;
  }
  return r;
}

inline double pearson(std::span<const double> a, std::span<const double> b) {
  long double ma = 0, mb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= a.size();
  mb /= b.size();
  long double num = 0, da = 0, db = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - ma) * (b[i] - mb);
    da += (a[i] - ma) * (a[i] - ma);
    db += (b[i] - mb) * (b[i] - mb);
  }
  return static_cast<double>(num / std::sqrt(da * db));
}

inline double srcc(std::span<const double> a, std::span<const double> b) {
  auto ra = count_ranks(a), rb = count_ranks(b);
  return pearson(ra, rb);
}

inline double mse(std::span<const double> a, std::span<const double> b) {
  long double s = 0;
  for (size_t i = 0; i < a.size(); ++i) s += static_cast<long double>(a[i] - b[i]) * (a[i] - b[i]);
  return static_cast<double>(s / a.size());
}

// ---------------------------------------------------------------------------
// Exact split search: every threshold between consecutive distinct values,
// partition sums recomputed from scratch for each candidate.

struct ExactSplit {
  bool valid = false;
  size_t feature = 0;
  double threshold = 0.0;
  double gain = 0.0;
  std::set<size_t> left;
};

inline double partition_gain(const mosforge::Matrix& x, std::span<const double> residual, std::span<const size_t> rows,
                             size_t feature, double threshold, size_t min_leaf, std::set<size_t>* left_out = nullptr) {
  long double sl = 0, sr = 0;
  size_t nl = 0, nr = 0;
  std::set<size_t> left;
  for (size_t r : rows) {
    if (x.at(r, feature) <= threshold) {
      sl += residual[r];
      ++nl;
      left.insert(r);
    } else {
      sr += residual[r];
      ++nr;
    }
  }
  if (nl < min_leaf || nr < min_leaf) return -1.0;
  if (left_out) *left_out = left;
  const long double s = sl + sr;
  return static_cast<double>(sl * sl / nl + sr * sr / nr - s * s / (nl + nr));
}

inline ExactSplit exact_best_split(const mosforge::Matrix& x, std::span<const double> residual, std::span<const size_t> rows,
                                   size_t min_leaf) {
  ExactSplit best;
  for (size_t f = 0; f < x.cols; ++f) {
    std::vector<double> vals;
    for (size_t r : rows) vals.push_back(x.at(r, f));
    std::sort(vals.begin(), vals.end());
    vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
    for (size_t i = 0; i + 1 < vals.size(); ++i) {
      const double thr = vals[i] + (vals[i + 1] - vals[i]) / 2.0;
      std::set<size_t> left;
      const double g = partition_gain(x, residual, rows, f, thr, min_leaf, &left);
      if (g > 0.0 && (!best.valid || g > best.gain)) best = {true, f, thr, g, left};
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Reference booster: same boosting scheme, exact splits, no histograms.

struct RefNode {
  std::vector<size_t> rows;
  ExactSplit split;
};

inline std::vector<double> reference_boost(const mosforge::Matrix& x, std::span<const double> y, size_t n_trees, double lr,
                                           size_t max_leaves, size_t min_leaf) {
  std::vector<double> pred(x.rows, std::accumulate(y.begin(), y.end(), 0.0) / y.size());
  std::vector<double> residual(x.rows);
  for (size_t t = 0; t < n_trees; ++t) {
    for (size_t i = 0; i < x.rows; ++i) residual[i] = y[i] - pred[i];
    std::vector<size_t> all(x.rows);
    std::iota(all.begin(), all.end(), size_t{0});
    std::vector<RefNode> leaves{{all, exact_best_split(x, residual, all, min_leaf)}};
    while (leaves.size() < max_leaves) {
      size_t pick = leaves.size();
      for (size_t i = 0; i < leaves.size(); ++i) {
        if (leaves[i].split.valid && (pick == leaves.size() || leaves[i].split.gain > leaves[pick].split.gain)) pick = i;
      }
      if (pick == leaves.size()) break;
      RefNode node = leaves[pick];
      leaves.erase(leaves.begin() + pick);
      std::vector<size_t> l, r;
      for (size_t i : node.rows) (node.split.left.count(i) ? l : r).push_back(i);
      auto sl = exact_best_split(x, residual, l, min_leaf);
      auto sr = exact_best_split(x, residual, r, min_leaf);
      leaves.push_back({l, sl});
      leaves.push_back({r, sr});
    }
    for (const auto& leaf : leaves) {
      double m = 0;
      for (size_t i : leaf.rows) m += residual[i];
      m /= leaf.rows.size();
      for (size_t i : leaf.rows) pred[i] += lr * m;
    }
  }
  return pred;
}

}  // namespace oracle
