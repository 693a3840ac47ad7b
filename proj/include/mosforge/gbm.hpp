#pragma once

// Gradient-boosted regression trees (L2 loss) with histogram split finding
// and leaf-wise growth.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mosforge/common.hpp"

namespace mosforge::gbm {

struct GbmParams {
  size_t n_trees = 200;
  double learning_rate = 0.05;
  size_t max_leaves = 31;
  size_t min_samples_leaf = 5;
  size_t n_bins = 64;
  uint64_t seed = 42;
  // Dev-set patience, in trees; only used when a dev set is passed to fit().
  size_t early_stopping_rounds = 20;

  bool operator==(const GbmParams&) const = default;
};

inline void validate(const GbmParams& p) {
  if (p.n_trees == 0) throw Error(ErrorCode::invalid_argument, "n_trees must be positive");
  if (!(p.learning_rate > 0.0 && p.learning_rate <= 1.0)) throw Error(ErrorCode::invalid_argument, "learning_rate must be in (0,1]");
  if (p.max_leaves < 2) throw Error(ErrorCode::invalid_argument, "max_leaves must be >= 2");
  if (p.min_samples_leaf < 1) throw Error(ErrorCode::invalid_argument, "min_samples_leaf must be >= 1");
  if (p.n_bins < 2 || p.n_bins > 256) throw Error(ErrorCode::invalid_argument, "n_bins must be in 2..256");
}

struct Node {
  // -1 marks a leaf.
  int32_t feature = -1;
  double threshold = 0.0;
  uint32_t left = 0;
  uint32_t right = 0;
  double value = 0.0;

  bool is_leaf() const { return feature < 0; }
  bool operator==(const Node&) const = default;
};

/// Node 0 is the root. Rows with x[feature] <= threshold go left.
struct RegressionTree {
  std::vector<Node> nodes;

  double predict(std::span<const double> row) const {
    uint32_t i = 0;
    while (!nodes[i].is_leaf()) i = row[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
    return nodes[i].value;
  }

  size_t leaf_count() const {
    return static_cast<size_t>(std::count_if(nodes.begin(), nodes.end(), [](const Node& n) { return n.is_leaf(); }));
  }

  bool operator==(const RegressionTree&) const = default;
};

struct GbmModel {
  double base_prediction = 0.0;
  std::vector<RegressionTree> trees;
  GbmParams params;
  size_t n_features = 0;

  bool operator==(const GbmModel&) const = default;
};

// ---------------------------------------------------------------------------
// Binning

/// Midpoint of a < b that still separates them after rounding.
inline double split_point(double a, double b) {
  double mid = a + (b - a) / 2.0;
  if (!(mid >= a && mid < b)) mid = a;
  return mid;
}

/// Bin upper bounds for one feature. Bin b holds values x with
/// upper[b-1] < x <= upper[b]; the last bin is unbounded above.
struct FeatureBins {
  std::vector<double> upper;

  size_t count() const { return upper.size() + 1; }
  uint16_t bin(double x) const {
    return static_cast<uint16_t>(std::lower_bound(upper.begin(), upper.end(), x) - upper.begin());
  }
};

/// Equal-frequency bins. With at most `n_bins` distinct values every
/// distinct value gets its own bin.
inline FeatureBins make_bins(std::vector<double> column, size_t n_bins) {
  std::sort(column.begin(), column.end());
  std::vector<double> distinct = column;
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  FeatureBins bins;
  if (distinct.size() <= n_bins) {
    for (size_t i = 0; i + 1 < distinct.size(); ++i) bins.upper.push_back(split_point(distinct[i], distinct[i + 1]));
    return bins;
  }
  const size_t n = column.size();
  for (size_t k = 1; k < n_bins; ++k) {
    const size_t idx = k * n / n_bins;
    if (idx == 0) continue;
    const double v = column[idx - 1];
    auto nxt = std::upper_bound(distinct.begin(), distinct.end(), v);
    if (nxt == distinct.end()) break;
    const double t = split_point(v, *nxt);
    if (bins.upper.empty() || t > bins.upper.back()) bins.upper.push_back(t);
  }
  return bins;
}

/// Training matrix quantized once, column-major.
struct BinnedData {
  size_t rows = 0;
  std::vector<FeatureBins> bins;
  std::vector<std::vector<uint16_t>> codes;  // [feature][row]

  static BinnedData build(const Matrix& x, size_t n_bins) {
    BinnedData b;
    b.rows = x.rows;
    for (size_t f = 0; f < x.cols; ++f) {
      auto col = x.column(f);
      b.bins.push_back(make_bins(col, n_bins));
      std::vector<uint16_t> codes(x.rows);
      for (size_t r = 0; r < x.rows; ++r) codes[r] = b.bins.back().bin(col[r]);
      b.codes.push_back(std::move(codes));
    }
    return b;
  }
};

struct SplitCandidate {
  bool valid = false;
  size_t feature = 0;
  size_t bin = 0;  // rows with code <= bin go left
  double threshold = 0.0;
  double gain = 0.0;
};

/// Variance-reduction gain (up to a 1/n factor) of a left/right partition.
inline double split_gain(double sum_left, size_t n_left, double sum_right, size_t n_right) {
  const double sum = sum_left + sum_right;
  const double n = static_cast<double>(n_left + n_right);
  return sum_left * sum_left / static_cast<double>(n_left) + sum_right * sum_right / static_cast<double>(n_right) -
         sum * sum / n;
}

/// Best split of `rows` by histogram scan. Equal gains keep the lower
/// feature index, then the lower threshold.
inline SplitCandidate best_histogram_split(const BinnedData& data, std::span<const double> residual,
                                           std::span<const size_t> rows, size_t min_samples_leaf) {
  SplitCandidate best;
  if (rows.size() < 2 * min_samples_leaf) return best;
  double total = 0.0;
  for (size_t r : rows) total += residual[r];

  std::vector<double> sums;
  std::vector<size_t> counts;
  for (size_t f = 0; f < data.bins.size(); ++f) {
    const size_t nb = data.bins[f].count();
    if (nb < 2) continue;
    sums.assign(nb, 0.0);
    counts.assign(nb, 0);
    const auto& codes = data.codes[f];
    for (size_t r : rows) {
      sums[codes[r]] += residual[r];
      ++counts[codes[r]];
    }
    double sl = 0.0;
    size_t nl = 0;
    for (size_t b = 0; b + 1 < nb; ++b) {
      sl += sums[b];
      nl += counts[b];
      if (counts[b] == 0) continue;  // same partition as the previous bin
      const size_t nr = rows.size() - nl;
      if (nl < min_samples_leaf) continue;
      if (nr < min_samples_leaf) break;
      const double gain = split_gain(sl, nl, total - sl, nr);
      if (gain > 0.0 && (!best.valid || gain > best.gain)) {
        best = {true, f, b, data.bins[f].upper[b], gain};
      }
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Tree growth

namespace detail {

struct OpenLeaf {
  uint32_t node = 0;
  std::vector<size_t> rows;
  SplitCandidate split;
};

inline double mean_of(std::span<const double> residual, const std::vector<size_t>& rows) {
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (size_t r : rows) s += residual[r];
  return s / static_cast<double>(rows.size());
}

}  // namespace detail

/// Leaf-wise growth: repeatedly split the open leaf with the largest gain
/// until max_leaves is reached or no admissible split remains. Leaf value is
/// the mean residual of its rows.
inline RegressionTree grow_tree(const BinnedData& data, std::span<const double> residual, const GbmParams& params) {
  RegressionTree tree;
  std::vector<detail::OpenLeaf> open;
  std::vector<size_t> all(data.rows);
  std::iota(all.begin(), all.end(), size_t{0});
  tree.nodes.push_back(Node{});
  tree.nodes[0].value = detail::mean_of(residual, all);
  auto root_split = best_histogram_split(data, residual, all, params.min_samples_leaf);
  open.push_back({0, std::move(all), root_split});
  size_t leaves = 1;

  while (leaves < params.max_leaves) {
    size_t pick = open.size();
    for (size_t i = 0; i < open.size(); ++i) {
      if (!open[i].split.valid) continue;
      if (pick == open.size() || open[i].split.gain > open[pick].split.gain) pick = i;
    }
    if (pick == open.size()) break;

    detail::OpenLeaf leaf = std::move(open[pick]);
    open.erase(open.begin() + static_cast<std::ptrdiff_t>(pick));
    std::vector<size_t> left_rows, right_rows;
    const auto& codes = data.codes[leaf.split.feature];
    for (size_t r : leaf.rows) (codes[r] <= leaf.split.bin ? left_rows : right_rows).push_back(r);

    const auto left_id = static_cast<uint32_t>(tree.nodes.size());
    const auto right_id = left_id + 1;
    Node& parent = tree.nodes[leaf.node];
    parent.feature = static_cast<int32_t>(leaf.split.feature);
    parent.threshold = leaf.split.threshold;
    parent.left = left_id;
    parent.right = right_id;
    parent.value = 0.0;
    Node lnode, rnode;
    lnode.value = detail::mean_of(residual, left_rows);
    rnode.value = detail::mean_of(residual, right_rows);
    tree.nodes.push_back(lnode);
    tree.nodes.push_back(rnode);

    auto ls = best_histogram_split(data, residual, left_rows, params.min_samples_leaf);
    auto rs = best_histogram_split(data, residual, right_rows, params.min_samples_leaf);
    open.push_back({left_id, std::move(left_rows), ls});
    open.push_back({right_id, std::move(right_rows), rs});
    ++leaves;
  }
  return tree;
}

// ---------------------------------------------------------------------------
// Boosting

inline void check_finite(const Matrix& x, std::span<const double> y) {
  for (double v : x.data) {
    if (!std::isfinite(v)) throw Error(ErrorCode::non_finite, "non-finite feature value");
  }
  for (double v : y) {
    if (!std::isfinite(v)) throw Error(ErrorCode::non_finite, "non-finite target value");
  }
}

inline double mean_squared(std::span<const double> pred, std::span<const double> y) {
  double s = 0.0;
  for (size_t i = 0; i < y.size(); ++i) s += (pred[i] - y[i]) * (pred[i] - y[i]);
  return s / static_cast<double>(y.size());
}

struct DevSet {
  const Matrix& features;
  std::span<const double> targets;
};

/// Stage-wise L2 boosting. With a dev set, stops once dev MSE has not
/// improved for `early_stopping_rounds` trees and keeps the best prefix.
/// Also stops when a tree would raise training MSE through rounding alone.
inline GbmModel fit(const Matrix& x, std::span<const double> y, const GbmParams& params,
                    std::optional<DevSet> dev = std::nullopt) {
  validate(params);
  if (x.rows < 2) throw Error(ErrorCode::invalid_argument, "need at least 2 training rows");
  if (x.cols < 1) throw Error(ErrorCode::invalid_argument, "need at least 1 feature");
  if (y.size() != x.rows) throw Error(ErrorCode::shape_mismatch, "targets length does not match rows");
  check_finite(x, y);
  if (dev) {
    if (dev->features.cols != x.cols || dev->targets.size() != dev->features.rows) {
      throw Error(ErrorCode::shape_mismatch, "dev set shape does not match training data");
    }
    check_finite(dev->features, dev->targets);
  }

  GbmModel model;
  model.params = params;
  model.n_features = x.cols;
  model.base_prediction = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());

  const auto data = BinnedData::build(x, params.n_bins);
  std::vector<double> pred(x.rows, model.base_prediction), residual(x.rows);
  std::vector<double> dev_pred;
  double best_dev = std::numeric_limits<double>::infinity();
  size_t best_count = 0;
  if (dev) {
    dev_pred.assign(dev->features.rows, model.base_prediction);
    best_dev = mean_squared(dev_pred, dev->targets);
  }

  double train_mse = mean_squared(pred, y);
  std::vector<double> next(x.rows);
  for (size_t t = 0; t < params.n_trees; ++t) {
    for (size_t i = 0; i < x.rows; ++i) residual[i] = y[i] - pred[i];
    auto tree = grow_tree(data, residual, params);
    for (size_t i = 0; i < x.rows; ++i) next[i] = pred[i] + params.learning_rate * tree.predict(x.row(i));
    // Converged: the tree's gain is below rounding noise. Residuals would not
    // change, so no later tree can help either.
    const double m_next = mean_squared(next, y);
    if (m_next > train_mse) break;
    train_mse = m_next;
    pred.swap(next);
    if (dev) {
      for (size_t i = 0; i < dev->features.rows; ++i) dev_pred[i] += params.learning_rate * tree.predict(dev->features.row(i));
    }
    model.trees.push_back(std::move(tree));
    if (dev) {
      const double m = mean_squared(dev_pred, dev->targets);
      if (m < best_dev) {
        best_dev = m;
        best_count = model.trees.size();
      } else if (model.trees.size() - best_count >= params.early_stopping_rounds) {
        break;
      }
    }
  }
  if (dev) model.trees.resize(best_count);
  return model;
}

inline std::vector<double> predict(const GbmModel& model, const Matrix& x) {
  if (x.cols != model.n_features) {
    throw Error(ErrorCode::shape_mismatch, "expected " + std::to_string(model.n_features) + " features, got " + std::to_string(x.cols));
  }
  std::vector<double> out(x.rows, model.base_prediction);
  for (const auto& tree : model.trees) {
    for (size_t i = 0; i < x.rows; ++i) out[i] += model.params.learning_rate * tree.predict(x.row(i));
  }
  return out;
}

/// Training MSE after 0, 1, ..., trees.size() boosting stages.
inline std::vector<double> staged_train_mse(const GbmModel& model, const Matrix& x, std::span<const double> y) {
  if (x.cols != model.n_features) throw Error(ErrorCode::shape_mismatch, "feature count mismatch");
  if (y.size() != x.rows) throw Error(ErrorCode::shape_mismatch, "targets length does not match rows");
  std::vector<double> pred(x.rows, model.base_prediction);
  std::vector<double> out{mean_squared(pred, y)};
  for (const auto& tree : model.trees) {
    for (size_t i = 0; i < x.rows; ++i) pred[i] += model.params.learning_rate * tree.predict(x.row(i));
    out.push_back(mean_squared(pred, y));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model file: `MOSG`, version u16, params, feature count, base prediction,
// then each tree in pre-order (u8 tag 0 = leaf + f64 value,
// 1 = split + u32 feature + f64 threshold, followed by both subtrees).

inline constexpr std::array<char, 4> kGbmMagic = {'M', 'O', 'S', 'G'};
inline constexpr uint16_t kGbmVersion = 1;

namespace detail {

inline void write_subtree(const RegressionTree& t, uint32_t i, std::ostream& out) {
  const Node& n = t.nodes[i];
  if (n.is_leaf()) {
    le::put(out, uint8_t{0});
    le::put_f64(out, n.value);
    return;
  }
  le::put(out, uint8_t{1});
  le::put(out, static_cast<uint32_t>(n.feature));
  le::put_f64(out, n.threshold);
  write_subtree(t, n.left, out);
  write_subtree(t, n.right, out);
}

// Rebuilds in pre-order; node indices follow read order.
inline uint32_t read_subtree(RegressionTree& t, std::istream& in, size_t n_features, int depth) {
  if (depth > 4096) throw Error(ErrorCode::parse_error, "tree too deep");
  uint8_t tag = 0;
  if (!le::get(in, tag)) throw Error(ErrorCode::truncated_payload, "truncated tree");
  const auto id = static_cast<uint32_t>(t.nodes.size());
  t.nodes.push_back(Node{});
  if (tag == 0) {
    double v = 0.0;
    if (!le::get_f64(in, v)) throw Error(ErrorCode::truncated_payload, "truncated leaf");
    if (!std::isfinite(v)) throw Error(ErrorCode::non_finite, "non-finite leaf value");
    t.nodes[id].value = v;
    return id;
  }
  if (tag != 1) throw Error(ErrorCode::parse_error, "bad node tag " + std::to_string(tag));
  uint32_t f = 0;
  double thr = 0.0;
  if (!le::get(in, f) || !le::get_f64(in, thr)) throw Error(ErrorCode::truncated_payload, "truncated split node");
  if (f >= n_features) throw Error(ErrorCode::parse_error, "split feature out of range");
  const uint32_t l = read_subtree(t, in, n_features, depth + 1);
  const uint32_t r = read_subtree(t, in, n_features, depth + 1);
  t.nodes[id].feature = static_cast<int32_t>(f);
  t.nodes[id].threshold = thr;
  t.nodes[id].left = l;
  t.nodes[id].right = r;
  return id;
}

}  // namespace detail

inline void write_model(const GbmModel& m, std::ostream& out) {
  out.write(kGbmMagic.data(), 4);
  le::put(out, kGbmVersion);
  le::put(out, static_cast<uint32_t>(m.params.n_trees));
  le::put_f64(out, m.params.learning_rate);
  le::put(out, static_cast<uint32_t>(m.params.max_leaves));
  le::put(out, static_cast<uint32_t>(m.params.min_samples_leaf));
  le::put(out, static_cast<uint32_t>(m.params.n_bins));
  le::put(out, m.params.seed);
  le::put(out, static_cast<uint32_t>(m.params.early_stopping_rounds));
  le::put(out, static_cast<uint32_t>(m.n_features));
  le::put_f64(out, m.base_prediction);
  le::put(out, static_cast<uint32_t>(m.trees.size()));
  for (const auto& t : m.trees) detail::write_subtree(t, 0, out);
}

inline GbmModel read_model(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  if (in.gcount() != 4 || magic != kGbmMagic) throw Error(ErrorCode::bad_magic, "bad magic: not a MOSG model");
  uint16_t version = 0;
  if (!le::get(in, version)) throw Error(ErrorCode::truncated_payload, "truncated header");
  if (version != kGbmVersion) throw Error(ErrorCode::version_mismatch, "MOSG version mismatch: " + std::to_string(version));
  GbmModel m;
  uint32_t n_trees = 0, max_leaves = 0, min_leaf = 0, n_bins = 0, es = 0, n_features = 0, count = 0;
  bool ok = le::get(in, n_trees) && le::get_f64(in, m.params.learning_rate) && le::get(in, max_leaves) &&
            le::get(in, min_leaf) && le::get(in, n_bins) && le::get(in, m.params.seed) && le::get(in, es) &&
            le::get(in, n_features) && le::get_f64(in, m.base_prediction) && le::get(in, count);
  if (!ok) throw Error(ErrorCode::truncated_payload, "truncated header");
  m.params.n_trees = n_trees;
  m.params.max_leaves = max_leaves;
  m.params.min_samples_leaf = min_leaf;
  m.params.n_bins = n_bins;
  m.params.early_stopping_rounds = es;
  m.n_features = n_features;
  for (uint32_t i = 0; i < count; ++i) {
    RegressionTree t;
    detail::read_subtree(t, in, n_features, 0);
    m.trees.push_back(std::move(t));
  }
  return m;
}

inline nlohmann::json to_json(const GbmParams& p) {
  return {{"n_trees", p.n_trees},   {"learning_rate", p.learning_rate}, {"max_leaves", p.max_leaves},
          {"min_samples_leaf", p.min_samples_leaf}, {"n_bins", p.n_bins}, {"seed", p.seed},
          {"early_stopping_rounds", p.early_stopping_rounds}};
}

inline GbmParams params_from_json(const nlohmann::json& j, GbmParams p = {}) {
  p.n_trees = j.value("n_trees", p.n_trees);
  p.learning_rate = j.value("learning_rate", p.learning_rate);
  p.max_leaves = j.value("max_leaves", p.max_leaves);
  p.min_samples_leaf = j.value("min_samples_leaf", p.min_samples_leaf);
  p.n_bins = j.value("n_bins", p.n_bins);
  p.seed = j.value("seed", p.seed);
  p.early_stopping_rounds = j.value("early_stopping_rounds", p.early_stopping_rounds);
  return p;
}

}  // namespace mosforge::gbm
