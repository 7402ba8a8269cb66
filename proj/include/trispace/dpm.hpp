#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "trispace/core.hpp"

namespace trispace::dpm {

/// Hybrid feature rows: attribute embedding plus alpha-scaled spatial
/// embedding.
inline Matrix fuse(const Matrix& attribute, const Matrix& spatial, double alpha) {
  if (alpha < 0.0) throw UsageError("fuse: alpha must be >= 0");
  if (attribute.rows != spatial.rows || attribute.cols != spatial.cols)
    throw UsageError("fuse: attribute/spatial shape mismatch");
  Matrix out(attribute.rows, attribute.cols);
  for (std::size_t i = 0; i < out.a.size(); ++i)
    out.a[i] = attribute.a[i] + alpha * spatial.a[i];
  return out;
}

struct HgbConfig {
  std::size_t rounds = 200;
  std::size_t max_depth = 6;
  double shrinkage = 0.1;
  std::size_t max_bins = 255;
  std::size_t min_samples_leaf = 5;
  std::size_t patience = 20;  // early-stopping rounds on validation MSE
};

struct TreeNode {
  bool leaf = true;
  std::size_t feature = 0;
  std::size_t bin = 0;        // split keeps bins <= bin on the left
  double split_value = 0.0;   // raw-value threshold equivalent to `bin`
  std::int32_t left = -1;
  std::int32_t right = -1;
  double value = 0.0;         // leaf prediction (mean residual)
};

struct Tree {
  std::vector<TreeNode> nodes;

  double predict(const double* x) const {
    std::size_t cur = 0;
    while (!nodes[cur].leaf)
      cur = x[nodes[cur].feature] <= nodes[cur].split_value
                ? static_cast<std::size_t>(nodes[cur].left)
                : static_cast<std::size_t>(nodes[cur].right);
    return nodes[cur].value;
  }
};

struct HgbModel {
  std::size_t n_features = 0;
  double base_score = 0.0;
  double shrinkage = 0.1;
  std::vector<std::vector<double>> bin_edges;  // per feature, strictly increasing
  std::vector<Tree> trees;
  std::vector<double> train_mse;  // per round, after adding that round's tree

  double predict_row(const double* x) const {
    double acc = base_score;
    for (const auto& t : trees) acc += shrinkage * t.predict(x);
    return acc;
  }
};

namespace detail {

/// Bin index of x: the first edge with x <= edge, clamping past-the-end
/// values into the last bin.
inline std::size_t bin_of(const std::vector<double>& edges, double x) {
  return static_cast<std::size_t>(
      std::lower_bound(edges.begin(), edges.end(), x) - edges.begin());
}

/// Quantile bin edges: midpoints between adjacent distinct training values
/// at (up to) max_bins quantile cuts.
inline std::vector<double> quantile_edges(std::vector<double> values, std::size_t max_bins) {
  std::sort(values.begin(), values.end());
  std::vector<double> edges;
  if (values.size() < 2 || max_bins < 2) return edges;
  for (std::size_t q = 1; q < max_bins; ++q) {
    std::size_t pos = q * values.size() / max_bins;
    if (pos == 0 || pos >= values.size()) continue;
    double lo = values[pos - 1], hi = values[pos];
    if (hi > lo) {
      double edge = lo + (hi - lo) / 2.0;
      if (edges.empty() || edge > edges.back()) edges.push_back(edge);
    }
  }
  return edges;
}

struct NodeTask {
  std::size_t node;
  std::size_t depth;
  std::size_t begin;  // range in the row-index arena
  std::size_t end;
};

}  // namespace detail

/// Least-squares histogram gradient boosting. Trees are grown greedily to
/// max_depth on quantile-binned features; every round fits the current
/// residuals, so training MSE never increases. With validation rows the
/// ensemble is cut back to the best validation round after patience runs
/// out.
inline HgbModel fit_hgb(const Matrix& x, const std::vector<double>& y, const Matrix& x_val,
                        const std::vector<double>& y_val, const HgbConfig& cfg = {}) {
  if (x.rows == 0) throw DataError("fit_hgb: no training rows");
  if (x.rows != y.size()) throw UsageError("fit_hgb: feature/label row mismatch");
  if (x_val.rows != y_val.size()) throw UsageError("fit_hgb: validation row mismatch");
  if (x_val.rows > 0 && x_val.cols != x.cols)
    throw UsageError("fit_hgb: validation feature width mismatch");
  if (!(cfg.shrinkage > 0.0 && cfg.shrinkage <= 1.0))
    throw UsageError("fit_hgb: shrinkage must be in (0,1]");
  if (cfg.max_bins < 2 || cfg.max_bins > 255)
    throw UsageError("fit_hgb: max_bins must be in [2,255]");
  if (cfg.min_samples_leaf < 1) throw UsageError("fit_hgb: min_samples_leaf must be >= 1");
  if (!all_finite(x.a) || !all_finite(y)) throw DataError("fit_hgb: non-finite training data");

  const std::size_t n = x.rows;
  const std::size_t f = x.cols;

  HgbModel model;
  model.n_features = f;
  model.shrinkage = cfg.shrinkage;
  model.base_score = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  model.bin_edges.resize(f);

  std::vector<double> column(n);
  for (std::size_t c = 0; c < f; ++c) {
    for (std::size_t i = 0; i < n; ++i) column[i] = x.at(i, c);
    model.bin_edges[c] = detail::quantile_edges(column, cfg.max_bins);
  }

  // per-row bin indices, feature-major
  std::vector<std::uint16_t> bins(n * f);
  std::vector<std::size_t> n_bins(f);
  for (std::size_t c = 0; c < f; ++c) {
    n_bins[c] = model.bin_edges[c].size() + 1;
    for (std::size_t i = 0; i < n; ++i)
      bins[c * n + i] = static_cast<std::uint16_t>(detail::bin_of(model.bin_edges[c], x.at(i, c)));
  }

  std::vector<double> residual(n);
  for (std::size_t i = 0; i < n; ++i) residual[i] = y[i] - model.base_score;
  std::vector<double> val_pred(x_val.rows, model.base_score);

  double best_val = std::numeric_limits<double>::infinity();
  std::size_t best_rounds = 0;
  std::size_t since_best = 0;

  std::vector<std::size_t> arena(n);
  std::iota(arena.begin(), arena.end(), 0);
  std::vector<std::size_t> scratch(n);

  const std::size_t max_total_bins = *std::max_element(n_bins.begin(), n_bins.end());
  std::vector<double> hist_sum(max_total_bins);
  std::vector<std::size_t> hist_cnt(max_total_bins);

  for (std::size_t round = 0; round < cfg.rounds; ++round) {
    Tree tree;
    tree.nodes.push_back({});
    std::vector<detail::NodeTask> stack{{0, 0, 0, n}};
    std::iota(arena.begin(), arena.end(), 0);

    while (!stack.empty()) {
      auto task = stack.back();
      stack.pop_back();
      const std::size_t count = task.end - task.begin;

      double sum = 0.0;
      for (std::size_t k = task.begin; k < task.end; ++k) sum += residual[arena[k]];
      tree.nodes[task.node].value = sum / static_cast<double>(count);

      if (task.depth >= cfg.max_depth || count < 2 * cfg.min_samples_leaf) continue;

      double parent_score = sum * sum / static_cast<double>(count);
      double best_gain = 1e-12;
      std::size_t split_feature = f;
      std::size_t split_bin = 0;

      for (std::size_t c = 0; c < f; ++c) {
        if (n_bins[c] < 2) continue;
        std::fill(hist_sum.begin(), hist_sum.begin() + n_bins[c], 0.0);
        std::fill(hist_cnt.begin(), hist_cnt.begin() + n_bins[c], 0);
        const std::uint16_t* row_bins = bins.data() + c * n;
        for (std::size_t k = task.begin; k < task.end; ++k) {
          std::size_t r = arena[k];
          hist_sum[row_bins[r]] += residual[r];
          ++hist_cnt[row_bins[r]];
        }
        double left_sum = 0.0;
        std::size_t left_cnt = 0;
        for (std::size_t b = 0; b + 1 < n_bins[c]; ++b) {
          left_sum += hist_sum[b];
          left_cnt += hist_cnt[b];
          std::size_t right_cnt = count - left_cnt;
          if (left_cnt < cfg.min_samples_leaf || right_cnt < cfg.min_samples_leaf) continue;
          double right_sum = sum - left_sum;
          double gain = left_sum * left_sum / static_cast<double>(left_cnt) +
                        right_sum * right_sum / static_cast<double>(right_cnt) - parent_score;
          if (gain > best_gain) {
            best_gain = gain;
            split_feature = c;
            split_bin = b;
          }
        }
      }

      if (split_feature == f) continue;

      // stable partition by bin keeps row order deterministic
      const std::uint16_t* row_bins = bins.data() + split_feature * n;
      std::size_t w_left = task.begin;
      std::size_t w_right = 0;
      for (std::size_t k = task.begin; k < task.end; ++k) {
        std::size_t r = arena[k];
        if (row_bins[r] <= split_bin)
          arena[w_left++] = r;
        else
          scratch[w_right++] = r;
      }
      std::copy(scratch.begin(), scratch.begin() + w_right, arena.begin() + w_left);

      const std::size_t left_idx = tree.nodes.size();
      const std::size_t right_idx = left_idx + 1;
      {
        TreeNode& node = tree.nodes[task.node];
        node.leaf = false;
        node.feature = split_feature;
        node.bin = split_bin;
        node.split_value = model.bin_edges[split_feature][split_bin];
        node.left = static_cast<std::int32_t>(left_idx);
        node.right = static_cast<std::int32_t>(right_idx);
      }
      tree.nodes.push_back({});
      tree.nodes.push_back({});
      std::size_t mid = w_left;
      stack.push_back({right_idx, task.depth + 1, mid, task.end});
      stack.push_back({left_idx, task.depth + 1, task.begin, mid});
    }

    // apply the round: residuals via bins (training) and raw values (val)
    std::vector<double> tree_pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t cur = 0;
      while (!tree.nodes[cur].leaf) {
        const TreeNode& nd = tree.nodes[cur];
        cur = bins[nd.feature * n + i] <= nd.bin ? static_cast<std::size_t>(nd.left)
                                                 : static_cast<std::size_t>(nd.right);
      }
      tree_pred[i] = tree.nodes[cur].value;
    }
    for (std::size_t i = 0; i < n; ++i) residual[i] -= cfg.shrinkage * tree_pred[i];

    double mse = 0.0;
    for (double r : residual) mse += r * r;
    mse /= static_cast<double>(n);
    model.train_mse.push_back(mse);
    model.trees.push_back(std::move(tree));

    if (x_val.rows > 0) {
      for (std::size_t i = 0; i < x_val.rows; ++i)
        val_pred[i] += cfg.shrinkage * model.trees.back().predict(x_val.row(i));
      double val_mse = 0.0;
      for (std::size_t i = 0; i < x_val.rows; ++i) {
        double d = y_val[i] - val_pred[i];
        val_mse += d * d;
      }
      val_mse /= static_cast<double>(x_val.rows);
      if (val_mse < best_val) {
        best_val = val_mse;
        best_rounds = model.trees.size();
        since_best = 0;
      } else if (++since_best >= cfg.patience) {
        break;
      }
    }
  }

  if (x_val.rows > 0 && best_rounds < model.trees.size()) {
    model.trees.resize(best_rounds);
    model.train_mse.resize(best_rounds);
  }
  return model;
}

inline std::vector<double> predict(const HgbModel& model, const Matrix& x) {
  if (x.cols != model.n_features) throw UsageError("predict: feature width mismatch");
  std::vector<double> out(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) out[i] = model.predict_row(x.row(i));
  return out;
}

}  // namespace trispace::dpm
