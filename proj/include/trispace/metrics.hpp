#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "trispace/core.hpp"

namespace trispace::metrics {

constexpr double kMapeGuard = 1e-8;

struct Metrics {
  double mse = 0.0;
  double rmse = 0.0;
  double mape = 0.0;
  double mae = 0.0;
};

/// Regression metrics over aligned prediction/label vectors. MAPE divides by
/// max(|y|, guard) so zero labels stay finite.
inline Metrics compute_metrics(const std::vector<double>& y_true,
                               const std::vector<double>& y_pred,
                               double mape_guard = kMapeGuard) {
  if (y_true.size() != y_pred.size()) throw UsageError("compute_metrics: size mismatch");
  if (y_true.empty()) throw UsageError("compute_metrics: empty input");
  Metrics m;
  const double n = static_cast<double>(y_true.size());
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    double err = y_true[i] - y_pred[i];
    m.mse += err * err;
    m.mae += std::abs(err);
    m.mape += std::abs(err) / std::max(std::abs(y_true[i]), mape_guard);
  }
  m.mse /= n;
  m.mae /= n;
  m.mape /= n;
  m.rmse = std::sqrt(m.mse);
  return m;
}

/// Metrics on the normalized scale and in seconds, for one split.
struct MetricsPair {
  Metrics normalized;
  Metrics seconds;
};

}  // namespace trispace::metrics
