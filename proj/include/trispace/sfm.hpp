#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "trispace/core.hpp"

namespace trispace::sfm {

constexpr std::size_t kDefaultNeighbors = 20;
constexpr std::size_t kDefaultDiffusionIterations = 10;

/// How selected kNN edges are weighted.
enum class EdgeWeight { kDistance, kGaussian };

inline const char* to_string(EdgeWeight w) {
  return w == EdgeWeight::kDistance ? "distance" : "gaussian";
}

inline EdgeWeight edge_weight_from_string(const std::string& s) {
  if (s == "distance") return EdgeWeight::kDistance;
  if (s == "gaussian") return EdgeWeight::kGaussian;
  throw UsageError("unknown edge weight '" + s + "' (use distance|gaussian)");
}

/// Sparse symmetric adjacency; rows[i] holds (neighbor, weight) sorted by
/// neighbor index.
struct RelationGraph {
  std::size_t n = 0;
  std::vector<std::vector<std::pair<std::size_t, double>>> rows;

  double weight(std::size_t i, std::size_t j) const {
    for (const auto& [dst, w] : rows[i])
      if (dst == j) return w;
    return 0.0;
  }
  double degree(std::size_t i) const {
    double d = 0.0;
    for (const auto& [dst, w] : rows[i]) d += w;
    return d;
  }
  std::size_t edge_count() const {
    std::size_t c = 0;
    for (const auto& r : rows) c += r.size();
    return c;
  }
};

/// Pairwise Euclidean distances between rows of e.
inline Matrix distance_matrix(const Matrix& e) {
  Matrix d(e.rows, e.rows, 0.0);
  for (std::size_t i = 0; i < e.rows; ++i) {
    const double* a = e.row(i);
    for (std::size_t j = i + 1; j < e.rows; ++j) {
      const double* b = e.row(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < e.cols; ++k) {
        double diff = a[k] - b[k];
        acc += diff * diff;
      }
      double dist = std::sqrt(acc);
      d.at(i, j) = dist;
      d.at(j, i) = dist;
    }
  }
  return d;
}

/// Rows of a sequence tensor flattened to steps*channels vectors.
inline Matrix flatten(const SeqTensor& e) {
  Matrix m(e.n, e.flat_size());
  std::copy(e.a.begin(), e.a.end(), m.a.begin());
  return m;
}

/// Symmetrized k-nearest-neighbor graph. Each row keeps its k smallest
/// off-diagonal distances (ties resolved toward the smaller index);
/// symmetrization takes the elementwise max. Rows whose selected edges all
/// carry zero weight receive a unit self-loop so every degree is positive.
inline RelationGraph knn_graph(const Matrix& dist, std::size_t k,
                               EdgeWeight mode = EdgeWeight::kDistance) {
  const std::size_t n = dist.rows;
  if (dist.rows != dist.cols) throw UsageError("knn_graph: distance matrix must be square");
  if (k < 1) throw UsageError("knn_graph: k must be >= 1");
  if (k >= n) throw UsageError("knn_graph: k must be < number of rows");

  std::vector<std::vector<std::size_t>> selected(n);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) {
    order.resize(n - 1);
    std::size_t w = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) order[w++] = j;
    std::partial_sort(order.begin(), order.begin() + k, order.end(),
                      [&](std::size_t a, std::size_t b) {
                        double da = dist.at(i, a), db = dist.at(i, b);
                        if (da != db) return da < db;
                        return a < b;
                      });
    selected[i].assign(order.begin(), order.begin() + k);
  }

  double sigma = 1.0;
  if (mode == EdgeWeight::kGaussian) {
    std::vector<double> picked;
    picked.reserve(n * k);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j : selected[i]) picked.push_back(dist.at(i, j));
    std::nth_element(picked.begin(), picked.begin() + picked.size() / 2, picked.end());
    sigma = picked[picked.size() / 2];
    if (sigma <= 0.0) sigma = 1.0;
  }

  // dense accumulation keeps symmetrization simple; n is batch-sized
  Matrix w(n, n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j : selected[i]) {
      double d = dist.at(i, j);
      double weight = mode == EdgeWeight::kDistance ? d : std::exp(-(d * d) / (sigma * sigma));
      w.at(i, j) = std::max(w.at(i, j), weight);
      w.at(j, i) = std::max(w.at(j, i), weight);
    }

  RelationGraph g;
  g.n = n;
  g.rows.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double degree = 0.0;
    for (std::size_t j = 0; j < n; ++j) degree += w.at(i, j);
    if (degree <= 1e-12) {
      g.rows[i].emplace_back(i, 1.0);
      continue;
    }
    for (std::size_t j = 0; j < n; ++j)
      if (w.at(i, j) != 0.0) g.rows[i].emplace_back(j, w.at(i, j));
  }
  return g;
}

/// Degree-symmetric normalization: w'_ij = w_ij / sqrt(d_i d_j).
inline RelationGraph normalize_adjacency(const RelationGraph& g) {
  std::vector<double> degree(g.n, 0.0);
  for (std::size_t i = 0; i < g.n; ++i) {
    degree[i] = g.degree(i);
    if (degree[i] <= 0.0)
      throw ComputeError("normalize_adjacency: zero-degree row " + std::to_string(i));
  }
  RelationGraph out;
  out.n = g.n;
  out.rows.resize(g.n);
  for (std::size_t i = 0; i < g.n; ++i) {
    out.rows[i].reserve(g.rows[i].size());
    for (const auto& [j, w] : g.rows[i])
      out.rows[i].emplace_back(j, w / std::sqrt(degree[i] * degree[j]));
  }
  return out;
}

/// Iterated feature diffusion: l sparse multiplies of the normalized
/// adjacency against the attribute rows.
inline Matrix diffuse(const RelationGraph& norm, const Matrix& attr, std::size_t iterations) {
  if (norm.n != attr.rows) throw UsageError("diffuse: graph/attribute row mismatch");
  if (iterations < 1) throw UsageError("diffuse: iterations must be >= 1");
  Matrix cur = attr;
  Matrix next(attr.rows, attr.cols);
  for (std::size_t it = 0; it < iterations; ++it) {
    std::fill(next.a.begin(), next.a.end(), 0.0);
    for (std::size_t i = 0; i < norm.n; ++i) {
      double* out = next.row(i);
      for (const auto& [j, w] : norm.rows[i]) {
        const double* src = cur.row(j);
        for (std::size_t c = 0; c < attr.cols; ++c) out[c] += w * src[c];
      }
    }
    std::swap(cur, next);
  }
  return cur;
}

struct SpatialResult {
  Matrix embedding;
  RelationGraph graph;       // symmetrized, pre-normalization
  RelationGraph normalized;  // degree-normalized
};

/// Full spatial stage: kNN graph over flattened temporal embeddings, then
/// diffusion of the attribute embedding.
inline SpatialResult spatial_embedding(const SeqTensor& temporal, const Matrix& attr,
                                       std::size_t k, std::size_t iterations,
                                       EdgeWeight mode = EdgeWeight::kDistance) {
  SpatialResult r;
  r.graph = knn_graph(distance_matrix(flatten(temporal)), k, mode);
  r.normalized = normalize_adjacency(r.graph);
  r.embedding = diffuse(r.normalized, attr, iterations);
  return r;
}

}  // namespace trispace::sfm
