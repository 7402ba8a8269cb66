#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "trispace/core.hpp"
#include "trispace/sfm.hpp"
#include "trispace/tlm.hpp"
#include "trispace/trajio.hpp"

namespace trispace::learn {

/// Which structure loss the trainer minimizes. kNormWeighted scales each
/// embedding's squared norm by its summed spatial distance to the batch;
/// kLaplacian penalizes embedding differences across graph edges.
enum class StructureLoss { kNormWeighted, kLaplacian };

inline const char* to_string(StructureLoss v) {
  return v == StructureLoss::kNormWeighted ? "norm_weighted" : "laplacian";
}

inline StructureLoss structure_loss_from_string(const std::string& s) {
  if (s == "norm_weighted") return StructureLoss::kNormWeighted;
  if (s == "laplacian") return StructureLoss::kLaplacian;
  throw UsageError("unknown structure loss '" + s + "' (use norm_weighted|laplacian)");
}

/// Pairing permutation used by the embedding loss; pairing[i] != i for n > 1.
inline std::vector<std::size_t> shift_pairing(std::size_t n) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = (i + 1) % n;
  return p;
}

inline std::vector<std::size_t> shuffled_pairing(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> p(n);
  for (std::size_t k = 0; k < n; ++k) p[order[k]] = order[(k + 1) % n];
  return p;
}

struct LossValueGrad {
  double value = 0.0;
  SeqTensor grad;  // d loss / d embeddings
};

namespace detail {

inline double cosine(const double* a, const double* b, std::size_t d, double& norm_a,
                     double& norm_b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    dot += a[k] * b[k];
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  norm_a = std::sqrt(na);
  norm_b = std::sqrt(nb);
  if (norm_a == 0.0 || norm_b == 0.0) return 0.0;
  return dot / (norm_a * norm_b);
}

}  // namespace detail

/// Cosine consistency between each embedding and its input: penalizes the
/// squared difference between a trajectory's cosine score and its pairing
/// partner's. Zero-norm vectors contribute cosine 0 with zero gradient.
inline LossValueGrad loss_embedding(const SeqTensor& emb, const SeqTensor& input,
                                    const std::vector<std::size_t>& pairing) {
  if (emb.n != input.n || emb.flat_size() != input.flat_size())
    throw UsageError("loss_embedding: embedding/input shape mismatch");
  if (pairing.size() != emb.n) throw UsageError("loss_embedding: pairing size mismatch");
  const std::size_t n = emb.n;
  const std::size_t d = emb.flat_size();

  LossValueGrad out;
  out.grad = SeqTensor(emb.n, emb.steps, emb.channels);
  if (n < 2) return out;

  std::vector<double> cos(n), norm_e(n), norm_x(n);
  for (std::size_t i = 0; i < n; ++i)
    cos[i] = detail::cosine(emb.flat(i), input.flat(i), d, norm_e[i], norm_x[i]);

  std::vector<std::size_t> inverse(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (pairing[i] >= n || pairing[i] == i)
      throw UsageError("loss_embedding: pairing must map every index to a different index");
    inverse[pairing[i]] = i;
  }

  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double diff = cos[i] - cos[pairing[i]];
    acc += diff * diff;
  }
  out.value = acc / static_cast<double>(n);

  for (std::size_t i = 0; i < n; ++i) {
    double dcos = 2.0 * ((cos[i] - cos[pairing[i]]) - (cos[inverse[i]] - cos[i])) /
                  static_cast<double>(n);
    if (dcos == 0.0 || norm_e[i] == 0.0 || norm_x[i] == 0.0) continue;
    const double* e = emb.flat(i);
    const double* x = input.flat(i);
    double* g = out.grad.flat(i);
    double inv_ex = 1.0 / (norm_e[i] * norm_x[i]);
    double inv_ee = cos[i] / (norm_e[i] * norm_e[i]);
    for (std::size_t k = 0; k < d; ++k) g[k] = dcos * (x[k] * inv_ex - e[k] * inv_ee);
  }
  return out;
}

/// Summed spatial distances used as per-trajectory weights.
inline std::vector<double> spatial_weights(const Matrix& spatial) {
  std::vector<double> w(spatial.rows, 0.0);
  for (std::size_t i = 0; i < spatial.rows; ++i)
    for (std::size_t j = 0; j < spatial.rows; ++j) {
      if (i == j) continue;
      double acc = 0.0;
      for (std::size_t k = 0; k < spatial.cols; ++k) {
        double diff = spatial.at(i, k) - spatial.at(j, k);
        acc += diff * diff;
      }
      w[i] += std::sqrt(acc);
    }
  return w;
}

/// Structure loss. The spatial embedding is treated as a constant: gradients
/// flow only into the temporal embeddings.
inline LossValueGrad loss_structure(const SeqTensor& emb, const Matrix& spatial,
                                    StructureLoss variant = StructureLoss::kNormWeighted,
                                    const sfm::RelationGraph* normalized = nullptr) {
  if (emb.n != spatial.rows) throw UsageError("loss_structure: row count mismatch");
  const std::size_t n = emb.n;
  const std::size_t d = emb.flat_size();
  LossValueGrad out;
  out.grad = SeqTensor(emb.n, emb.steps, emb.channels);
  if (n == 0) return out;

  if (variant == StructureLoss::kNormWeighted) {
    std::vector<double> w = spatial_weights(spatial);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double* e = emb.flat(i);
      double sq = 0.0;
      for (std::size_t k = 0; k < d; ++k) sq += e[k] * e[k];
      acc += w[i] * sq;
      double* g = out.grad.flat(i);
      double scale = 2.0 * w[i] / static_cast<double>(n);
      for (std::size_t k = 0; k < d; ++k) g[k] = scale * e[k];
    }
    out.value = acc / static_cast<double>(n);
    return out;
  }

  if (!normalized) throw UsageError("loss_structure: laplacian variant needs the graph");
  if (normalized->n != n) throw UsageError("loss_structure: graph size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* ei = emb.flat(i);
    double* gi = out.grad.flat(i);
    for (const auto& [j, wij] : normalized->rows[i]) {
      if (j == i) continue;
      const double* ej = emb.flat(j);
      double sq = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        double diff = ei[k] - ej[k];
        sq += diff * diff;
      }
      acc += wij * sq;
      double scale = 2.0 * wij / static_cast<double>(n);
      for (std::size_t k = 0; k < d; ++k) gi[k] += scale * (ei[k] - ej[k]);
    }
  }
  // value sums both directions of every edge; each row's gradient also picks
  // up the reverse-edge term, which equals the forward one for a symmetric
  // graph
  out.value = acc / static_cast<double>(n);
  for (double& g : out.grad.a) g *= 2.0;
  return out;
}

struct TotalLoss {
  double value = 0.0;
  double embedding = 0.0;
  double structure = 0.0;
  SeqTensor grad;
};

inline TotalLoss loss_total(const LossValueGrad& le, const LossValueGrad& ls, double eta) {
  if (eta < 0.0) throw UsageError("loss_total: eta must be >= 0");
  TotalLoss t;
  t.embedding = le.value;
  t.structure = ls.value;
  t.value = le.value + eta * ls.value;
  t.grad = le.grad;
  for (std::size_t i = 0; i < t.grad.a.size(); ++i) t.grad.a[i] += eta * ls.grad.a[i];
  return t;
}

// ---------------------------------------------------------------------------
// backward

using Gradients = tlm::TlmParams;

inline tlm::TlmParams zero_like(const tlm::TlmParams& params) {
  tlm::TlmParams z = params;
  tlm::for_each_tensor(z, [](const std::string&, Matrix& m) {
    std::fill(m.a.begin(), m.a.end(), 0.0);
  });
  return z;
}

namespace detail {

inline void linear_backward(const Matrix& input, const Matrix& w, const Matrix& grad_out,
                            Matrix& grad_w, Matrix& grad_b, Matrix* grad_input,
                            bool accumulate_input) {
  for (std::size_t t = 0; t < input.rows; ++t) {
    const double* x = input.row(t);
    const double* go = grad_out.row(t);
    for (std::size_t k = 0; k < w.rows; ++k) {
      double xv = x[k];
      double* gw = grad_w.row(k);
      for (std::size_t j = 0; j < w.cols; ++j) gw[j] += xv * go[j];
    }
    for (std::size_t j = 0; j < w.cols; ++j) grad_b.a[j] += go[j];
    if (grad_input) {
      double* gi = grad_input->row(t);
      for (std::size_t k = 0; k < w.rows; ++k) {
        const double* wk = w.row(k);
        double acc = 0.0;
        for (std::size_t j = 0; j < w.cols; ++j) acc += go[j] * wk[j];
        if (accumulate_input)
          gi[k] += acc;
        else
          gi[k] = acc;
      }
    }
  }
}

/// Backward of the selective scan for one trajectory. Accumulates parameter
/// gradients and returns the gradient with respect to the scan input.
inline Matrix scan_backward(const tlm::BlockCache& cache, const tlm::SsmParams& p,
                            const std::vector<std::uint8_t>& mask, tlm::ZohVariant variant,
                            const Matrix& grad_out, tlm::SsmParams& grad) {
  const std::size_t m = cache.scan_in.rows;
  const std::size_t h = cache.scan_in.cols;
  const std::size_t n = p.a_diag.size();

  Matrix grad_in(m, h, 0.0);
  Matrix d_delta(m, h, 0.0);
  Matrix d_bseq(m, n, 0.0);
  Matrix d_cseq(m, n, 0.0);
  std::vector<double> lam(h * n, 0.0);

  for (std::size_t ti = m; ti-- > 0;) {
    if (!mask[ti]) {
      for (std::size_t ch = 0; ch < h; ++ch) grad_in.at(ti, ch) += grad_out.at(ti, ch);
      continue;
    }
    const double* bt = cache.b_seq.row(ti);
    for (std::size_t ch = 0; ch < h; ++ch) {
      double go = grad_out.at(ti, ch);
      double xv = cache.scan_in.at(ti, ch);
      double dlt = cache.delta.at(ti, ch);
      double* l = lam.data() + ch * n;
      const std::size_t base = (ti * h + ch) * n;
      double gx = 0.0;
      double gd = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        double state = cache.state[base + j];
        double ab = cache.a_bar[base + j];
        double f = cache.in_factor[base + j];
        l[j] += go * cache.c_seq.at(ti, j);
        d_cseq.at(ti, j) += go * state;
        double prev = 0.0;
        if (ti > 0) prev = cache.state[base + j - h * n];
        double df_ddelta;
        if (variant == tlm::ZohVariant::kStandard) {
          df_ddelta = ab;
        } else {
          df_ddelta = f / dlt + dlt * ab;
        }
        gx += l[j] * f * bt[j];
        d_bseq.at(ti, j) += l[j] * f * xv;
        gd += l[j] * (p.a_diag[j] * ab * prev + xv * bt[j] * df_ddelta);
        l[j] *= ab;
      }
      grad_in.at(ti, ch) += gx;
      d_delta.at(ti, ch) += gd;
    }
  }

  Matrix d_delta_raw(m, h);
  for (std::size_t i = 0; i < d_delta_raw.a.size(); ++i)
    d_delta_raw.a[i] = d_delta.a[i] * tlm::sigmoid(cache.delta_raw.a[i]);

  linear_backward(cache.scan_in, p.w_delta, d_delta_raw, grad.w_delta, grad.b_delta, &grad_in,
                  true);
  linear_backward(cache.scan_in, p.w_b, d_bseq, grad.w_b, grad.b_b, &grad_in, true);
  linear_backward(cache.scan_in, p.w_c, d_cseq, grad.w_c, grad.b_c, &grad_in, true);
  return grad_in;
}

inline Matrix block_backward(const tlm::BlockCache& cache, const tlm::BlockParams& p,
                             const std::vector<std::uint8_t>& mask, tlm::ZohVariant variant,
                             const Matrix& grad_out, tlm::BlockParams& grad) {
  const std::size_t m = cache.input.rows;
  const std::size_t h = p.w_in.cols;

  // gated = scan_out * silu(gate_raw); recomputed instead of cached
  Matrix gated(m, h);
  for (std::size_t i = 0; i < gated.a.size(); ++i)
    gated.a[i] = cache.scan_out.a[i] * tlm::silu(cache.gate_raw.a[i]);

  Matrix grad_gated(m, h);
  linear_backward(gated, p.w_out, grad_out, grad.w_out, grad.b_out, &grad_gated, false);

  Matrix grad_scan_out(m, h);
  Matrix grad_gate_raw(m, h);
  for (std::size_t i = 0; i < grad_scan_out.a.size(); ++i) {
    grad_scan_out.a[i] = grad_gated.a[i] * tlm::silu(cache.gate_raw.a[i]);
    grad_gate_raw.a[i] =
        grad_gated.a[i] * cache.scan_out.a[i] * tlm::silu_grad(cache.gate_raw.a[i]);
  }

  Matrix grad_scan_in = scan_backward(cache, p.ssm, mask, variant, grad_scan_out, grad.ssm);

  Matrix grad_conv_out(m, h);
  for (std::size_t i = 0; i < grad_conv_out.a.size(); ++i)
    grad_conv_out.a[i] = grad_scan_in.a[i] * tlm::silu_grad(cache.conv_out.a[i]);

  Matrix grad_lin_in(m, h, 0.0);
  const std::size_t width = p.conv_w.cols;
  for (std::size_t t = 0; t < m; ++t)
    for (std::size_t ch = 0; ch < h; ++ch) {
      double go = grad_conv_out.at(t, ch);
      grad.conv_b.a[ch] += go;
      for (std::size_t k = 0; k < width && k <= t; ++k) {
        grad.conv_w.at(ch, k) += go * cache.lin_in.at(t - k, ch);
        grad_lin_in.at(t - k, ch) += go * p.conv_w.at(ch, k);
      }
    }

  Matrix grad_input = grad_out;  // residual path
  linear_backward(cache.input, p.w_in, grad_lin_in, grad.w_in, grad.b_in, &grad_input, true);
  linear_backward(cache.input, p.w_gate, grad_gate_raw, grad.w_gate, grad.b_gate, &grad_input,
                  true);
  return grad_input;
}

}  // namespace detail

/// Handle to a recorded forward pass over a batch. backward() replays each
/// trajectory with activation caches, so the handle itself stays small.
struct ForwardGraph {
  const tlm::TlmParams* params = nullptr;
  const trajio::TemporalTensor* tensor = nullptr;
  SeqTensor embeddings;
  bool consumed = false;
};

inline ForwardGraph record_forward(const tlm::TlmParams& params,
                                   const trajio::TemporalTensor& tensor) {
  ForwardGraph g;
  g.params = &params;
  g.tensor = &tensor;
  g.embeddings = tlm::encode(params, tensor);
  return g;
}

/// Gradients of a scalar loss with respect to every trainable parameter,
/// given d loss / d embeddings. Consumes the recorded graph.
inline Gradients backward(ForwardGraph& graph, const SeqTensor& grad_embeddings) {
  if (!graph.params || !graph.tensor)
    throw UsageError("backward: no recorded forward pass");
  if (graph.consumed) throw UsageError("backward: forward graph already consumed");
  if (grad_embeddings.n != graph.embeddings.n ||
      grad_embeddings.flat_size() != graph.embeddings.flat_size())
    throw UsageError("backward: gradient shape mismatch");
  graph.consumed = true;

  const tlm::TlmParams& params = *graph.params;
  const trajio::TemporalTensor& tensor = *graph.tensor;
  Gradients grads = zero_like(params);

  const std::size_t steps = tensor.values.steps;
  const std::size_t f = tensor.values.channels;
  tlm::TrajectoryCache cache;
  for (std::size_t i = 0; i < tensor.values.n; ++i) {
    Matrix x = tlm::detail::slice_sequence(tensor, i);
    auto mask = tlm::detail::slice_mask(tensor, i);
    tlm::forward_one(params, x, mask, &cache);

    Matrix grad_e(steps, f);
    std::copy(grad_embeddings.flat(i), grad_embeddings.flat(i) + steps * f, grad_e.a.begin());

    Matrix grad_pre_head(steps, f);
    detail::linear_backward(cache.pre_head, params.w_head, grad_e, grads.w_head, grads.b_head,
                            &grad_pre_head, false);
    Matrix cur = std::move(grad_pre_head);
    for (std::size_t b = params.blocks.size(); b-- > 0;)
      cur = detail::block_backward(cache.blocks[b], params.blocks[b], mask,
                                   params.config.zoh_variant, cur, grads.blocks[b]);
  }
  return grads;
}

// ---------------------------------------------------------------------------
// optimizer

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  tlm::TlmParams m;
  tlm::TlmParams v;
  std::size_t step = 0;
};

inline AdamState make_adam_state(const tlm::TlmParams& params) {
  return AdamState{zero_like(params), zero_like(params), 0};
}

namespace detail {

inline std::vector<Matrix*> collect_tensors(tlm::TlmParams& params) {
  std::vector<Matrix*> out;
  tlm::for_each_tensor(params, [&](const std::string&, Matrix& m) { out.push_back(&m); });
  return out;
}

inline std::vector<const Matrix*> collect_tensors(const tlm::TlmParams& params) {
  std::vector<const Matrix*> out;
  tlm::for_each_tensor(params, [&](const std::string&, const Matrix& m) { out.push_back(&m); });
  return out;
}

}  // namespace detail

/// One bias-corrected Adam update. Rejects non-finite gradients without
/// advancing the step counter.
inline void adam_step(tlm::TlmParams& params, const Gradients& grads, AdamState& state,
                      const AdamConfig& cfg) {
  auto pt = detail::collect_tensors(params);
  auto gt = detail::collect_tensors(grads);
  auto mt = detail::collect_tensors(state.m);
  auto vt = detail::collect_tensors(state.v);
  if (pt.size() != gt.size()) throw UsageError("adam_step: parameter/gradient mismatch");
  for (const Matrix* g : gt)
    if (!all_finite(g->a)) throw ComputeError("adam_step: non-finite gradient");

  ++state.step;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < pt.size(); ++k) {
    if (pt[k]->a.size() != gt[k]->a.size()) throw UsageError("adam_step: tensor shape mismatch");
    for (std::size_t i = 0; i < pt[k]->a.size(); ++i) {
      double g = gt[k]->a[i];
      double& m = mt[k]->a[i];
      double& v = vt[k]->a[i];
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
      double mhat = m / bc1;
      double vhat = v / bc2;
      pt[k]->a[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// training loop

struct TrainConfig {
  std::size_t epochs = 100;
  AdamConfig adam;
  double eta = 0.01;
  std::size_t patience = 10;
  std::size_t k_neighbors = sfm::kDefaultNeighbors;
  std::size_t diffusion_iterations = sfm::kDefaultDiffusionIterations;
  sfm::EdgeWeight edge_weight = sfm::EdgeWeight::kDistance;
  StructureLoss structure_loss = StructureLoss::kNormWeighted;
  bool shuffle_pairing = true;
  std::uint64_t seed = 42;
};

struct EpochLoss {
  std::size_t epoch = 0;
  double train = 0.0;
  double val = 0.0;
};

struct TrainResult {
  tlm::TlmParams params;
  std::vector<EpochLoss> history;
  std::size_t best_epoch = 0;
};

namespace detail {

struct SplitLoss {
  double total;
  SeqTensor grad;
};

inline SplitLoss split_loss(const SeqTensor& emb, const trajio::TemporalTensor& tensor,
                            const Matrix& attr, const std::vector<std::size_t>& pairing,
                            const TrainConfig& cfg) {
  auto le = loss_embedding(emb, tensor.values, pairing);
  LossValueGrad ls;
  if (emb.n >= 2) {
    std::size_t k = std::min(cfg.k_neighbors, emb.n - 1);
    auto spatial = sfm::spatial_embedding(emb, attr, k, cfg.diffusion_iterations,
                                          cfg.edge_weight);
    ls = loss_structure(emb, spatial.embedding, cfg.structure_loss,
                        &spatial.normalized);
  } else {
    ls.grad = SeqTensor(emb.n, emb.steps, emb.channels);
  }
  auto total = loss_total(le, ls, cfg.eta);
  return {total.value, std::move(total.grad)};
}

}  // namespace detail

/// Self-supervised trainer. Per epoch: encode the training split, rebuild
/// the spatial embedding, take one full-batch Adam step on the combined
/// loss, and early-stop on the validation loss. Returns the parameters of
/// the best validation epoch.
inline TrainResult train_tlm(const trajio::TemporalTensor& train_x, const Matrix& train_attr,
                             const trajio::TemporalTensor& val_x, const Matrix& val_attr,
                             const tlm::TlmConfig& model_cfg, const TrainConfig& cfg) {
  if (train_x.values.n == 0) throw DataError("train_tlm: empty training split");
  if (train_x.values.n != train_attr.rows)
    throw UsageError("train_tlm: attribute rows must match training rows");

  TrainResult result;
  result.params = tlm::init_params(model_cfg, cfg.seed);
  AdamState adam = make_adam_state(result.params);

  const bool has_val = val_x.values.n > 0;
  auto val_pairing = shift_pairing(val_x.values.n);
  double best_monitor = std::numeric_limits<double>::infinity();
  tlm::TlmParams best_params = result.params;
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto pairing_rng = make_rng(cfg.seed, "pairing-epoch-" + std::to_string(epoch));
    auto pairing = cfg.shuffle_pairing ? shuffled_pairing(train_x.values.n, pairing_rng)
                                       : shift_pairing(train_x.values.n);

    ForwardGraph graph = record_forward(result.params, train_x);
    auto train_loss = detail::split_loss(graph.embeddings, train_x, train_attr, pairing, cfg);

    double val_loss = train_loss.total;
    if (has_val) {
      SeqTensor val_emb = tlm::encode(result.params, val_x);
      val_loss = detail::split_loss(val_emb, val_x, val_attr, val_pairing, cfg).total;
    }
    if (!std::isfinite(train_loss.total) || !std::isfinite(val_loss))
      throw ComputeError("train_tlm: non-finite loss at epoch " + std::to_string(epoch));
    result.history.push_back({epoch, train_loss.total, val_loss});

    if (val_loss < best_monitor) {
      best_monitor = val_loss;
      best_params = result.params;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }

    Gradients grads = backward(graph, train_loss.grad);
    adam_step(result.params, grads, adam, cfg.adam);
  }

  result.params = std::move(best_params);
  return result;
}

}  // namespace trispace::learn
