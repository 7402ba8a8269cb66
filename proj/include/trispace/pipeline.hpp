#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "trispace/aem.hpp"
#include "trispace/core.hpp"
#include "trispace/dpm.hpp"
#include "trispace/learn.hpp"
#include "trispace/metrics.hpp"
#include "trispace/serialize.hpp"
#include "trispace/sfm.hpp"
#include "trispace/synthgen.hpp"
#include "trispace/tlm.hpp"
#include "trispace/trajio.hpp"

namespace trispace::pipeline {

using serialize::json;

// ---------------------------------------------------------------------------
// experiment configuration: one flat schema shared by the config file, the
// CLI overrides, and the run manifest

struct ExperimentConfig {
  std::uint64_t seed = 42;
  double train_frac = 0.7;
  double val_frac = 0.1;
  double test_frac = 0.2;
  std::size_t length_cap = trajio::kDefaultLengthCap;
  bool direction_wrap = false;

  std::size_t n_state = 16;
  std::size_t hidden = 32;
  std::size_t blocks = 2;
  std::size_t conv_width = 4;
  tlm::ZohVariant zoh_variant = tlm::ZohVariant::kStandard;
  double out_proj_init_scale = 0.1;

  std::size_t epochs = 100;
  double learning_rate = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double eta = 0.01;
  std::size_t train_patience = 10;
  bool shuffle_pairing = true;
  learn::StructureLoss structure_loss = learn::StructureLoss::kNormWeighted;

  std::size_t k_neighbors = sfm::kDefaultNeighbors;
  std::size_t diffusion_iterations = sfm::kDefaultDiffusionIterations;
  sfm::EdgeWeight edge_weight = sfm::EdgeWeight::kDistance;

  double alpha = 0.1;
  std::size_t hgb_rounds = 200;
  std::size_t hgb_max_depth = 6;
  double hgb_shrinkage = 0.1;
  std::size_t hgb_max_bins = 255;
  std::size_t hgb_min_samples_leaf = 5;
  std::size_t hgb_patience = 20;

  bool no_fd = false;
  bool no_ls = false;
  bool attribute_only = false;
};

inline json config_to_json(const ExperimentConfig& c) {
  return {{"seed", c.seed},
          {"train_frac", c.train_frac},
          {"val_frac", c.val_frac},
          {"test_frac", c.test_frac},
          {"length_cap", c.length_cap},
          {"direction_wrap", c.direction_wrap},
          {"n_state", c.n_state},
          {"hidden", c.hidden},
          {"blocks", c.blocks},
          {"conv_width", c.conv_width},
          {"zoh_variant", tlm::to_string(c.zoh_variant)},
          {"out_proj_init_scale", c.out_proj_init_scale},
          {"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps},
          {"eta", c.eta},
          {"train_patience", c.train_patience},
          {"shuffle_pairing", c.shuffle_pairing},
          {"structure_loss", learn::to_string(c.structure_loss)},
          {"k_neighbors", c.k_neighbors},
          {"diffusion_iterations", c.diffusion_iterations},
          {"edge_weight", sfm::to_string(c.edge_weight)},
          {"alpha", c.alpha},
          {"hgb_rounds", c.hgb_rounds},
          {"hgb_max_depth", c.hgb_max_depth},
          {"hgb_shrinkage", c.hgb_shrinkage},
          {"hgb_max_bins", c.hgb_max_bins},
          {"hgb_min_samples_leaf", c.hgb_min_samples_leaf},
          {"hgb_patience", c.hgb_patience},
          {"no_fd", c.no_fd},
          {"no_ls", c.no_ls},
          {"attribute_only", c.attribute_only}};
}

namespace detail {

/// Assigns one config field from a JSON value. Throws DataError on unknown
/// keys or wrong types so file and flag paths can map it to their own codes.
inline void set_field(ExperimentConfig& c, const std::string& key, const json& v) {
  auto u64 = [&](std::uint64_t& dst) {
    if (!v.is_number_unsigned() && !v.is_number_integer())
      throw DataError("config key '" + key + "' expects an integer");
    if (v.is_number_integer() && v.get<std::int64_t>() < 0)
      throw DataError("config key '" + key + "' must be non-negative");
    dst = v.get<std::uint64_t>();
  };
  auto sz = [&](std::size_t& dst) {
    std::uint64_t tmp;
    u64(tmp);
    dst = static_cast<std::size_t>(tmp);
  };
  auto dbl = [&](double& dst) {
    if (!v.is_number()) throw DataError("config key '" + key + "' expects a number");
    dst = v.get<double>();
  };
  auto bl = [&](bool& dst) {
    if (!v.is_boolean()) throw DataError("config key '" + key + "' expects a boolean");
    dst = v.get<bool>();
  };
  auto str = [&]() {
    if (!v.is_string()) throw DataError("config key '" + key + "' expects a string");
    return v.get<std::string>();
  };

  if (key == "seed") u64(c.seed);
  else if (key == "train_frac") dbl(c.train_frac);
  else if (key == "val_frac") dbl(c.val_frac);
  else if (key == "test_frac") dbl(c.test_frac);
  else if (key == "length_cap") sz(c.length_cap);
  else if (key == "direction_wrap") bl(c.direction_wrap);
  else if (key == "n_state") sz(c.n_state);
  else if (key == "hidden") sz(c.hidden);
  else if (key == "blocks") sz(c.blocks);
  else if (key == "conv_width") sz(c.conv_width);
  else if (key == "zoh_variant") c.zoh_variant = tlm::zoh_variant_from_string(str());
  else if (key == "out_proj_init_scale") dbl(c.out_proj_init_scale);
  else if (key == "epochs") sz(c.epochs);
  else if (key == "learning_rate") dbl(c.learning_rate);
  else if (key == "adam_beta1") dbl(c.adam_beta1);
  else if (key == "adam_beta2") dbl(c.adam_beta2);
  else if (key == "adam_eps") dbl(c.adam_eps);
  else if (key == "eta") dbl(c.eta);
  else if (key == "train_patience") sz(c.train_patience);
  else if (key == "shuffle_pairing") bl(c.shuffle_pairing);
  else if (key == "structure_loss") c.structure_loss = learn::structure_loss_from_string(str());
  else if (key == "k_neighbors") sz(c.k_neighbors);
  else if (key == "diffusion_iterations") sz(c.diffusion_iterations);
  else if (key == "edge_weight") c.edge_weight = sfm::edge_weight_from_string(str());
  else if (key == "alpha") dbl(c.alpha);
  else if (key == "hgb_rounds") sz(c.hgb_rounds);
  else if (key == "hgb_max_depth") sz(c.hgb_max_depth);
  else if (key == "hgb_shrinkage") dbl(c.hgb_shrinkage);
  else if (key == "hgb_max_bins") sz(c.hgb_max_bins);
  else if (key == "hgb_min_samples_leaf") sz(c.hgb_min_samples_leaf);
  else if (key == "hgb_patience") sz(c.hgb_patience);
  else if (key == "no_fd") bl(c.no_fd);
  else if (key == "no_ls") bl(c.no_ls);
  else if (key == "attribute_only") bl(c.attribute_only);
  else throw DataError("unknown config key '" + key + "'");
}

}  // namespace detail

/// Parses a config object; missing keys keep defaults, unknown keys fail.
inline ExperimentConfig config_from_json(const json& j) {
  if (!j.is_object()) throw DataError("config: expected a JSON object");
  ExperimentConfig c;
  for (const auto& [key, value] : j.items()) detail::set_field(c, key, value);
  return c;
}

/// Applies one `--key value` override. Value syntax follows the field type.
inline void apply_override(ExperimentConfig& c, const std::string& key, const std::string& value) {
  json current = config_to_json(c);
  if (!current.contains(key)) throw UsageError("unknown config key '" + key + "'");
  json parsed;
  const json& slot = current.at(key);
  try {
    if (slot.is_string()) {
      parsed = value;
    } else if (slot.is_boolean()) {
      if (value == "true" || value == "1") parsed = true;
      else if (value == "false" || value == "0") parsed = false;
      else throw UsageError("config key '" + key + "' expects true or false");
    } else {
      parsed = json::parse(value);
      if (!parsed.is_number()) throw UsageError("config key '" + key + "' expects a number");
    }
    detail::set_field(c, key, parsed);
  } catch (const json::exception&) {
    throw UsageError("config key '" + key + "': cannot parse value '" + value + "'");
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
}

inline void validate_config(const ExperimentConfig& c) {
  auto frac = [](double f) { return f >= 0.0 && f <= 1.0; };
  if (!frac(c.train_frac) || !frac(c.val_frac) || !frac(c.test_frac))
    throw UsageError("config: split fractions must be in [0,1]");
  if (std::abs(c.train_frac + c.val_frac + c.test_frac - 1.0) > 1e-9)
    throw UsageError("config: split fractions must sum to 1");
  if (c.train_frac <= 0.0) throw UsageError("config: train_frac must be > 0");
  if (c.length_cap < 1) throw UsageError("config: length_cap must be >= 1");
  if (c.n_state < 1 || c.hidden < 1 || c.blocks < 1 || c.conv_width < 1)
    throw UsageError("config: encoder dimensions must be >= 1");
  if (c.epochs < 1) throw UsageError("config: epochs must be >= 1");
  if (!(c.learning_rate > 0.0)) throw UsageError("config: learning_rate must be > 0");
  if (!(c.adam_beta1 >= 0.0 && c.adam_beta1 < 1.0) ||
      !(c.adam_beta2 >= 0.0 && c.adam_beta2 < 1.0))
    throw UsageError("config: adam betas must be in [0,1)");
  if (!(c.adam_eps > 0.0)) throw UsageError("config: adam_eps must be > 0");
  if (!(c.eta >= 0.0)) throw UsageError("config: eta must be >= 0");
  if (c.k_neighbors < 1) throw UsageError("config: k_neighbors must be >= 1");
  if (c.diffusion_iterations < 1) throw UsageError("config: diffusion_iterations must be >= 1");
  if (!(c.alpha >= 0.0)) throw UsageError("config: alpha must be >= 0");
  if (c.hgb_rounds < 1) throw UsageError("config: hgb_rounds must be >= 1");
  if (c.hgb_max_depth < 1) throw UsageError("config: hgb_max_depth must be >= 1");
  if (!(c.hgb_shrinkage > 0.0 && c.hgb_shrinkage <= 1.0))
    throw UsageError("config: hgb_shrinkage must be in (0,1]");
  if (c.hgb_max_bins < 2 || c.hgb_max_bins > 255)
    throw UsageError("config: hgb_max_bins must be in [2,255]");
  if (c.hgb_min_samples_leaf < 1) throw UsageError("config: hgb_min_samples_leaf must be >= 1");
  if (!(c.out_proj_init_scale >= 0.0))
    throw UsageError("config: out_proj_init_scale must be >= 0");
}

inline std::string config_hash(const ExperimentConfig& c, const std::string& extra = "") {
  std::uint64_t h = fnv1a64(config_to_json(c).dump() + extra);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// trajectory-level split: seeded shuffle then contiguous cut

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

inline SplitIndices split_indices(std::size_t n, double train_frac, double val_frac,
                                  double test_frac, std::uint64_t seed) {
  if (!(train_frac >= 0.0 && val_frac >= 0.0 && test_frac >= 0.0) ||
      std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9)
    throw UsageError("split: ratios must be non-negative and sum to 1");
  if (n < 10) throw DataError("split: need at least 10 trajectories, got " + std::to_string(n));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto rng = make_rng(seed, "split");
  std::shuffle(order.begin(), order.end(), rng);

  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * train_frac));
  const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * val_frac));
  SplitIndices s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
               order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  if (s.train.empty()) throw DataError("split: training partition is empty");
  return s;
}

inline std::vector<trajio::Trajectory> subset(const std::vector<trajio::Trajectory>& trajs,
                                              const std::vector<std::size_t>& idx) {
  std::vector<trajio::Trajectory> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(trajs[i]);
  return out;
}

// ---------------------------------------------------------------------------
// scoring unseen trajectories with a saved model

struct ScoreResult {
  std::vector<std::string> ids;
  std::vector<double> normalized;
  std::vector<double> seconds;
};

/// Applies the saved pipeline to a batch. The relation graph is built over
/// the batch itself; a single-row batch falls back to the attribute
/// embedding since it has no neighbors.
inline ScoreResult score(const serialize::ModelBundle& bundle,
                         const std::vector<trajio::Trajectory>& trajs) {
  if (trajs.empty()) throw DataError("score: no trajectories");
  Matrix attr_raw = aem::attribute_matrix(trajs, bundle.length_cap, bundle.direction_wrap);
  Matrix attr = bundle.attribute_norm.apply(attr_raw);

  Matrix features;
  if (bundle.attribute_only) {
    features = attr;
  } else if (bundle.no_fd) {
    features = dpm::fuse(attr, attr, bundle.fusion_alpha);
  } else {
    std::size_t steps = std::max<std::size_t>(
        1, std::min(bundle.length_cap, trajio::max_length(trajs)));
    auto tensor = trajio::pad_and_mask(trajs, bundle.feature_norm, steps);
    auto temporal = tlm::encode(bundle.encoder, tensor);
    Matrix spatial;
    if (trajs.size() >= 2) {
      std::size_t k = std::min(bundle.k_neighbors, trajs.size() - 1);
      spatial = sfm::spatial_embedding(temporal, attr, k, bundle.diffusion_iterations,
                                       bundle.edge_weight)
                    .embedding;
    } else {
      spatial = attr;
    }
    features = dpm::fuse(attr, spatial, bundle.fusion_alpha);
  }

  ScoreResult r;
  r.normalized = dpm::predict(bundle.hgb, features);
  r.seconds.reserve(r.normalized.size());
  for (double z : r.normalized) r.seconds.push_back(bundle.label_norm.invert(z));
  for (const auto& t : trajs) r.ids.push_back(t.id);
  return r;
}

// ---------------------------------------------------------------------------
// end-to-end experiment

struct TransferSpec {
  std::vector<std::string> train_regions;
  std::vector<std::string> test_regions;
  std::vector<trajio::Trajectory> holdout;  // empty when regions coincide
};

struct RunResult {
  std::string run_dir;
  std::vector<std::pair<std::string, metrics::MetricsPair>> metrics_rows;
  serialize::ModelBundle bundle;
  learn::TrainResult training;  // empty history when the encoder is skipped
  json manifest;
};

namespace detail {

class StageTimer {
 public:
  template <typename Fn>
  auto time(const std::string& name, Fn&& fn) {
    auto start = std::chrono::steady_clock::now();
    if constexpr (std::is_void_v<decltype(fn())>) {
      fn();
      record(name, start);
    } else {
      auto r = fn();
      record(name, start);
      return r;
    }
  }

  json to_json() const {
    json j = json::object();
    for (const auto& [k, v] : entries_) j[k] = v;
    return j;
  }

 private:
  void record(const std::string& name, std::chrono::steady_clock::time_point start) {
    entries_.emplace_back(
        name, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }
  std::vector<std::pair<std::string, double>> entries_;
};

inline std::vector<double> labels_of(const std::vector<trajio::Trajectory>& trajs) {
  std::vector<double> y;
  y.reserve(trajs.size());
  for (const auto& t : trajs) {
    if (!t.label) throw DataError("trajectory " + t.id + " has no label");
    y.push_back(*t.label);
  }
  return y;
}

inline const char* variant_name(const ExperimentConfig& c) {
  if (c.attribute_only) return "attribute_only";
  if (c.no_fd && c.no_ls) return "no_fd_no_ls";
  if (c.no_fd) return "no_fd";
  if (c.no_ls) return "no_ls";
  return "full";
}

inline json metrics_to_json(const metrics::Metrics& m) {
  return {{"mse", m.mse}, {"rmse", m.rmse}, {"mape", m.mape}, {"mae", m.mae}};
}

}  // namespace detail

/// Runs the whole pipeline into `run_dir`: split, normalize, train the
/// encoder (unless disabled), build per-split relation graphs, fuse, fit the
/// boosted trees, and write metrics plus artifacts. `transfer`, when given,
/// adds an extra held-out evaluation set.
inline RunResult run_experiment_at(const std::vector<trajio::Trajectory>& trajs,
                                   const ExperimentConfig& cfg, const std::string& run_dir,
                                   const TransferSpec* transfer = nullptr) {
  validate_config(cfg);
  detail::StageTimer timer;

  auto splits =
      split_indices(trajs.size(), cfg.train_frac, cfg.val_frac, cfg.test_frac, cfg.seed);
  auto train = subset(trajs, splits.train);
  auto val = subset(trajs, splits.val);
  auto test = subset(trajs, splits.test);

  const std::size_t steps =
      std::max<std::size_t>(1, std::min(cfg.length_cap, trajio::max_length(trajs)));

  auto feat_norm = trajio::fit_normalizer(train);
  auto label_norm = trajio::fit_label_normalizer(train);

  tlm::TlmConfig model_cfg;
  model_cfg.n_state = cfg.n_state;
  model_cfg.hidden = cfg.hidden;
  model_cfg.blocks = cfg.blocks;
  model_cfg.conv_width = cfg.conv_width;
  model_cfg.zoh_variant = cfg.zoh_variant;
  model_cfg.out_proj_init_scale = cfg.out_proj_init_scale;

  struct SplitData {
    std::vector<trajio::Trajectory>* trajs;
    Matrix attr;  // normalized
    trajio::TemporalTensor tensor;
    Matrix features;
    std::vector<double> y_norm;
    std::vector<double> y_seconds;
  };
  SplitData sd_train{&train, {}, {}, {}, {}, {}};
  SplitData sd_val{&val, {}, {}, {}, {}, {}};
  SplitData sd_test{&test, {}, {}, {}, {}, {}};

  aem::AttributeNormalizer attr_norm;
  timer.time("attributes", [&] {
    Matrix attr_train = aem::attribute_matrix(train, cfg.length_cap, cfg.direction_wrap);
    std::vector<std::size_t> all_rows(attr_train.rows);
    std::iota(all_rows.begin(), all_rows.end(), 0);
    attr_norm = aem::fit_attribute_normalizer(attr_train, all_rows);
    sd_train.attr = attr_norm.apply(attr_train);
    for (auto* sd : {&sd_val, &sd_test})
      if (!sd->trajs->empty())
        sd->attr = attr_norm.apply(
            aem::attribute_matrix(*sd->trajs, cfg.length_cap, cfg.direction_wrap));
  });

  learn::TrainResult training;
  if (!cfg.attribute_only) {
    timer.time("pad", [&] {
      for (auto* sd : {&sd_train, &sd_val, &sd_test})
        if (!sd->trajs->empty()) sd->tensor = trajio::pad_and_mask(*sd->trajs, feat_norm, steps);
    });
    learn::TrainConfig tc;
    tc.epochs = cfg.epochs;
    tc.adam = {cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};
    tc.eta = cfg.no_ls ? 0.0 : cfg.eta;
    tc.patience = cfg.train_patience;
    tc.k_neighbors = cfg.k_neighbors;
    tc.diffusion_iterations = cfg.diffusion_iterations;
    tc.edge_weight = cfg.edge_weight;
    tc.structure_loss = cfg.structure_loss;
    tc.shuffle_pairing = cfg.shuffle_pairing;
    tc.seed = cfg.seed;
    training = timer.time("train_encoder", [&] {
      return learn::train_tlm(sd_train.tensor, sd_train.attr, sd_val.tensor, sd_val.attr,
                              model_cfg, tc);
    });
  } else {
    training.params = tlm::init_params(model_cfg, cfg.seed);
  }

  sfm::RelationGraph train_graph;
  timer.time("fuse", [&] {
    for (auto* sd : {&sd_train, &sd_val, &sd_test}) {
      if (sd->trajs->empty()) continue;
      if (cfg.attribute_only) {
        sd->features = sd->attr;
      } else if (cfg.no_fd) {
        sd->features = dpm::fuse(sd->attr, sd->attr, cfg.alpha);
      } else {
        auto temporal = tlm::encode(training.params, sd->tensor);
        Matrix spatial;
        if (sd->trajs->size() >= 2) {
          std::size_t k = std::min(cfg.k_neighbors, sd->trajs->size() - 1);
          auto sr = sfm::spatial_embedding(temporal, sd->attr, k, cfg.diffusion_iterations,
                                           cfg.edge_weight);
          spatial = std::move(sr.embedding);
          if (sd == &sd_train) train_graph = std::move(sr.graph);
        } else {
          spatial = sd->attr;
        }
        sd->features = dpm::fuse(sd->attr, spatial, cfg.alpha);
      }
    }
  });

  for (auto* sd : {&sd_train, &sd_val, &sd_test}) {
    if (sd->trajs->empty()) continue;
    sd->y_seconds = detail::labels_of(*sd->trajs);
    sd->y_norm.reserve(sd->y_seconds.size());
    for (double y : sd->y_seconds) sd->y_norm.push_back(label_norm.apply(y));
  }

  dpm::HgbConfig hc;
  hc.rounds = cfg.hgb_rounds;
  hc.max_depth = cfg.hgb_max_depth;
  hc.shrinkage = cfg.hgb_shrinkage;
  hc.max_bins = cfg.hgb_max_bins;
  hc.min_samples_leaf = cfg.hgb_min_samples_leaf;
  hc.patience = cfg.hgb_patience;
  auto hgb = timer.time("fit_hgb", [&] {
    return dpm::fit_hgb(sd_train.features, sd_train.y_norm, sd_val.features, sd_val.y_norm, hc);
  });

  serialize::ModelBundle bundle;
  bundle.encoder = training.params;
  bundle.feature_norm = feat_norm;
  bundle.attribute_norm = attr_norm;
  bundle.label_norm = label_norm;
  bundle.hgb = std::move(hgb);
  bundle.length_cap = cfg.length_cap;
  bundle.steps = steps;
  bundle.direction_wrap = cfg.direction_wrap;
  bundle.fusion_alpha = cfg.alpha;
  bundle.k_neighbors = cfg.k_neighbors;
  bundle.diffusion_iterations = cfg.diffusion_iterations;
  bundle.edge_weight = cfg.edge_weight;
  bundle.attribute_only = cfg.attribute_only;
  bundle.no_fd = cfg.no_fd;

  RunResult result;
  result.bundle = std::move(bundle);
  result.training = std::move(training);
  result.run_dir = run_dir;

  std::vector<std::string> pred_ids;
  std::vector<double> pred_true_s, pred_pred_s, pred_true_n, pred_pred_n;
  timer.time("evaluate", [&] {
    auto eval_split = [&](const char* name, SplitData& sd) {
      if (sd.trajs->empty()) return;
      auto y_pred_norm = dpm::predict(result.bundle.hgb, sd.features);
      std::vector<double> y_pred_s;
      y_pred_s.reserve(y_pred_norm.size());
      for (double z : y_pred_norm) y_pred_s.push_back(label_norm.invert(z));
      metrics::MetricsPair pair;
      pair.normalized = metrics::compute_metrics(sd.y_norm, y_pred_norm);
      pair.seconds = metrics::compute_metrics(sd.y_seconds, y_pred_s);
      result.metrics_rows.emplace_back(name, pair);
      if (std::string(name) == "test") {
        for (std::size_t i = 0; i < sd.trajs->size(); ++i) pred_ids.push_back((*sd.trajs)[i].id);
        pred_true_s = sd.y_seconds;
        pred_pred_s = y_pred_s;
        pred_true_n = sd.y_norm;
        pred_pred_n = y_pred_norm;
      }
    };
    eval_split("train", sd_train);
    eval_split("val", sd_val);
    eval_split("test", sd_test);

    if (transfer && !transfer->holdout.empty()) {
      auto scored = score(result.bundle, transfer->holdout);
      auto y_true_s = detail::labels_of(transfer->holdout);
      std::vector<double> y_true_n;
      y_true_n.reserve(y_true_s.size());
      for (double y : y_true_s) y_true_n.push_back(label_norm.apply(y));
      metrics::MetricsPair pair;
      pair.normalized = metrics::compute_metrics(y_true_n, scored.normalized);
      pair.seconds = metrics::compute_metrics(y_true_s, scored.seconds);
      result.metrics_rows.emplace_back("transfer", pair);
    }
  });

  // artifacts
  namespace fs = std::filesystem;
  fs::create_directories(run_dir);

  serialize::save_bundle(run_dir + "/model.json", result.bundle);
  {
    std::ofstream out(run_dir + "/metrics.csv");
    serialize::write_metrics_csv(out, result.metrics_rows);
  }
  if (!result.training.history.empty()) {
    std::ofstream out(run_dir + "/loss_history.csv");
    serialize::write_loss_history_csv(out, result.training.history);
  }
  if (!pred_ids.empty()) {
    std::ofstream out(run_dir + "/predictions.csv");
    serialize::write_predictions_csv(out, pred_ids, pred_true_s, pred_pred_s, pred_true_n,
                                     pred_pred_n);
  }
  if (train_graph.n > 0) {
    std::ofstream out(run_dir + "/edges.csv");
    serialize::write_edges_csv(out, sd_train.tensor.ids, train_graph);
  }

  json manifest;
  manifest["format_version"] = serialize::kFormatVersion;
  manifest["kind"] = "run-manifest";
  manifest["config"] = config_to_json(cfg);
  manifest["config_hash"] = config_hash(cfg);
  manifest["variant"] = detail::variant_name(cfg);
  manifest["seed"] = cfg.seed;
  manifest["counts"] = {{"total", trajs.size()},
                        {"train", train.size()},
                        {"val", val.size()},
                        {"test", test.size()},
                        {"steps", steps}};
  if (!result.training.history.empty()) manifest["best_epoch"] = result.training.best_epoch;
  json jm = json::object();
  for (const auto& [name, pair] : result.metrics_rows)
    jm[name] = {{"normalized", detail::metrics_to_json(pair.normalized)},
                {"seconds", detail::metrics_to_json(pair.seconds)}};
  manifest["metrics"] = jm;
  if (transfer) {
    manifest["transfer"] = {{"train_regions", transfer->train_regions},
                            {"test_regions", transfer->test_regions},
                            {"degenerate", transfer->holdout.empty()}};
  } else {
    manifest["transfer"] = false;
  }
  manifest["wall_times_s"] = timer.to_json();
  serialize::save_json_file(run_dir + "/manifest.json", manifest);
  result.manifest = std::move(manifest);
  return result;
}

inline RunResult run_experiment(const std::vector<trajio::Trajectory>& trajs,
                                const ExperimentConfig& cfg, const std::string& out_root) {
  return run_experiment_at(trajs, cfg, out_root + "/" + config_hash(cfg));
}

/// Trains on `train_regions`, evaluates on unseen `test_regions`. Region
/// tokens are the id prefix before '_'. Identical region sets degenerate to a
/// plain experiment on that subset; partial overlap is rejected.
inline RunResult domain_transfer(const std::vector<trajio::Trajectory>& trajs,
                                 const ExperimentConfig& cfg,
                                 const std::vector<std::string>& train_regions,
                                 const std::vector<std::string>& test_regions,
                                 const std::string& out_root) {
  if (train_regions.empty() || test_regions.empty())
    throw UsageError("transfer: region lists must be non-empty");
  std::set<std::string> train_set(train_regions.begin(), train_regions.end());
  std::set<std::string> test_set(test_regions.begin(), test_regions.end());

  std::vector<trajio::Trajectory> train_pool, holdout;
  std::set<std::string> seen;
  for (const auto& t : trajs) {
    std::string region = synthgen::region_of(t.id);
    seen.insert(region);
    if (train_set.count(region)) train_pool.push_back(t);
    else if (test_set.count(region)) holdout.push_back(t);
  }
  for (const auto& r : train_set)
    if (!seen.count(r)) throw DataError("transfer: no trajectories in region '" + r + "'");
  for (const auto& r : test_set)
    if (!seen.count(r)) throw DataError("transfer: no trajectories in region '" + r + "'");

  const bool degenerate = train_set == test_set;
  if (!degenerate) {
    for (const auto& r : test_set)
      if (train_set.count(r))
        throw UsageError("transfer: region '" + r + "' appears in both region lists");
    if (holdout.empty()) throw DataError("transfer: held-out region set is empty");
  }

  TransferSpec spec{train_regions, test_regions, degenerate ? std::vector<trajio::Trajectory>{}
                                                            : std::move(holdout)};
  std::string tag;
  for (const auto& r : train_regions) tag += "+" + r;
  tag += ">";
  for (const auto& r : test_regions) tag += "+" + r;
  std::string run_dir = out_root + "/" + config_hash(cfg, "transfer:" + tag);
  return run_experiment_at(train_pool, cfg, run_dir, &spec);
}

// ---------------------------------------------------------------------------
// ablation sweep

struct AblationResult {
  std::vector<std::pair<std::string, RunResult>> runs;  // variant name -> run
  std::string summary_path;
};

inline AblationResult ablate(const std::vector<trajio::Trajectory>& trajs,
                             const ExperimentConfig& base, const std::string& out_root) {
  AblationResult result;
  for (const char* variant : {"full", "no_ls", "no_fd", "attribute_only"}) {
    ExperimentConfig cfg = base;
    cfg.no_fd = cfg.no_ls = cfg.attribute_only = false;
    if (std::string(variant) == "no_ls") cfg.no_ls = true;
    else if (std::string(variant) == "no_fd") cfg.no_fd = true;
    else if (std::string(variant) == "attribute_only") cfg.attribute_only = true;
    result.runs.emplace_back(variant, run_experiment(trajs, cfg, out_root));
  }

  ExperimentConfig base_clean = base;
  base_clean.no_fd = base_clean.no_ls = base_clean.attribute_only = false;
  std::string dir = out_root + "/" + config_hash(base_clean);
  std::filesystem::create_directories(dir);
  result.summary_path = dir + "/ablation.csv";
  std::ofstream out(result.summary_path);
  out << "variant,split,metric,normalized,value\n";
  for (const auto& [variant, run] : result.runs)
    for (const auto& [split, pair] : run.metrics_rows) {
      if (split != "test") continue;
      auto block = [&, variant = variant](const metrics::Metrics& m, int normalized) {
        out << variant << ',' << split << ",mse," << normalized << ',' << format_double(m.mse)
            << '\n';
        out << variant << ',' << split << ",rmse," << normalized << ',' << format_double(m.rmse)
            << '\n';
        out << variant << ',' << split << ",mape," << normalized << ',' << format_double(m.mape)
            << '\n';
        out << variant << ',' << split << ",mae," << normalized << ',' << format_double(m.mae)
            << '\n';
      };
      block(pair.normalized, 1);
      block(pair.seconds, 0);
    }
  return result;
}

// ---------------------------------------------------------------------------
// data-directory ingestion shared by the CLI subcommands

struct Dataset {
  std::vector<trajio::Trajectory> trajs;
  trajio::ParseReport report;
  std::size_t missing_labels = 0;
};

inline Dataset load_dataset(const std::string& data_dir, bool require_labels) {
  std::ifstream points(data_dir + "/points.csv");
  if (!points) throw DataError("cannot open " + data_dir + "/points.csv");
  auto parsed = trajio::parse_points(points);
  Dataset d;
  d.trajs = std::move(parsed.trajectories);
  d.report = std::move(parsed.report);
  if (d.trajs.empty()) throw DataError(data_dir + ": no trajectories parsed");

  std::ifstream labels(data_dir + "/labels.csv");
  if (labels) {
    auto lab = trajio::parse_labels(labels);
    d.missing_labels = trajio::attach_labels(d.trajs, lab.labels);
  } else if (require_labels) {
    throw DataError("cannot open " + data_dir + "/labels.csv");
  }
  if (require_labels) {
    for (const auto& t : d.trajs)
      if (!t.label) throw DataError("trajectory " + t.id + " has no label");
  }
  return d;
}

}  // namespace trispace::pipeline
