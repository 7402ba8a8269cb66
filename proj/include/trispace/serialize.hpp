#pragma once

#include <fstream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "trispace/aem.hpp"
#include "trispace/core.hpp"
#include "trispace/dpm.hpp"
#include "trispace/learn.hpp"
#include "trispace/metrics.hpp"
#include "trispace/sfm.hpp"
#include "trispace/tlm.hpp"
#include "trispace/trajio.hpp"

namespace trispace::serialize {

using json = nlohmann::json;

inline constexpr int kFormatVersion = 1;

// ---------------------------------------------------------------------------
// primitives

inline json matrix_to_json(const Matrix& m) {
  json j;
  j["shape"] = {m.rows, m.cols};
  j["data"] = m.a;
  return j;
}

inline Matrix matrix_from_json(const json& j) {
  if (!j.is_object() || !j.contains("shape") || !j.contains("data"))
    throw DataError("matrix: expected object with shape and data");
  auto shape = j.at("shape");
  if (!shape.is_array() || shape.size() != 2)
    throw DataError("matrix: shape must be [rows, cols]");
  Matrix m(shape[0].get<std::size_t>(), shape[1].get<std::size_t>());
  auto data = j.at("data").get<std::vector<double>>();
  if (data.size() != m.a.size()) throw DataError("matrix: data size does not match shape");
  m.a = std::move(data);
  return m;
}

inline json parse_json(std::istream& in, const std::string& what) {
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw DataError(what + ": invalid JSON");
  return j;
}

inline json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return parse_json(in, path);
}

inline void save_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << j.dump(2) << '\n';
  if (!out) throw DataError("write failed: " + path);
}

inline void expect_kind(const json& j, const std::string& kind, const std::string& what) {
  if (!j.is_object() || j.value("kind", "") != kind)
    throw DataError(what + ": expected kind '" + kind + "'");
  if (j.value("format_version", -1) != kFormatVersion)
    throw DataError(what + ": unsupported format_version");
}

// ---------------------------------------------------------------------------
// encoder checkpoint

inline json tlm_config_to_json(const tlm::TlmConfig& cfg) {
  return {{"n_state", cfg.n_state},
          {"hidden", cfg.hidden},
          {"blocks", cfg.blocks},
          {"conv_width", cfg.conv_width},
          {"zoh_variant", tlm::to_string(cfg.zoh_variant)},
          {"out_proj_init_scale", cfg.out_proj_init_scale}};
}

inline tlm::TlmConfig tlm_config_from_json(const json& j) {
  tlm::TlmConfig cfg;
  cfg.n_state = j.at("n_state").get<std::size_t>();
  cfg.hidden = j.at("hidden").get<std::size_t>();
  cfg.blocks = j.at("blocks").get<std::size_t>();
  cfg.conv_width = j.at("conv_width").get<std::size_t>();
  cfg.zoh_variant = tlm::zoh_variant_from_string(j.at("zoh_variant").get<std::string>());
  cfg.out_proj_init_scale = j.at("out_proj_init_scale").get<double>();
  return cfg;
}

inline json tlm_to_json(const tlm::TlmParams& params) {
  json tensors = json::object();
  tlm::for_each_tensor(params, [&](const std::string& name, const Matrix& m) {
    tensors[name] = matrix_to_json(m);
  });
  return {{"format_version", kFormatVersion},
          {"kind", "tlm-checkpoint"},
          {"config", tlm_config_to_json(params.config)},
          {"tensors", tensors}};
}

inline tlm::TlmParams tlm_from_json(const json& j) {
  expect_kind(j, "tlm-checkpoint", "tlm checkpoint");
  tlm::TlmParams params = tlm::init_params(tlm_config_from_json(j.at("config")), 0);
  const json& tensors = j.at("tensors");
  tlm::for_each_tensor(params, [&](const std::string& name, Matrix& m) {
    if (!tensors.contains(name)) throw DataError("tlm checkpoint: missing tensor " + name);
    Matrix loaded = matrix_from_json(tensors.at(name));
    if (loaded.rows != m.rows || loaded.cols != m.cols)
      throw DataError("tlm checkpoint: tensor " + name + " has wrong shape");
    m = std::move(loaded);
  });
  if (tensors.size() != [&] {
        std::size_t n = 0;
        tlm::for_each_tensor(params, [&](const std::string&, Matrix&) { ++n; });
        return n;
      }())
    throw DataError("tlm checkpoint: unexpected extra tensors");
  return params;
}

// ---------------------------------------------------------------------------
// feature / attribute / label scalers

inline json feature_normalizer_to_json(const trajio::FeatureNormalizer& n) {
  return {{"min", std::vector<double>(n.mins.begin(), n.mins.end())},
          {"max", std::vector<double>(n.maxs.begin(), n.maxs.end())}};
}

inline trajio::FeatureNormalizer feature_normalizer_from_json(const json& j) {
  trajio::FeatureNormalizer n;
  auto mn = j.at("min").get<std::vector<double>>();
  auto mx = j.at("max").get<std::vector<double>>();
  if (mn.size() != trajio::kNumFeatures || mx.size() != trajio::kNumFeatures)
    throw DataError("feature normalizer: wrong channel count");
  std::copy(mn.begin(), mn.end(), n.mins.begin());
  std::copy(mx.begin(), mx.end(), n.maxs.begin());
  return n;
}

inline json attribute_normalizer_to_json(const aem::AttributeNormalizer& n) {
  return {{"mean", std::vector<double>(n.mean.begin(), n.mean.end())},
          {"stddev", std::vector<double>(n.stddev.begin(), n.stddev.end())}};
}

inline aem::AttributeNormalizer attribute_normalizer_from_json(const json& j) {
  aem::AttributeNormalizer n;
  auto mean = j.at("mean").get<std::vector<double>>();
  auto sd = j.at("stddev").get<std::vector<double>>();
  if (mean.size() != aem::kNumColumns || sd.size() != aem::kNumColumns)
    throw DataError("attribute normalizer: wrong column count");
  std::copy(mean.begin(), mean.end(), n.mean.begin());
  std::copy(sd.begin(), sd.end(), n.stddev.begin());
  return n;
}

inline json label_normalizer_to_json(const trajio::LabelNormalizer& n) {
  return {{"min", n.min}, {"max", n.max}};
}

inline trajio::LabelNormalizer label_normalizer_from_json(const json& j) {
  return {j.at("min").get<double>(), j.at("max").get<double>()};
}

// ---------------------------------------------------------------------------
// boosted-tree model

inline json hgb_to_json(const dpm::HgbModel& model) {
  json trees = json::array();
  for (const auto& tree : model.trees) {
    json nodes = json::array();
    for (const auto& n : tree.nodes)
      nodes.push_back({{"leaf", n.leaf},
                       {"feature", n.feature},
                       {"bin", n.bin},
                       {"split_value", n.split_value},
                       {"left", n.left},
                       {"right", n.right},
                       {"value", n.value}});
    trees.push_back({{"nodes", nodes}});
  }
  json edges = json::array();
  for (const auto& e : model.bin_edges) edges.push_back(e);
  return {{"n_features", model.n_features},
          {"base_score", model.base_score},
          {"shrinkage", model.shrinkage},
          {"bin_edges", edges},
          {"trees", trees},
          {"train_mse", model.train_mse}};
}

inline dpm::HgbModel hgb_from_json(const json& j) {
  dpm::HgbModel model;
  model.n_features = j.at("n_features").get<std::size_t>();
  model.base_score = j.at("base_score").get<double>();
  model.shrinkage = j.at("shrinkage").get<double>();
  for (const auto& e : j.at("bin_edges")) model.bin_edges.push_back(e.get<std::vector<double>>());
  if (model.bin_edges.size() != model.n_features)
    throw DataError("hgb model: bin_edges count does not match n_features");
  for (const auto& tj : j.at("trees")) {
    dpm::Tree tree;
    for (const auto& nj : tj.at("nodes")) {
      dpm::TreeNode n;
      n.leaf = nj.at("leaf").get<bool>();
      n.feature = nj.at("feature").get<std::size_t>();
      n.bin = nj.at("bin").get<std::size_t>();
      n.split_value = nj.at("split_value").get<double>();
      n.left = nj.at("left").get<std::int32_t>();
      n.right = nj.at("right").get<std::int32_t>();
      n.value = nj.at("value").get<double>();
      tree.nodes.push_back(n);
    }
    if (tree.nodes.empty()) throw DataError("hgb model: empty tree");
    model.trees.push_back(std::move(tree));
  }
  model.train_mse = j.at("train_mse").get<std::vector<double>>();
  return model;
}

// ---------------------------------------------------------------------------
// full model bundle: everything needed to score unseen trajectories

struct ModelBundle {
  tlm::TlmParams encoder;
  trajio::FeatureNormalizer feature_norm;
  aem::AttributeNormalizer attribute_norm;
  trajio::LabelNormalizer label_norm;
  dpm::HgbModel hgb;
  std::size_t length_cap = trajio::kDefaultLengthCap;
  std::size_t steps = 0;  // padded width the encoder was trained with
  bool direction_wrap = false;
  double fusion_alpha = 0.1;
  std::size_t k_neighbors = sfm::kDefaultNeighbors;
  std::size_t diffusion_iterations = sfm::kDefaultDiffusionIterations;
  sfm::EdgeWeight edge_weight = sfm::EdgeWeight::kDistance;
  bool attribute_only = false;  // score from attributes alone
  bool no_fd = false;           // skip diffusion, pass attributes through
};

inline json bundle_to_json(const ModelBundle& b) {
  return {{"format_version", kFormatVersion},
          {"kind", "model-bundle"},
          {"tlm", tlm_to_json(b.encoder)},
          {"feature_normalizer", feature_normalizer_to_json(b.feature_norm)},
          {"attribute_normalizer", attribute_normalizer_to_json(b.attribute_norm)},
          {"label_normalizer", label_normalizer_to_json(b.label_norm)},
          {"hgb", hgb_to_json(b.hgb)},
          {"length_cap", b.length_cap},
          {"steps", b.steps},
          {"direction_wrap", b.direction_wrap},
          {"fusion_alpha", b.fusion_alpha},
          {"k_neighbors", b.k_neighbors},
          {"diffusion_iterations", b.diffusion_iterations},
          {"edge_weight", sfm::to_string(b.edge_weight)},
          {"attribute_only", b.attribute_only},
          {"no_fd", b.no_fd}};
}

inline ModelBundle bundle_from_json(const json& j) {
  expect_kind(j, "model-bundle", "model bundle");
  ModelBundle b;
  b.encoder = tlm_from_json(j.at("tlm"));
  b.feature_norm = feature_normalizer_from_json(j.at("feature_normalizer"));
  b.attribute_norm = attribute_normalizer_from_json(j.at("attribute_normalizer"));
  b.label_norm = label_normalizer_from_json(j.at("label_normalizer"));
  b.hgb = hgb_from_json(j.at("hgb"));
  b.length_cap = j.at("length_cap").get<std::size_t>();
  b.steps = j.at("steps").get<std::size_t>();
  b.direction_wrap = j.at("direction_wrap").get<bool>();
  b.fusion_alpha = j.at("fusion_alpha").get<double>();
  b.k_neighbors = j.at("k_neighbors").get<std::size_t>();
  b.diffusion_iterations = j.at("diffusion_iterations").get<std::size_t>();
  b.edge_weight = sfm::edge_weight_from_string(j.at("edge_weight").get<std::string>());
  b.attribute_only = j.at("attribute_only").get<bool>();
  b.no_fd = j.at("no_fd").get<bool>();
  return b;
}

inline void save_bundle(const std::string& path, const ModelBundle& b) {
  save_json_file(path, bundle_to_json(b));
}

inline ModelBundle load_bundle(const std::string& path) {
  return bundle_from_json(load_json_file(path));
}

// ---------------------------------------------------------------------------
// CSV writers (format_double keeps round-trip precision)

inline void write_loss_history_csv(std::ostream& out, const std::vector<learn::EpochLoss>& hist) {
  out << "epoch,train_loss,val_loss\n";
  for (const auto& e : hist)
    out << e.epoch << ',' << format_double(e.train) << ',' << format_double(e.val) << '\n';
}

inline void write_metrics_csv(std::ostream& out,
                              const std::vector<std::pair<std::string, metrics::MetricsPair>>& rows) {
  out << "split,metric,normalized,value\n";
  for (const auto& [split, pair] : rows) {
    auto block = [&](const metrics::Metrics& m, int normalized) {
      out << split << ",mse," << normalized << ',' << format_double(m.mse) << '\n';
      out << split << ",rmse," << normalized << ',' << format_double(m.rmse) << '\n';
      out << split << ",mape," << normalized << ',' << format_double(m.mape) << '\n';
      out << split << ",mae," << normalized << ',' << format_double(m.mae) << '\n';
    };
    block(pair.normalized, 1);
    block(pair.seconds, 0);
  }
}

inline void write_predictions_csv(std::ostream& out, const std::vector<std::string>& ids,
                                  const std::vector<double>& y_true_s,
                                  const std::vector<double>& y_pred_s,
                                  const std::vector<double>& y_true_n,
                                  const std::vector<double>& y_pred_n) {
  if (ids.size() != y_true_s.size() || ids.size() != y_pred_s.size() ||
      ids.size() != y_true_n.size() || ids.size() != y_pred_n.size())
    throw UsageError("predictions csv: column length mismatch");
  out << "traj_id,y_true_seconds,y_pred_seconds,y_true_norm,y_pred_norm\n";
  for (std::size_t i = 0; i < ids.size(); ++i)
    out << ids[i] << ',' << format_double(y_true_s[i]) << ',' << format_double(y_pred_s[i]) << ','
        << format_double(y_true_n[i]) << ',' << format_double(y_pred_n[i]) << '\n';
}

inline void write_scored_csv(std::ostream& out, const std::vector<std::string>& ids,
                             const std::vector<double>& y_pred_s) {
  if (ids.size() != y_pred_s.size()) throw UsageError("scored csv: column length mismatch");
  out << "traj_id,y_pred_seconds\n";
  for (std::size_t i = 0; i < ids.size(); ++i)
    out << ids[i] << ',' << format_double(y_pred_s[i]) << '\n';
}

inline void write_edges_csv(std::ostream& out, const std::vector<std::string>& ids,
                            const sfm::RelationGraph& graph) {
  if (ids.size() != graph.n) throw UsageError("edges csv: id count does not match graph");
  out << "src,dst,weight\n";
  for (std::size_t i = 0; i < graph.n; ++i)
    for (const auto& [j, w] : graph.rows[i])
      out << ids[i] << ',' << ids[j] << ',' << format_double(w) << '\n';
}

inline void write_matrix_csv(std::ostream& out, const std::vector<std::string>& ids,
                             const Matrix& m, const std::string& col_prefix) {
  if (ids.size() != m.rows) throw UsageError("matrix csv: id count does not match rows");
  out << "traj_id";
  for (std::size_t c = 0; c < m.cols; ++c) out << ',' << col_prefix << c;
  out << '\n';
  for (std::size_t i = 0; i < m.rows; ++i) {
    out << ids[i];
    for (std::size_t c = 0; c < m.cols; ++c) out << ',' << format_double(m.at(i, c));
    out << '\n';
  }
}

}  // namespace trispace::serialize
