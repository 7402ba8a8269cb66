#pragma once

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "trispace/core.hpp"
#include "trispace/pipeline.hpp"
#include "trispace/serialize.hpp"
#include "trispace/synthgen.hpp"

namespace trispace::cli {

using serialize::json;

namespace detail {

// --------------------------------------------------------------------------
// generator config <-> flat JSON, mirroring the experiment config handling

inline json synth_config_to_json(const synthgen::SynthConfig& c) {
  return {{"seed", c.seed},
          {"n_trajectories", c.n_trajectories},
          {"length_mean", c.length_mean},
          {"length_std", c.length_std},
          {"length_cap", c.length_cap},
          {"n_regions", c.n_regions},
          {"congestion_buckets", c.congestion_buckets},
          {"congestion_strength", c.congestion_strength},
          {"base_speed_kmh", c.base_speed_kmh},
          {"region_speed_spread", c.region_speed_spread},
          {"speed_noise", c.speed_noise},
          {"drop_prob_min", c.drop_prob_min},
          {"drop_prob_max", c.drop_prob_max},
          {"base_interval_s", c.base_interval_s},
          {"interval_sigma", c.interval_sigma},
          {"heading_noise_deg", c.heading_noise_deg},
          {"event_rate_lon", c.event_rate_lon},
          {"event_rate_lat", c.event_rate_lat},
          {"event_rate_time", c.event_rate_time},
          {"event_rate_speed", c.event_rate_speed},
          {"event_rate_dir", c.event_rate_dir}};
}

inline void synth_set_field(synthgen::SynthConfig& c, const std::string& key, const json& v) {
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

  if (key == "seed") u64(c.seed);
  else if (key == "n_trajectories") sz(c.n_trajectories);
  else if (key == "length_mean") dbl(c.length_mean);
  else if (key == "length_std") dbl(c.length_std);
  else if (key == "length_cap") sz(c.length_cap);
  else if (key == "n_regions") sz(c.n_regions);
  else if (key == "congestion_buckets") sz(c.congestion_buckets);
  else if (key == "congestion_strength") dbl(c.congestion_strength);
  else if (key == "base_speed_kmh") dbl(c.base_speed_kmh);
  else if (key == "region_speed_spread") dbl(c.region_speed_spread);
  else if (key == "speed_noise") dbl(c.speed_noise);
  else if (key == "drop_prob_min") dbl(c.drop_prob_min);
  else if (key == "drop_prob_max") dbl(c.drop_prob_max);
  else if (key == "base_interval_s") dbl(c.base_interval_s);
  else if (key == "interval_sigma") dbl(c.interval_sigma);
  else if (key == "heading_noise_deg") dbl(c.heading_noise_deg);
  else if (key == "event_rate_lon") dbl(c.event_rate_lon);
  else if (key == "event_rate_lat") dbl(c.event_rate_lat);
  else if (key == "event_rate_time") dbl(c.event_rate_time);
  else if (key == "event_rate_speed") dbl(c.event_rate_speed);
  else if (key == "event_rate_dir") dbl(c.event_rate_dir);
  else throw DataError("unknown config key '" + key + "'");
}

inline synthgen::SynthConfig synth_config_from_json(const json& j) {
  if (!j.is_object()) throw DataError("config: expected a JSON object");
  synthgen::SynthConfig c;
  for (const auto& [key, value] : j.items()) synth_set_field(c, key, value);
  return c;
}

inline void synth_apply_override(synthgen::SynthConfig& c, const std::string& key,
                                 const std::string& value) {
  json current = synth_config_to_json(c);
  if (!current.contains(key)) throw UsageError("unknown config key '" + key + "'");
  try {
    json parsed = json::parse(value);
    if (!parsed.is_number()) throw UsageError("config key '" + key + "' expects a number");
    synth_set_field(c, key, parsed);
  } catch (const json::exception&) {
    throw UsageError("config key '" + key + "': cannot parse value '" + value + "'");
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
}

// --------------------------------------------------------------------------
// shared plumbing

inline std::vector<std::pair<std::string, std::string>> parse_extras(
    const std::vector<std::string>& extras) {
  std::vector<std::pair<std::string, std::string>> pairs;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& tok = extras[i];
    if (tok.rfind("--", 0) != 0 || tok.size() <= 2)
      throw UsageError("unexpected argument '" + tok + "' (overrides use --key value)");
    if (i + 1 >= extras.size())
      throw UsageError("override '" + tok + "' is missing a value");
    pairs.emplace_back(tok.substr(2), extras[i + 1]);
    ++i;
  }
  return pairs;
}

inline std::optional<std::uint64_t> seed_from_env() {
  const char* env = std::getenv("TRISPACE_SEED");
  if (!env || !*env) return std::nullopt;
  char* end = nullptr;
  unsigned long long v = std::strtoull(env, &end, 10);
  if (end == env || *end != '\0')
    throw UsageError("TRISPACE_SEED must be a non-negative integer, got '" + std::string(env) +
                     "'");
  return static_cast<std::uint64_t>(v);
}

inline bool overrides_contain(const std::vector<std::pair<std::string, std::string>>& overrides,
                              const std::string& key) {
  for (const auto& [k, v] : overrides)
    if (k == key) return true;
  return false;
}

/// Config file, then TRISPACE_SEED fallback, then --key value overrides.
inline pipeline::ExperimentConfig load_experiment_config(
    const std::string& config_path,
    const std::vector<std::pair<std::string, std::string>>& overrides) {
  json j = config_path.empty() ? json::object() : serialize::load_json_file(config_path);
  pipeline::ExperimentConfig cfg = pipeline::config_from_json(j);
  if (!j.contains("seed") && !overrides_contain(overrides, "seed"))
    if (auto env = seed_from_env()) cfg.seed = *env;
  for (const auto& [k, v] : overrides) pipeline::apply_override(cfg, k, v);
  pipeline::validate_config(cfg);
  return cfg;
}

inline synthgen::SynthConfig load_synth_config(
    const std::string& config_path,
    const std::vector<std::pair<std::string, std::string>>& overrides) {
  json j = config_path.empty() ? json::object() : serialize::load_json_file(config_path);
  synthgen::SynthConfig cfg = synth_config_from_json(j);
  if (!j.contains("seed") && !overrides_contain(overrides, "seed"))
    if (auto env = seed_from_env()) cfg.seed = *env;
  for (const auto& [k, v] : overrides) synth_apply_override(cfg, k, v);
  synthgen::validate(cfg);
  return cfg;
}

inline std::string keys_footer(const json& schema) {
  std::string s = "Config keys (override with --key value):";
  std::size_t col = 999;
  for (const auto& [key, value] : schema.items()) {
    (void)value;
    if (col + key.size() + 1 > 78) {
      s += "\n  ";
      col = 2;
    } else {
      s += ' ';
      ++col;
    }
    s += key;
    col += key.size();
  }
  return s;
}

inline void print_metrics_rows(
    std::ostream& out,
    const std::vector<std::pair<std::string, metrics::MetricsPair>>& rows) {
  out << "split,metric,normalized,value\n";
  for (const auto& [split, pair] : rows) {
    auto block = [&, split = split](const metrics::Metrics& m, int normalized) {
      out << split << ",mse," << normalized << ',' << format_double(m.mse) << '\n';
      out << split << ",rmse," << normalized << ',' << format_double(m.rmse) << '\n';
      out << split << ",mape," << normalized << ',' << format_double(m.mape) << '\n';
      out << split << ",mae," << normalized << ',' << format_double(m.mae) << '\n';
    };
    block(pair.normalized, 1);
    block(pair.seconds, 0);
  }
}

inline std::vector<std::string> split_csv_list(const std::string& s, const std::string& what) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) throw UsageError(what + ": empty region name in '" + s + "'");
    out.push_back(tok);
  }
  if (out.empty()) throw UsageError(what + ": empty list");
  return out;
}

inline std::string model_json_path(const std::string& model_arg) {
  namespace fs = std::filesystem;
  if (fs::is_directory(model_arg)) return model_arg + "/model.json";
  return model_arg;
}

struct PredFile {
  std::vector<std::string> ids;
  std::vector<double> values;
};

/// Reads a predictions CSV: any file with a traj_id column and either a
/// y_pred_seconds or arrival_time value column.
inline PredFile read_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty file, header expected");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  std::vector<std::string> cols;
  {
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) cols.push_back(tok);
  }
  auto col_of = [&](const std::string& name) -> std::ptrdiff_t {
    for (std::size_t i = 0; i < cols.size(); ++i)
      if (cols[i] == name) return static_cast<std::ptrdiff_t>(i);
    return -1;
  };
  std::ptrdiff_t id_col = col_of("traj_id");
  std::ptrdiff_t val_col = col_of("y_pred_seconds");
  if (val_col < 0) val_col = col_of("arrival_time");
  if (id_col < 0 || val_col < 0)
    throw DataError(path + ": need traj_id and y_pred_seconds (or arrival_time) columns");

  PredFile out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) fields.push_back(tok);
    while (fields.size() < cols.size()) fields.emplace_back();
    if (fields.size() != cols.size())
      throw DataError(path + ":" + std::to_string(line_no) + ": wrong column count");
    char* end = nullptr;
    const std::string& raw = fields[static_cast<std::size_t>(val_col)];
    double v = std::strtod(raw.c_str(), &end);
    if (end == raw.c_str() || *end != '\0')
      throw DataError(path + ":" + std::to_string(line_no) + ": bad value '" + raw + "'");
    out.ids.push_back(fields[static_cast<std::size_t>(id_col)]);
    out.values.push_back(v);
  }
  if (out.ids.empty()) throw DataError(path + ": no prediction rows");
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// dispatch

inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  CLI::App app{"trajectory-to-ETA engine: tri-space trajectory representation pipeline"};
  app.require_subcommand(1);

  std::string cfg_path, data_dir, out_path, model_arg, pred_path, labels_path;
  std::string train_regions, test_regions;

  auto add_config = [&](CLI::App* sub, const json& schema) {
    sub->add_option("--config", cfg_path, "flat JSON config file");
    sub->allow_extras();
    sub->footer(detail::keys_footer(schema));
  };

  auto* gen = app.add_subcommand("generate", "write a synthetic trajectory dataset");
  gen->add_option("--out", out_path, "output directory")->required();
  add_config(gen, detail::synth_config_to_json(synthgen::SynthConfig{}));

  const json exp_schema = pipeline::config_to_json(pipeline::ExperimentConfig{});

  auto* train = app.add_subcommand("train", "run the full pipeline on a dataset");
  train->add_option("--data", data_dir, "dataset directory (points.csv, labels.csv)")->required();
  train->add_option("--out", out_path, "output root; artifacts go to <out>/<config-hash>/")
      ->required();
  add_config(train, exp_schema);

  auto* predict = app.add_subcommand("predict", "score trajectories with a saved model");
  predict->add_option("--model", model_arg, "run directory or model.json path")->required();
  predict->add_option("--data", data_dir, "dataset directory (points.csv)")->required();
  predict->add_option("--out", out_path, "output CSV path")->required();

  auto* evaluate = app.add_subcommand("evaluate", "compare predictions against labels");
  evaluate->add_option("--pred", pred_path, "predictions CSV")->required();
  evaluate->add_option("--labels", labels_path, "labels CSV")->required();
  evaluate->add_option("--model", model_arg,
                       "optional model bundle; adds normalized-scale metrics");

  auto* ablate = app.add_subcommand("ablate", "run full, no_ls, no_fd and attribute_only");
  ablate->add_option("--data", data_dir, "dataset directory")->required();
  ablate->add_option("--out", out_path, "output root")->required();
  add_config(ablate, exp_schema);

  auto* transfer = app.add_subcommand("transfer", "train on some regions, test on others");
  transfer->add_option("--data", data_dir, "dataset directory")->required();
  transfer->add_option("--out", out_path, "output root")->required();
  transfer->add_option("--train-regions", train_regions, "comma-separated region list")
      ->required();
  transfer->add_option("--test-regions", test_regions, "comma-separated region list")->required();
  add_config(transfer, exp_schema);

  auto* inspect = app.add_subcommand("inspect-graph", "dump the relation-graph edge list");
  inspect->add_option("--data", data_dir, "dataset directory")->required();
  inspect->add_option("--out", out_path, "output CSV path")->required();
  inspect->add_option("--model", model_arg, "optional model bundle providing the encoder");
  add_config(inspect, exp_schema);

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
      return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
      app.exit(e, out, err);
      return 1;
    }

    if (gen->parsed()) {
      auto overrides = detail::parse_extras(gen->remaining());
      auto cfg = detail::load_synth_config(cfg_path, overrides);
      auto trajs = synthgen::generate(cfg);
      std::filesystem::create_directories(out_path);
      {
        std::ofstream points(out_path + "/points.csv");
        if (!points) throw DataError("cannot write " + out_path + "/points.csv");
        trajio::write_points(points, trajs);
      }
      {
        std::ofstream labels(out_path + "/labels.csv");
        if (!labels) throw DataError("cannot write " + out_path + "/labels.csv");
        trajio::write_labels(labels, trajs);
      }
      std::size_t points_total = 0;
      for (const auto& t : trajs) points_total += t.points.size();
      json manifest = {{"format_version", serialize::kFormatVersion},
                       {"kind", "generation-manifest"},
                       {"config", detail::synth_config_to_json(cfg)},
                       {"counts", {{"trajectories", trajs.size()}, {"points", points_total}}}};
      serialize::save_json_file(out_path + "/generation.json", manifest);
      out << "wrote " << trajs.size() << " trajectories (" << points_total << " points) to "
          << out_path << "\n";
    } else if (train->parsed()) {
      auto overrides = detail::parse_extras(train->remaining());
      auto cfg = detail::load_experiment_config(cfg_path, overrides);
      auto dataset = pipeline::load_dataset(data_dir, true);
      auto run = pipeline::run_experiment(dataset.trajs, cfg, out_path);
      out << "run directory: " << run.run_dir << "\n";
      detail::print_metrics_rows(out, run.metrics_rows);
    } else if (predict->parsed()) {
      auto bundle = serialize::load_bundle(detail::model_json_path(model_arg));
      auto dataset = pipeline::load_dataset(data_dir, false);
      auto scored = pipeline::score(bundle, dataset.trajs);
      std::ofstream pred_out(out_path);
      if (!pred_out) throw DataError("cannot write " + out_path);
      serialize::write_scored_csv(pred_out, scored.ids, scored.seconds);
      out << "wrote " << scored.ids.size() << " predictions to " << out_path << "\n";
    } else if (evaluate->parsed()) {
      auto preds = detail::read_predictions(pred_path);
      std::ifstream labels_in(labels_path);
      if (!labels_in) throw DataError("cannot open " + labels_path);
      auto labels = trajio::parse_labels(labels_in);
      std::vector<double> y_true;
      y_true.reserve(preds.ids.size());
      for (const auto& id : preds.ids) {
        auto it = labels.labels.find(id);
        if (it == labels.labels.end()) throw DataError("no label for trajectory " + id);
        y_true.push_back(it->second);
      }
      metrics::MetricsPair pair;
      pair.seconds = metrics::compute_metrics(y_true, preds.values);
      std::vector<std::pair<std::string, metrics::MetricsPair>> rows;
      if (!model_arg.empty()) {
        auto bundle = serialize::load_bundle(detail::model_json_path(model_arg));
        std::vector<double> t_n(y_true.size()), p_n(y_true.size());
        for (std::size_t i = 0; i < y_true.size(); ++i) {
          t_n[i] = bundle.label_norm.apply(y_true[i]);
          p_n[i] = bundle.label_norm.apply(preds.values[i]);
        }
        pair.normalized = metrics::compute_metrics(t_n, p_n);
        rows.emplace_back("eval", pair);
        detail::print_metrics_rows(out, rows);
      } else {
        out << "split,metric,normalized,value\n";
        out << "eval,mse,0," << format_double(pair.seconds.mse) << '\n';
        out << "eval,rmse,0," << format_double(pair.seconds.rmse) << '\n';
        out << "eval,mape,0," << format_double(pair.seconds.mape) << '\n';
        out << "eval,mae,0," << format_double(pair.seconds.mae) << '\n';
      }
    } else if (ablate->parsed()) {
      auto overrides = detail::parse_extras(ablate->remaining());
      auto cfg = detail::load_experiment_config(cfg_path, overrides);
      auto dataset = pipeline::load_dataset(data_dir, true);
      auto result = pipeline::ablate(dataset.trajs, cfg, out_path);
      out << "variant,test_mae_norm,test_mae_seconds,run_dir\n";
      for (const auto& [variant, run] : result.runs) {
        const metrics::MetricsPair* test = nullptr;
        for (const auto& [split, pair] : run.metrics_rows)
          if (split == "test") test = &pair;
        out << variant << ',';
        if (test)
          out << format_double(test->normalized.mae) << ',' << format_double(test->seconds.mae);
        else
          out << ",";
        out << ',' << run.run_dir << "\n";
      }
      out << "summary: " << result.summary_path << "\n";
    } else if (transfer->parsed()) {
      auto overrides = detail::parse_extras(transfer->remaining());
      auto cfg = detail::load_experiment_config(cfg_path, overrides);
      auto dataset = pipeline::load_dataset(data_dir, true);
      auto run = pipeline::domain_transfer(
          dataset.trajs, cfg, detail::split_csv_list(train_regions, "--train-regions"),
          detail::split_csv_list(test_regions, "--test-regions"), out_path);
      out << "run directory: " << run.run_dir << "\n";
      detail::print_metrics_rows(out, run.metrics_rows);
    } else if (inspect->parsed()) {
      auto overrides = detail::parse_extras(inspect->remaining());
      auto cfg = detail::load_experiment_config(cfg_path, overrides);
      auto dataset = pipeline::load_dataset(data_dir, false);
      if (dataset.trajs.size() < 2)
        throw DataError("inspect-graph: need at least 2 trajectories");

      tlm::TlmParams encoder;
      trajio::FeatureNormalizer feat_norm;
      std::size_t cap = cfg.length_cap;
      if (!model_arg.empty()) {
        auto bundle = serialize::load_bundle(detail::model_json_path(model_arg));
        encoder = bundle.encoder;
        feat_norm = bundle.feature_norm;
        cap = bundle.length_cap;
      } else {
        tlm::TlmConfig mc;
        mc.n_state = cfg.n_state;
        mc.hidden = cfg.hidden;
        mc.blocks = cfg.blocks;
        mc.conv_width = cfg.conv_width;
        mc.zoh_variant = cfg.zoh_variant;
        mc.out_proj_init_scale = cfg.out_proj_init_scale;
        encoder = tlm::init_params(mc, cfg.seed);
        feat_norm = trajio::fit_normalizer(dataset.trajs);
      }
      std::size_t steps =
          std::max<std::size_t>(1, std::min(cap, trajio::max_length(dataset.trajs)));
      auto tensor = trajio::pad_and_mask(dataset.trajs, feat_norm, steps);
      auto temporal = tlm::encode(encoder, tensor);
      std::size_t k = std::min(cfg.k_neighbors, dataset.trajs.size() - 1);
      auto graph = sfm::knn_graph(sfm::distance_matrix(sfm::flatten(temporal)), k,
                                  cfg.edge_weight);
      std::ofstream edges(out_path);
      if (!edges) throw DataError("cannot write " + out_path);
      serialize::write_edges_csv(edges, tensor.ids, graph);
      out << "wrote " << graph.edge_count() << " edges to " << out_path << "\n";
    }
    return 0;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return 2;
  } catch (const ComputeError& e) {
    err << "compute error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace trispace::cli
