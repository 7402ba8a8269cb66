#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "trispace/core.hpp"
#include "trispace/metrics.hpp"
#include "trispace/pipeline.hpp"
#include "trispace/serialize.hpp"
#include "trispace/synthgen.hpp"

using namespace trispace;
namespace fs = std::filesystem;

namespace {

pipeline::ExperimentConfig small_config() {
  pipeline::ExperimentConfig cfg;
  cfg.length_cap = 32;
  cfg.n_state = 2;
  cfg.hidden = 4;
  cfg.blocks = 1;
  cfg.conv_width = 3;
  cfg.epochs = 3;
  cfg.learning_rate = 1e-3;
  cfg.k_neighbors = 3;
  cfg.diffusion_iterations = 2;
  cfg.hgb_rounds = 15;
  cfg.hgb_max_depth = 3;
  return cfg;
}

std::vector<trajio::Trajectory> small_fleet(std::size_t n = 40, std::uint64_t seed = 42) {
  synthgen::SynthConfig sc;
  sc.seed = seed;
  sc.n_trajectories = n;
  sc.length_mean = 18;
  sc.length_std = 8;
  sc.length_cap = 32;
  return synthgen::generate(sc);
}

std::string temp_dir(const std::string& tag) {
  auto dir = fs::temp_directory_path() / ("trispace-test-" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

double test_mae_seconds(const pipeline::RunResult& r) {
  for (const auto& [name, pair] : r.metrics_rows)
    if (name == "test") return pair.seconds.mae;
  throw std::runtime_error("no test row");
}

}  // namespace

TEST(Metrics, HandValues) {
  auto m = metrics::compute_metrics({0.0, 0.0}, {3.0, 4.0});
  EXPECT_NEAR(m.mse, 12.5, 1e-12);
  EXPECT_NEAR(m.rmse, std::sqrt(12.5), 1e-12);
  EXPECT_NEAR(m.mae, 3.5, 1e-12);
  EXPECT_TRUE(std::isfinite(m.mape));  // zero targets hit the guard

  auto p = metrics::compute_metrics({100.0}, {110.0});
  EXPECT_NEAR(p.mape, 0.10, 1e-12);
  EXPECT_NEAR(p.mae, 10.0, 1e-12);

  EXPECT_THROW(metrics::compute_metrics({1.0}, {1.0, 2.0}), UsageError);
  EXPECT_THROW(metrics::compute_metrics({}, {}), UsageError);
}

TEST(Metrics, RmseIsRootOfMse) {
  auto rng = make_rng(77, "metrics");
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  std::vector<double> a(31), b(31);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = u(rng);
    b[i] = u(rng);
  }
  auto m = metrics::compute_metrics(a, b);
  EXPECT_NEAR(m.rmse * m.rmse, m.mse, 1e-12);
  EXPECT_GE(m.mae, 0.0);
  EXPECT_LE(m.mae * m.mae, m.mse + 1e-12);  // Jensen
}

TEST(Split, SizesAndPartition) {
  auto s = pipeline::split_indices(100, 0.7, 0.1, 0.2, 42);
  EXPECT_EQ(s.train.size(), 70u);
  EXPECT_EQ(s.val.size(), 10u);
  EXPECT_EQ(s.test.size(), 20u);

  std::set<std::size_t> seen;
  for (const auto* part : {&s.train, &s.val, &s.test})
    for (std::size_t i : *part) EXPECT_TRUE(seen.insert(i).second);
  EXPECT_EQ(seen.size(), 100u);
  EXPECT_EQ(*seen.begin(), 0u);
  EXPECT_EQ(*seen.rbegin(), 99u);
}

TEST(Split, FloorsGiveRemainderToTest) {
  auto s = pipeline::split_indices(10, 0.7, 0.1, 0.2, 1);
  EXPECT_EQ(s.train.size(), 7u);
  EXPECT_EQ(s.val.size(), 1u);
  EXPECT_EQ(s.test.size(), 2u);

  auto odd = pipeline::split_indices(11, 0.7, 0.1, 0.2, 1);
  EXPECT_EQ(odd.train.size(), 7u);
  EXPECT_EQ(odd.val.size(), 1u);
  EXPECT_EQ(odd.test.size(), 3u);  // remainder
}

TEST(Split, DeterministicPerSeed) {
  auto a = pipeline::split_indices(50, 0.7, 0.1, 0.2, 9);
  auto b = pipeline::split_indices(50, 0.7, 0.1, 0.2, 9);
  auto c = pipeline::split_indices(50, 0.7, 0.1, 0.2, 10);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.val, b.val);
  EXPECT_EQ(a.test, b.test);
  EXPECT_NE(a.train, c.train);
}

TEST(Split, RejectsBadInput) {
  EXPECT_THROW(pipeline::split_indices(9, 0.7, 0.1, 0.2, 1), DataError);
  EXPECT_THROW(pipeline::split_indices(100, 0.7, 0.1, 0.1, 1), UsageError);
  EXPECT_THROW(pipeline::split_indices(100, 0.7, -0.1, 0.4, 1), UsageError);
}

TEST(Config, JsonRoundTripIsStable) {
  pipeline::ExperimentConfig cfg;
  cfg.seed = 7;
  cfg.alpha = 0.25;
  cfg.edge_weight = sfm::EdgeWeight::kGaussian;
  cfg.zoh_variant = tlm::ZohVariant::kDoubleDelta;
  cfg.structure_loss = learn::StructureLoss::kLaplacian;
  cfg.no_ls = true;
  auto j = pipeline::config_to_json(cfg);
  auto back = pipeline::config_from_json(j);
  EXPECT_EQ(pipeline::config_to_json(back).dump(), j.dump());
}

TEST(Config, UnknownKeysFail) {
  auto j = pipeline::config_to_json({});
  j["not_a_key"] = 1;
  EXPECT_THROW(pipeline::config_from_json(j), DataError);

  pipeline::ExperimentConfig cfg;
  EXPECT_THROW(pipeline::apply_override(cfg, "not_a_key", "1"), UsageError);
}

TEST(Config, OverridesCoverEveryFieldType) {
  pipeline::ExperimentConfig cfg;
  pipeline::apply_override(cfg, "seed", "99");
  pipeline::apply_override(cfg, "alpha", "0.5");
  pipeline::apply_override(cfg, "no_fd", "true");
  pipeline::apply_override(cfg, "shuffle_pairing", "0");
  pipeline::apply_override(cfg, "edge_weight", "gaussian");
  pipeline::apply_override(cfg, "zoh_variant", "double_delta");
  pipeline::apply_override(cfg, "structure_loss", "laplacian");
  EXPECT_EQ(cfg.seed, 99u);
  EXPECT_DOUBLE_EQ(cfg.alpha, 0.5);
  EXPECT_TRUE(cfg.no_fd);
  EXPECT_FALSE(cfg.shuffle_pairing);
  EXPECT_EQ(cfg.edge_weight, sfm::EdgeWeight::kGaussian);
  EXPECT_EQ(cfg.zoh_variant, tlm::ZohVariant::kDoubleDelta);
  EXPECT_EQ(cfg.structure_loss, learn::StructureLoss::kLaplacian);

  EXPECT_THROW(pipeline::apply_override(cfg, "no_fd", "maybe"), UsageError);
  EXPECT_THROW(pipeline::apply_override(cfg, "alpha", "fast"), UsageError);
  EXPECT_THROW(pipeline::apply_override(cfg, "edge_weight", "cosine"), UsageError);
}

TEST(Config, ValidationCatchesBadRanges) {
  pipeline::ExperimentConfig cfg;
  EXPECT_NO_THROW(pipeline::validate_config(cfg));
  cfg.train_frac = 0.8;  // fractions now sum to 1.1
  EXPECT_THROW(pipeline::validate_config(cfg), UsageError);

  cfg = {};
  cfg.hgb_shrinkage = 0.0;
  EXPECT_THROW(pipeline::validate_config(cfg), UsageError);

  cfg = {};
  cfg.k_neighbors = 0;
  EXPECT_THROW(pipeline::validate_config(cfg), UsageError);
}

TEST(Config, HashChangesWithContentAndTag) {
  pipeline::ExperimentConfig a, b;
  EXPECT_EQ(pipeline::config_hash(a), pipeline::config_hash(b));
  b.seed = 43;
  EXPECT_NE(pipeline::config_hash(a), pipeline::config_hash(b));
  EXPECT_NE(pipeline::config_hash(a), pipeline::config_hash(a, "transfer:+r0>+r1"));
  EXPECT_EQ(pipeline::config_hash(a).size(), 16u);
}

TEST(Experiment, RunProducesArtifactsAndConsistentBundle) {
  auto trajs = small_fleet();
  auto cfg = small_config();
  auto root = temp_dir("run");
  auto r = pipeline::run_experiment(trajs, cfg, root);

  EXPECT_EQ(r.run_dir, root + "/" + pipeline::config_hash(cfg));
  for (const char* f :
       {"model.json", "metrics.csv", "manifest.json", "loss_history.csv", "predictions.csv",
        "edges.csv"})
    EXPECT_TRUE(fs::exists(r.run_dir + "/" + f)) << f;

  std::vector<std::string> rows;
  for (const auto& [name, pair] : r.metrics_rows) rows.push_back(name);
  EXPECT_EQ(rows, (std::vector<std::string>{"train", "val", "test"}));

  EXPECT_EQ(r.manifest.at("kind"), "run-manifest");
  EXPECT_EQ(r.manifest.at("variant"), "full");
  EXPECT_EQ(r.manifest.at("config_hash"), pipeline::config_hash(cfg));
  EXPECT_EQ(r.manifest.at("counts").at("total").get<std::size_t>(), trajs.size());
  EXPECT_EQ(r.manifest.at("counts").at("train").get<std::size_t>(), 28u);
  EXPECT_TRUE(r.manifest.at("metrics").contains("test"));
  ASSERT_TRUE(r.manifest.at("transfer").is_boolean());
  EXPECT_FALSE(r.manifest.at("transfer").get<bool>());

  // the saved bundle must reproduce the run's own test evaluation
  auto bundle = serialize::load_bundle(r.run_dir + "/model.json");
  auto splits = pipeline::split_indices(trajs.size(), cfg.train_frac, cfg.val_frac,
                                        cfg.test_frac, cfg.seed);
  auto test_set = pipeline::subset(trajs, splits.test);
  auto scored = pipeline::score(bundle, test_set);
  std::vector<double> y_true;
  for (const auto& t : test_set) y_true.push_back(*t.label);
  auto m = metrics::compute_metrics(y_true, scored.seconds);
  EXPECT_NEAR(m.mae, test_mae_seconds(r), 1e-9 * std::max(1.0, test_mae_seconds(r)));
}

TEST(Experiment, DeterministicMetricsAcrossReruns) {
  auto trajs = small_fleet();
  auto cfg = small_config();
  auto r1 = pipeline::run_experiment(trajs, cfg, temp_dir("det1"));
  auto r2 = pipeline::run_experiment(trajs, cfg, temp_dir("det2"));
  ASSERT_EQ(r1.metrics_rows.size(), r2.metrics_rows.size());
  for (std::size_t i = 0; i < r1.metrics_rows.size(); ++i) {
    EXPECT_EQ(r1.metrics_rows[i].first, r2.metrics_rows[i].first);
    EXPECT_DOUBLE_EQ(r1.metrics_rows[i].second.seconds.mae,
                     r2.metrics_rows[i].second.seconds.mae);
    EXPECT_DOUBLE_EQ(r1.metrics_rows[i].second.normalized.mse,
                     r2.metrics_rows[i].second.normalized.mse);
  }
}

TEST(Experiment, AlphaZeroMatchesAttributeOnly) {
  auto trajs = small_fleet();
  auto zero_alpha = small_config();
  zero_alpha.alpha = 0.0;
  auto attr_only = small_config();
  attr_only.attribute_only = true;

  auto r1 = pipeline::run_experiment(trajs, zero_alpha, temp_dir("a0"));
  auto r2 = pipeline::run_experiment(trajs, attr_only, temp_dir("ao"));
  EXPECT_NEAR(test_mae_seconds(r1), test_mae_seconds(r2), 1e-9);
}

TEST(Experiment, NoFdMatchesAttributeOnlyPredictions) {
  // no_fd features are (1 + alpha) * attributes; the binned trees are
  // invariant to a positive rescale of every feature
  auto trajs = small_fleet();
  auto no_fd = small_config();
  no_fd.no_fd = true;
  auto attr_only = small_config();
  attr_only.attribute_only = true;

  auto r1 = pipeline::run_experiment(trajs, no_fd, temp_dir("nofd"));
  auto r2 = pipeline::run_experiment(trajs, attr_only, temp_dir("ao2"));
  double mae = test_mae_seconds(r2);
  EXPECT_NEAR(test_mae_seconds(r1), mae, 1e-6 * std::max(1.0, mae));
}

TEST(Experiment, VariantNamesFollowFlags) {
  pipeline::ExperimentConfig cfg;
  EXPECT_STREQ(pipeline::detail::variant_name(cfg), "full");
  cfg.no_ls = true;
  EXPECT_STREQ(pipeline::detail::variant_name(cfg), "no_ls");
  cfg.no_ls = false;
  cfg.no_fd = true;
  EXPECT_STREQ(pipeline::detail::variant_name(cfg), "no_fd");
  cfg.attribute_only = true;
  EXPECT_STREQ(pipeline::detail::variant_name(cfg), "attribute_only");
}

TEST(Transfer, DegenerateRunMatchesPlainRun) {
  auto trajs = small_fleet(60);
  auto cfg = small_config();
  auto root = temp_dir("transfer-deg");

  auto tr = pipeline::domain_transfer(trajs, cfg, {"r0"}, {"r0"}, root);
  EXPECT_TRUE(tr.manifest.at("transfer").at("degenerate").get<bool>());
  for (const auto& [name, pair] : tr.metrics_rows) EXPECT_NE(name, "transfer");

  std::vector<trajio::Trajectory> r0;
  for (const auto& t : trajs)
    if (synthgen::region_of(t.id) == "r0") r0.push_back(t);
  auto plain = pipeline::run_experiment(r0, cfg, temp_dir("transfer-plain"));
  ASSERT_EQ(tr.metrics_rows.size(), plain.metrics_rows.size());
  for (std::size_t i = 0; i < tr.metrics_rows.size(); ++i)
    EXPECT_DOUBLE_EQ(tr.metrics_rows[i].second.seconds.mae,
                     plain.metrics_rows[i].second.seconds.mae);
}

TEST(Transfer, DisjointRegionsAddHoldoutRow) {
  auto trajs = small_fleet(60);
  auto cfg = small_config();
  auto tr = pipeline::domain_transfer(trajs, cfg, {"r0", "r1"}, {"r2"}, temp_dir("transfer-dis"));
  bool has_transfer = false;
  for (const auto& [name, pair] : tr.metrics_rows) has_transfer |= name == "transfer";
  EXPECT_TRUE(has_transfer);
  EXPECT_FALSE(tr.manifest.at("transfer").at("degenerate").get<bool>());
  EXPECT_EQ(tr.manifest.at("counts").at("total").get<std::size_t>(), 40u);  // r0+r1 pool
}

TEST(Transfer, RejectsPartialOverlapAndMissingRegions) {
  auto trajs = small_fleet(60);
  auto cfg = small_config();
  EXPECT_THROW(
      pipeline::domain_transfer(trajs, cfg, {"r0", "r1"}, {"r1"}, temp_dir("transfer-bad1")),
      UsageError);
  EXPECT_THROW(pipeline::domain_transfer(trajs, cfg, {"r9"}, {"r0"}, temp_dir("transfer-bad2")),
               DataError);
  EXPECT_THROW(pipeline::domain_transfer(trajs, cfg, {}, {"r0"}, temp_dir("transfer-bad3")),
               UsageError);
}

TEST(Ablation, RunsAllFourVariants) {
  auto trajs = small_fleet();
  auto cfg = small_config();
  cfg.attribute_only = true;  // base flags must be ignored
  auto root = temp_dir("ablate");
  auto result = pipeline::ablate(trajs, cfg, root);

  ASSERT_EQ(result.runs.size(), 4u);
  EXPECT_EQ(result.runs[0].first, "full");
  EXPECT_EQ(result.runs[1].first, "no_ls");
  EXPECT_EQ(result.runs[2].first, "no_fd");
  EXPECT_EQ(result.runs[3].first, "attribute_only");
  for (const auto& [variant, run] : result.runs)
    EXPECT_EQ(run.manifest.at("variant").get<std::string>(), variant);

  ASSERT_TRUE(fs::exists(result.summary_path));
  std::ifstream in(result.summary_path);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "variant,split,metric,normalized,value");
  std::size_t rows = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  EXPECT_EQ(rows, 4u * 8u);  // 4 variants x (4 metrics x 2 scales)
}

TEST(DatasetIo, RoundTripsThroughDirectory) {
  auto trajs = small_fleet(15);
  auto dir = temp_dir("dataset");
  {
    std::ofstream p(dir + "/points.csv");
    trajio::write_points(p, trajs);
    std::ofstream l(dir + "/labels.csv");
    trajio::write_labels(l, trajs);
  }
  auto d = pipeline::load_dataset(dir, true);
  ASSERT_EQ(d.trajs.size(), trajs.size());
  EXPECT_EQ(d.missing_labels, 0u);
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    EXPECT_EQ(d.trajs[i].id, trajs[i].id);
    ASSERT_TRUE(d.trajs[i].label);
    EXPECT_DOUBLE_EQ(*d.trajs[i].label, *trajs[i].label);
    EXPECT_EQ(d.trajs[i].points.size(), trajs[i].points.size());
  }
}

TEST(DatasetIo, MissingFilesThrow) {
  auto dir = temp_dir("dataset-missing");
  EXPECT_THROW(pipeline::load_dataset(dir, false), DataError);

  auto trajs = small_fleet(12);
  {
    std::ofstream p(dir + "/points.csv");
    trajio::write_points(p, trajs);
  }
  EXPECT_THROW(pipeline::load_dataset(dir, true), DataError);  // labels required
  auto d = pipeline::load_dataset(dir, false);
  EXPECT_EQ(d.trajs.size(), trajs.size());
}
