#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "trispace/cli.hpp"
#include "trispace/serialize.hpp"

using namespace trispace;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

CliResult run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("trispace");
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliResult r;
  r.code = cli::dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string temp_dir(const std::string& tag) {
  auto dir = fs::temp_directory_path() / ("trispace-cli-" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> small_gen_args(const std::string& out_dir) {
  return {"generate",      "--out", out_dir, "--n_trajectories", "40",
          "--length_mean", "18",    "--length_std", "8", "--length_cap", "32"};
}

std::vector<std::string> small_train_args(const std::string& data, const std::string& out) {
  return {"train",         "--data",       data, "--out",        out,
          "--epochs",      "2",            "--hidden",           "4",
          "--n_state",     "2",            "--blocks",           "1",
          "--conv_width",  "3",            "--k_neighbors",      "3",
          "--diffusion_iterations", "2",   "--hgb_rounds",       "10",
          "--hgb_max_depth", "3",          "--length_cap",       "32",
          "--learning_rate", "0.001"};
}

struct EnvSeedGuard {
  EnvSeedGuard() { unsetenv("TRISPACE_SEED"); }
  ~EnvSeedGuard() { unsetenv("TRISPACE_SEED"); }
};

}  // namespace

TEST(Cli, HelpExitsZeroAndListsSubcommands) {
  auto r = run_cli({"--help"});
  EXPECT_EQ(r.code, 0);
  for (const char* sub :
       {"generate", "train", "predict", "evaluate", "ablate", "transfer", "inspect-graph"})
    EXPECT_NE(r.out.find(sub), std::string::npos) << sub;
}

TEST(Cli, SubcommandHelpListsConfigKeys) {
  auto r = run_cli({"train", "--help"});
  EXPECT_EQ(r.code, 0);
  for (const char* key : {"learning_rate", "k_neighbors", "eta", "alpha", "hgb_rounds",
                          "zoh_variant", "structure_loss"})
    EXPECT_NE(r.out.find(key), std::string::npos) << key;

  auto g = run_cli({"generate", "--help"});
  EXPECT_EQ(g.code, 0);
  EXPECT_NE(g.out.find("congestion_strength"), std::string::npos);
  EXPECT_NE(g.out.find("drop_prob_max"), std::string::npos);
}

TEST(Cli, BadInvocationsExitOne) {
  EXPECT_EQ(run_cli({}).code, 1);
  EXPECT_EQ(run_cli({"frobnicate"}).code, 1);
  EXPECT_EQ(run_cli({"generate"}).code, 1);  // --out missing

  auto unknown = run_cli({"generate", "--out", temp_dir("unk"), "--not_a_key", "5"});
  EXPECT_EQ(unknown.code, 1);
  EXPECT_NE(unknown.err.find("usage error"), std::string::npos);

  auto dangling = run_cli({"generate", "--out", temp_dir("dang"), "--length_mean"});
  EXPECT_EQ(dangling.code, 1);

  auto bad_value = run_cli(
      {"generate", "--out", temp_dir("badv"), "--drop_prob_min", "0.9", "--drop_prob_max", "0.1"});
  EXPECT_EQ(bad_value.code, 1);
}

TEST(Cli, MissingDataExitsTwo) {
  auto r = run_cli({"train", "--data", "/nonexistent-trispace-dir", "--out", temp_dir("md")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("data error"), std::string::npos);

  auto p = run_cli({"predict", "--model", "/nonexistent-trispace-model.json", "--data",
                    "/nonexistent-trispace-dir", "--out", temp_dir("mp") + "/p.csv"});
  EXPECT_EQ(p.code, 2);
}

TEST(Cli, FullChainGenerateTrainPredictEvaluate) {
  EnvSeedGuard guard;
  auto data = temp_dir("chain-data");
  auto runs = temp_dir("chain-runs");

  auto gen = run_cli(small_gen_args(data));
  ASSERT_EQ(gen.code, 0) << gen.err;
  EXPECT_TRUE(fs::exists(data + "/points.csv"));
  EXPECT_TRUE(fs::exists(data + "/labels.csv"));
  EXPECT_TRUE(fs::exists(data + "/generation.json"));
  EXPECT_NE(gen.out.find("wrote 40 trajectories"), std::string::npos);

  auto train = run_cli(small_train_args(data, runs));
  ASSERT_EQ(train.code, 0) << train.err;
  auto pos = train.out.find("run directory: ");
  ASSERT_NE(pos, std::string::npos);
  auto run_dir = train.out.substr(pos + 15, train.out.find('\n', pos) - pos - 15);
  EXPECT_TRUE(fs::exists(run_dir + "/model.json"));
  EXPECT_TRUE(fs::exists(run_dir + "/metrics.csv"));
  EXPECT_NE(train.out.find("split,metric,normalized,value"), std::string::npos);
  EXPECT_NE(train.out.find("test,mae,0,"), std::string::npos);

  auto preds_path = temp_dir("chain-preds") + "/preds.csv";
  auto pred = run_cli({"predict", "--model", run_dir, "--data", data, "--out", preds_path});
  ASSERT_EQ(pred.code, 0) << pred.err;
  auto preds_text = slurp(preds_path);
  EXPECT_EQ(preds_text.rfind("traj_id,y_pred_seconds\n", 0), 0u);

  auto eval = run_cli({"evaluate", "--pred", preds_path, "--labels", data + "/labels.csv"});
  ASSERT_EQ(eval.code, 0) << eval.err;
  EXPECT_NE(eval.out.find("split,metric,normalized,value"), std::string::npos);
  EXPECT_NE(eval.out.find("eval,mae,0,"), std::string::npos);

  // with a bundle the normalized-scale rows appear as well
  auto eval_model = run_cli({"evaluate", "--pred", preds_path, "--labels", data + "/labels.csv",
                             "--model", run_dir});
  ASSERT_EQ(eval_model.code, 0) << eval_model.err;
  EXPECT_NE(eval_model.out.find("eval,mae,1,"), std::string::npos);
  EXPECT_NE(eval_model.out.find("eval,mae,0,"), std::string::npos);

  // the model path may also point at model.json directly
  auto pred2 = run_cli({"predict", "--model", run_dir + "/model.json", "--data", data, "--out",
                        preds_path});
  EXPECT_EQ(pred2.code, 0) << pred2.err;

  auto edges_path = temp_dir("chain-edges") + "/edges.csv";
  auto inspect =
      run_cli({"inspect-graph", "--data", data, "--out", edges_path, "--model", run_dir});
  ASSERT_EQ(inspect.code, 0) << inspect.err;
  EXPECT_EQ(slurp(edges_path).rfind("src,dst,weight\n", 0), 0u);
}

TEST(Cli, EvaluateSameFileGivesZeroError) {
  EnvSeedGuard guard;
  auto data = temp_dir("self-eval");
  ASSERT_EQ(run_cli(small_gen_args(data)).code, 0);
  auto r = run_cli(
      {"evaluate", "--pred", data + "/labels.csv", "--labels", data + "/labels.csv"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("eval,mse,0,0\n"), std::string::npos);
  EXPECT_NE(r.out.find("eval,rmse,0,0\n"), std::string::npos);
  EXPECT_NE(r.out.find("eval,mape,0,0\n"), std::string::npos);
  EXPECT_NE(r.out.find("eval,mae,0,0\n"), std::string::npos);
}

TEST(Cli, GenerateIsByteDeterministic) {
  EnvSeedGuard guard;
  auto a = temp_dir("gen-a");
  auto b = temp_dir("gen-b");
  ASSERT_EQ(run_cli(small_gen_args(a)).code, 0);
  ASSERT_EQ(run_cli(small_gen_args(b)).code, 0);
  EXPECT_EQ(slurp(a + "/points.csv"), slurp(b + "/points.csv"));
  EXPECT_EQ(slurp(a + "/labels.csv"), slurp(b + "/labels.csv"));
  EXPECT_EQ(slurp(a + "/generation.json"), slurp(b + "/generation.json"));

  auto c = temp_dir("gen-c");
  auto args = small_gen_args(c);
  args.push_back("--seed");
  args.push_back("7");
  ASSERT_EQ(run_cli(args).code, 0);
  EXPECT_NE(slurp(a + "/points.csv"), slurp(c + "/points.csv"));
}

TEST(Cli, SeedEnvironmentFallback) {
  EnvSeedGuard guard;
  auto a = temp_dir("env-a");
  setenv("TRISPACE_SEED", "123", 1);
  ASSERT_EQ(run_cli(small_gen_args(a)).code, 0);
  auto manifest = serialize::load_json_file(a + "/generation.json");
  EXPECT_EQ(manifest.at("config").at("seed").get<std::uint64_t>(), 123u);

  // an explicit --seed wins over the environment
  auto b = temp_dir("env-b");
  auto args = small_gen_args(b);
  args.push_back("--seed");
  args.push_back("9");
  ASSERT_EQ(run_cli(args).code, 0);
  auto manifest_b = serialize::load_json_file(b + "/generation.json");
  EXPECT_EQ(manifest_b.at("config").at("seed").get<std::uint64_t>(), 9u);

  setenv("TRISPACE_SEED", "not-a-number", 1);
  auto bad = run_cli(small_gen_args(temp_dir("env-c")));
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("TRISPACE_SEED"), std::string::npos);
}

TEST(Cli, TransferRunsAndRejectsOverlap) {
  EnvSeedGuard guard;
  auto data = temp_dir("cli-transfer-data");
  auto args = small_gen_args(data);
  args[4] = "60";  // more rows so each region split stays viable
  ASSERT_EQ(run_cli(args).code, 0);

  auto base = small_train_args(data, temp_dir("cli-transfer-out"));
  base[0] = "transfer";
  base.push_back("--train-regions");
  base.push_back("r0,r1");
  base.push_back("--test-regions");
  base.push_back("r2");
  auto r = run_cli(base);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("transfer,mae,0,"), std::string::npos);

  auto overlap = small_train_args(data, temp_dir("cli-transfer-bad"));
  overlap[0] = "transfer";
  overlap.push_back("--train-regions");
  overlap.push_back("r0,r1");
  overlap.push_back("--test-regions");
  overlap.push_back("r1");
  EXPECT_EQ(run_cli(overlap).code, 1);
}

TEST(Cli, AblateEmitsSummaryTable) {
  EnvSeedGuard guard;
  auto data = temp_dir("cli-ablate-data");
  ASSERT_EQ(run_cli(small_gen_args(data)).code, 0);
  auto args = small_train_args(data, temp_dir("cli-ablate-out"));
  args[0] = "ablate";
  auto r = run_cli(args);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("variant,test_mae_norm,test_mae_seconds,run_dir"), std::string::npos);
  for (const char* v : {"full,", "no_ls,", "no_fd,", "attribute_only,"})
    EXPECT_NE(r.out.find(v), std::string::npos) << v;
  auto pos = r.out.find("summary: ");
  ASSERT_NE(pos, std::string::npos);
  auto path = r.out.substr(pos + 9, r.out.find('\n', pos) - pos - 9);
  EXPECT_TRUE(fs::exists(path));
}
