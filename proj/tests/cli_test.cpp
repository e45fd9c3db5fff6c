#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "support/temp_dir.hpp"
#include "tsfool/cli.hpp"

using namespace tsfool;
using tsfool::testing::slurp;
using tsfool::testing::TempDir;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

// Small synthetic CSV plus three tiny trained models shared by several tests.
class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir;
    csv_ = dir_->file("data.csv");
    ASSERT_EQ(run({"synth", "--rows", "300", "--channels", "3", "--seed", "4", "-o", csv_}).code, 0);
    for (const char* arch : {"cnn", "lstm", "gru"}) {
      const auto r = run({"train", "--csv", csv_, "--target", "target", "--arch", arch,
                          "--widths", "4,4,4", "--lookback", "6", "--epochs", "2",
                          "--batch-size", "32", "--out", dir_->file(arch), "--no-timestamp"});
      ASSERT_EQ(r.code, 0) << r.err;
    }
  }
  static void TearDownTestSuite() { delete dir_; }

  static std::string model(const std::string& arch) {
    return dir_->file(arch) + "/model.bin";
  }
  static std::vector<std::string> data_flags() {
    return {"--csv", csv_, "--target", "target"};
  }

  static TempDir* dir_;
  static std::string csv_;
};

TempDir* Pipeline::dir_ = nullptr;
std::string Pipeline::csv_;

std::vector<std::string> cat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST(Cli, SynthIsDeterministic) {
  TempDir dir;
  ASSERT_EQ(run({"synth", "--rows", "2000", "--channels", "7", "--seed", "1", "-o",
                 dir.file("a.csv")}).code, 0);
  ASSERT_EQ(run({"synth", "--rows", "2000", "--channels", "7", "--seed", "1", "-o",
                 dir.file("b.csv")}).code, 0);
  const auto a = slurp(dir.file("a.csv"));
  EXPECT_EQ(a, slurp(dir.file("b.csv")));
  EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 2001);
  const auto frame = data::load_csv(dir.file("a.csv"));
  EXPECT_EQ(frame, data::synth_generate(1, 2000, 7));
}

TEST(Cli, SynthRejectsTooFewRows) {
  TempDir dir;
  const auto r = run({"synth", "--rows", "99", "-o", dir.file("x.csv")});
  EXPECT_EQ(r.code, cli::kUsage);
  EXPECT_FALSE(std::filesystem::exists(dir.file("x.csv")));
}

TEST(Cli, HelpExitsZeroForEveryCommand) {
  EXPECT_EQ(run({"--help"}).code, 0);
  for (const char* cmd : {"synth", "prep", "train", "eval", "attack", "transfer", "sweep"}) {
    const auto r = run({cmd, "--help"});
    EXPECT_EQ(r.code, 0) << cmd;
    EXPECT_NE(r.out.find("--out"), std::string::npos) << cmd;
  }
  EXPECT_NE(run({"attack", "--help"}).out.find("--eps"), std::string::npos);
  EXPECT_NE(run({"train", "--help"}).out.find("--epochs"), std::string::npos);
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run({}).code, cli::kUsage);
  EXPECT_EQ(run({"frobnicate"}).code, cli::kUsage);
  EXPECT_EQ(run({"train", "--bogus"}).code, cli::kUsage);
  EXPECT_EQ(run({"train", "--epochs", "0"}).code, cli::kUsage);
  EXPECT_EQ(run({"train", "--arch", "mlp"}).code, cli::kUsage);
  EXPECT_EQ(run({"train", "--preset", "nope"}).code, cli::kUsage);
  EXPECT_EQ(run({"attack", "--model", "absent.bin"}).code, cli::kUsage);
}

TEST(Cli, PresetsFollowTheHyperparameterTable) {
  auto power = cli::resolve(cli::find_preset("power-lstm").values);
  EXPECT_EQ(power.arch, nn::Arch::LSTM);
  EXPECT_EQ(power.widths, (std::vector<std::size_t>{30, 30, 30}));
  EXPECT_EQ(power.train.batch_size, 32u);
  EXPECT_EQ(power.train.epochs, 250u);
  EXPECT_EQ(power.recipe.lookback, 14u);
  EXPECT_EQ(power.recipe.resample_period, 3600);

  auto stock = cli::resolve(cli::find_preset("stock-gru").values);
  EXPECT_EQ(stock.arch, nn::Arch::GRU);
  EXPECT_EQ(stock.widths, (std::vector<std::size_t>{100, 100, 100}));
  EXPECT_EQ(stock.train.batch_size, 14u);
  EXPECT_EQ(stock.train.epochs, 300u);
  EXPECT_EQ(stock.recipe.lookback, 60u);

  auto cnn = cli::resolve(cli::find_preset("power-cnn").values);
  EXPECT_EQ(cnn.widths, (std::vector<std::size_t>{60, 60, 60}));
  EXPECT_EQ(cnn.train.batch_size, 512u);
  EXPECT_EQ(cnn.train.epochs, 200u);
  EXPECT_EQ(cli::resolve(cli::find_preset("power-lstm-alt").values).widths,
            (std::vector<std::size_t>{100, 100, 100}));
}

TEST(Cli, ConfigFileLayersAndUnknownKeys) {
  const auto s = cli::parse_config(
      "# comment\n[model]\narch = gru\nwidths = 5,5\n[train]\nepochs = 7\n");
  EXPECT_EQ(s.at("model.arch"), "gru");
  EXPECT_EQ(cli::resolve(s).train.epochs, 7u);
  EXPECT_THROW(cli::parse_config("[model]\ncolour = red\n"), cli::UsageError);
  EXPECT_THROW(cli::parse_config("arch = gru\n"), cli::UsageError);
  EXPECT_THROW(cli::parse_config("[model]\narch\n"), cli::UsageError);

  TempDir dir;
  const auto cfg = dir.write("run.ini", "[model]\narch = gru\n[train]\nepochs = 0\n");
  EXPECT_EQ(run({"train", "--config", cfg}).code, cli::kUsage);  // epochs 0 from file
  cli::detail::Layers l;
  l.config_path = dir.write("ok.ini", "[run]\npreset = power-gru\n[train]\nepochs = 9\n");
  l.flags["train.epochs"] = "3";
  const auto merged = cli::resolve(cli::detail::merge(l));
  EXPECT_EQ(merged.train.epochs, 3u);               // flag beats file
  EXPECT_EQ(merged.widths, (std::vector<std::size_t>{30, 30, 30}));  // preset via file
}

TEST(Cli, SeedEnvironmentOverridesConfigButNotFlag) {
  cli::detail::Layers l;
  TempDir dir;
  l.config_path = dir.write("s.ini", "[run]\nseed = 5\n");
  ::setenv("TSFOOL_SEED", "11", 1);
  EXPECT_EQ(cli::resolve(cli::detail::merge(l)).seed, 11u);
  EXPECT_EQ(cli::resolve(cli::detail::merge(l)).model_seed, 11u);
  l.flags["run.seed"] = "13";
  EXPECT_EQ(cli::resolve(cli::detail::merge(l)).seed, 13u);
  ::unsetenv("TSFOOL_SEED");
  l.flags.clear();
  EXPECT_EQ(cli::resolve(cli::detail::merge(l)).seed, 5u);
}

TEST(Cli, MissingCsvExitsTwoWithoutFiles) {
  TempDir dir;
  const auto out = dir.file("run");
  const auto r = run({"train", "--csv", dir.file("absent.csv"), "--out", out});
  EXPECT_EQ(r.code, cli::kUsage);
  EXPECT_NE(r.err.find("absent.csv"), std::string::npos);
  EXPECT_FALSE(std::filesystem::exists(out));
}

TEST_F(Pipeline, TrainWritesModelAndHistory) {
  const auto hist = slurp(dir_->file("gru") + "/history.csv");
  EXPECT_EQ(hist.substr(0, hist.find('\n')), "epoch,train_loss");
  EXPECT_EQ(std::count(hist.begin(), hist.end(), '\n'), 3);
  const auto m = io::load_model(model("gru"));
  EXPECT_EQ(m.spec.label(), "GRU(4,4,4) lh(6)");
  EXPECT_EQ(m.history.size(), 2u);
}

TEST_F(Pipeline, ZeroEpsilonAttackLeavesRmse) {
  const auto out = dir_->file("eps0");
  const auto r = run(cat({"attack", "--model", model("lstm"), "--eps", "0", "--out", out},
                         data_flags()));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(slurp(out + "/attack.json"));
  EXPECT_EQ(j["rmse_attacked"], j["rmse_clean"]);
  EXPECT_TRUE(j.contains("generated_at"));
}

TEST_F(Pipeline, AttackJsonHasDocumentedKeys) {
  const auto out = dir_->file("bim");
  const auto r = run(cat({"attack", "--model", model("cnn"), "--kind", "bim", "--eps", "0.2",
                          "--alpha", "0.02", "--iters", "5", "--signature", "2", "--out", out,
                          "--no-timestamp"},
                         data_flags()));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::ordered_json::parse(slurp(out + "/attack.json"));
  std::vector<std::string> keys;
  for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
  EXPECT_EQ(keys, (std::vector<std::string>{"model", "arch", "attack", "epsilon", "alpha",
                                            "iters", "rmse_clean", "rmse_attacked",
                                            "pct_increase"}));
  EXPECT_EQ(j["iters"], 5);
  const auto sig = slurp(out + "/signature.csv");
  EXPECT_EQ(std::count(sig.begin(), sig.end(), '\n'), 1 + 2 * 6 * 3);
}

TEST_F(Pipeline, TransferWritesThreeByThree) {
  const auto out = dir_->file("transfer");
  const auto r = run(cat({"transfer", "--models", model("cnn"), model("lstm"), model("gru"),
                          "--kind", "fgsm", "--out", out, "--no-timestamp"},
                         data_flags()));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = slurp(out + "/transfer.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 9);
  const auto j = nlohmann::json::parse(slurp(out + "/transfer.json"));
  EXPECT_EQ(j["models"].size(), 3u);
  EXPECT_EQ(j["cells"].size(), 9u);
}

TEST_F(Pipeline, SweepWritesOneRowPerGridPoint) {
  const auto out = dir_->file("sweep");
  const auto r = run(cat({"sweep", "--model", model("gru"), "--eps", "0:0.5:0.05", "--kind",
                          "bim", "--iters", "3", "--alpha", "0.05", "--out", out},
                         data_flags()));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = slurp(out + "/sweep.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 11);
  EXPECT_NE(csv.find(",BIM,0.15,"), std::string::npos);
}

TEST_F(Pipeline, DimensionMismatchExitsThreeWithBothShapes) {
  const auto r = run(cat({"eval", "--model", model("lstm"), "--lookback", "5", "--out",
                          dir_->file("mismatch")},
                         data_flags()));
  EXPECT_EQ(r.code, cli::kDataError);
  EXPECT_NE(r.err.find("[5 x 3]"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("[6 x 3]"), std::string::npos) << r.err;
}

TEST_F(Pipeline, EvalAndPrepRunAndInputsUntouched) {
  const auto before = slurp(csv_);
  const auto model_bytes = slurp(model("cnn"));
  ASSERT_EQ(run(cat({"eval", "--model", model("cnn"), "--out", dir_->file("ev")},
                    data_flags())).code, 0);
  ASSERT_EQ(run(cat({"prep", "--lookback", "6", "--out", dir_->file("prep")},
                    data_flags())).code, 0);
  EXPECT_TRUE(std::filesystem::exists(dir_->file("ev") + "/eval.csv"));
  EXPECT_TRUE(std::filesystem::exists(dir_->file("prep") + "/normalized.csv"));
  EXPECT_EQ(slurp(csv_), before);
  EXPECT_EQ(slurp(model("cnn")), model_bytes);
}

TEST_F(Pipeline, RerunsAreByteIdentical) {
  for (const char* tag : {"r1", "r2"}) {
    const auto out = dir_->file(tag);
    ASSERT_EQ(run(cat({"train", "--arch", "gru", "--widths", "3,3,3", "--lookback", "6",
                       "--epochs", "2", "--out", out, "--no-timestamp"},
                      data_flags())).code, 0);
    ASSERT_EQ(run(cat({"attack", "--model", out + "/model.bin", "--out", out + "/atk",
                       "--no-timestamp"},
                      data_flags())).code, 0);
  }
  for (const char* f : {"/model.bin", "/history.csv", "/train.json", "/atk/attack.json",
                        "/atk/attack.csv"}) {
    EXPECT_EQ(slurp(dir_->file("r1") + f), slurp(dir_->file("r2") + f)) << f;
  }
}

TEST(CliBinary, ProcessExitCodes) {
  const std::string bin = TSFOOL_CLI_PATH;
  EXPECT_EQ(std::system((bin + " --help > /dev/null").c_str()), 0);
  const int rc = std::system((bin + " synth --rows 5 > /dev/null 2>&1").c_str());
  ASSERT_TRUE(WIFEXITED(rc));
  EXPECT_EQ(WEXITSTATUS(rc), cli::kUsage);
}
