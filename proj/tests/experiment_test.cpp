#include <gtest/gtest.h>

#include <cmath>

#include "support/fixtures.hpp"
#include "support/model_gradcheck.hpp"
#include "support/temp_dir.hpp"
#include "tsfool/experiment.hpp"

using namespace tsfool;
using namespace tsfool::experiment;
using tsfool::testing::random_model;
using tsfool::testing::synthetic_split;
using tsfool::testing::TempDir;

namespace {

data::WindowedDataset test_windows() { return synthetic_split(4, 220, 3, 5).test; }

nn::TrainedModel model_of(nn::Arch a, std::uint64_t seed) {
  return random_model(nn::ModelSpec::make(a, {4, 4, 4}, 5, 3, seed));
}

}  // namespace

TEST(PctIncrease, Arithmetic) {
  EXPECT_DOUBLE_EQ(pct_increase(2.0, 2.5), 25.0);
  EXPECT_DOUBLE_EQ(pct_increase(2.0, 1.5), -25.0);
}

TEST(AttackEval, ZeroEpsilonMatchesClean) {
  const auto ds = test_windows();
  const auto m = model_of(nn::Arch::LSTM, 1);
  for (auto cfg : {AttackConfig::fgsm(0.0), AttackConfig::bim(0.0, 0.001, 5)}) {
    const auto r = attack_eval(m, ds, cfg);
    EXPECT_EQ(r.attacked.rmse, r.clean.rmse);
    EXPECT_EQ(r.pct_increase(), 0.0);
    ASSERT_TRUE(r.attacked.attack.has_value());
    EXPECT_FALSE(r.clean.attack.has_value());
  }
}

TEST(AttackEval, AttackedReportUsesOriginalTargets) {
  const auto ds = test_windows();
  const auto m = model_of(nn::Arch::CNN, 2);
  const auto r = attack_eval(m, ds, AttackConfig::fgsm(0.2));
  ASSERT_EQ(r.attacked.predictions.size(), ds.size());
  for (std::size_t k = 0; k < ds.size(); ++k) {
    EXPECT_EQ(r.attacked.predictions[k].target, ds.y[k]);
  }
  EXPECT_NEAR(r.attacked.rmse, r.attacked.recompute_rmse(), 1e-12);
  EXPECT_EQ(r.attacked.rmse, nn::evaluate_inputs(m, r.batch.x_adv, ds.y, 0).rmse);
}

TEST(Transfer, SingleModelEqualsAttackEval) {
  const auto ds = test_windows();
  const auto m = model_of(nn::Arch::GRU, 3);
  const auto cfg = AttackConfig::bim(0.2, 0.02, 4);
  const auto tm = transfer_matrix({&m}, ds, {cfg});
  ASSERT_EQ(tm.models(), 1u);
  const auto direct = attack_eval(m, ds, cfg);
  EXPECT_EQ(tm.at(0, 0, 0).rmse_clean, direct.clean.rmse);
  EXPECT_EQ(tm.at(0, 0, 0).rmse_transferred, direct.attacked.rmse);
}

TEST(Transfer, DiagonalIsWhiteBoxAndPctRecomputable) {
  const auto ds = test_windows();
  const auto cnn = model_of(nn::Arch::CNN, 4);
  const auto lstm = model_of(nn::Arch::LSTM, 5);
  const auto gru = model_of(nn::Arch::GRU, 6);
  const std::vector<const nn::TrainedModel*> models{&cnn, &lstm, &gru};
  const std::vector<AttackConfig> attacks{AttackConfig::fgsm(0.2),
                                          AttackConfig::bim(0.2, 0.05, 4)};
  const auto tm = transfer_matrix(models, ds, attacks);
  ASSERT_EQ(tm.cells.size(), 2u);
  for (std::size_t a = 0; a < attacks.size(); ++a) {
    ASSERT_EQ(tm.cells[a].size(), 3u);
    for (std::size_t s = 0; s < 3; ++s) {
      ASSERT_EQ(tm.cells[a][s].size(), 3u);
      EXPECT_EQ(tm.at(a, s, s).rmse_transferred,
                attack_eval(*models[s], ds, attacks[a]).attacked.rmse);
      for (std::size_t t = 0; t < 3; ++t) {
        const auto& c = tm.at(a, s, t);
        EXPECT_NEAR(c.pct_increase,
                    100.0 * (c.rmse_transferred - c.rmse_clean) / c.rmse_clean, 1e-9);
        EXPECT_EQ(c.rmse_clean, nn::evaluate(*models[t], ds).rmse);
      }
    }
  }
  EXPECT_EQ(tm.archs, (std::vector<std::string>{"CNN", "LSTM", "GRU"}));
}

TEST(Transfer, DimensionMismatchRejected) {
  const auto ds = test_windows();
  const auto ok = model_of(nn::Arch::GRU, 1);
  const auto other = random_model(nn::ModelSpec::make(nn::Arch::GRU, {4, 4, 4}, 6, 3, 1));
  EXPECT_THROW(transfer_matrix({&ok, &other}, ds, {AttackConfig::fgsm(0.1)}), ShapeError);
  EXPECT_THROW(transfer_matrix({}, ds, {AttackConfig::fgsm(0.1)}), std::invalid_argument);
}

TEST(Sweep, ZeroPointIsClean) {
  const auto ds = test_windows();
  const auto m = model_of(nn::Arch::CNN, 7);
  const auto r = epsilon_sweep(m, ds, Kind::BIM, {0.0});
  ASSERT_EQ(r.points.size(), 1u);
  EXPECT_EQ(r.points[0].rmse, r.rmse_clean);
}

TEST(Sweep, OnePointPerGridEntry) {
  const auto ds = test_windows();
  const auto m = model_of(nn::Arch::GRU, 8);
  const auto grid = parse_grid("0:0.5:0.05");
  const auto r = epsilon_sweep(m, ds, Kind::FGSM, grid);
  ASSERT_EQ(r.points.size(), grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) EXPECT_EQ(r.points[k].epsilon, grid[k]);
  EXPECT_EQ(r.points[0].rmse, r.rmse_clean);
}

TEST(Sweep, InvalidGridsRejected) {
  const auto ds = test_windows();
  const auto m = model_of(nn::Arch::GRU, 8);
  EXPECT_THROW(epsilon_sweep(m, ds, Kind::FGSM, {}), std::invalid_argument);
  EXPECT_THROW(epsilon_sweep(m, ds, Kind::FGSM, {0.2, 0.1}), std::invalid_argument);
  EXPECT_THROW(epsilon_sweep(m, ds, Kind::FGSM, {0.1, 0.1}), std::invalid_argument);
  EXPECT_THROW(epsilon_sweep(m, ds, Kind::FGSM, {-0.1}), std::invalid_argument);
}

TEST(Sweep, RelativeStepScalesWithEpsilon) {
  BimSchedule s{0.005, true, 200};
  EXPECT_DOUBLE_EQ(s.step_for(0.2), 0.001);
  EXPECT_DOUBLE_EQ(BimSchedule{}.step_for(0.3), 0.001);
}

TEST(ParseGrid, RangesAndLists) {
  const auto g = parse_grid("0:0.5:0.05");
  ASSERT_EQ(g.size(), 11u);
  EXPECT_EQ(g.back(), 0.5);
  EXPECT_EQ(g[3], 0.15);
  EXPECT_EQ(parse_grid("0:0.3:0.05").size(), 7u);
  EXPECT_EQ(parse_grid("0,0.1,0.2"), (std::vector<double>{0, 0.1, 0.2}));
  EXPECT_THROW(parse_grid("0:1"), std::invalid_argument);
  EXPECT_THROW(parse_grid("0:1:0"), std::invalid_argument);
  EXPECT_THROW(parse_grid("a,b"), std::invalid_argument);
}

TEST(Reports, JsonKeySetAndCsv) {
  TempDir dir;
  const auto ds = test_windows();
  const auto m = model_of(nn::Arch::LSTM, 9);
  const auto cfg = AttackConfig::bim(0.2, 0.05, 2);
  const auto r = attack_eval(m, ds, cfg);
  const Json j = summary_json(m, cfg, r.clean.rmse, r.attacked.rmse);
  std::vector<std::string> keys;
  for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
  EXPECT_EQ(keys, (std::vector<std::string>{"model", "arch", "attack", "epsilon", "alpha",
                                            "iters", "rmse_clean", "rmse_attacked",
                                            "pct_increase"}));
  EXPECT_EQ(j["arch"], "LSTM");
  EXPECT_EQ(j["iters"], 2);
  EXPECT_TRUE(summary_json(m, AttackConfig::fgsm(0.2), 1, 1)["alpha"].is_null());

  write_attack_csv(r, dir.file("a.csv"));
  const auto text = tsfool::testing::slurp(dir.file("a.csv"));
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'),
            static_cast<long>(ds.size()) + 1);
  write_json(j, dir.file("a.json"));
  EXPECT_EQ(Json::parse(tsfool::testing::slurp(dir.file("a.json"))), j);
}

TEST(Reports, RerunsWriteIdenticalFiles) {
  TempDir dir;
  const auto ds = test_windows();
  const auto a = model_of(nn::Arch::CNN, 10);
  const auto b = model_of(nn::Arch::GRU, 11);
  for (const char* name : {"t1.csv", "t2.csv"}) {
    write_transfer_csv(transfer_matrix({&a, &b}, ds, {AttackConfig::fgsm(0.2)}),
                       dir.file(name));
  }
  EXPECT_EQ(tsfool::testing::slurp(dir.file("t1.csv")),
            tsfool::testing::slurp(dir.file("t2.csv")));
}
