#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "generators.hpp"
#include "talign/error.hpp"
#include "talign/losses.hpp"

using namespace talign;

using gen::all_rows;
using gen::random_masks;

TEST(LTc, UniformLogitsGiveLogOfPositiveShare) {
  Tape t(false);
  const auto m = std::vector<SentenceMask>{SentenceMask::run(10, 2, 3)};
  const std::vector<std::size_t> active{0};
  const double v = l_tc(t.constant(Tensor(1, 10, 0.4)), m, active, 0.07).value()(0, 0);
  EXPECT_NEAR(v, -std::log(3.0 / 10.0), 1e-12);
}

TEST(LTc, SeparableLimitGoesToZero) {
  Tensor A(1, 6, -1.0);
  A(0, 1) = A(0, 2) = 1.0;
  Tape t(false);
  const auto m = std::vector<SentenceMask>{SentenceMask::run(6, 1, 2)};
  const std::vector<std::size_t> active{0};
  EXPECT_LT(l_tc(t.constant(A), m, active, 0.01).value()(0, 0), 1e-80);
}

TEST(LTc, MatchesDirectSummationOn50Instances) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 50; ++i) {
    const std::size_t K = 1 + rng() % 5, T = 2 + rng() % 10;
    const Tensor A = oracle::random_tensor(K, T, rng);
    const auto masks = random_masks(K, T, rng);
    std::vector<std::size_t> active;
    for (std::size_t k = 0; k < K; ++k)
      if (rng() % 3 != 0) active.push_back(k);
    if (active.empty()) active.push_back(0);
    Tape t(false);
    EXPECT_NEAR(l_tc(t.constant(A), masks, active, 0.07).value()(0, 0), oracle::l_tc(A, masks, active, 0.07), 1e-10);
  }
}

TEST(LTc, ShiftInvariantAndMonotoneInPositives) {
  std::mt19937_64 rng(12);
  const Tensor A = oracle::random_tensor(3, 8, rng);
  const auto masks = random_masks(3, 8, rng);
  const auto active = all_rows(3);
  Tape t(false);
  const double base = l_tc(t.constant(A), masks, active, 0.1).value()(0, 0);
  Tensor shifted = A;
  for (double& x : shifted.data()) x += 3.7;
  EXPECT_NEAR(l_tc(t.constant(shifted), masks, active, 0.1).value()(0, 0), base, 1e-10);
  Tensor bumped = A;
  bumped(0, masks[0].first()) += 0.1;
  EXPECT_LT(l_tc(t.constant(bumped), masks, active, 0.1).value()(0, 0), base);
}

TEST(LTc, DegenerateActiveMaskIsContractError) {
  Tape t(false);
  const auto ones = std::vector<SentenceMask>{SentenceMask::run(4, 0, 4)};
  const auto zeros = std::vector<SentenceMask>{SentenceMask(4)};
  const std::vector<std::size_t> active{0};
  EXPECT_THROW(l_tc(t.constant(Tensor(1, 4)), ones, active, 0.07), ContractError);
  EXPECT_THROW(l_tc(t.constant(Tensor(1, 4)), zeros, active, 0.07), ContractError);
}

TEST(LTc, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(13);
  const auto masks = random_masks(3, 8, rng);
  ParameterSet ps;
  ps.add("A", oracle::random_tensor(3, 8, rng));
  const auto active = all_rows(3);
  const double err = oracle::gradient_check(
      ps, [&](Tape& t, const ParameterSet& p) { return l_tc(t.parameter(p, 0), masks, active, 0.5); });
  EXPECT_LT(err, 1e-4);
}

TEST(LAlignability, ZeroLogitsGiveLn2) {
  Tape t(false);
  const std::vector<int> y{0, 1};
  const std::vector<std::size_t> rows{0, 1};
  EXPECT_NEAR(l_alignability(t.constant(Tensor(2, 2)), y, rows).value()(0, 0), std::log(2.0), 1e-15);
}

TEST(LAlignability, ConfidentCorrectLogitsGoToZero) {
  Tape t(false);
  const std::vector<int> y{1};
  const std::vector<std::size_t> rows{0};
  EXPECT_LT(l_alignability(t.constant(Tensor::from_rows({{-50, 50}})), y, rows).value()(0, 0), 1e-40);
}

TEST(LAlignability, MatchesDirectFormulaOn50Instances) {
  std::mt19937_64 rng(14);
  for (int i = 0; i < 50; ++i) {
    const std::size_t K = 1 + rng() % 8;
    const Tensor logits = oracle::random_tensor(K, 2, rng, -3, 3);
    std::vector<int> y(K);
    for (int& v : y) v = static_cast<int>(rng() % 2);
    std::vector<std::size_t> rows;
    for (std::size_t k = 0; k < K; ++k)
      if (rng() % 4 != 0) rows.push_back(k);
    if (rows.empty()) rows.push_back(K - 1);
    Tape t(false);
    EXPECT_NEAR(l_alignability(t.constant(logits), y, rows).value()(0, 0), oracle::l_alignability(logits, y, rows),
                1e-10);
  }
}

TEST(LAlignability, EmptyLabeledSetIsContractError) {
  Tape t(false);
  const std::vector<int> y{1};
  const std::vector<std::size_t> none;
  EXPECT_THROW(l_alignability(t.constant(Tensor(1, 2)), y, none), ContractError);
}

TEST(LTotal, UnweightedSumWithGradientToBothTerms) {
  Tape t(false);
  EXPECT_DOUBLE_EQ(l_total(t.constant(Tensor(1, 1, 0.0)), t.constant(Tensor(1, 1, 0.0))).value()(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(l_total(t.constant(Tensor(1, 1, 1.5)), t.constant(Tensor(1, 1, 0.5))).value()(0, 0), 2.0);

  std::mt19937_64 rng(15);
  const auto masks = random_masks(2, 6, rng);
  ParameterSet ps;
  ps.add("A", oracle::random_tensor(2, 6, rng));
  ps.add("logits", oracle::random_tensor(2, 2, rng));
  const std::vector<int> y{1, 0};
  const auto rows = all_rows(2);
  auto f = [&](Tape& tp, const ParameterSet& p) {
    return l_total(l_tc(tp.parameter(p, 0), masks, rows, 0.3), l_alignability(tp.parameter(p, 1), y, rows));
  };
  Tape tp;
  const auto g = tp.backward(f(tp, ps));
  EXPECT_TRUE(g.count("A"));
  EXPECT_TRUE(g.count("logits"));
  EXPECT_LT(oracle::gradient_check(ps, f), 1e-4);
}

TEST(SoftDtw, SingleCellPerfectMatchIsZero) {
  Tape t(false);
  EXPECT_DOUBLE_EQ(soft_dtw_loss(t.constant(Tensor(1, 1, 1.0)), 0.1).value()(0, 0), 0.0);
}

TEST(SoftDtw, MatchesBruteForcePathsOn50Instances) {
  std::mt19937_64 rng(16);
  for (int i = 0; i < 50; ++i) {
    const std::size_t K = 1 + rng() % 3, T = K + rng() % 4;
    const Tensor A = oracle::random_tensor(K, T, rng);
    Tensor cost(K, T);
    for (std::size_t j = 0; j < A.size(); ++j) cost.data()[j] = 1.0 - A.data()[j];
    const double gamma = i % 2 ? 0.1 : 1.0;
    Tape t(false);
    EXPECT_NEAR(soft_dtw_loss(t.constant(A), gamma).value()(0, 0), oracle::soft_dtw(cost, gamma), 1e-10);
    EXPECT_NEAR(soft_dtw_value(cost, gamma), oracle::soft_dtw(cost, gamma), 1e-10);
  }
}

TEST(SoftDtw, SmallGammaRecoversHardMinimum) {
  std::mt19937_64 rng(17);
  const Tensor A = oracle::random_tensor(2, 3, rng);
  Tensor cost(2, 3);
  for (std::size_t j = 0; j < A.size(); ++j) cost.data()[j] = 1.0 - A.data()[j];
  EXPECT_NEAR(soft_dtw_value(cost, 1e-4), oracle::hard_dtw(cost), 1e-3);
}

TEST(SoftDtw, BoundedByHardMinimumAndPathCount) {
  std::mt19937_64 rng(18);
  for (int i = 0; i < 20; ++i) {
    const Tensor cost = oracle::random_tensor(3, 5, rng, 0, 2);
    const double gamma = 0.05 + 0.1 * i;
    const double paths = static_cast<double>(oracle::monotone_path_costs(cost).size());
    const double soft = soft_dtw_value(cost, gamma);
    const double hard = oracle::hard_dtw(cost);
    EXPECT_LE(soft, hard + 1e-12);
    EXPECT_GE(soft, hard - gamma * std::log(paths) - 1e-12);
  }
}

TEST(SoftDtw, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(19);
  for (int i = 0; i < 5; ++i) {
    ParameterSet ps;
    ps.add("A", oracle::random_tensor(3, 5, rng));
    const double err =
        oracle::gradient_check(ps, [](Tape& t, const ParameterSet& p) { return soft_dtw_loss(t.parameter(p, 0), 0.1); });
    EXPECT_LT(err, 1e-4);
  }
}

TEST(SoftDtw, InfeasibleWhenFewerFramesThanRows) {
  Tape t(false);
  EXPECT_THROW(soft_dtw_loss(t.constant(Tensor(3, 2)), 0.1), ContractError);
}

TEST(LossConfig, RejectsNonPositiveConstants) {
  LossConfig c;
  EXPECT_NO_THROW(c.validate());
  c.temperature = 0.0;
  EXPECT_THROW(c.validate(), ContractError);
  c = {};
  c.softdtw_gamma = -1.0;
  EXPECT_THROW(c.validate(), ContractError);
}
