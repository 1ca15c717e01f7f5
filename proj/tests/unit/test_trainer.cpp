#include <cmath>

#include <gtest/gtest.h>

#include "talign/error.hpp"
#include "talign/optimizer.hpp"
#include "talign/trainer.hpp"

using namespace talign;

namespace {

ParameterSet scalar(double x) {
  ParameterSet p;
  p.add("x", Tensor(1, 1, x));
  return p;
}

GradientMap grad_of(double g) {
  GradientMap m;
  m.emplace("x", Tensor(1, 1, g));
  return m;
}

ModelConfig small_model(std::size_t vocab, std::size_t max_T = 24) {
  ModelConfig c;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_model = 8;
  c.max_T = max_T;
  c.text_dim = 4;
  c.vocab_size = vocab;
  return c;
}

struct Fixture {
  SyntheticParams sp;
  CorpusDims dims{48, 64};
  Corpus corpus;
  ModelConfig mc;
  TrainConfig tc;
  LossConfig lc;
};

Fixture make_setup(std::size_t videos, NoiseModelParams np = {}) {
  Fixture s;
  s.sp.n_topics = 16;
  s.corpus = generate_corpus(videos, np, s.dims, s.sp);
  s.mc = small_model(s.sp.vocab_size());
  s.tc.batch_videos = 4;
  s.tc.window_sec = 24;
  s.tc.lr = 1e-3;
  s.tc.s1_iters = 3;
  s.tc.s2_iters = 3;
  s.tc.eval_every = 0;
  return s;
}

}  // namespace

TEST(AdamW, ZeroGradientZeroDecayIsIdentity) {
  ParameterSet p = scalar(0.7);
  auto st = AdamWState::zeros_like(p);
  for (int i = 0; i < 3; ++i) adamw_step(p, grad_of(0.0), st, {1e-2, 0.0});
  EXPECT_EQ(p[0](0, 0), 0.7);
  EXPECT_EQ(st.steps[0], 3u);
}

TEST(AdamW, ScalarThreeStepOracle) {
  const double lr = 0.1, wd = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double gs[3] = {0.5, -1.25, 2.0};
  ParameterSet p = scalar(1.0);
  auto st = AdamWState::zeros_like(p);
  double x = 1.0, m = 0, v = 0;
  for (int t = 1; t <= 3; ++t) {
    adamw_step(p, grad_of(gs[t - 1]), st, {lr, wd, b1, b2, eps});
    m = b1 * m + (1 - b1) * gs[t - 1];
    v = b2 * v + (1 - b2) * gs[t - 1] * gs[t - 1];
    x = x - lr * wd * x - lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
    EXPECT_NEAR(p[0](0, 0), x, 1e-15);
  }
  // First step moves by lr regardless of gradient scale.
  ParameterSet q = scalar(0.0);
  auto sq = AdamWState::zeros_like(q);
  adamw_step(q, grad_of(1e-3), sq, {lr, 0.0});
  EXPECT_NEAR(q[0](0, 0), -lr, 1e-6);
}

TEST(AdamW, DecayOnlyShrinksGeometrically) {
  ParameterSet p = scalar(2.0);
  auto st = AdamWState::zeros_like(p);
  for (int i = 0; i < 10; ++i) adamw_step(p, grad_of(0.0), st, {0.01, 0.5});
  EXPECT_NEAR(p[0](0, 0), 2.0 * std::pow(1 - 0.01 * 0.5, 10), 1e-15);
}

TEST(AdamW, AbsentParametersAreUntouched) {
  ParameterSet p;
  p.add("a", Tensor(1, 2, 1.0));
  p.add("b", Tensor(1, 2, 1.0));
  auto st = AdamWState::zeros_like(p);
  GradientMap g;
  g.emplace("a", Tensor(1, 2, 0.3));
  adamw_step(p, g, st, {0.1, 0.1});
  EXPECT_EQ(p[1], Tensor(1, 2, 1.0));
  EXPECT_EQ(st.steps[1], 0u);
  EXPECT_EQ(st.steps[0], 1u);
  g.clear();
  g.emplace("a", Tensor(2, 1));
  EXPECT_THROW(adamw_step(p, g, st, {}), ShapeError);
}

TEST(Stage1, FirstLossMatchesUniformFormula) {
  Fixture s = make_setup(6);
  s.lc.temperature = 1e6;  // all logits ~ equal
  TrainState st = TrainState::fresh(s.mc, 0);
  std::mt19937_64 rng(1);
  const auto batch = sample_batch(s.corpus, 4, 24, rng);
  double want = 0;
  std::size_t active = 0;
  for (const auto& w : batch)
    for (const auto& m : w.masks) {
      if (m.all()) continue;
      want += -2.0 * std::log(static_cast<double>(m.popcount()) / 24.0);
      ++active;
    }
  const StepStats r = stage1_step(st, s.corpus, batch, s.tc, s.lc);
  EXPECT_EQ(r.active, active);
  EXPECT_NEAR(r.l_tc, want / static_cast<double>(active), 1e-4);
}

TEST(Stage1, HeadIsNeverTrained) {
  Fixture s = make_setup(10);
  const TrainState init = TrainState::fresh(s.mc, 2);
  TrainState st = init;
  std::mt19937_64 rng(3);
  for (int i = 0; i < 5; ++i) {
    const auto batch = sample_batch(s.corpus, 4, 24, rng);
    stage1_step(st, s.corpus, batch, s.tc, s.lc);
  }
  EXPECT_EQ(st.params.at("head.w"), init.params.at("head.w"));
  EXPECT_EQ(st.params.at("head.b"), init.params.at("head.b"));
  EXPECT_EQ(st.optimizer.steps[st.params.index("head.w")], 0u);
  EXPECT_NE(st.params.at("te"), init.params.at("te"));
}

TEST(Stage1, LossDecreasesOnNoiselessCorpus) {
  NoiseModelParams np;
  np.frac_alignable = np.frac_well_aligned = 1.0;
  np.max_offset_sec = 0.0;
  np.order_shuffle_prob = 0.0;
  Fixture s = make_setup(20, np);
  s.tc.lr = 3e-3;
  TrainState st = TrainState::fresh(s.mc, 4);
  std::mt19937_64 rng(5);
  double first = 0, last = 0;
  for (int i = 0; i < 200; ++i) {
    const auto batch = sample_batch(s.corpus, 4, 24, rng);
    const double l = stage1_step(st, s.corpus, batch, s.tc, s.lc).l_tc;
    if (i < 20) first += l;
    if (i >= 180) last += l;
  }
  EXPECT_LT(last, 0.8 * first);
}

TEST(Stage2, PositivesAreCeilAlphaAndTeacherGetsNoGradient) {
  Fixture s = make_setup(10);
  TrainState st = TrainState::fresh(s.mc, 6);
  std::mt19937_64 rng0(0);
  EXPECT_THROW(stage2_step(st, s.corpus, sample_batch(s.corpus, 2, 24, rng0), s.tc, s.lc),
               ContractError);
  st.ema = EmaState{st.params, 0.99};
  std::mt19937_64 rng(7);
  for (double alpha : {0.25, 0.5, 1.0}) {
    s.tc.alpha = alpha;
    const auto batch = sample_batch(s.corpus, 4, 24, rng);
    const ParameterSet teacher_before = st.ema->teacher;
    const ParameterSet student_before = st.params;
    const StepStats r = stage2_step(st, s.corpus, batch, s.tc, s.lc);
    EXPECT_EQ(r.positives, static_cast<std::size_t>(std::ceil(alpha * static_cast<double>(r.sentences) - 1e-12)));
    // Teacher moved only by the EMA rule.
    for (std::size_t i = 0; i < st.params.size(); ++i)
      for (std::size_t j = 0; j < st.params[i].size(); ++j)
        EXPECT_NEAR(st.ema->teacher[i].data()[j],
                    0.99 * teacher_before[i].data()[j] + 0.01 * st.params[i].data()[j], 1e-15);
    EXPECT_NE(st.params.at("head.w"), student_before.at("head.w"));
  }
}

TEST(Stage2, FrozenTeacherFreezesPseudoLabels) {
  Fixture s = make_setup(10);
  TrainState st = TrainState::fresh(s.mc, 8);
  st.ema = EmaState{st.params, 1.0};
  const ParameterSet teacher = st.ema->teacher;
  std::mt19937_64 rng(9);
  const auto batch = sample_batch(s.corpus, 4, 24, rng);
  const PseudoLabels before = pseudo_label_batch(s.mc, teacher, s.corpus, batch, 0.5);
  for (int i = 0; i < 3; ++i) stage2_step(st, s.corpus, batch, s.tc, s.lc);
  EXPECT_EQ(st.ema->teacher, teacher);
  const PseudoLabels after = pseudo_label_batch(s.mc, st.ema->teacher, s.corpus, batch, 0.5);
  for (std::size_t w = 0; w < batch.size(); ++w)
    for (std::size_t k = 0; k < before.windows[w].size(); ++k) {
      EXPECT_EQ(before.windows[w][k].updated, after.windows[w][k].updated);
      EXPECT_EQ(before.windows[w][k].y_pseudo, after.windows[w][k].y_pseudo);
    }
}

TEST(Run, DeterministicMonotoneAndResumable) {
  Fixture s = make_setup(10);
  s.tc.eval_every = 2;
  s.tc.s1_iters = 4;
  s.tc.s2_iters = 4;
  const RunResult a = run_training(s.tc, s.lc, s.mc, s.corpus, StageSelect::both);
  const RunResult b = run_training(s.tc, s.lc, s.mc, s.corpus, StageSelect::both);
  EXPECT_EQ(a.state.params, b.state.params);
  ASSERT_EQ(a.metrics.size(), b.metrics.size());
  for (std::size_t i = 0; i < a.metrics.size(); ++i) EXPECT_EQ(a.metrics[i].to_json(), b.metrics[i].to_json());
  ASSERT_EQ(a.metrics.size(), 4u);
  for (std::size_t i = 1; i < a.metrics.size(); ++i) EXPECT_GT(a.metrics[i].iter, a.metrics[i - 1].iter);
  EXPECT_EQ(a.metrics.back().iter, 8u);
  EXPECT_EQ(a.state.stage, 2);
  ASSERT_TRUE(a.state.ema.has_value());

  // Stage 1, checkpoint, stage 2 gives the same final state.
  Checkpoint ck;
  const RunResult s1 = run_training(s.tc, s.lc, s.mc, s.corpus, StageSelect::s1, std::nullopt,
                                    {nullptr, [&](int, const Checkpoint& c) { ck = c; }});
  EXPECT_EQ(ck.stage, 1);
  EXPECT_FALSE(s1.state.ema.has_value());
  const RunResult s2 = run_training(s.tc, s.lc, s.mc, s.corpus, StageSelect::s2, ck);
  EXPECT_EQ(s2.state.params, a.state.params);
  EXPECT_EQ(s2.state.ema->teacher, a.state.ema->teacher);
  EXPECT_EQ(s2.metrics.back().to_json(), a.metrics.back().to_json());
  EXPECT_THROW(run_training(s.tc, s.lc, s.mc, s.corpus, StageSelect::s2), ContractError);
}

TEST(Run, ZeroStage2ItersKeepsStage1Model) {
  Fixture s = make_setup(10);
  const RunResult s1 = run_training(s.tc, s.lc, s.mc, s.corpus, StageSelect::s1);
  s.tc.s2_iters = 0;
  const RunResult both = run_training(s.tc, s.lc, s.mc, s.corpus, StageSelect::both);
  EXPECT_EQ(both.state.params, s1.state.params);
  EXPECT_EQ(both.state.ema->teacher, s1.state.params);
}

TEST(Run, RejectsBadConfigs) {
  Fixture s = make_setup(4);
  TrainConfig bad = s.tc;
  bad.alpha = 0.0;
  EXPECT_THROW(run_training(bad, s.lc, s.mc, s.corpus, StageSelect::s1), ContractError);
  bad = s.tc;
  bad.window_sec = 48;
  EXPECT_THROW(run_training(bad, s.lc, s.mc, s.corpus, StageSelect::s1), ContractError);
  ModelConfig small_vocab = s.mc;
  small_vocab.vocab_size = 3;
  EXPECT_THROW(run_training(s.tc, s.lc, small_vocab, s.corpus, StageSelect::s1), ContractError);
  EXPECT_THROW(run_training(s.tc, s.lc, s.mc, Corpus{}, StageSelect::s1), ContractError);
}

TEST(Run, DivergenceAborts) {
  Fixture s = make_setup(4);
  s.tc.lr = 1e300;
  s.tc.s1_iters = 20;
  EXPECT_THROW(run_training(s.tc, s.lc, s.mc, s.corpus, StageSelect::s1), NumericalError);
}

TEST(Split, LastTenPercentHeldOut) {
  Fixture s = make_setup(25);
  const auto sp = split_corpus(s.corpus);
  ASSERT_EQ(sp.held_out.size(), 2u);
  EXPECT_EQ(sp.held_out[0], s.corpus[23]);
  EXPECT_EQ(split_corpus(Corpus(s.corpus.begin(), s.corpus.begin() + 2)).held_out.size(), 1u);
  EXPECT_TRUE(split_corpus(Corpus(s.corpus.begin(), s.corpus.begin() + 1)).held_out.empty());
}

TEST(Metrics, JsonShape) {
  MetricsRecord r;
  r.iter = 5;
  r.stage = 2;
  r.l_tc = 1.5;
  EXPECT_EQ(r.to_json(), R"({"iter":5,"stage":2,"l_tc":1.5,"l_align":0.0,"r_at_1":null,"roc_auc":null})");
}
