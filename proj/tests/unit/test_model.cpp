#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "talign/checkpoint.hpp"
#include "talign/error.hpp"
#include "talign/losses.hpp"
#include "talign/model.hpp"

using namespace talign;

namespace {

ModelConfig tiny(std::size_t layers = 1, std::size_t heads = 2, std::size_t d = 8) {
  ModelConfig c;
  c.n_layers = layers;
  c.n_heads = heads;
  c.d_model = d;
  c.max_T = 12;
  c.c_raw = 5;
  c.text_dim = 4;
  c.vocab_size = 20;
  return c;
}

// Plain-loop reference for one pre-norm block plus final norm.
Tensor ln(const Tensor& x, const Tensor& g, const Tensor& b) {
  Tensor y(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double mu = 0, var = 0;
    for (std::size_t c = 0; c < x.cols(); ++c) mu += x(r, c);
    mu /= static_cast<double>(x.cols());
    for (std::size_t c = 0; c < x.cols(); ++c) var += (x(r, c) - mu) * (x(r, c) - mu);
    var /= static_cast<double>(x.cols());
    for (std::size_t c = 0; c < x.cols(); ++c) y(r, c) = (x(r, c) - mu) / std::sqrt(var + 1e-5) * g(0, c) + b(0, c);
  }
  return y;
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = oracle::matmul(x, w);
  for (std::size_t r = 0; r < y.rows(); ++r)
    for (std::size_t c = 0; c < y.cols(); ++c) y(r, c) += b(0, c);
  return y;
}

Tensor encoder_oracle(const ParameterSet& p, const std::string& pre, Tensor x) {
  const std::string b = pre + ".L0";
  const Tensor h = ln(x, p.at(b + ".ln1.g"), p.at(b + ".ln1.b"));
  const Tensor q = affine(h, p.at(b + ".attn.q.w"), p.at(b + ".attn.q.b"));
  const Tensor k = affine(h, p.at(b + ".attn.k.w"), p.at(b + ".attn.k.b"));
  const Tensor v = affine(h, p.at(b + ".attn.v.w"), p.at(b + ".attn.v.b"));
  const std::size_t n = x.rows(), d = x.cols();
  Tensor att(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> w(n);
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t c = 0; c < d; ++c) s += q(i, c) * k(j, c);
      w[j] = std::exp(s / std::sqrt(static_cast<double>(d)));
    }
    const double z = std::accumulate(w.begin(), w.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t c = 0; c < d; ++c) att(i, c) += w[j] / z * v(j, c);
  }
  const Tensor o = affine(att, p.at(b + ".attn.o.w"), p.at(b + ".attn.o.b"));
  for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] += o.data()[i];
  Tensor f = affine(ln(x, p.at(b + ".ln2.g"), p.at(b + ".ln2.b")), p.at(b + ".ff1.w"), p.at(b + ".ff1.b"));
  for (double& e : f.data()) e = 0.5 * e * (1.0 + std::erf(e / std::sqrt(2.0)));
  const Tensor f2 = affine(f, p.at(b + ".ff2.w"), p.at(b + ".ff2.b"));
  for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] += f2.data()[i];
  return ln(x, p.at(pre + ".ln_f.g"), p.at(pre + ".ln_f.b"));
}

void randomize(ParameterSet& p, std::uint64_t seed, double scale = 0.3) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < p.size(); ++i)
    for (double& x : p[i].data()) x += std::uniform_real_distribution<double>(-scale, scale)(rng);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace

TEST(ModelConfig, ValidationAndJson) {
  ModelConfig c = tiny();
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(ModelConfig::from_json(c.to_json()), c);
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), ContractError);
  EXPECT_THROW(ModelConfig::from_json("{"), ParseError);
  EXPECT_EQ(ModelConfig{}.ff_dim(), 256u);
}

TEST(Model, InitIsDeterministicAndSeedSensitive) {
  EXPECT_EQ(init_params(tiny(), 3), init_params(tiny(), 3));
  EXPECT_NE(init_params(tiny(), 3), init_params(tiny(), 4));
  const auto p = init_params(tiny(), 0);
  EXPECT_EQ(p.at("te").rows(), 12u);
  EXPECT_EQ(p.at("head.w").cols(), 2u);
  EXPECT_FALSE(p.contains("segment"));
}

TEST(EmbedText, MaxPoolIdentities) {
  const ModelConfig c = tiny();
  const auto p = init_params(c, 1);
  Tape t(false);
  const std::vector<std::vector<std::size_t>> toks{{3}, {3, 7, 9}, {9, 3, 7}, {3, 7, 7, 9, 3}};
  const Tensor s = embed_text(t, c, p, toks).value();
  ASSERT_EQ(s.rows(), 4u);
  ASSERT_EQ(s.cols(), 8u);
  for (std::size_t j = 0; j < 8; ++j) {
    EXPECT_EQ(s(1, j), s(2, j));
    EXPECT_EQ(s(1, j), s(3, j));
  }
  // Single token: fc2(gelu(fc1(e))).
  Tensor e(1, c.text_dim);
  for (std::size_t j = 0; j < c.text_dim; ++j) e(0, j) = p.at("text.embed")(3, j);
  Tensor h = affine(e, p.at("text.fc1.w"), p.at("text.fc1.b"));
  for (double& x : h.data()) x = 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
  const Tensor want = affine(h, p.at("text.fc2.w"), p.at("text.fc2.b"));
  for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(s(0, j), want(0, j), 1e-12);
  const std::vector<std::vector<std::size_t>> oov{{20}}, empty{{}};
  EXPECT_THROW(embed_text(t, c, p, oov), ContractError);
  EXPECT_THROW(embed_text(t, c, p, empty), ContractError);
}

TEST(EmbedVisual, BiasRowsPassthroughAndRowIndependence) {
  ModelConfig c = tiny();
  auto p = init_params(c, 2);
  randomize(p, 5);
  Tape t(false);
  const Tensor zero(4, 5);
  const Tensor v0 = embed_visual(t, c, p, zero).value();
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(v0(r, j), p.at("visual.proj.b")(0, j));
  std::mt19937_64 rng(6);
  Tensor f = oracle::random_tensor(6, 5, rng);
  const Tensor a = embed_visual(t, c, p, f).value();
  f(3, 2) += 1.0;
  const Tensor b = embed_visual(t, c, p, f).value();
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t j = 0; j < 8; ++j) {
      if (r == 3) continue;
      EXPECT_EQ(a(r, j), b(r, j));
    }
  EXPECT_GT(max_abs_diff(a, b), 0.0);
  // Identity weights, zero bias, c_raw = d_model.
  c.c_raw = 8;
  auto q = init_params(c, 0);
  q.at("visual.proj.w") = Tensor(8, 8);
  for (std::size_t i = 0; i < 8; ++i) q.at("visual.proj.w")(i, i) = 1.0;
  const Tensor g = oracle::random_tensor(3, 8, rng);
  EXPECT_EQ(embed_visual(t, c, q, g).value(), g);
  EXPECT_THROW(embed_visual(t, c, q, Tensor(13, 8)), ContractError);
}

TEST(Encoder, OneLayerOneHeadMatchesHandOracle) {
  const ModelConfig c = tiny(1, 1, 8);
  auto p = init_params(c, 7);
  randomize(p, 8);
  std::mt19937_64 rng(9);
  const Tensor v = oracle::random_tensor(2, 8, rng);
  Tensor x = v;
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t j = 0; j < 8; ++j) x(r, j) += p.at("te")(r, j);
  Tape t(false);
  const Var vv = t.constant(v);
  EXPECT_LT(max_abs_diff(dual_forward(t, c, p, vv).value(), encoder_oracle(p, "dual", x)), 1e-12);
  // K = 0: video self-attention only.
  const JointOutput j = multimodal_forward(t, c, p, vv, Var());
  EXPECT_LT(max_abs_diff(j.video.value(), encoder_oracle(p, "mt", x)), 1e-12);
  EXPECT_FALSE(j.sentences.valid());
  // Joint sequence: TE on the video rows only.
  const Tensor s = oracle::random_tensor(2, 8, rng);
  Tensor xs(4, 8);
  for (std::size_t j2 = 0; j2 < 8; ++j2) {
    xs(0, j2) = x(0, j2);
    xs(1, j2) = x(1, j2);
    xs(2, j2) = s(0, j2);
    xs(3, j2) = s(1, j2);
  }
  const Tensor want = encoder_oracle(p, "mt", xs);
  const JointOutput js = multimodal_forward(t, c, p, vv, t.constant(s));
  for (std::size_t j2 = 0; j2 < 8; ++j2) {
    EXPECT_NEAR(js.video.value()(1, j2), want(1, j2), 1e-12);
    EXPECT_NEAR(js.sentences.value()(1, j2), want(3, j2), 1e-12);
  }
}

TEST(Forward, SentencePermutationEquivariance) {
  const ModelConfig c = tiny(2, 2, 8);
  auto p = init_params(c, 10);
  randomize(p, 11);
  std::mt19937_64 rng(12);
  const Tensor f = oracle::random_tensor(10, 5, rng);
  const std::vector<std::vector<std::size_t>> toks{{1, 2}, {5}, {7, 8, 9}, {11, 3}};
  const std::vector<std::vector<std::size_t>> perm{toks[2], toks[0], toks[3], toks[1]};
  const std::size_t order[] = {2, 0, 3, 1};
  Tape t(false);
  const auto a = forward(t, c, p, f, toks);
  const auto b = forward(t, c, p, f, perm);
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t j = 0; j < 10; ++j) {
      EXPECT_NEAR(b.alignment.value()(k, j), a.alignment.value()(order[k], j), 1e-12);
      EXPECT_NEAR(b.alignment_dual.value()(k, j), a.alignment_dual.value()(order[k], j), 1e-12);
    }
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(b.logits.value()(k, j), a.logits.value()(order[k], j), 1e-12);
}

TEST(Forward, ShapesRangeAndTemporalEmbeddingBreaksShiftInvariance) {
  const ModelConfig c = tiny(2, 2, 8);
  auto p = init_params(c, 13);
  randomize(p, 14);
  std::mt19937_64 rng(15);
  const Tensor f = oracle::random_tensor(12, 5, rng);
  const std::vector<std::vector<std::size_t>> toks{{1}, {4, 6}, {19}};
  Tape t(false);
  const auto out = forward(t, c, p, f, toks);
  EXPECT_EQ(out.alignment.rows(), 3u);
  EXPECT_EQ(out.alignment.cols(), 12u);
  EXPECT_EQ(out.logits.cols(), 2u);
  EXPECT_EQ(out.video_dual.rows(), 12u);
  for (const Tensor* m : {&out.alignment.value(), &out.alignment_dual.value()})
    for (double x : m->data()) {
      EXPECT_LE(x, 1.0 + 1e-9);
      EXPECT_GE(x, -1.0 - 1e-9);
    }
  Tensor shifted(12, 5);
  for (std::size_t r = 0; r < 12; ++r)
    for (std::size_t j = 0; j < 5; ++j) shifted(r, j) = f((r + 1) % 12, j);
  const auto s = forward(t, c, p, shifted, toks);
  double diff = 0;
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t j = 0; j < 12; ++j)
      diff = std::max(diff, std::abs(s.alignment.value()(k, (j + 11) % 12) - out.alignment.value()(k, j)));
  EXPECT_GT(diff, 1e-6);
  EXPECT_FALSE(forward(t, c, p, f, toks, false).logits.valid());
}

TEST(Similarity, CosineCases) {
  Tape t(false);
  const Tensor a = Tensor::from_rows({{1, 0, 0}, {0, 2, 0}, {0, 0, 0}});
  const Tensor b = Tensor::from_rows({{3, 0, 0}, {0, 0, 1}});
  const Tensor s = similarity(t.constant(a), t.constant(b)).value();
  EXPECT_DOUBLE_EQ(s(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(s(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(s(1, 0), 0.0);
  EXPECT_DOUBLE_EQ(s(2, 0), 0.0);
  std::mt19937_64 rng(16);
  Tensor x = oracle::random_tensor(3, 4, rng), y = oracle::random_tensor(5, 4, rng);
  const Tensor before = similarity(t.constant(x), t.constant(y)).value();
  for (double& e : x.row(1)) e *= 3.0;
  EXPECT_LT(max_abs_diff(similarity(t.constant(x), t.constant(y)).value(), before), 1e-15);
  EXPECT_THROW(similarity(t.constant(x), t.constant(Tensor(2, 3))), ShapeError);
}

TEST(Head, ZeroWeightsGiveBias) {
  auto p = init_params(tiny(), 0);
  p.at("head.w").fill(0.0);
  p.at("head.b") = Tensor::from_rows({{0.25, -0.5}});
  Tape t(false);
  std::mt19937_64 rng(17);
  const Tensor lg = alignability_head(t, p, t.constant(oracle::random_tensor(3, 8, rng))).value();
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(lg(k, 0), 0.25);
    EXPECT_EQ(lg(k, 1), -0.5);
  }
  EXPECT_EQ(alignability_head(t, p, t.constant(Tensor(1, 8))).value().rows(), 1u);
}

TEST(Forward, EndToEndGradientMatchesFiniteDifferences) {
  ModelConfig c = tiny(1, 2, 8);
  c.segment_embedding = true;
  ParameterSet p = init_params(c, 18);
  std::mt19937_64 rng(19);
  const Tensor f = oracle::random_tensor(6, 5, rng);
  const std::vector<std::vector<std::size_t>> toks{{1, 2}, {5}, {7, 8}};
  const std::vector<SentenceMask> masks{SentenceMask::run(6, 0, 2), SentenceMask::run(6, 2, 3),
                                        SentenceMask::run(6, 4, 2)};
  const std::vector<std::size_t> active{0, 1, 2};
  const std::vector<int> y{1, 0, 1};
  auto loss = [&](Tape& t, const ParameterSet& ps) {
    const auto out = forward(t, c, ps, f, toks);
    const Var tc = ad::add(l_tc(out.alignment, masks, active, 0.5), l_tc(out.alignment_dual, masks, active, 0.5));
    return l_total(tc, l_alignability(out.logits, y, active));
  };
  EXPECT_LT(oracle::gradient_check(p, loss, 1e-5, 1e-6, 40, 1), 1e-3);
}

TEST(Checkpoint, BitExactRoundTrip) {
  const ModelConfig c = tiny();
  Checkpoint ck;
  ck.config = c;
  ck.stage = 1;
  ck.iteration = 17;
  ck.params = init_params(c, 20);
  randomize(ck.params, 21, 1e-3);
  ck.ema = EmaState{init_params(c, 22), 0.99};
  ck.optimizer = AdamWState::zeros_like(ck.params);
  ck.optimizer->steps[3] = 5;
  ck.optimizer->m[0](0, 0) = 1e-300;
  std::stringstream ss;
  write_checkpoint(ss, ck);
  const std::string bytes = ss.str();
  const Checkpoint back = read_checkpoint(ss);
  EXPECT_TRUE(back == ck);
  std::stringstream again;
  write_checkpoint(again, back);
  EXPECT_EQ(again.str(), bytes);
  std::istringstream bad("NOTACKPT........");
  EXPECT_THROW(read_checkpoint(bad), Error);
  std::istringstream truncated(bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(read_checkpoint(truncated), Error);
}

TEST(InferVideo, StitchesWindowsAndAveragesProbabilities) {
  const ModelConfig c = tiny();
  auto p = init_params(c, 23);
  std::mt19937_64 rng(24);
  const Tensor f = oracle::random_tensor(30, 5, rng);
  const std::vector<std::vector<std::size_t>> toks{{1}, {2, 3}};
  const VideoInference vi = infer_video(c, p, f, toks);
  EXPECT_EQ(vi.alignment.cols(), 30u);
  EXPECT_EQ(vi.video_dual.rows(), 30u);
  // Windows [0,12) [12,24) [24,30).
  double pm = 0;
  for (std::size_t s : {0u, 12u, 24u}) {
    const std::size_t len = std::min<std::size_t>(12, 30 - s);
    Tensor w(len, 5);
    for (std::size_t r = 0; r < len; ++r)
      for (std::size_t j = 0; j < 5; ++j) w(r, j) = f(s + r, j);
    Tape t(false);
    const auto out = forward(t, c, p, w, toks);
    for (std::size_t r = 0; r < len; ++r) EXPECT_EQ(vi.alignment(1, s + r), out.alignment.value()(1, r));
    const Tensor& lg = out.logits.value();
    pm += 1.0 / (1.0 + std::exp(lg(0, 0) - lg(0, 1))) / 3.0;
  }
  EXPECT_NEAR(vi.p_alignable[0], pm, 1e-12);
}
