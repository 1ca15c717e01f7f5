#include "talign/trainer.hpp"

#include <cmath>

#include <json.hpp>

#include "talign/error.hpp"
#include "talign/eval.hpp"

namespace talign {

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::vector<std::vector<std::size_t>> window_tokens(const Corpus& corpus, const WindowSample& w) {
  std::vector<std::vector<std::size_t>> tokens;
  tokens.reserve(w.sentence_index.size());
  for (std::size_t idx : w.sentence_index) tokens.push_back(corpus[w.video].sentences[idx].token_ids);
  return tokens;
}

void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericalError(std::string("non-finite ") + what);
}

void check_finite(const GradientMap& grads) {
  for (const auto& [name, g] : grads) {
    if (!g.all_finite()) throw NumericalError("non-finite gradient for " + name);
  }
}

void check_finite(const ParameterSet& params) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].all_finite()) throw NumericalError("non-finite parameter " + params.name(i) + " after update");
  }
}

Var accumulate(Var total, Var term) { return total.valid() ? ad::add(total, term) : term; }

}  // namespace

void TrainConfig::validate() const {
  if (batch_videos == 0 || window_sec == 0) throw ContractError("batch_videos and window_sec must be positive");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ContractError("alpha must be in (0, 1]");
  if (!(lr > 0.0) || !(weight_decay >= 0.0)) throw ContractError("lr must be positive and weight_decay >= 0");
  if (!(ema_momentum >= 0.0 && ema_momentum <= 1.0)) throw ContractError("ema_momentum must be in [0, 1]");
}

TrainState TrainState::fresh(const ModelConfig& cfg, std::uint64_t seed) {
  TrainState s;
  s.config = cfg;
  s.params = init_params(cfg, seed);
  s.optimizer = AdamWState::zeros_like(s.params);
  return s;
}

TrainState TrainState::from_checkpoint(Checkpoint ckpt) {
  TrainState s;
  s.config = ckpt.config;
  s.params = std::move(ckpt.params);
  s.optimizer = ckpt.optimizer ? std::move(*ckpt.optimizer) : AdamWState::zeros_like(s.params);
  s.ema = std::move(ckpt.ema);
  s.stage = ckpt.stage;
  s.stage_iteration = ckpt.iteration;
  return s;
}

Checkpoint TrainState::to_checkpoint() const {
  Checkpoint c;
  c.config = config;
  c.stage = stage;
  c.iteration = stage_iteration;
  c.params = params;
  c.ema = ema;
  c.optimizer = optimizer;
  return c;
}

std::vector<WindowSample> sample_batch(const Corpus& corpus, std::size_t batch, std::size_t window,
                                       std::mt19937_64& rng) {
  if (corpus.empty()) throw ContractError("cannot sample from an empty corpus");
  std::vector<WindowSample> out;
  out.reserve(batch);
  std::uniform_int_distribution<std::size_t> pick(0, corpus.size() - 1);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t v = pick(rng);
    WindowSample w = window_sample(corpus[v], std::min(window, corpus[v].duration()), rng);
    w.video = v;
    out.push_back(std::move(w));
  }
  return out;
}

StepStats stage1_step(TrainState& state, const Corpus& corpus, std::span<const WindowSample> batch,
                      const TrainConfig& cfg, const LossConfig& loss) {
  StepStats st;
  Tape tape;
  Var total;
  for (const WindowSample& w : batch) {
    const auto tokens = window_tokens(corpus, w);
    const ForwardOutput out = forward(tape, state.config, state.params, w.features, tokens, false);
    std::vector<std::size_t> active;
    for (std::size_t k = 0; k < w.masks.size(); ++k) {
      if (!w.masks[k].all()) active.push_back(k);
    }
    st.sentences += w.masks.size();
    if (active.empty()) continue;
    st.active += active.size();
    total = accumulate(total, ad::add(l_tc(out.alignment, w.masks, active, loss.temperature),
                                      l_tc(out.alignment_dual, w.masks, active, loss.temperature)));
  }
  if (st.active == 0) return st;
  const Var objective = ad::scale(total, 1.0 / static_cast<double>(st.active));
  st.l_tc = objective.value()(0, 0);
  check_finite(st.l_tc, "stage-1 loss");
  const GradientMap grads = tape.backward(objective);
  check_finite(grads);
  adamw_step(state.params, grads, state.optimizer, {cfg.lr, cfg.weight_decay});
  check_finite(state.params);
  return st;
}

PseudoLabels pseudo_label_batch(const ModelConfig& mc, const ParameterSet& teacher, const Corpus& corpus,
                                std::span<const WindowSample> batch, double alpha) {
  std::vector<Tensor> joint, dual;
  joint.reserve(batch.size());
  dual.reserve(batch.size());
  for (const WindowSample& w : batch) {
    Tape tape(false);
    const auto tokens = window_tokens(corpus, w);
    const ForwardOutput out = forward(tape, mc, teacher, w.features, tokens, false);
    joint.push_back(out.alignment.value());
    dual.push_back(out.alignment_dual.value());
  }
  std::vector<WindowAgreementInput> inputs;
  for (std::size_t i = 0; i < batch.size(); ++i) inputs.push_back({&joint[i], &dual[i], batch[i].masks});
  return denoise_batch(inputs, alpha);
}

StepStats stage2_step(TrainState& state, const Corpus& corpus, std::span<const WindowSample> batch,
                      const TrainConfig& cfg, const LossConfig& loss) {
  if (!state.ema) throw ContractError("stage 2 needs an EMA teacher");
  const PseudoLabels labels = pseudo_label_batch(state.config, state.ema->teacher, corpus, batch, cfg.alpha);
  StepStats st;
  st.sentences = labels.sentence_count();
  st.positives = labels.positive_count();
  Tape tape;
  Var tc, ce;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const WindowSample& w = batch[i];
    const auto& rows = labels.windows[i];
    const auto tokens = window_tokens(corpus, w);
    const ForwardOutput out = forward(tape, state.config, state.params, w.features, tokens, true);
    std::vector<SentenceMask> updated;
    std::vector<std::size_t> active, all;
    std::vector<int> y;
    for (std::size_t k = 0; k < rows.size(); ++k) {
      updated.push_back(rows[k].updated);
      y.push_back(rows[k].y_pseudo);
      all.push_back(k);
      if (rows[k].iou > 0.0) ++st.iou_positive;
      if (rows[k].active && !rows[k].updated.all()) active.push_back(k);
    }
    if (!active.empty()) {
      st.active += active.size();
      tc = accumulate(tc, ad::add(l_tc(out.alignment, updated, active, loss.temperature),
                                  l_tc(out.alignment_dual, updated, active, loss.temperature)));
    }
    // Per-window mean reweighted into a batch mean.
    ce = accumulate(ce, ad::scale(l_alignability(out.logits, y, all),
                                  static_cast<double>(rows.size()) / static_cast<double>(st.sentences)));
  }
  Var objective = ce;
  st.l_align = ce.value()(0, 0);
  if (st.active > 0) {
    const Var tc_mean = ad::scale(tc, 1.0 / static_cast<double>(st.active));
    st.l_tc = tc_mean.value()(0, 0);
    objective = l_total(tc_mean, ce);
  }
  check_finite(objective.value()(0, 0), "stage-2 loss");
  const GradientMap grads = tape.backward(objective);
  check_finite(grads);
  adamw_step(state.params, grads, state.optimizer, {cfg.lr, cfg.weight_decay});
  check_finite(state.params);
  ema_update(*state.ema, state.params);
  return st;
}

EvalResult evaluate_model(const ModelConfig& mc, const ParameterSet& params, const Corpus& held_out) {
  EvalResult r;
  PointingTally tally;
  std::vector<double> head, fallback;
  std::vector<int> labels;
  for (const NarratedVideo& v : held_out) {
    std::vector<std::vector<std::size_t>> tokens;
    std::vector<GtSentence> gt;
    for (const SentenceRecord& s : v.sentences) {
      tokens.push_back(s.token_ids);
      GtSentence g;
      if (s.gt && s.gt->alignable) g = {true, s.gt->gt_start, s.gt->gt_end};
      gt.push_back(g);
      labels.push_back(g.alignable ? 1 : 0);
    }
    const VideoInference inf = infer_video(mc, params, v.features, tokens);
    tally += pointing_game(inf.alignment, gt);
    head.insert(head.end(), inf.p_alignable.begin(), inf.p_alignable.end());
    const auto fb = alignability_scores_fallback(inf.alignment);
    fallback.insert(fallback.end(), fb.begin(), fb.end());
  }
  r.sentences = labels.size();
  r.alignable = tally.total;
  if (tally.total > 0) r.r_at_1 = tally.recall();
  if (tally.total > 0 && tally.total < labels.size()) {
    r.auc_head = roc_auc(head, labels);
    r.auc_fallback = roc_auc(fallback, labels);
  }
  return r;
}

std::string MetricsRecord::to_json() const {
  nlohmann::ordered_json j;
  j["iter"] = iter;
  j["stage"] = stage;
  j["l_tc"] = l_tc;
  j["l_align"] = l_align;
  j["r_at_1"] = r_at_1 ? nlohmann::ordered_json(*r_at_1) : nlohmann::ordered_json(nullptr);
  j["roc_auc"] = roc_auc ? nlohmann::ordered_json(*roc_auc) : nlohmann::ordered_json(nullptr);
  return j.dump();
}

CorpusSplit split_corpus(const Corpus& corpus) {
  std::size_t held = corpus.size() / 10;
  if (held == 0 && corpus.size() >= 2) held = 1;
  CorpusSplit s;
  s.train.assign(corpus.begin(), corpus.end() - static_cast<long>(held));
  s.held_out.assign(corpus.end() - static_cast<long>(held), corpus.end());
  return s;
}

namespace {

struct StageRunner {
  const TrainConfig& cfg;
  const LossConfig& loss;
  const CorpusSplit& split;
  const RunHooks& hooks;
  RunResult& result;

  void run(int stage, std::size_t iters, std::uint64_t iter_base) {
    TrainState& state = result.state;
    std::mt19937_64 rng(mix(cfg.seed ^ mix(static_cast<std::uint64_t>(stage))));
    double sum_tc = 0.0, sum_align = 0.0;
    std::size_t n = 0;
    for (std::size_t it = 1; it <= iters; ++it) {
      const auto batch = sample_batch(split.train, cfg.batch_videos, cfg.window_sec, rng);
      const StepStats st = stage == 1 ? stage1_step(state, split.train, batch, cfg, loss)
                                      : stage2_step(state, split.train, batch, cfg, loss);
      state.stage_iteration = it;
      sum_tc += st.l_tc;
      sum_align += st.l_align;
      ++n;
      const bool due = (cfg.eval_every > 0 && it % cfg.eval_every == 0) || it == iters;
      if (!due) continue;
      MetricsRecord rec;
      rec.iter = iter_base + it;
      rec.stage = stage;
      rec.l_tc = sum_tc / static_cast<double>(n);
      rec.l_align = sum_align / static_cast<double>(n);
      if (!split.held_out.empty()) {
        const EvalResult e = evaluate_model(state.config, state.params, split.held_out);
        if (e.alignable > 0) rec.r_at_1 = e.r_at_1;
        if (e.alignable > 0 && e.alignable < e.sentences) rec.roc_auc = stage == 1 ? e.auc_fallback : e.auc_head;
      }
      sum_tc = sum_align = 0.0;
      n = 0;
      result.metrics.push_back(rec);
      if (hooks.on_metrics) hooks.on_metrics(rec);
    }
    state.stage = stage;
    state.stage_iteration = iters;
    if (hooks.on_checkpoint) hooks.on_checkpoint(stage, state.to_checkpoint());
  }
};

}  // namespace

RunResult run_training(const TrainConfig& cfg, const LossConfig& loss, const ModelConfig& model_cfg,
                       const Corpus& corpus, StageSelect stages, std::optional<Checkpoint> initial,
                       const RunHooks& hooks) {
  cfg.validate();
  loss.validate();
  if (corpus.empty()) throw ContractError("training corpus is empty");
  const CorpusSplit split = split_corpus(corpus);
  if (split.train.empty()) throw ContractError("no training videos after the held-out split");

  RunResult result;
  if (initial) {
    result.state = TrainState::from_checkpoint(std::move(*initial));
  } else {
    if (stages == StageSelect::s2) throw ContractError("stage 2 alone needs a stage-1 checkpoint");
    result.state = TrainState::fresh(model_cfg, cfg.seed);
  }
  const ModelConfig& mc = result.state.config;
  mc.validate();
  if (corpus_vocab_size(corpus) > mc.vocab_size) throw ContractError("corpus token ids exceed the model vocabulary");
  if (cfg.window_sec > mc.max_T) throw ContractError("window_sec exceeds the model's max_T");

  StageRunner runner{cfg, loss, split, hooks, result};
  if (stages != StageSelect::s2) runner.run(1, cfg.s1_iters, 0);
  if (stages != StageSelect::s1) {
    if (result.state.stage < 1) throw ContractError("stage 2 needs a stage-1 checkpoint");
    // Iteration numbering continues from the end of stage 1.
    const std::uint64_t base = stages == StageSelect::s2 ? result.state.stage_iteration : cfg.s1_iters;
    if (!result.state.ema || result.state.stage == 1) {
      result.state.ema = EmaState{result.state.params, cfg.ema_momentum};
    }
    runner.run(2, cfg.s2_iters, base);
  }
  return result;
}

}  // namespace talign
