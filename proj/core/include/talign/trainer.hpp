#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "talign/checkpoint.hpp"
#include "talign/corpus.hpp"
#include "talign/denoise.hpp"
#include "talign/losses.hpp"
#include "talign/model.hpp"
#include "talign/optimizer.hpp"

namespace talign {

struct TrainConfig {
  std::size_t batch_videos = 8;
  std::size_t window_sec = 64;
  double lr = 1e-4;
  double weight_decay = 1e-2;
  std::size_t s1_iters = 2000;
  std::size_t s2_iters = 2000;
  double alpha = 0.5;
  double ema_momentum = 0.99;
  std::size_t eval_every = 200;  // 0: only at stage ends
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainState {
  ModelConfig config;
  ParameterSet params;
  AdamWState optimizer;
  std::optional<EmaState> ema;
  int stage = 0;
  std::uint64_t stage_iteration = 0;

  static TrainState fresh(const ModelConfig& cfg, std::uint64_t seed);
  static TrainState from_checkpoint(Checkpoint ckpt);
  Checkpoint to_checkpoint() const;
};

struct StepStats {
  double l_tc = 0.0;
  double l_align = 0.0;
  std::size_t sentences = 0;
  std::size_t active = 0;     // rows in the contrastive loss
  std::size_t positives = 0;  // pseudo-label positives (stage 2)
  std::size_t iou_positive = 0;
};

// B windows from uniformly drawn videos.
std::vector<WindowSample> sample_batch(const Corpus& corpus, std::size_t batch, std::size_t window,
                                       std::mt19937_64& rng);

// L_TC on both matrices against ASR masks, every sentence active, head left
// out of the graph.
StepStats stage1_step(TrainState& state, const Corpus& corpus, std::span<const WindowSample> batch,
                      const TrainConfig& cfg, const LossConfig& loss);

// Teacher pseudo-labels, L_TC on updated masks of the top-alpha rows plus
// alignability cross-entropy on every row, then an EMA update.
StepStats stage2_step(TrainState& state, const Corpus& corpus, std::span<const WindowSample> batch,
                      const TrainConfig& cfg, const LossConfig& loss);

// Teacher-side denoising for a batch, as used in stage 2.
PseudoLabels pseudo_label_batch(const ModelConfig& mc, const ParameterSet& teacher, const Corpus& corpus,
                                std::span<const WindowSample> batch, double alpha);

struct EvalResult {
  double r_at_1 = 0.0;
  double auc_head = 0.0;
  double auc_fallback = 0.0;
  std::size_t alignable = 0;
  std::size_t sentences = 0;
};

// Pointing game pooled over all alignable sentences and ROC-AUC of the head
// and of the max-over-time fallback, on full stitched videos.
EvalResult evaluate_model(const ModelConfig& mc, const ParameterSet& params, const Corpus& held_out);

struct MetricsRecord {
  std::uint64_t iter = 0;  // global iteration, monotone across stages
  int stage = 0;
  double l_tc = 0.0;
  double l_align = 0.0;
  std::optional<double> r_at_1;
  std::optional<double> roc_auc;

  std::string to_json() const;
};

struct CorpusSplit {
  Corpus train;
  Corpus held_out;
};

// Last 10% of videos are held out (at least one when there are two or more).
CorpusSplit split_corpus(const Corpus& corpus);

enum class StageSelect { s1, s2, both };

struct RunHooks {
  std::function<void(const MetricsRecord&)> on_metrics;
  std::function<void(int stage, const Checkpoint&)> on_checkpoint;
};

struct RunResult {
  TrainState state;
  std::vector<MetricsRecord> metrics;
};

// Stage 1 then stage 2 (or one of them). Stage 2 alone needs `initial`
// holding a stage-1 checkpoint. Each stage draws windows from its own
// seed-derived stream so a resumed stage 2 matches a one-shot run.
RunResult run_training(const TrainConfig& cfg, const LossConfig& loss, const ModelConfig& model_cfg,
                       const Corpus& corpus, StageSelect stages, std::optional<Checkpoint> initial = std::nullopt,
                       const RunHooks& hooks = {});

}  // namespace talign
