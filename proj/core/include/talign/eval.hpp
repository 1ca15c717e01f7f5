#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "talign/tensor.hpp"

namespace talign {

// Ground truth for one sentence. gt_start/gt_end are meaningful only when
// alignable.
struct GtSentence {
  bool alignable = false;
  double gt_start = 0.0;
  double gt_end = 0.0;
};

// Pointing-game counts; pooled across videos before dividing.
struct PointingTally {
  std::size_t hits = 0;
  std::size_t total = 0;

  double recall() const;
  PointingTally& operator+=(const PointingTally& o) {
    hits += o.hits;
    total += o.total;
    return *this;
  }
};

// Alignable sentences whose arg-max frame (lowest on ties) falls inside the
// ground-truth interval.
PointingTally pointing_game(const Tensor& alignment, std::span<const GtSentence> gt);
double recall_at_1(const Tensor& alignment, std::span<const GtSentence> gt);

// Probability that a random positive outscores a random negative, ties
// counted as one half.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

// Per-sentence maximum over time, the alignability proxy for models without
// a classifier head.
std::vector<double> alignability_scores_fallback(const Tensor& alignment);

// Mean of rows [begin, end) as a 1 x d row.
Tensor segment_pool(const Tensor& visual, std::size_t begin, std::size_t end);

struct RetrievalMetrics {
  double r_at_1 = 0.0;
  double r_at_5 = 0.0;
  double r_at_10 = 0.0;
  double median_rank = 0.0;
  std::vector<std::size_t> ranks;  // 1-based, per query
};

// Ranks every segment by cosine similarity to each query; equal scores rank
// the lower segment index first.
RetrievalMetrics retrieval_metrics(const Tensor& queries, const Tensor& segments,
                                   std::span<const std::size_t> gt);

struct WindowMatrix {
  std::size_t start = 0;  // first frame covered
  Tensor values;          // K x width
};

// [start, length) pairs of a non-overlapping tiling; the last may be short.
std::vector<std::pair<std::size_t, std::size_t>> tile_windows(std::size_t total, std::size_t window);

// Column-wise concatenation; windows must tile [0, total) exactly.
Tensor stitch_windows(std::span<const WindowMatrix> windows, std::size_t total);

struct ActionInterval {
  std::size_t action = 0;
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
};

struct SegmentationResult {
  std::vector<std::size_t> frame_labels;  // action index per frame
  std::vector<ActionInterval> intervals;  // one per action, in list order
  double cost = 0.0;                      // sum of (1 - A) along the path
};

// Minimum-cost monotone assignment of T frames to the K ordered actions, each
// action covering at least one frame. Cost is 1 - A. Ties favor earlier
// boundaries.
SegmentationResult dtw_decode(const Tensor& alignment);

// Sum of (1 - A[label(t), t]).
double segmentation_cost(const Tensor& alignment, std::span<const std::size_t> frame_labels);

struct SegmentationMetrics {
  double f_acc = 0.0;
  double iou = 0.0;
  double iod = 0.0;
};

// Frame-level accuracy plus IoU and intersection-over-detection averaged over
// the actions present in the ground truth.
SegmentationMetrics seg_metrics(std::span<const std::size_t> predicted, std::span<const std::size_t> truth);

// [begin, end) of frames left after dropping leading and trailing frames
// whose label equals `background`.
std::pair<std::size_t, std::size_t> trim_background(std::span<const long> labels, long background);

// Row-wise softmax over the time axis.
Tensor heatmap_softmax(const Tensor& alignment);

// Writes the normalized matrix as CSV and, when given, an 8-bit PGM image.
void export_heatmap(const Tensor& alignment, const std::filesystem::path& csv_path,
                    const std::optional<std::filesystem::path>& pgm_path = std::nullopt);
Tensor read_heatmap_csv(const std::filesystem::path& csv_path);

}  // namespace talign
