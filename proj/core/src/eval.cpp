#include "talign/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>

#include "talign/error.hpp"
#include "talign/mask.hpp"

namespace talign {

namespace {

std::size_t argmax(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

double cosine(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / (std::max(std::sqrt(na), 1e-8) * std::max(std::sqrt(nb), 1e-8));
}

}  // namespace

double PointingTally::recall() const {
  if (total == 0) throw ContractError("recall@1 undefined: no alignable sentences");
  return static_cast<double>(hits) / static_cast<double>(total);
}

PointingTally pointing_game(const Tensor& alignment, std::span<const GtSentence> gt) {
  if (gt.size() != alignment.rows()) throw ContractError("pointing_game: gt count != K");
  PointingTally tally;
  for (std::size_t k = 0; k < gt.size(); ++k) {
    if (!gt[k].alignable) continue;
    ++tally.total;
    if (alignment.cols() == 0) continue;
    const SentenceMask truth = SentenceMask::from_interval(gt[k].gt_start, gt[k].gt_end, alignment.cols());
    if (truth[argmax(alignment.row(k))]) ++tally.hits;
  }
  return tally;
}

double recall_at_1(const Tensor& alignment, std::span<const GtSentence> gt) {
  return pointing_game(alignment, gt).recall();
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ContractError("roc_auc: size mismatch");
  for (double s : scores) {
    if (std::isnan(s)) throw NumericalError("roc_auc: NaN score");
  }
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Mann-Whitney U with mid-ranks for ties.
  double rank_sum_pos = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t q = i; q < j; ++q) {
      if (labels[order[q]] != 0) {
        rank_sum_pos += mid_rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ContractError("roc_auc undefined: single-class input");
  const double np = static_cast<double>(n_pos);
  const double u = rank_sum_pos - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

std::vector<double> alignability_scores_fallback(const Tensor& alignment) {
  std::vector<double> out(alignment.rows(), -std::numeric_limits<double>::infinity());
  for (std::size_t k = 0; k < alignment.rows(); ++k) {
    for (double v : alignment.row(k)) out[k] = std::max(out[k], v);
  }
  return out;
}

Tensor segment_pool(const Tensor& visual, std::size_t begin, std::size_t end) {
  if (begin >= end || end > visual.rows()) throw ContractError("segment_pool: empty or out-of-range interval");
  Tensor out(1, visual.cols());
  for (std::size_t r = begin; r < end; ++r)
    for (std::size_t c = 0; c < visual.cols(); ++c) out(0, c) += visual(r, c);
  const double inv = 1.0 / static_cast<double>(end - begin);
  for (double& v : out.data()) v *= inv;
  return out;
}

RetrievalMetrics retrieval_metrics(const Tensor& queries, const Tensor& segments,
                                   std::span<const std::size_t> gt) {
  if (gt.size() != queries.rows()) throw ContractError("retrieval_metrics: gt count != Q");
  if (queries.rows() == 0) throw ContractError("retrieval_metrics: no queries");
  if (queries.cols() != segments.cols()) throw ShapeError("retrieval_metrics: dimension mismatch");
  RetrievalMetrics m;
  m.ranks.reserve(queries.rows());
  std::vector<double> sims(segments.rows());
  for (std::size_t q = 0; q < queries.rows(); ++q) {
    if (gt[q] >= segments.rows()) throw ContractError("retrieval_metrics: gt index out of range");
    for (std::size_t s = 0; s < segments.rows(); ++s) sims[s] = cosine(queries.row(q), segments.row(s));
    const double target = sims[gt[q]];
    std::size_t rank = 1;
    for (std::size_t s = 0; s < segments.rows(); ++s) {
      if (sims[s] > target || (sims[s] == target && s < gt[q])) ++rank;
    }
    m.ranks.push_back(rank);
  }
  const double nq = static_cast<double>(m.ranks.size());
  auto recall = [&](std::size_t k) {
    return static_cast<double>(std::count_if(m.ranks.begin(), m.ranks.end(), [k](std::size_t r) { return r <= k; })) / nq;
  };
  m.r_at_1 = recall(1);
  m.r_at_5 = recall(5);
  m.r_at_10 = recall(10);
  std::vector<std::size_t> sorted = m.ranks;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  m.median_rank = sorted.size() % 2 == 1 ? static_cast<double>(sorted[mid])
                                         : 0.5 * static_cast<double>(sorted[mid - 1] + sorted[mid]);
  return m;
}

std::vector<std::pair<std::size_t, std::size_t>> tile_windows(std::size_t total, std::size_t window) {
  if (window == 0) throw ContractError("tile_windows: window must be positive");
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t s = 0; s < total; s += window) out.emplace_back(s, std::min(window, total - s));
  return out;
}

Tensor stitch_windows(std::span<const WindowMatrix> windows, std::size_t total) {
  if (windows.empty()) throw ContractError("stitch_windows: no windows");
  const std::size_t k = windows[0].values.rows();
  Tensor out(k, total);
  std::size_t cursor = 0;
  for (const WindowMatrix& w : windows) {
    if (w.values.rows() != k) throw ShapeError("stitch_windows: row count differs between windows");
    if (w.start != cursor) {
      throw ContractError(std::string("stitch_windows: ") + (w.start > cursor ? "gap" : "overlap") +
                          " at frame " + std::to_string(cursor));
    }
    if (w.start + w.values.cols() > total) throw ContractError("stitch_windows: window exceeds timeline");
    for (std::size_t r = 0; r < k; ++r)
      for (std::size_t c = 0; c < w.values.cols(); ++c) out(r, w.start + c) = w.values(r, c);
    cursor += w.values.cols();
  }
  if (cursor != total) throw ContractError("stitch_windows: gap at end of timeline");
  return out;
}

SegmentationResult dtw_decode(const Tensor& alignment) {
  const std::size_t k = alignment.rows();
  const std::size_t t = alignment.cols();
  if (k == 0) throw ContractError("dtw_decode: empty action list");
  if (t < k) {
    throw ContractError("dtw_decode infeasible: T=" + std::to_string(t) + " < K=" + std::to_string(k));
  }
  constexpr double inf = std::numeric_limits<double>::infinity();
  // acc(a, f): best cost of frames [0, f] ending in action a.
  Tensor acc(k, t, inf);
  acc(0, 0) = 1.0 - alignment(0, 0);
  for (std::size_t f = 1; f < t; ++f) {
    for (std::size_t a = 0; a < k && a <= f; ++a) {
      double best = acc(a, f - 1);
      if (a > 0) best = std::min(best, acc(a - 1, f - 1));
      acc(a, f) = best + (1.0 - alignment(a, f));
    }
  }
  SegmentationResult res;
  res.cost = acc(k - 1, t - 1);
  res.frame_labels.assign(t, 0);
  std::size_t a = k - 1;
  for (std::size_t f = t; f-- > 0;) {
    res.frame_labels[f] = a;
    if (f == 0) break;
    // Staying in the same action pushes this action's start earlier.
    const bool can_stay = a < f;
    if (a > 0 && !(can_stay && acc(a, f - 1) <= acc(a - 1, f - 1))) --a;
  }
  res.intervals.reserve(k);
  for (std::size_t act = 0; act < k; ++act) res.intervals.push_back({act, t, 0});
  for (std::size_t f = 0; f < t; ++f) {
    auto& iv = res.intervals[res.frame_labels[f]];
    iv.begin = std::min(iv.begin, f);
    iv.end = std::max(iv.end, f + 1);
  }
  return res;
}

double segmentation_cost(const Tensor& alignment, std::span<const std::size_t> frame_labels) {
  if (frame_labels.size() != alignment.cols()) throw ContractError("segmentation_cost: label count != T");
  double c = 0.0;
  for (std::size_t f = 0; f < frame_labels.size(); ++f) c += 1.0 - alignment(frame_labels[f], f);
  return c;
}

SegmentationMetrics seg_metrics(std::span<const std::size_t> predicted, std::span<const std::size_t> truth) {
  if (predicted.size() != truth.size()) throw ContractError("seg_metrics: timelines differ in length");
  if (truth.empty()) throw ContractError("seg_metrics: empty timeline");
  SegmentationMetrics m;
  std::size_t correct = 0;
  std::size_t n_actions = 0;
  for (std::size_t f = 0; f < truth.size(); ++f) {
    correct += predicted[f] == truth[f] ? 1 : 0;
    n_actions = std::max({n_actions, truth[f] + 1, predicted[f] + 1});
  }
  m.f_acc = static_cast<double>(correct) / static_cast<double>(truth.size());
  std::vector<std::size_t> inter(n_actions, 0), gt_count(n_actions, 0), pred_count(n_actions, 0);
  for (std::size_t f = 0; f < truth.size(); ++f) {
    ++gt_count[truth[f]];
    ++pred_count[predicted[f]];
    if (predicted[f] == truth[f]) ++inter[truth[f]];
  }
  std::size_t present = 0;
  for (std::size_t a = 0; a < n_actions; ++a) {
    if (gt_count[a] == 0) continue;
    ++present;
    const auto uni = static_cast<double>(gt_count[a] + pred_count[a] - inter[a]);
    m.iou += static_cast<double>(inter[a]) / uni;
    if (pred_count[a] > 0) m.iod += static_cast<double>(inter[a]) / static_cast<double>(pred_count[a]);
  }
  m.iou /= static_cast<double>(present);
  m.iod /= static_cast<double>(present);
  return m;
}

std::pair<std::size_t, std::size_t> trim_background(std::span<const long> labels, long background) {
  std::size_t begin = 0;
  std::size_t end = labels.size();
  while (begin < end && labels[begin] == background) ++begin;
  while (end > begin && labels[end - 1] == background) --end;
  return {begin, end};
}

Tensor heatmap_softmax(const Tensor& alignment) {
  Tensor out = alignment;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    if (row.empty()) continue;
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      z += v;
    }
    for (double& v : row) v /= z;
  }
  return out;
}

void export_heatmap(const Tensor& alignment, const std::filesystem::path& csv_path,
                    const std::optional<std::filesystem::path>& pgm_path) {
  const Tensor p = heatmap_softmax(alignment);
  {
    std::ofstream csv(csv_path);
    if (!csv) throw IoError("cannot open " + csv_path.string());
    csv.precision(17);
    for (std::size_t r = 0; r < p.rows(); ++r) {
      for (std::size_t c = 0; c < p.cols(); ++c) {
        if (c) csv << ',';
        csv << p(r, c);
      }
      csv << '\n';
    }
    if (!csv) throw IoError("failed writing " + csv_path.string());
  }
  if (pgm_path) {
    std::ofstream pgm(*pgm_path, std::ios::binary);
    if (!pgm) throw IoError("cannot open " + pgm_path->string());
    double mx = 0.0;
    for (double v : p.data()) mx = std::max(mx, v);
    pgm << "P5\n" << p.cols() << ' ' << p.rows() << "\n255\n";
    for (double v : p.data()) {
      const auto byte = static_cast<unsigned char>(mx > 0.0 ? std::lround(255.0 * v / mx) : 0);
      pgm.put(static_cast<char>(byte));
    }
    if (!pgm) throw IoError("failed writing " + pgm_path->string());
  }
}

Tensor read_heatmap_csv(const std::filesystem::path& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw IoError("cannot open " + csv_path.string());
  std::vector<double> data;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t n = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        data.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ParseError("bad CSV cell '" + cell + "'", rows + 1);
      }
      ++n;
    }
    if (rows == 0) cols = n;
    if (n != cols) throw ParseError("ragged CSV row", rows + 1);
    ++rows;
  }
  return Tensor(rows, cols, std::move(data));
}

}  // namespace talign
