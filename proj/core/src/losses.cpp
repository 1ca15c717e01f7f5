#include "talign/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "talign/error.hpp"

namespace talign {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double logsumexp(std::span<const double> xs) {
  double mx = -kInf;
  for (double x : xs) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - mx);
  return mx + std::log(s);
}

void check_indices(std::span<const std::size_t> idx, std::size_t k, const char* what) {
  std::vector<bool> seen(k, false);
  for (std::size_t i : idx) {
    if (i >= k) throw ContractError(std::string(what) + ": index " + std::to_string(i) + " out of range");
    if (seen[i]) throw ContractError(std::string(what) + ": duplicate index " + std::to_string(i));
    seen[i] = true;
  }
}

double softmin3(double a, double b, double c, double gamma) {
  const double m = std::min({a, b, c});
  if (!std::isfinite(m)) return m;
  const double s = std::exp(-(a - m) / gamma) + std::exp(-(b - m) / gamma) + std::exp(-(c - m) / gamma);
  return m - gamma * std::log(s);
}

// Accumulated soft-DTW table padded with an extra first row/column:
// r(i+1, j+1) holds the value for cell (i, j).
Tensor soft_dtw_table(const Tensor& cost, double gamma) {
  const std::size_t k = cost.rows();
  const std::size_t t = cost.cols();
  Tensor r(k + 2, t + 2, kInf);
  r(0, 0) = 0.0;
  for (std::size_t i = 1; i <= k; ++i) {
    for (std::size_t j = 1; j <= t; ++j) {
      r(i, j) = cost(i - 1, j - 1) + softmin3(r(i - 1, j - 1), r(i - 1, j), r(i, j - 1), gamma);
    }
  }
  return r;
}

void check_soft_dtw(const Tensor& m, double gamma) {
  if (!(gamma > 0.0)) throw ContractError("soft-DTW gamma must be positive");
  if (m.rows() == 0) throw ContractError("soft-DTW needs at least one row");
  if (m.cols() < m.rows()) {
    throw ContractError("soft-DTW infeasible: T=" + std::to_string(m.cols()) + " < K=" +
                        std::to_string(m.rows()));
  }
}

}  // namespace

void LossConfig::validate() const {
  if (!(temperature > 0.0)) throw ContractError("temperature must be positive");
  if (!(softdtw_gamma > 0.0)) throw ContractError("soft-DTW gamma must be positive");
}

Var l_tc(Var alignment, std::span<const SentenceMask> masks, std::span<const std::size_t> active,
         double temperature) {
  if (!(temperature > 0.0)) throw ContractError("l_tc: temperature must be positive");
  const Tensor& a = alignment.value();
  if (masks.size() != a.rows()) {
    throw ContractError("l_tc: " + std::to_string(masks.size()) + " masks for " +
                        std::to_string(a.rows()) + " rows");
  }
  check_indices(active, a.rows(), "l_tc active set");
  const double inv_tau = 1.0 / temperature;
  std::vector<double> logits(a.cols());
  std::vector<double> pos;
  double loss = 0.0;
  for (std::size_t k : active) {
    const SentenceMask& m = masks[k];
    if (m.length() != a.cols()) throw ContractError("l_tc: mask length does not match T");
    const std::size_t p = m.popcount();
    if (p == 0 || p == m.length()) {
      throw ContractError("l_tc: active sentence " + std::to_string(k) +
                          " has an all-zero or all-one mask");
    }
    pos.clear();
    for (std::size_t t = 0; t < a.cols(); ++t) {
      logits[t] = a(k, t) * inv_tau;
      if (m[t]) pos.push_back(logits[t]);
    }
    loss += logsumexp(logits) - logsumexp(pos);
  }
  std::vector<std::size_t> act(active.begin(), active.end());
  std::vector<SentenceMask> ms(masks.begin(), masks.end());
  return alignment.tape().push(
      Tensor(1, 1, loss), {alignment},
      [alignment, act = std::move(act), ms = std::move(ms), inv_tau](Tape& tape, const Tensor&,
                                                                        const Tensor& g) {
        const Tensor& a = tape.value(alignment);
        Tensor& ga = tape.grad(alignment);
        const double scale = g(0, 0) * inv_tau;
        std::vector<double> logits(a.cols());
        for (std::size_t k : act) {
          double mx = -kInf;
          double mx_pos = -kInf;
          for (std::size_t t = 0; t < a.cols(); ++t) {
            logits[t] = a(k, t) * inv_tau;
            mx = std::max(mx, logits[t]);
            if (ms[k][t]) mx_pos = std::max(mx_pos, logits[t]);
          }
          double z = 0.0;
          double z_pos = 0.0;
          for (std::size_t t = 0; t < a.cols(); ++t) {
            z += std::exp(logits[t] - mx);
            if (ms[k][t]) z_pos += std::exp(logits[t] - mx_pos);
          }
          for (std::size_t t = 0; t < a.cols(); ++t) {
            double d = std::exp(logits[t] - mx) / z;
            if (ms[k][t]) d -= std::exp(logits[t] - mx_pos) / z_pos;
            ga(k, t) += scale * d;
          }
        }
      });
}

Var l_alignability(Var logits, std::span<const int> labels, std::span<const std::size_t> labeled) {
  const Tensor& z = logits.value();
  if (z.cols() != 2) throw ShapeError("l_alignability: logits must be K x 2");
  if (labels.size() != z.rows()) throw ContractError("l_alignability: label count != K");
  if (labeled.empty()) throw ContractError("l_alignability: empty labeled set");
  check_indices(labeled, z.rows(), "l_alignability labeled set");
  double loss = 0.0;
  for (std::size_t k : labeled) {
    if (labels[k] != 0 && labels[k] != 1) throw ContractError("l_alignability: labels must be 0/1");
    loss += logsumexp(z.row(k)) - z(k, static_cast<std::size_t>(labels[k]));
  }
  const double inv_n = 1.0 / static_cast<double>(labeled.size());
  std::vector<std::size_t> idx(labeled.begin(), labeled.end());
  std::vector<int> y(labels.begin(), labels.end());
  return logits.tape().push(
      Tensor(1, 1, loss * inv_n), {logits},
      [logits, idx = std::move(idx), y = std::move(y), inv_n](Tape& tape, const Tensor&, const Tensor& g) {
        const Tensor& z = tape.value(logits);
        Tensor& gz = tape.grad(logits);
        for (std::size_t k : idx) {
          const double lse = logsumexp(z.row(k));
          for (std::size_t c = 0; c < 2; ++c) {
            double d = std::exp(z(k, c) - lse);
            if (static_cast<int>(c) == y[k]) d -= 1.0;
            gz(k, c) += g(0, 0) * inv_n * d;
          }
        }
      });
}

Var l_total(Var l_tc_value, Var l_align_value) { return ad::add(l_tc_value, l_align_value); }

double soft_dtw_value(const Tensor& cost, double gamma) {
  check_soft_dtw(cost, gamma);
  return soft_dtw_table(cost, gamma)(cost.rows(), cost.cols());
}

Var soft_dtw_loss(Var alignment, double gamma) {
  const Tensor& a = alignment.value();
  check_soft_dtw(a, gamma);
  Tensor cost(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) cost.data()[i] = 1.0 - a.data()[i];
  Tensor table = soft_dtw_table(cost, gamma);
  const double value = table(a.rows(), a.cols());
  return alignment.tape().push(
      Tensor(1, 1, value), {alignment},
      [alignment, cost = std::move(cost), r = std::move(table), gamma](Tape& tape, const Tensor&,
                                                                       const Tensor& g) mutable {
        const std::size_t k = cost.rows();
        const std::size_t t = cost.cols();
        // Padded copies: d(i, j) is cost(i-1, j-1); row k+1 / col t+1 are the
        // sentinel boundary of the backward recursion.
        Tensor d(k + 2, t + 2, 0.0);
        for (std::size_t i = 1; i <= k; ++i)
          for (std::size_t j = 1; j <= t; ++j) d(i, j) = cost(i - 1, j - 1);
        for (std::size_t i = 0; i <= k + 1; ++i) r(i, t + 1) = -kInf;
        for (std::size_t j = 0; j <= t + 1; ++j) r(k + 1, j) = -kInf;
        r(k + 1, t + 1) = r(k, t);
        Tensor e(k + 2, t + 2, 0.0);
        e(k + 1, t + 1) = 1.0;
        for (std::size_t j = t; j >= 1; --j) {
          for (std::size_t i = k; i >= 1; --i) {
            const double a = std::exp((r(i + 1, j) - r(i, j) - d(i + 1, j)) / gamma);
            const double b = std::exp((r(i, j + 1) - r(i, j) - d(i, j + 1)) / gamma);
            const double c = std::exp((r(i + 1, j + 1) - r(i, j) - d(i + 1, j + 1)) / gamma);
            e(i, j) = e(i + 1, j) * a + e(i, j + 1) * b + e(i + 1, j + 1) * c;
          }
        }
        Tensor& ga = tape.grad(alignment);
        for (std::size_t i = 0; i < k; ++i)
          for (std::size_t j = 0; j < t; ++j) ga(i, j) -= g(0, 0) * e(i + 1, j + 1);
      });
}

}  // namespace talign
