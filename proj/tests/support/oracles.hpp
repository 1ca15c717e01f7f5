#pragma once

// Independent reference implementations. Deliberately naive: loops, no shared
// code with the library beyond the Tensor container.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "talign/autodiff.hpp"
#include "talign/mask.hpp"
#include "talign/tensor.hpp"

namespace oracle {

using talign::Tensor;

inline Tensor random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(r, c);
  for (double& x : t.data()) x = u(rng);
  return t;
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  Tensor out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      long double s = 0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += static_cast<long double>(a(i, k)) * b(k, j);
      out(i, j) = static_cast<double>(s);
    }
  }
  return out;
}

// -sum_k log( sum_{t in P_k} exp(A/tau) / sum_t exp(A/tau) )
inline double l_tc(const Tensor& A, const std::vector<talign::SentenceMask>& masks,
                   const std::vector<std::size_t>& active, double tau) {
  long double total = 0;
  for (std::size_t k : active) {
    long double pos = 0, all = 0;
    for (std::size_t t = 0; t < A.cols(); ++t) {
      const long double e = std::exp(static_cast<long double>(A(k, t)) / tau);
      all += e;
      if (masks[k][t]) pos += e;
    }
    total -= std::log(pos / all);
  }
  return static_cast<double>(total);
}

inline double l_alignability(const Tensor& logits, const std::vector<int>& y, const std::vector<std::size_t>& rows) {
  long double total = 0;
  for (std::size_t k : rows) {
    const long double e0 = std::exp(static_cast<long double>(logits(k, 0)));
    const long double e1 = std::exp(static_cast<long double>(logits(k, 1)));
    total -= std::log((y[k] ? e1 : e0) / (e0 + e1));
  }
  return static_cast<double>(total / rows.size());
}

// Summed cost of every monotone path from (0,0) to (K-1,T-1) with unit
// steps right, down or diagonal.
inline std::vector<long double> monotone_path_costs(const Tensor& cost) {
  std::vector<long double> out;
  std::function<void(std::size_t, std::size_t, long double)> walk = [&](std::size_t i, std::size_t j, long double acc) {
    acc += cost(i, j);
    if (i + 1 == cost.rows() && j + 1 == cost.cols()) {
      out.push_back(acc);
      return;
    }
    if (i + 1 < cost.rows()) walk(i + 1, j, acc);
    if (j + 1 < cost.cols()) walk(i, j + 1, acc);
    if (i + 1 < cost.rows() && j + 1 < cost.cols()) walk(i + 1, j + 1, acc);
  };
  walk(0, 0, 0);
  return out;
}

inline double hard_dtw(const Tensor& cost) {
  const auto c = monotone_path_costs(cost);
  return static_cast<double>(*std::min_element(c.begin(), c.end()));
}

// Soft minimum over all monotone paths.
inline double soft_dtw(const Tensor& cost, double gamma) {
  const auto path_costs = monotone_path_costs(cost);
  const long double m = *std::min_element(path_costs.begin(), path_costs.end());
  long double s = 0;
  for (long double c : path_costs) s += std::exp(-(c - m) / gamma);
  return static_cast<double>(m - gamma * std::log(s));
}

// Minimum of sum (1 - A[label(t), t]) over all splits of T frames into K
// ordered non-empty runs; also returns the first minimizing labelling in
// lexicographic order of boundaries.
struct Segmentation {
  double cost = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> labels;
};

inline Segmentation exhaustive_segmentation(const Tensor& A) {
  const std::size_t K = A.rows(), T = A.cols();
  Segmentation best;
  std::vector<std::size_t> bounds;  // start frame of actions 1..K-1
  std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t k, std::size_t from) {
    if (k == K) {
      std::vector<std::size_t> labels(T);
      std::size_t a = 0;
      for (std::size_t t = 0; t < T; ++t) {
        while (a + 1 < K && t >= bounds[a]) ++a;
        labels[t] = a;
      }
      double c = 0;
      for (std::size_t t = 0; t < T; ++t) c += 1.0 - A(labels[t], t);
      if (c < best.cost - 1e-12) best = {c, labels};
      return;
    }
    // action k starts somewhere after action k-1, leaving room for the rest
    for (std::size_t s = from; s + (K - k) <= T; ++s) {
      bounds.push_back(s);
      rec(k + 1, s + 1);
      bounds.pop_back();
    }
  };
  if (K == 1) {
    best.labels.assign(T, 0);
    best.cost = 0;
    for (std::size_t t = 0; t < T; ++t) best.cost += 1.0 - A(0, t);
    return best;
  }
  rec(1, 1);
  return best;
}

inline double auc_pairwise(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] == 1 && y[j] == 0) {
        den += 1;
        num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
    }
  }
  return num / den;
}

// Element-wise relative error with an absolute floor for near-zero entries.
inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Central finite differences of f with respect to every entry of params[i].
// Returns the largest relative error against the tape gradients.
inline double gradient_check(talign::ParameterSet& params,
                             const std::function<talign::Var(talign::Tape&, const talign::ParameterSet&)>& f,
                             double h = 1e-4, double floor = 1e-6, std::size_t max_entries = 0,
                             std::uint64_t seed = 0) {
  talign::Tape tape;
  const talign::GradientMap grads = tape.backward(f(tape, params));
  auto eval = [&]() {
    talign::Tape t(false);
    return f(t, params).value()(0, 0);
  };
  std::mt19937_64 rng(seed);
  double worst = 0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& x = params[p];
    auto it = grads.find(params.name(p));
    const std::size_t n = x.size();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    if (max_entries > 0 && n > max_entries) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(max_entries);
    }
    for (std::size_t i : idx) {
      const double orig = x.data()[i];
      x.data()[i] = orig + h;
      const double up = eval();
      x.data()[i] = orig - h;
      const double down = eval();
      x.data()[i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double analytic = it == grads.end() ? 0.0 : it->second.data()[i];
      worst = std::max(worst, rel_err(analytic, numeric, floor));
    }
  }
  return worst;
}

}  // namespace oracle
