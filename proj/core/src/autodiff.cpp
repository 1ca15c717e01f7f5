#include "talign/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "talign/error.hpp"

namespace talign {

namespace {

std::string shape_str(const Tensor& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

void require_same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw ContractError("vars belong to different tapes");
}

void axpy(std::span<double> dst, std::span<const double> src, double alpha = 1.0) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += alpha * src[i];
}

}  // namespace

// ---------------------------------------------------------------------------
// ParameterSet

std::size_t ParameterSet::add(std::string name, Tensor value) {
  if (lookup_.contains(name)) throw ContractError("duplicate parameter name: " + name);
  const std::size_t i = values_.size();
  lookup_.emplace(name, i);
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return i;
}

std::size_t ParameterSet::index(std::string_view name) const {
  auto it = lookup_.find(name);
  if (it == lookup_.end()) throw ContractError("unknown parameter: " + std::string(name));
  return it->second;
}

bool ParameterSet::contains(std::string_view name) const { return lookup_.find(name) != lookup_.end(); }

bool ParameterSet::same_layout(const ParameterSet& other) const {
  if (names_ != other.names_) return false;
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (values_[i].rows() != other.values_[i].rows() || values_[i].cols() != other.values_[i].cols()) {
      return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Tape

const Tensor& Var::value() const { return tape_->value(*this); }

Var Tape::make(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return make(std::move(n));
}

Var Tape::parameter(const ParameterSet& set, std::size_t index) {
  const ParamKey key{&set, index};
  if (auto it = param_nodes_.find(key); it != param_nodes_.end()) return Var(this, it->second);
  Node n;
  n.value = set[index];
  n.needs_grad = record_;
  n.set = &set;
  n.param_index = index;
  Var v = make(std::move(n));
  param_nodes_.emplace(key, v.id());
  return v;
}

Var Tape::push(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  if (record_) {
    for (const Var& in : inputs) {
      if (&in.tape() != this) throw ContractError("input var belongs to a different tape");
      n.needs_grad = n.needs_grad || nodes_[in.id()].needs_grad;
    }
    if (n.needs_grad) n.backward = std::move(backward);
  }
  return make(std::move(n));
}

Tensor& Tape::grad(Var v) {
  Node& n = nodes_[v.id()];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

GradientMap Tape::backward(Var root) {
  if (&root.tape() != this) throw ContractError("backward root belongs to a different tape");
  const Tensor& rv = value(root);
  if (rv.rows() != 1 || rv.cols() != 1) {
    throw ContractError("backward root must be a 1x1 scalar, got " + shape_str(rv));
  }
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  GradientMap grads;
  if (!nodes_[root.id()].needs_grad) return grads;
  grad(root)(0, 0) = 1.0;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    n.backward(*this, n.value, n.grad);
  }
  std::map<std::string, const ParameterSet*> owners;
  for (Node& n : nodes_) {
    if (n.set == nullptr || !n.needs_grad || !n.has_grad) continue;
    const std::string& name = n.set->name(n.param_index);
    auto [it, inserted] = owners.emplace(name, n.set);
    if (!inserted && it->second != n.set) {
      throw ContractError("parameter name collision across sets: " + name);
    }
    grads.emplace(name, std::move(n.grad));
    n.has_grad = false;
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Ops

namespace ad {

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: " + shape_str(av) + " * " + shape_str(bv));
  }
  Tensor out(av.rows(), bv.cols());
  gemm(av, false, bv, false, out, false);
  return a.tape().push(std::move(out), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
    if (t.needs_grad(a)) gemm(g, false, t.value(b), true, t.grad(a), true);
    if (t.needs_grad(b)) gemm(t.value(a), true, g, false, t.grad(b), true);
  });
}

Var matmul_nt(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.cols()) {
    throw ShapeError("matmul_nt: " + shape_str(av) + " * " + shape_str(bv) + "^T");
  }
  Tensor out(av.rows(), bv.rows());
  gemm(av, false, bv, true, out, false);
  return a.tape().push(std::move(out), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
    if (t.needs_grad(a)) gemm(g, false, t.value(b), false, t.grad(a), true);
    if (t.needs_grad(b)) gemm(g, true, t.value(a), false, t.grad(b), true);
  });
}

Var transpose(Var a) {
  const Tensor& av = a.value();
  Tensor out(av.cols(), av.rows());
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < av.cols(); ++c) out(c, r) = av(r, c);
  return a.tape().push(std::move(out), {a}, [a](Tape& t, const Tensor&, const Tensor& g) {
    Tensor& ga = t.grad(a);
    for (std::size_t r = 0; r < ga.rows(); ++r)
      for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += g(c, r);
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  axpy(out.data(), b.value().data());
  return a.tape().push(std::move(out), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
    if (t.needs_grad(a)) axpy(t.grad(a).data(), g.data());
    if (t.needs_grad(b)) axpy(t.grad(b).data(), g.data());
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  axpy(out.data(), b.value().data(), -1.0);
  return a.tape().push(std::move(out), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
    if (t.needs_grad(a)) axpy(t.grad(a).data(), g.data());
    if (t.needs_grad(b)) axpy(t.grad(b).data(), g.data(), -1.0);
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  auto od = out.data();
  auto bd = b.value().data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] *= bd[i];
  return a.tape().push(std::move(out), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
    const auto gd = g.data();
    if (t.needs_grad(a)) {
      auto ga = t.grad(a).data();
      const auto bv = t.value(b).data();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gd[i] * bv[i];
    }
    if (t.needs_grad(b)) {
      auto gb = t.grad(b).data();
      const auto av = t.value(a).data();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gd[i] * av[i];
    }
  });
}

Var add_row(Var a, Var row) {
  require_same_tape(a, row);
  const Tensor& av = a.value();
  const Tensor& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) {
    throw ShapeError("add_row: " + shape_str(av) + " + row " + shape_str(rv));
  }
  Tensor out = av;
  for (std::size_t r = 0; r < out.rows(); ++r) axpy(out.row(r), rv.row(0));
  return a.tape().push(std::move(out), {a, row}, [a, row](Tape& t, const Tensor&, const Tensor& g) {
    if (t.needs_grad(a)) axpy(t.grad(a).data(), g.data());
    if (t.needs_grad(row)) {
      auto gr = t.grad(row).row(0);
      for (std::size_t r = 0; r < g.rows(); ++r) axpy(gr, g.row(r));
    }
  });
}

Var mul_row(Var a, Var row) {
  require_same_tape(a, row);
  const Tensor& av = a.value();
  const Tensor& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) {
    throw ShapeError("mul_row: " + shape_str(av) + " * row " + shape_str(rv));
  }
  Tensor out = av;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto o = out.row(r);
    for (std::size_t c = 0; c < o.size(); ++c) o[c] *= rv(0, c);
  }
  return a.tape().push(std::move(out), {a, row}, [a, row](Tape& t, const Tensor&, const Tensor& g) {
    const Tensor& av = t.value(a);
    const Tensor& rv = t.value(row);
    if (t.needs_grad(a)) {
      Tensor& ga = t.grad(a);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) += g(r, c) * rv(0, c);
    }
    if (t.needs_grad(row)) {
      Tensor& gr = t.grad(row);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gr(0, c) += g(r, c) * av(r, c);
    }
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= s;
  return a.tape().push(std::move(out), {a}, [a, s](Tape& t, const Tensor&, const Tensor& g) {
    axpy(t.grad(a).data(), g.data(), s);
  });
}

Var row_softmax(Var a) {
  Tensor out = a.value();
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
  return a.tape().push(std::move(out), {a}, [a](Tape& t, const Tensor& y, const Tensor& g) {
    Tensor& ga = t.grad(a);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      const auto yr = y.row(r);
      const auto gr = g.row(r);
      double dot = 0.0;
      for (std::size_t c = 0; c < yr.size(); ++c) dot += yr[c] * gr[c];
      auto out = ga.row(r);
      for (std::size_t c = 0; c < yr.size(); ++c) out[c] += yr[c] * (gr[c] - dot);
    }
  });
}

Var layer_norm(Var a, double eps) {
  const Tensor& av = a.value();
  const std::size_t n = av.cols();
  if (n == 0) throw ShapeError("layer_norm on zero-width rows");
  Tensor out(av.rows(), n);
  std::vector<double> inv_std(av.rows());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    const auto x = av.row(r);
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    auto y = out.row(r);
    for (std::size_t c = 0; c < n; ++c) y[c] = (x[c] - mean) * inv_std[r];
  }
  return a.tape().push(std::move(out), {a},
                       [a, inv_std = std::move(inv_std)](Tape& t, const Tensor& y, const Tensor& g) {
                         Tensor& ga = t.grad(a);
                         const double n = static_cast<double>(y.cols());
                         for (std::size_t r = 0; r < y.rows(); ++r) {
                           const auto yr = y.row(r);
                           const auto gr = g.row(r);
                           double gsum = 0.0;
                           double gy = 0.0;
                           for (std::size_t c = 0; c < yr.size(); ++c) {
                             gsum += gr[c];
                             gy += gr[c] * yr[c];
                           }
                           auto out = ga.row(r);
                           for (std::size_t c = 0; c < yr.size(); ++c) {
                             out[c] += inv_std[r] * (gr[c] - gsum / n - yr[c] * gy / n);
                           }
                         }
                       });
}

Var gelu(Var a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2));
  return a.tape().push(std::move(out), {a}, [a](Tape& t, const Tensor&, const Tensor& g) {
    const auto x = t.value(a).data();
    const auto gd = g.data();
    auto ga = t.grad(a).data();
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(x[i] / std::numbers::sqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x[i] * x[i]);
      ga[i] += gd[i] * (cdf + x[i] * pdf);
    }
  });
}

Var row_normalize(Var a, double eps) {
  const Tensor& av = a.value();
  Tensor out(av.rows(), av.cols());
  std::vector<double> denom(av.rows());
  std::vector<bool> clamped(av.rows());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double sq = 0.0;
    for (double v : av.row(r)) sq += v * v;
    const double norm = std::sqrt(sq);
    clamped[r] = norm < eps;
    denom[r] = clamped[r] ? eps : norm;
    auto y = out.row(r);
    const auto x = av.row(r);
    for (std::size_t c = 0; c < x.size(); ++c) y[c] = x[c] / denom[r];
  }
  return a.tape().push(
      std::move(out), {a},
      [a, denom = std::move(denom), clamped = std::move(clamped)](Tape& t, const Tensor& y,
                                                                   const Tensor& g) {
        Tensor& ga = t.grad(a);
        for (std::size_t r = 0; r < y.rows(); ++r) {
          const auto yr = y.row(r);
          const auto gr = g.row(r);
          double dot = 0.0;
          if (!clamped[r]) {
            for (std::size_t c = 0; c < yr.size(); ++c) dot += yr[c] * gr[c];
          }
          auto out = ga.row(r);
          for (std::size_t c = 0; c < yr.size(); ++c) out[c] += (gr[c] - yr[c] * dot) / denom[r];
        }
      });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    require_same_tape(parts[0], p);
    if (p.cols() != cols) throw ShapeError("concat_rows: column mismatch");
    rows += p.rows();
  }
  Tensor out(rows, cols);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const auto src = p.value().data();
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(offset * cols));
    offset += p.rows();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().push(std::move(out), parts,
                              [inputs](Tape& t, const Tensor&, const Tensor& g) {
                                std::size_t offset = 0;
                                for (const Var& p : inputs) {
                                  const std::size_t n = t.value(p).size();
                                  if (t.needs_grad(p)) {
                                    axpy(t.grad(p).data(), g.data().subspan(offset, n));
                                  }
                                  offset += n;
                                }
                              });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    require_same_tape(parts[0], p);
    if (p.rows() != rows) throw ShapeError("concat_cols: row mismatch");
    cols += p.cols();
  }
  Tensor out(rows, cols);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(pv.row(r).begin(), pv.row(r).end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(offset));
    }
    offset += pv.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().push(std::move(out), parts,
                              [inputs](Tape& t, const Tensor&, const Tensor& g) {
                                std::size_t offset = 0;
                                for (const Var& p : inputs) {
                                  const std::size_t w = t.value(p).cols();
                                  if (t.needs_grad(p)) {
                                    Tensor& gp = t.grad(p);
                                    for (std::size_t r = 0; r < gp.rows(); ++r) {
                                      axpy(gp.row(r), g.row(r).subspan(offset, w));
                                    }
                                  }
                                  offset += w;
                                }
                              });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  if (begin > end || end > av.rows()) throw ShapeError("slice_rows out of range");
  const std::size_t cols = av.cols();
  std::vector<double> data(av.data().begin() + static_cast<std::ptrdiff_t>(begin * cols),
                           av.data().begin() + static_cast<std::ptrdiff_t>(end * cols));
  return a.tape().push(Tensor(end - begin, cols, std::move(data)), {a},
                       [a, begin, cols](Tape& t, const Tensor&, const Tensor& g) {
                         axpy(t.grad(a).data().subspan(begin * cols, g.size()), g.data());
                       });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  if (begin > end || end > av.cols()) throw ShapeError("slice_cols out of range");
  Tensor out(av.rows(), end - begin);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    auto src = av.row(r).subspan(begin, end - begin);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return a.tape().push(std::move(out), {a}, [a, begin](Tape& t, const Tensor&, const Tensor& g) {
    Tensor& ga = t.grad(a);
    for (std::size_t r = 0; r < g.rows(); ++r) axpy(ga.row(r).subspan(begin, g.cols()), g.row(r));
  });
}

Var gather_rows(Var table, std::span<const std::size_t> ids) {
  const Tensor& tv = table.value();
  Tensor out(ids.size(), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= tv.rows()) {
      throw ContractError("gather_rows: id " + std::to_string(ids[i]) + " out of range " +
                          std::to_string(tv.rows()));
    }
    std::copy(tv.row(ids[i]).begin(), tv.row(ids[i]).end(), out.row(i).begin());
  }
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  return table.tape().push(std::move(out), {table},
                           [table, idx = std::move(idx)](Tape& t, const Tensor&, const Tensor& g) {
                             Tensor& gt = t.grad(table);
                             for (std::size_t i = 0; i < idx.size(); ++i) axpy(gt.row(idx[i]), g.row(i));
                           });
}

Var mean_over(Var a, Axis axis) {
  const Tensor& av = a.value();
  if (axis == Axis::rows) {
    if (av.rows() == 0) throw ShapeError("mean_over rows of empty tensor");
    Tensor out(1, av.cols());
    for (std::size_t r = 0; r < av.rows(); ++r) axpy(out.row(0), av.row(r));
    const double inv = 1.0 / static_cast<double>(av.rows());
    for (double& v : out.data()) v *= inv;
    return a.tape().push(std::move(out), {a}, [a, inv](Tape& t, const Tensor&, const Tensor& g) {
      Tensor& ga = t.grad(a);
      for (std::size_t r = 0; r < ga.rows(); ++r) axpy(ga.row(r), g.row(0), inv);
    });
  }
  if (av.cols() == 0) throw ShapeError("mean_over cols of empty tensor");
  Tensor out(av.rows(), 1);
  const double inv = 1.0 / static_cast<double>(av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double s = 0.0;
    for (double v : av.row(r)) s += v;
    out(r, 0) = s * inv;
  }
  return a.tape().push(std::move(out), {a}, [a, inv](Tape& t, const Tensor&, const Tensor& g) {
    Tensor& ga = t.grad(a);
    for (std::size_t r = 0; r < ga.rows(); ++r)
      for (double& v : ga.row(r)) v += g(r, 0) * inv;
  });
}

Var max_over(Var a, Axis axis) {
  const Tensor& av = a.value();
  // Ties route the gradient to the first maximal entry.
  if (axis == Axis::rows) {
    if (av.rows() == 0) throw ShapeError("max_over rows of empty tensor");
    Tensor out(1, av.cols());
    std::vector<std::size_t> arg(av.cols(), 0);
    for (std::size_t c = 0; c < av.cols(); ++c) {
      out(0, c) = av(0, c);
      for (std::size_t r = 1; r < av.rows(); ++r) {
        if (av(r, c) > out(0, c)) {
          out(0, c) = av(r, c);
          arg[c] = r;
        }
      }
    }
    return a.tape().push(std::move(out), {a}, [a, arg = std::move(arg)](Tape& t, const Tensor&, const Tensor& g) {
      Tensor& ga = t.grad(a);
      for (std::size_t c = 0; c < arg.size(); ++c) ga(arg[c], c) += g(0, c);
    });
  }
  if (av.cols() == 0) throw ShapeError("max_over cols of empty tensor");
  Tensor out(av.rows(), 1);
  std::vector<std::size_t> arg(av.rows(), 0);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    const auto row = av.row(r);
    arg[r] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    out(r, 0) = row[arg[r]];
  }
  return a.tape().push(std::move(out), {a}, [a, arg = std::move(arg)](Tape& t, const Tensor&, const Tensor& g) {
    Tensor& ga = t.grad(a);
    for (std::size_t r = 0; r < arg.size(); ++r) ga(r, arg[r]) += g(r, 0);
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape().push(Tensor(1, 1, s), {a}, [a](Tape& t, const Tensor&, const Tensor& g) {
    for (double& v : t.grad(a).data()) v += g(0, 0);
  });
}

Var detach(Var a) { return a.tape().constant(a.value()); }

}  // namespace ad

}  // namespace talign
