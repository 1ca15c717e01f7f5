#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "talign/tensor.hpp"

namespace talign {

// Ordered collection of named tensors. Order is insertion order and is the
// order used for checkpoints and optimizer state.
class ParameterSet {
 public:
  std::size_t add(std::string name, Tensor value);

  std::size_t size() const noexcept { return values_.size(); }
  std::size_t index(std::string_view name) const;
  bool contains(std::string_view name) const;

  const std::string& name(std::size_t i) const { return names_[i]; }
  const std::vector<std::string>& names() const noexcept { return names_; }

  Tensor& operator[](std::size_t i) { return values_[i]; }
  const Tensor& operator[](std::size_t i) const { return values_[i]; }
  Tensor& at(std::string_view name) { return values_[index(name)]; }
  const Tensor& at(std::string_view name) const { return values_[index(name)]; }

  // True when both sets hold the same names with the same shapes.
  bool same_layout(const ParameterSet& other) const;

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::map<std::string, std::size_t, std::less<>> lookup_;
};

// d root / d parameter, keyed by parameter name. Parameters that did not take
// part in the recorded computation are absent.
using GradientMap = std::map<std::string, Tensor, std::less<>>;

class Tape;

// Handle to a node on a tape. Only valid while the tape is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape& tape() const { return *tape_; }
  std::uint32_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

// Reverse-mode tape. Nodes are appended in evaluation order, so reverse
// insertion order is a valid topological order for the backward sweep.
// A tape built with record=false only stores forward values (inference).
class Tape {
 public:
  // Called once per node during backward with the node's value and the
  // accumulated gradient flowing into it.
  using BackwardFn = std::function<void(Tape&, const Tensor& out_value, const Tensor& out_grad)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return record_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var constant(Tensor value);
  // Leaf bound to set[index]. Repeated calls return the same node.
  Var parameter(const ParameterSet& set, std::size_t index);
  Var parameter(const ParameterSet& set, std::string_view name) {
    return parameter(set, set.index(name));
  }

  // Appends an op node. `backward` is dropped when no input needs a gradient.
  Var push(Tensor value, std::span<const Var> inputs, BackwardFn backward);
  Var push(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    return push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
  }

  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  bool needs_grad(Var v) const { return nodes_[v.id()].needs_grad; }

  // Mutable gradient accumulator of `v`, zero-initialized on first access.
  // Only meaningful inside a backward callback.
  Tensor& grad(Var v);

  // Runs the backward sweep from a 1x1 root. Gradients are reset first, so
  // backward may be called more than once on the same tape.
  GradientMap backward(Var root);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    bool has_grad = false;
    BackwardFn backward;
    const ParameterSet* set = nullptr;
    std::size_t param_index = 0;
  };

  struct ParamKey {
    const ParameterSet* set;
    std::size_t index;
    bool operator==(const ParamKey&) const = default;
  };
  struct ParamKeyHash {
    std::size_t operator()(const ParamKey& k) const noexcept {
      return std::hash<const void*>()(k.set) ^ (k.index * 0x9e3779b97f4a7c15ULL);
    }
  };

  Var make(Node node);

  bool record_;
  std::deque<Node> nodes_;  // deque: values stay put while the tape grows
  std::unordered_map<ParamKey, std::uint32_t, ParamKeyHash> param_nodes_;
};

enum class Axis { rows, cols };

namespace ad {

Var matmul(Var a, Var b);
// a * b^T
Var matmul_nt(Var a, Var b);
Var transpose(Var a);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
// Adds a 1 x cols row to every row of a.
Var add_row(Var a, Var row);
// Multiplies every row of a element-wise by a 1 x cols row.
Var mul_row(Var a, Var row);
Var scale(Var a, double s);

Var row_softmax(Var a);
// Normalizes each row to zero mean and unit variance (variance + eps).
Var layer_norm(Var a, double eps = 1e-5);
Var gelu(Var a);
// Divides each row by max(||row||, eps).
Var row_normalize(Var a, double eps = 1e-8);

Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var gather_rows(Var table, std::span<const std::size_t> ids);

// Axis::rows reduces over rows (result 1 x cols); Axis::cols over columns.
Var mean_over(Var a, Axis axis);
Var max_over(Var a, Axis axis);
Var sum(Var a);

// Same value, no gradient flow.
Var detach(Var a);

}  // namespace ad

}  // namespace talign
