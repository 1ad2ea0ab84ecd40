// Copyright 2026 The cslvm Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Tape-based reverse-mode differentiation over dense double tensors.
//
// A Tape records every op applied during a forward pass. Nodes are appended
// after their inputs, so walking the node list backwards is a reverse
// topological order and backward() visits each node once. Tapes are single
// use: backward() consumes the tape unless asked to retain it.
//
// Broadcasting is limited to a row vector against a matrix (add, sub, mul).
// Any other coercion goes through an explicit op (expand_cols, gather_rows,
// transpose).

#ifndef CSLVM_AUTOGRAD_H_
#define CSLVM_AUTOGRAD_H_

#include <cstdint>
#include <deque>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cslvm/tensor.h"

namespace cslvm {

using Rng = std::mt19937_64;

namespace ag {

enum class OpKind {
  kParameter,
  kConstant,
  kMatmul,
  kMatmulNT,
  kAdd,
  kSub,
  kMul,
  kScale,
  kConcat,
  kSlice,
  kGatherRows,
  kTranspose,
  kExpandCols,
  kSum,
  kSumRows,
  kMean,
  kTanh,
  kSigmoid,
  kExp,
  kLog,
  kSoftmax,
  kLogSoftmax,
  kAbs,
  kMaximum,
  kEmbedding,
  kDropout,
  kL2Normalize,
  kDot,
  kCustom,
};

std::string_view op_name(OpKind kind);

// A trainable array. Storage is owned by whoever owns the Parameter; tapes
// only reference it, so two model slots pointing at one Parameter share a
// single gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
};

class Tape;

// Handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape* tape() const { return tape_; }
  std::uint32_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

using GradientMap = std::unordered_map<const Parameter*, Tensor>;

class Tape {
 public:
  // Receives dLoss/dOutput and adds the vector-Jacobian products into the
  // gradient slots of the inputs. A slot is null when that input does not
  // need a gradient.
  using Backward = std::function<void(const Tensor& grad_out,
                                      std::span<Tensor* const> input_grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Leaf for a parameter; repeated calls return the same node.
  Var param(const Parameter& p);

  // Records an op node. Throws NumericError if `value` is not finite.
  Var record(OpKind kind, std::vector<Var> inputs, Tensor value, Backward backward);

  // Reverse sweep from a one-element loss. Every parameter leaf on this
  // tape appears in the result; leaves the loss does not reach get zeros.
  GradientMap backward(Var loss, bool retain = false);

  // Parameter leaves read the parameter's storage directly; it must not be
  // mutated while the tape is alive.
  const Tensor& value(std::uint32_t id) const {
    const Node& n = nodes_[id];
    return n.param ? n.param->value : n.value;
  }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Node {
    OpKind kind;
    std::vector<std::uint32_t> inputs;
    Tensor value;
    Tensor grad;
    Backward backward;
    const Parameter* param = nullptr;
    bool requires_grad = false;
  };

  void check_owner(Var v) const;

  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::uint32_t> param_nodes_;
  bool consumed_ = false;
};

// ---- primitives -----------------------------------------------------------

Var matmul(Var a, Var b);
// a * transpose(b) without materialising the transpose.
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
// Concatenation along the last axis; all parts must have equal rows.
Var concat(const std::vector<Var>& parts);
// Columns [begin, end) of the last axis.
Var slice(Var a, std::size_t begin, std::size_t end);
Var gather_rows(Var a, std::span<const std::size_t> ids);
Var transpose(Var a);
// [r,1] -> [r,n] by repeating the single column.
Var expand_cols(Var a, std::size_t n);
Var sum(Var a);
// [r,c] -> [r,1].
Var sum_rows(Var a);
Var mean(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
Var softmax(Var a);
Var log_softmax(Var a);
Var abs(Var a);
Var maximum(Var a, Var b);
Var relu(Var a);
// Rows of an embedding table; ids are range-checked.
Var embedding(Var table, std::span<const std::size_t> ids);
// Inverted dropout: kept units are divided by (1 - p). p == 0 returns `a`.
Var dropout(Var a, double p, Rng& rng);
Var l2_normalize(Var a);
// Row-wise inner product: [r,c] x [r,c] -> [r,1].
Var dot(Var a, Var b);

// ---- finite-difference oracle ----------------------------------------------

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

// Builds a scalar loss on a fresh tape. Must be deterministic: any
// randomness has to come from a source re-seeded inside the builder.
using LossBuilder = std::function<Var(Tape&)>;

// max over coordinates of |analytic - central difference| / max(1, |analytic|).
// Throws ConfigError when two unperturbed evaluations disagree.
GradCheckResult finite_diff_check(const LossBuilder& build,
                                  std::span<Parameter* const> params, double h = 1e-5);

}  // namespace ag
}  // namespace cslvm

#endif  // CSLVM_AUTOGRAD_H_
