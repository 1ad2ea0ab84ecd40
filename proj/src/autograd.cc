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

#include "cslvm/autograd.h"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "cslvm/error.h"

namespace cslvm {
namespace ag {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

ConstMatMap as_matrix(const Tensor& t) {
  return ConstMatMap(t.data(), static_cast<Eigen::Index>(t.rows()),
                     static_cast<Eigen::Index>(t.cols()));
}

MatMap as_matrix(Tensor& t) {
  return MatMap(t.data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

[[noreturn]] void shape_mismatch(OpKind kind, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op_name(kind)) + ": shape mismatch " + shape_str(a) +
                   " vs " + shape_str(b));
}

Tape& tape_of(Var v) {
  if (!v.valid()) throw ConfigError("operation on an empty Var");
  return *v.tape();
}

Tape& common_tape(Var a, Var b) {
  if (a.tape() != b.tape() || !a.valid()) {
    throw ConfigError("operands live on different tapes");
  }
  return *a.tape();
}

// Shape rule shared by add/sub/mul: equal shapes, or b a row vector whose
// width matches a's last extent.
bool row_broadcast(OpKind kind, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return false;
  if (b.rows() == 1 && b.cols() == a.cols()) return true;
  shape_mismatch(kind, a.shape(), b.shape());
}

template <typename F>
Tensor map_values(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

Tensor row_softmax(const Tensor& a) {
  Tensor out(a.shape());
  const std::size_t c = a.cols();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const double* x = a.data() + r * c;
    double* y = out.data() + r * c;
    const double mx = *std::max_element(x, x + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < c; ++j) y[j] /= z;
  }
  return out;
}

}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kParameter: return "parameter";
    case OpKind::kConstant: return "constant";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kMatmulNT: return "matmul_nt";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kConcat: return "concat";
    case OpKind::kSlice: return "slice";
    case OpKind::kGatherRows: return "gather_rows";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kExpandCols: return "expand_cols";
    case OpKind::kSum: return "sum";
    case OpKind::kSumRows: return "sum_rows";
    case OpKind::kMean: return "mean";
    case OpKind::kTanh: return "tanh";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kExp: return "exp";
    case OpKind::kLog: return "log";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLogSoftmax: return "log_softmax";
    case OpKind::kAbs: return "abs";
    case OpKind::kMaximum: return "maximum";
    case OpKind::kEmbedding: return "embedding";
    case OpKind::kDropout: return "dropout";
    case OpKind::kL2Normalize: return "l2_normalize";
    case OpKind::kDot: return "dot";
    case OpKind::kCustom: return "custom";
  }
  return "unknown";
}

const Tensor& Var::value() const {
  if (!tape_) throw ConfigError("value() on an empty Var");
  return tape_->value(id_);
}

// ---- Tape -----------------------------------------------------------------

void Tape::check_owner(Var v) const {
  if (v.tape() != this) throw ConfigError("Var belongs to a different tape");
}

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("constant: non-finite value");
  Node& n = nodes_.emplace_back();
  n.kind = OpKind::kConstant;
  n.value = std::move(value);
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::param(const Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) {
    return Var(this, it->second);
  }
  if (!p.value.all_finite()) throw NumericError("parameter " + p.name + " is not finite");
  Node& n = nodes_.emplace_back();
  n.kind = OpKind::kParameter;
  n.param = &p;
  n.requires_grad = true;
  const auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
  param_nodes_.emplace(&p, id);
  return Var(this, id);
}

Var Tape::record(OpKind kind, std::vector<Var> inputs, Tensor value, Backward backward) {
  if (consumed_) throw ConfigError("recording on a consumed tape");
  if (!value.all_finite()) {
    throw NumericError(std::string(op_name(kind)) + ": non-finite forward value, shape " +
                       shape_str(value.shape()));
  }
  Node n;
  n.kind = kind;
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (Var v : inputs) {
    check_owner(v);
    n.inputs.push_back(v.id());
    n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

GradientMap Tape::backward(Var loss, bool retain) {
  check_owner(loss);
  if (consumed_) throw ConfigError("backward on a consumed tape");
  const Tensor& lv = value(loss.id());
  if (lv.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + shape_str(lv.shape()));
  }
  for (Node& n : nodes_) n.grad = Tensor();
  nodes_[loss.id()].grad = Tensor(lv.shape(), 1.0);

  std::vector<Tensor*> slots;
  for (std::int64_t i = loss.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.grad.empty() || !n.backward) continue;
    slots.assign(n.inputs.size(), nullptr);
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      Node& in = nodes_[n.inputs[k]];
      if (!in.requires_grad) continue;
      if (in.grad.empty()) in.grad = Tensor(value(n.inputs[k]).shape(), 0.0);
      slots[k] = &in.grad;
    }
    n.backward(n.grad, slots);
    // Intermediate gradients are dead once propagated.
    if (n.kind != OpKind::kParameter) n.grad = Tensor();
  }

  GradientMap grads;
  for (const auto& [p, id] : param_nodes_) {
    Node& n = nodes_[id];
    grads.emplace(p, n.grad.empty() ? Tensor(p->value.shape(), 0.0) : std::move(n.grad));
    n.grad = Tensor();
  }
  if (!retain) consumed_ = true;
  return grads;
}

// ---- primitives -------------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& t = common_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (bv.shape().size() != 2 || av.cols() != bv.rows()) {
    shape_mismatch(OpKind::kMatmul, av.shape(), bv.shape());
  }
  Tensor out({av.rows(), bv.cols()});
  as_matrix(out).noalias() = as_matrix(av) * as_matrix(bv);
  return t.record(OpKind::kMatmul, {a, b}, std::move(out),
                  [a, b](const Tensor& g, std::span<Tensor* const> gi) {
                    if (gi[0]) as_matrix(*gi[0]).noalias() += as_matrix(g) * as_matrix(b.value()).transpose();
                    if (gi[1]) as_matrix(*gi[1]).noalias() += as_matrix(a.value()).transpose() * as_matrix(g);
                  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = common_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (bv.shape().size() != 2 || av.cols() != bv.cols()) {
    shape_mismatch(OpKind::kMatmulNT, av.shape(), bv.shape());
  }
  Tensor out({av.rows(), bv.rows()});
  as_matrix(out).noalias() = as_matrix(av) * as_matrix(bv).transpose();
  return t.record(OpKind::kMatmulNT, {a, b}, std::move(out),
                  [a, b](const Tensor& g, std::span<Tensor* const> gi) {
                    if (gi[0]) as_matrix(*gi[0]).noalias() += as_matrix(g) * as_matrix(b.value());
                    if (gi[1]) as_matrix(*gi[1]).noalias() += as_matrix(g).transpose() * as_matrix(a.value());
                  });
}

namespace {

Var elementwise_binary(OpKind kind, Var a, Var b) {
  Tape& t = common_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool bcast = row_broadcast(kind, av, bv);
  const std::size_t c = av.cols();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double y = bv[bcast ? i % c : i];
    switch (kind) {
      case OpKind::kAdd: out[i] = av[i] + y; break;
      case OpKind::kSub: out[i] = av[i] - y; break;
      default: out[i] = av[i] * y; break;
    }
  }
  return t.record(kind, {a, b}, std::move(out),
                  [kind, a, b, bcast, c](const Tensor& g, std::span<Tensor* const> gi) {
                    const Tensor& av = a.value();
                    const Tensor& bv = b.value();
                    if (gi[0]) {
                      Tensor& ga = *gi[0];
                      for (std::size_t i = 0; i < g.size(); ++i) {
                        ga[i] += kind == OpKind::kMul ? g[i] * bv[bcast ? i % c : i] : g[i];
                      }
                    }
                    if (gi[1]) {
                      Tensor& gb = *gi[1];
                      for (std::size_t i = 0; i < g.size(); ++i) {
                        double d = g[i];
                        if (kind == OpKind::kSub) d = -d;
                        if (kind == OpKind::kMul) d *= av[i];
                        gb[bcast ? i % c : i] += d;
                      }
                    }
                  });
}

// Unary op whose derivative is a function of (input, output).
template <typename F, typename D>
Var unary(OpKind kind, Var a, F f, D dfdx) {
  Tape& t = tape_of(a);
  Tensor out = map_values(a.value(), f);
  return t.record(kind, {a}, std::move(out),
                  [a, dfdx](const Tensor& g, std::span<Tensor* const> gi) {
                    const Tensor& x = a.value();
                    Tensor& ga = *gi[0];
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfdx(x[i]);
                  });
}

}  // namespace

Var add(Var a, Var b) { return elementwise_binary(OpKind::kAdd, a, b); }
Var sub(Var a, Var b) { return elementwise_binary(OpKind::kSub, a, b); }
Var mul(Var a, Var b) { return elementwise_binary(OpKind::kMul, a, b); }

Var scale(Var a, double factor) {
  Tape& t = tape_of(a);
  Tensor out = map_values(a.value(), [factor](double x) { return x * factor; });
  return t.record(OpKind::kScale, {a}, std::move(out),
                  [factor](const Tensor& g, std::span<Tensor* const> gi) {
                    Tensor& ga = *gi[0];
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
                  });
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Tape& t = tape_of(parts[0]);
  const std::size_t rows = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (Var p : parts) {
    if (p.tape() != &t) throw ConfigError("operands live on different tapes");
    if (p.rows() != rows) shape_mismatch(OpKind::kConcat, parts[0].shape(), p.shape());
    widths.push_back(p.cols());
    total += p.cols();
  }
  Tensor out({rows, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(v.data() + r * widths[k], widths[k], out.data() + r * total + off);
    }
    off += widths[k];
  }
  return t.record(OpKind::kConcat, parts, std::move(out),
                  [widths, rows, total](const Tensor& g, std::span<Tensor* const> gi) {
                    std::size_t off = 0;
                    for (std::size_t k = 0; k < widths.size(); ++k) {
                      if (gi[k]) {
                        Tensor& gk = *gi[k];
                        for (std::size_t r = 0; r < rows; ++r) {
                          for (std::size_t j = 0; j < widths[k]; ++j) {
                            gk[r * widths[k] + j] += g[r * total + off + j];
                          }
                        }
                      }
                      off += widths[k];
                    }
                  });
}

Var slice(Var a, std::size_t begin, std::size_t end) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  const std::size_t c = av.cols();
  if (begin >= end || end > c) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") out of bounds for shape " + shape_str(av.shape()));
  }
  const std::size_t w = end - begin;
  Tensor out({av.rows(), w});
  for (std::size_t r = 0; r < av.rows(); ++r) {
    std::copy_n(av.data() + r * c + begin, w, out.data() + r * w);
  }
  return t.record(OpKind::kSlice, {a}, std::move(out),
                  [begin, w, c](const Tensor& g, std::span<Tensor* const> gi) {
                    Tensor& ga = *gi[0];
                    for (std::size_t r = 0; r < g.rows(); ++r) {
                      for (std::size_t j = 0; j < w; ++j) ga[r * c + begin + j] += g[r * w + j];
                    }
                  });
}

namespace {

Var gather(OpKind kind, Var a, std::span<const std::size_t> ids) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  const std::size_t c = av.cols();
  if (ids.empty()) throw ShapeError(std::string(op_name(kind)) + ": empty index list");
  for (std::size_t id : ids) {
    if (id >= av.rows()) {
      throw DomainError(std::string(op_name(kind)) + ": row " + std::to_string(id) +
                        " out of range for " + shape_str(av.shape()));
    }
  }
  Tensor out({ids.size(), c});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    std::copy_n(av.data() + ids[r] * c, c, out.data() + r * c);
  }
  std::vector<std::size_t> idv(ids.begin(), ids.end());
  return t.record(kind, {a}, std::move(out),
                  [idv, c](const Tensor& g, std::span<Tensor* const> gi) {
                    Tensor& ga = *gi[0];
                    for (std::size_t r = 0; r < idv.size(); ++r) {
                      for (std::size_t j = 0; j < c; ++j) ga[idv[r] * c + j] += g[r * c + j];
                    }
                  });
}

}  // namespace

Var gather_rows(Var a, std::span<const std::size_t> ids) {
  return gather(OpKind::kGatherRows, a, ids);
}

Var embedding(Var table, std::span<const std::size_t> ids) {
  return gather(OpKind::kEmbedding, table, ids);
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  if (av.shape().size() != 2) throw ShapeError("transpose: needs rank 2, got " + shape_str(av.shape()));
  Tensor out({av.cols(), av.rows()});
  as_matrix(out) = as_matrix(av).transpose();
  return t.record(OpKind::kTranspose, {a}, std::move(out),
                  [](const Tensor& g, std::span<Tensor* const> gi) {
                    as_matrix(*gi[0]) += as_matrix(g).transpose();
                  });
}

Var expand_cols(Var a, std::size_t n) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  if (av.cols() != 1 || n == 0) {
    throw ShapeError("expand_cols: needs [r,1] input, got " + shape_str(av.shape()));
  }
  Tensor out({av.rows(), n});
  for (std::size_t r = 0; r < av.rows(); ++r) {
    std::fill_n(out.data() + r * n, n, av[r]);
  }
  return t.record(OpKind::kExpandCols, {a}, std::move(out),
                  [n](const Tensor& g, std::span<Tensor* const> gi) {
                    Tensor& ga = *gi[0];
                    for (std::size_t r = 0; r < ga.size(); ++r) {
                      double s = 0.0;
                      for (std::size_t j = 0; j < n; ++j) s += g[r * n + j];
                      ga[r] += s;
                    }
                  });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return t.record(OpKind::kSum, {a}, Tensor::scalar(s),
                  [](const Tensor& g, std::span<Tensor* const> gi) {
                    for (double& v : gi[0]->values()) v += g[0];
                  });
}

Var mean(Var a) {
  Tape& t = tape_of(a);
  const double n = static_cast<double>(a.value().size());
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return t.record(OpKind::kMean, {a}, Tensor::scalar(s / n),
                  [n](const Tensor& g, std::span<Tensor* const> gi) {
                    for (double& v : gi[0]->values()) v += g[0] / n;
                  });
}

Var sum_rows(Var a) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  const std::size_t c = av.cols();
  Tensor out({av.rows(), 1});
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += av[r * c + j];
    out[r] = s;
  }
  return t.record(OpKind::kSumRows, {a}, std::move(out),
                  [c](const Tensor& g, std::span<Tensor* const> gi) {
                    Tensor& ga = *gi[0];
                    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i / c];
                  });
}

Var tanh(Var a) {
  Tape& t = tape_of(a);
  Tensor out = map_values(a.value(), [](double x) { return std::tanh(x); });
  const std::uint32_t self = static_cast<std::uint32_t>(t.size());
  return t.record(OpKind::kTanh, {a}, std::move(out),
                  [&t, self](const Tensor& g, std::span<Tensor* const> gi) {
                    const Tensor& y = t.value(self);
                    Tensor& ga = *gi[0];
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
                  });
}

Var sigmoid(Var a) {
  Tape& t = tape_of(a);
  Tensor out = map_values(a.value(), [](double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  });
  const std::uint32_t self = static_cast<std::uint32_t>(t.size());
  return t.record(OpKind::kSigmoid, {a}, std::move(out),
                  [&t, self](const Tensor& g, std::span<Tensor* const> gi) {
                    const Tensor& y = t.value(self);
                    Tensor& ga = *gi[0];
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
                  });
}

Var exp(Var a) {
  Tape& t = tape_of(a);
  Tensor out = map_values(a.value(), [](double x) { return std::exp(x); });
  const std::uint32_t self = static_cast<std::uint32_t>(t.size());
  return t.record(OpKind::kExp, {a}, std::move(out),
                  [&t, self](const Tensor& g, std::span<Tensor* const> gi) {
                    const Tensor& y = t.value(self);
                    Tensor& ga = *gi[0];
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
                  });
}

Var log(Var a) {
  for (double v : a.value().values()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive input " + std::to_string(v));
  }
  return unary(OpKind::kLog, a, [](double x) { return std::log(x); },
               [](double x) { return 1.0 / x; });
}

Var abs(Var a) {
  return unary(OpKind::kAbs, a, [](double x) { return std::fabs(x); },
               [](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Var maximum(Var a, Var b) {
  Tape& t = common_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape()) shape_mismatch(OpKind::kMaximum, av.shape(), bv.shape());
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = std::max(av[i], bv[i]);
  // Ties send the gradient to the first operand.
  return t.record(OpKind::kMaximum, {a, b}, std::move(out),
                  [a, b](const Tensor& g, std::span<Tensor* const> gi) {
                    const Tensor& av = a.value();
                    const Tensor& bv = b.value();
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      const bool first = av[i] >= bv[i];
                      if (first && gi[0]) (*gi[0])[i] += g[i];
                      if (!first && gi[1]) (*gi[1])[i] += g[i];
                    }
                  });
}

Var relu(Var a) {
  return maximum(a, tape_of(a).constant(Tensor(a.shape(), 0.0)));
}

Var softmax(Var a) {
  Tape& t = tape_of(a);
  Tensor out = row_softmax(a.value());
  const std::uint32_t self = static_cast<std::uint32_t>(t.size());
  return t.record(OpKind::kSoftmax, {a}, std::move(out),
                  [&t, self](const Tensor& g, std::span<Tensor* const> gi) {
                    const Tensor& y = t.value(self);
                    Tensor& ga = *gi[0];
                    const std::size_t c = y.cols();
                    for (std::size_t r = 0; r < y.rows(); ++r) {
                      double s = 0.0;
                      for (std::size_t j = 0; j < c; ++j) s += g[r * c + j] * y[r * c + j];
                      for (std::size_t j = 0; j < c; ++j) {
                        ga[r * c + j] += y[r * c + j] * (g[r * c + j] - s);
                      }
                    }
                  });
}

Var log_softmax(Var a) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  Tensor out(av.shape());
  const std::size_t c = av.cols();
  for (std::size_t r = 0; r < av.rows(); ++r) {
    const double* x = av.data() + r * c;
    const double mx = *std::max_element(x, x + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(x[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = x[j] - lse;
  }
  const std::uint32_t self = static_cast<std::uint32_t>(t.size());
  return t.record(OpKind::kLogSoftmax, {a}, std::move(out),
                  [&t, self](const Tensor& g, std::span<Tensor* const> gi) {
                    const Tensor& y = t.value(self);
                    Tensor& ga = *gi[0];
                    const std::size_t c = y.cols();
                    for (std::size_t r = 0; r < y.rows(); ++r) {
                      double s = 0.0;
                      for (std::size_t j = 0; j < c; ++j) s += g[r * c + j];
                      for (std::size_t j = 0; j < c; ++j) {
                        ga[r * c + j] += g[r * c + j] - std::exp(y[r * c + j]) * s;
                      }
                    }
                  });
}

Var dropout(Var a, double p, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw DomainError("dropout: probability must be in [0,1), got " + std::to_string(p));
  }
  if (p == 0.0) return a;
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  const double keep_scale = 1.0 / (1.0 - p);
  Tensor mask(av.shape());
  std::bernoulli_distribution keep(1.0 - p);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = keep(rng) ? keep_scale : 0.0;
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * mask[i];
  return t.record(OpKind::kDropout, {a}, std::move(out),
                  [mask = std::move(mask)](const Tensor& g, std::span<Tensor* const> gi) {
                    Tensor& ga = *gi[0];
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
                  });
}

Var l2_normalize(Var a) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  const std::size_t c = av.cols();
  Tensor out(av.shape());
  std::vector<double> norms(av.rows());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += av[r * c + j] * av[r * c + j];
    norms[r] = std::sqrt(s);
    if (!(norms[r] > 0.0)) throw DomainError("l2_normalize: zero-norm row " + std::to_string(r));
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = av[r * c + j] / norms[r];
  }
  const std::uint32_t self = static_cast<std::uint32_t>(t.size());
  return t.record(OpKind::kL2Normalize, {a}, std::move(out),
                  [&t, self, norms = std::move(norms), c](const Tensor& g,
                                                          std::span<Tensor* const> gi) {
                    const Tensor& y = t.value(self);
                    Tensor& ga = *gi[0];
                    for (std::size_t r = 0; r < norms.size(); ++r) {
                      double yg = 0.0;
                      for (std::size_t j = 0; j < c; ++j) yg += y[r * c + j] * g[r * c + j];
                      for (std::size_t j = 0; j < c; ++j) {
                        ga[r * c + j] += (g[r * c + j] - y[r * c + j] * yg) / norms[r];
                      }
                    }
                  });
}

Var dot(Var a, Var b) {
  Tape& t = common_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) {
    shape_mismatch(OpKind::kDot, av.shape(), bv.shape());
  }
  const std::size_t c = av.cols();
  Tensor out({av.rows(), 1});
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += av[r * c + j] * bv[r * c + j];
    out[r] = s;
  }
  return t.record(OpKind::kDot, {a, b}, std::move(out),
                  [a, b, c](const Tensor& g, std::span<Tensor* const> gi) {
                    const Tensor& av = a.value();
                    const Tensor& bv = b.value();
                    for (std::size_t i = 0; i < av.size(); ++i) {
                      if (gi[0]) (*gi[0])[i] += g[i / c] * bv[i];
                      if (gi[1]) (*gi[1])[i] += g[i / c] * av[i];
                    }
                  });
}

// ---- finite differences ---------------------------------------------------------

GradCheckResult finite_diff_check(const LossBuilder& build,
                                  std::span<Parameter* const> params, double h) {
  if (!(h > 0.0)) throw DomainError("finite_diff_check: step must be positive");
  auto evaluate = [&build]() {
    Tape tape;
    return build(tape).value().item();
  };

  GradientMap analytic;
  double base = 0.0;
  {
    Tape tape;
    Var loss = build(tape);
    base = loss.value().item();
    analytic = tape.backward(loss);
  }
  if (evaluate() != base) {
    throw ConfigError("finite_diff_check: loss is not deterministic under frozen randomness");
  }

  GradCheckResult result;
  for (Parameter* p : params) {
    auto it = analytic.find(p);
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + h;
      const double up = evaluate();
      p->value[i] = saved - h;
      const double down = evaluate();
      p->value[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = it == analytic.end() ? 0.0 : it->second[i];
      const double err = std::fabs(a - numeric) / std::max(1.0, std::fabs(a));
      ++result.coordinates;
      if (err > result.max_rel_error || result.worst_param.empty()) {
        result.max_rel_error = err;
        result.worst_param = p->name;
        result.worst_index = i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace ag
}  // namespace cslvm
