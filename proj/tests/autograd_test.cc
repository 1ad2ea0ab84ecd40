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

#include <cmath>
#include <functional>
#include <string>

#include "cslvm/autograd.h"
#include "cslvm/error.h"
#include "doctest.h"
#include "test_util.h"

namespace cslvm::ag {
namespace {

using testing::random_tensor;

TEST_CASE("matmul by identity returns the operand") {
  Tape t;
  Var eye = t.constant(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  Var a = t.constant(Tensor::matrix(2, 2, {1.5, -2, 3, 4.25}));
  CHECK(matmul(eye, a).value() == a.value());
}

TEST_CASE("softmax, tanh and sigmoid at analytic points") {
  Tape t;
  Var s = softmax(t.constant(Tensor::row({0, 0, 0})));
  for (double v : s.value().values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(tanh(t.constant(Tensor::scalar(0))).value().item() == 0.0);
  CHECK(sigmoid(t.constant(Tensor::scalar(0))).value().item() == 0.5);
}

TEST_CASE("softmax rows are non-negative and sum to one") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Tape t;
    Var s = softmax(t.constant(random_tensor({4, 7}, rng, -30, 30)));
    for (std::size_t r = 0; r < 4; ++r) {
      double total = 0;
      for (std::size_t j = 0; j < 7; ++j) {
        CHECK(s.value().at(r, j) >= 0.0);
        total += s.value().at(r, j);
      }
      CHECK(std::fabs(total - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("x*x has gradient 2x") {
  Parameter x{"x", Tensor::scalar(3.0)};
  Tape t;
  Var xv = t.param(x);
  auto grads = t.backward(sum(mul(xv, xv)));
  CHECK(grads.at(&x).item() == 6.0);
}

TEST_CASE("sum(matmul(A,B)) gradient matches finite differences") {
  Rng rng(3);
  Parameter a{"A", random_tensor({3, 4}, rng)};
  Parameter b{"B", random_tensor({4, 2}, rng)};
  Parameter* ps[] = {&a, &b};
  auto r = finite_diff_check([&](Tape& t) { return sum(matmul(t.param(a), t.param(b))); }, ps);
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("unreachable parameter receives exact zero") {
  Parameter used{"used", Tensor::row({1, 2})};
  Parameter unused{"unused", Tensor::row({5, 6, 7})};
  Tape t;
  Var u = t.param(used);
  t.param(unused);
  auto grads = t.backward(sum(u));
  for (double g : grads.at(&unused).values()) CHECK(g == 0.0);
  CHECK(grads.at(&unused).shape() == unused.value.shape());
}

TEST_CASE("backward contract errors") {
  Parameter x{"x", Tensor::row({1, 2})};
  Tape t;
  Var xv = t.param(x);
  CHECK_THROWS_AS(t.backward(xv), ShapeError);
  Var loss = sum(xv);
  t.backward(loss);
  CHECK_THROWS_AS(t.backward(loss), ConfigError);

  Tape kept;
  Var l2 = sum(kept.param(x));
  kept.backward(l2, /*retain=*/true);
  CHECK_NOTHROW(kept.backward(l2));
}

TEST_CASE("shape errors name the op and both shapes") {
  Tape t;
  Var a = t.constant(Tensor({2, 3}));
  Var b = t.constant(Tensor({2, 3}));
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, t.constant(Tensor({3, 2}))), ShapeError);
  CHECK_NOTHROW(add(a, t.constant(Tensor({1, 3}))));
}

TEST_CASE("domain errors for log and zero-norm normalization") {
  Tape t;
  CHECK_THROWS_AS(log(t.constant(Tensor::row({1.0, 0.0}))), DomainError);
  CHECK_THROWS_AS(l2_normalize(t.constant(Tensor::row({0.0, 0.0}))), DomainError);
  Rng rng(1);
  CHECK_THROWS_AS(dropout(t.constant(Tensor::row({1.0})), 1.0, rng), DomainError);
}

TEST_CASE("gradient accumulation is additive over reuse") {
  Rng rng(5);
  Parameter x{"x", random_tensor({2, 3}, rng)};
  Tensor c1 = random_tensor({2, 3}, rng);
  Tensor c2 = random_tensor({2, 3}, rng);
  Tensor both = c1;
  both.accumulate(c2);

  Tape t1;
  Var xv = t1.param(x);
  auto g_twice = t1.backward(add(sum(mul(xv, t1.constant(c1))), sum(mul(xv, t1.constant(c2)))));
  Tape t2;
  auto g_once = t2.backward(sum(mul(t2.param(x), t2.constant(both))));
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(g_twice.at(&x)[i] == doctest::Approx(g_once.at(&x)[i]).epsilon(1e-14));
  }
}

TEST_CASE("dropout: p=0 is identity, fixed seed is deterministic") {
  Rng rng(9);
  Tensor v = random_tensor({3, 5}, rng);
  Tape t;
  Var x = t.constant(v);
  Rng r0(1);
  CHECK(dropout(x, 0.0, r0).id() == x.id());
  Rng r1(42), r2(42);
  Tensor d1 = dropout(x, 0.5, r1).value();
  Tensor d2 = dropout(x, 0.5, r2).value();
  CHECK(testing::bits_equal(d1, d2));
  for (std::size_t i = 0; i < v.size(); ++i) CHECK((d1[i] == 0.0 || d1[i] == 2.0 * v[i]));
}

TEST_CASE("finite_diff_check: quadratic is exact and nondeterminism is rejected") {
  Rng rng(17);
  Parameter theta{"theta", random_tensor({1, 4}, rng)};
  Tensor q = random_tensor({4, 4}, rng);
  Parameter* ps[] = {&theta};
  auto r = finite_diff_check(
      [&](Tape& t) {
        Var th = t.param(theta);
        return sum(mul(matmul(th, t.constant(q)), th));
      },
      ps);
  CHECK(r.max_rel_error < 1e-9);

  int calls = 0;
  CHECK_THROWS_AS(finite_diff_check(
                      [&](Tape& t) {
                        ++calls;
                        return scale(sum(t.param(theta)), static_cast<double>(calls));
                      },
                      ps),
                  ConfigError);
}

// Every primitive against central differences on random shapes. The scalar
// loss contracts the op output with random weights so upstream gradients are
// not uniform.
TEST_CASE("every primitive passes randomized gradient checks") {
  using Build = std::function<Var(Tape&, Var, Var)>;
  struct Case {
    const char* name;
    Build op;
    bool positive = false;  // inputs drawn from (0.5, 2)
  };
  const std::vector<std::size_t> ids = {2, 0, 2, 1};
  std::vector<Case> cases = {
      {"matmul", [](Tape&, Var a, Var b) { return matmul(a, transpose(b)); }},
      {"matmul_nt", [](Tape&, Var a, Var b) { return matmul_nt(a, b); }},
      {"add", [](Tape&, Var a, Var b) { return add(a, b); }},
      {"add_row", [](Tape&, Var a, Var b) { return add(a, gather_rows(b, std::vector<std::size_t>{0})); }},
      {"sub", [](Tape&, Var a, Var b) { return sub(a, b); }},
      {"mul", [](Tape&, Var a, Var b) { return mul(a, b); }},
      {"mul_row", [](Tape&, Var a, Var b) { return mul(a, gather_rows(b, std::vector<std::size_t>{1})); }},
      {"scale", [](Tape&, Var a, Var) { return scale(a, -1.7); }},
      {"concat", [](Tape&, Var a, Var b) { return concat({a, b, a}); }},
      {"slice", [](Tape&, Var a, Var) { return slice(a, 1, 3); }},
      {"gather_rows", [ids](Tape&, Var a, Var) { return gather_rows(a, ids); }},
      {"embedding", [ids](Tape&, Var a, Var) { return embedding(a, ids); }},
      {"transpose", [](Tape&, Var a, Var) { return transpose(a); }},
      {"expand_cols", [](Tape&, Var a, Var) { return expand_cols(slice(a, 0, 1), 5); }},
      {"sum", [](Tape&, Var a, Var) { return sum(mul(a, a)); }},
      {"sum_rows", [](Tape&, Var a, Var) { return sum_rows(a); }},
      {"mean", [](Tape&, Var a, Var) { return mean(mul(a, a)); }},
      {"tanh", [](Tape&, Var a, Var) { return tanh(a); }},
      {"sigmoid", [](Tape&, Var a, Var) { return sigmoid(a); }},
      {"exp", [](Tape&, Var a, Var) { return exp(a); }},
      {"log", [](Tape&, Var a, Var) { return log(a); }, true},
      {"softmax", [](Tape&, Var a, Var) { return softmax(a); }},
      {"log_softmax", [](Tape&, Var a, Var) { return log_softmax(a); }},
      {"abs", [](Tape&, Var a, Var) { return abs(a); }},
      {"maximum", [](Tape&, Var a, Var b) { return maximum(a, b); }},
      {"relu", [](Tape&, Var a, Var) { return relu(a); }},
      {"dropout", [](Tape&, Var a, Var) { Rng r(77); return dropout(a, 0.3, r); }},
      {"l2_normalize", [](Tape&, Var a, Var) { return l2_normalize(a); }},
      {"dot", [](Tape&, Var a, Var b) { return dot(a, b); }},
  };

  Rng rng(2024);
  for (const Case& c : cases) {
    for (int trial = 0; trial < 20; ++trial) {
      std::uniform_int_distribution<std::size_t> dim(3, 5);
      const std::size_t r = dim(rng), k = dim(rng);
      const double lo = c.positive ? 0.5 : -2.0, hi = 2.0;
      Parameter a{"a", random_tensor({r, k}, rng, lo, hi)};
      Parameter b{"b", random_tensor({r, k}, rng, lo, hi)};
      Parameter* ps[] = {&a, &b};
      // Contraction weights sized lazily from the op output on first build.
      Tensor w;
      auto build = [&](Tape& t) {
        Var out = c.op(t, t.param(a), t.param(b));
        if (w.empty() || w.shape() != out.shape()) {
          Rng wr(static_cast<unsigned>(trial) + 1000);
          w = random_tensor(out.shape(), wr);
        }
        return sum(mul(out, t.constant(w)));
      };
      auto res = finite_diff_check(build, ps, 1e-6);
      INFO(c.name << " trial " << trial << " worst " << res.worst_param << "[" << res.worst_index
                  << "] analytic " << res.analytic << " numeric " << res.numeric);
      CHECK(res.max_rel_error < 1e-5);
    }
  }
}

}  // namespace
}  // namespace cslvm::ag
