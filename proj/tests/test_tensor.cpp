#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "kog/fdsuite.hpp"
#include "kog/tensor.hpp"
#include "oracles.hpp"

using namespace kog;
using D = double;

TEST_CASE("row_softmax of a uniform row is uniform") {
  auto x = Tensor<D>({1, 2}, std::vector<D>{0.0, 0.0});
  auto y = row_softmax(x);
  CHECK(y.values()[0] == doctest::Approx(0.5));
  CHECK(y.values()[1] == doctest::Approx(0.5));
}

TEST_CASE("softmax rows sum to one, masked rows to exactly zero") {
  Rng rng(4);
  const std::size_t l = 6;
  Tensor<D> x({2, l, l});
  for (auto& v : x.values()) v = rng.uniform(-3.0, 3.0);
  Tensor<D> mask({l, l});
  for (std::size_t n = 0; n < l; ++n)
    mask.data()[2 * l + n] = std::numeric_limits<D>::lowest();  // row 2 masked
  auto a = row_softmax(masked_add(x, mask));
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t m = 0; m < l; ++m) {
      D sum = 0;
      for (std::size_t n = 0; n < l; ++n) sum += a.values()[(b * l + m) * l + n];
      if (m == 2)
        CHECK(sum == 0.0);
      else
        CHECK(std::abs(sum - 1.0) <= 1e-9);
    }
}

TEST_CASE("d/dx (x*x) at x = 3 is 6") {
  auto x = Tensor<D>::scalar(3.0);
  x.set_requires_grad(true);
  Tape<D> tape;
  {
    TapeScope<D> scope(tape);
    auto y = mul(x, x);
    tape.backward(y);
  }
  CHECK(x.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("matmul forward matches hand arithmetic") {
  auto a = Tensor<D>({2, 2}, std::vector<D>{1, 2, 3, 4});
  auto b = Tensor<D>({2, 1}, std::vector<D>{5, 6});
  auto c = matmul(a, b);
  CHECK(c.values()[0] == doctest::Approx(17.0));
  CHECK(c.values()[1] == doctest::Approx(39.0));
}

TEST_CASE("gradient of sum is all ones; constants stay gradient-free") {
  auto w = Tensor<D>({3, 2}, std::vector<D>{1, 2, 3, 4, 5, 6});
  w.set_requires_grad(true);
  auto constant = Tensor<D>({3, 2}, D(1));  // participates but not trainable
  Tape<D> tape;
  {
    TapeScope<D> scope(tape);
    auto loss = sum_all(add(w, constant));
    tape.backward(loss);
  }
  for (D g : w.grad()) CHECK(g == doctest::Approx(1.0));
  CHECK_FALSE(constant.has_grad());
  CHECK_THROWS_AS(constant.grad(), ContractError);
}

TEST_CASE("backward rejects non-scalar and off-tape losses") {
  auto x = Tensor<D>({2}, std::vector<D>{1, 2});
  x.set_requires_grad(true);
  Tape<D> tape;
  {
    TapeScope<D> scope(tape);
    auto y = add(x, x);
    CHECK_THROWS_AS(tape.backward(y), ContractError);
  }
  auto off_tape = Tensor<D>::scalar(1.0);
  CHECK_THROWS_AS(tape.backward(off_tape), ContractError);
}

TEST_CASE("no implicit broadcasting: mismatched shapes throw") {
  auto a = Tensor<D>({2, 3});
  auto b = Tensor<D>({3, 2});
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(mul(a, b), ShapeError);
  CHECK_THROWS_AS(matmul(a, Tensor<D>({2, 2})), ShapeError);
  CHECK_THROWS_AS(sq_err(a, b), ShapeError);
}

TEST_CASE("dropout identities") {
  Rng rng(9);
  Tensor<D> x({4, 4});
  for (auto& v : x.values()) v = rng.uniform(-1, 1);
  auto eval_out = dropout(x, 0.5, false, nullptr);
  CHECK(eval_out.values() == x.values());
  auto rate0_train = dropout(x, 0.0, true, &rng);
  CHECK(rate0_train.values() == x.values());
}

TEST_CASE("dropout scales kept entries by 1/(1-rate)") {
  Rng rng(10);
  Tensor<D> x({1000}, D(1));
  auto y = dropout(x, 0.25, true, &rng);
  std::size_t kept = 0;
  for (D v : y.values()) {
    CHECK((v == 0.0 || v == doctest::Approx(1.0 / 0.75)));
    if (v != 0.0) ++kept;
  }
  CHECK(kept > 600);
  CHECK(kept < 900);
}

TEST_CASE("gather followed by scatter-add conserves the gradient sum") {
  Rng rng(12);
  Tensor<D> x({6, 3});
  for (auto& v : x.values()) v = rng.uniform(-1, 1);
  x.set_requires_grad(true);
  std::vector<int> idx{0, 2, 2, 5, 1};
  Tensor<D> proj({idx.size(), 3});
  for (auto& v : proj.values()) v = rng.uniform(-1, 1);

  Tape<D> tape;
  {
    TapeScope<D> scope(tape);
    auto loss = sum_all(mul(gather_rows(x, idx), proj));
    tape.backward(loss);
  }
  D grad_sum = 0, proj_sum = 0;
  for (D g : x.grad()) grad_sum += g;
  for (D p : proj.values()) proj_sum += p;
  CHECK(std::abs(grad_sum - proj_sum) <= 1e-9);
}

TEST_CASE("index_expand and index_reduce are adjoint") {
  // <expand(q), a> must equal <q, reduce(a)> for all q, a.
  Rng rng(14);
  const std::size_t B = 2, l = 4, r = 3;
  std::vector<int> map(l * l);
  for (auto& v : map) v = static_cast<int>(rng.next_index(r));
  Tensor<D> q({B, l, r}), a({B, l, l});
  for (auto& v : q.values()) v = rng.uniform(-1, 1);
  for (auto& v : a.values()) v = rng.uniform(-1, 1);
  auto lhs = sum_all(mul(index_expand(q, map, l), a)).item();
  auto rhs = sum_all(mul(q, index_reduce(a, map, r))).item();
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("seeded rng reproduces its stream") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("glorot bound formula") {
  CHECK(glorot_bound(128, 128) == doctest::Approx(std::sqrt(6.0 / 256.0)));
}

TEST_CASE("glorot draws are centered") {
  Rng rng(7);
  const std::size_t n = 100000;
  auto t = glorot_init<D>({n}, 128, 128, rng);
  double mean = 0;
  for (D v : t.values()) mean += v;
  mean /= static_cast<double>(n);
  const double bound = glorot_bound(128, 128);
  const double sigma = bound / std::sqrt(3.0);  // stddev of U(-a, a)
  CHECK(std::abs(mean) <= 3.0 * sigma / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("split/concat along the last axis invert each other") {
  Rng rng(20);
  Tensor<D> x({3, 7});
  for (auto& v : x.values()) v = rng.uniform(-1, 1);
  auto [a, b] = split_last(x, 4);
  auto y = concat_last(a, b);
  CHECK(y.values() == x.values());
}

TEST_CASE("split/merge heads invert each other") {
  Rng rng(21);
  Tensor<D> x({2, 5, 6});
  for (auto& v : x.values()) v = rng.uniform(-1, 1);
  auto y = merge_heads(split_heads(x, 3), 3);
  CHECK(y.values() == x.values());
}

TEST_CASE("finite differences validate every primitive") {
  auto rep = run_fd_suite(1234, 5);
  for (const auto& r : rep.results) {
    INFO(r.name, " rel err ", r.max_rel_err);
    CHECK(r.pass);
  }
  CHECK(rep.all_pass);
}

TEST_CASE("a corrupted adjoint is caught by the checker") {
  // Custom op with a deliberately wrong pull-back: forward doubles, backward
  // claims the factor is 3.
  auto bad_double = [](Tensor<D> x) {
    Tensor<D> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = 2 * x.data()[i];
    if (auto* tape = Tape<D>::current(); tape && x.needs_grad()) {
      out.mark_on_tape();
      tape->push(out, [x, out]() mutable {
        x.ensure_grad();
        for (std::size_t i = 0; i < x.size(); ++i)
          x.grad()[i] += 3 * out.grad()[i];
      });
    }
    return out;
  };
  auto x = Tensor<D>({3}, std::vector<D>{0.5, -1.0, 2.0});
  auto rep = fd_check<D>("corrupted", {x}, [&]() { return sum_all(bad_double(x)); });
  CHECK_FALSE(rep.pass);
}

TEST_CASE("sq_err matches the mean-of-squared-norms definition and its gradient") {
  // One example: loss is the squared Frobenius norm; FD validates the grad.
  Rng rng(31);
  Tensor<D> pred({1, 4, 3}), target({1, 4, 3});
  for (auto& v : pred.values()) v = rng.uniform(-2, 2);
  for (auto& v : target.values()) v = rng.uniform(-2, 2);
  double expect = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred.values()[i] - target.values()[i];
    expect += d * d;
  }
  CHECK(sq_err(pred, target).item() == doctest::Approx(expect));

  auto rep = fd_check<D>("sq_err grad", {pred},
                         [&]() { return sq_err(pred, target); });
  CHECK(rep.pass);
}
