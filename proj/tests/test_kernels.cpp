#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <vector>

#include "kog/kernels.hpp"
#include "kog/rng.hpp"

using kog::Rng;
namespace kern = kog::kern;

namespace {

template <typename T>
std::vector<T> random_vec(std::size_t n, Rng& rng, double scale = 1.0) {
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(rng.uniform(-scale, scale));
  return v;
}

template <typename T>
void expect_close(const std::vector<T>& a, const std::vector<T>& b, double tol) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = static_cast<double>(a[i]), db = static_cast<double>(b[i]);
    const double rel = std::abs(da - db) / std::max({1.0, std::abs(da), std::abs(db)});
    CHECK(rel <= tol);
  }
}

template <typename T>
constexpr double tol_of() {
  return std::is_same_v<T, float> ? 1e-5 : 1e-14;
}

// Odd sizes on purpose: the vector kernels must handle remainders.
const std::size_t kSizes[] = {1, 2, 7, 8, 9, 31, 64, 257};

}  // namespace

#if KOG_HAVE_AVX2_KERNELS

TEST_CASE_TEMPLATE("scalar and avx2 elementwise kernels agree bit-exactly", T,
                   float, double) {
  if (kern::active_name() != "avx2") return;  // host without AVX2
  const auto& s = kern::scalar::table<T>();
  const auto& v = kern::avx2::table<T>();
  Rng rng(7);
  for (std::size_t n : kSizes) {
    auto a = random_vec<T>(n, rng), b = random_vec<T>(n, rng);
    std::vector<T> out_s(n), out_v(n);

    s.add(n, a.data(), b.data(), out_s.data());
    v.add(n, a.data(), b.data(), out_v.data());
    CHECK(out_s == out_v);

    s.sub(n, a.data(), b.data(), out_s.data());
    v.sub(n, a.data(), b.data(), out_v.data());
    CHECK(out_s == out_v);

    s.mul(n, a.data(), b.data(), out_s.data());
    v.mul(n, a.data(), b.data(), out_v.data());
    CHECK(out_s == out_v);

    s.scale(n, T(1.25), a.data(), out_s.data());
    v.scale(n, T(1.25), a.data(), out_v.data());
    CHECK(out_s == out_v);

    CHECK(s.reduce_max(n, a.data()) == v.reduce_max(n, a.data()));
  }
}

TEST_CASE_TEMPLATE("scalar and avx2 reducing kernels agree within tolerance", T,
                   float, double) {
  if (kern::active_name() != "avx2") return;
  const auto& s = kern::scalar::table<T>();
  const auto& v = kern::avx2::table<T>();
  Rng rng(11);
  for (std::size_t n : kSizes) {
    auto a = random_vec<T>(n, rng), b = random_vec<T>(n, rng);
    auto y_s = random_vec<T>(n, rng);
    auto y_v = y_s;

    expect_close(std::vector<T>{s.dot(n, a.data(), b.data())},
                 std::vector<T>{v.dot(n, a.data(), b.data())}, tol_of<T>());
    expect_close(std::vector<T>{s.reduce_sum(n, a.data())},
                 std::vector<T>{v.reduce_sum(n, a.data())}, tol_of<T>());

    // exp over a wide argument range, including the softmax-relevant
    // negative tail.
    auto args = random_vec<T>(n, rng, 40.0);
    std::vector<T> exp_s(n), exp_v(n);
    s.vexp(n, args.data(), exp_s.data());
    v.vexp(n, args.data(), exp_v.data());
    expect_close(exp_s, exp_v, std::is_same_v<T, float> ? 3e-6 : 1e-14);

    s.axpy(n, T(0.5), a.data(), y_s.data());
    v.axpy(n, T(0.5), a.data(), y_v.data());
    expect_close(y_s, y_v, tol_of<T>());
  }
}

TEST_CASE_TEMPLATE("scalar and avx2 matmul variants agree", T, float, double) {
  if (kern::active_name() != "avx2") return;
  const auto& s = kern::scalar::table<T>();
  const auto& v = kern::avx2::table<T>();
  Rng rng(13);
  const std::array<std::size_t, 3> dims[] = {{1, 1, 1}, {2, 3, 4},    {5, 7, 3},
                                             {8, 8, 8}, {16, 64, 64}, {13, 17, 9}};
  for (auto [m, n, k] : dims) {
    auto a = random_vec<T>(m * k, rng);
    auto b = random_vec<T>(k * n, rng);
    auto bt = random_vec<T>(n * k, rng);
    auto at = random_vec<T>(k * m, rng);
    std::vector<T> c_s(m * n), c_v(m * n);

    for (bool acc : {false, true}) {
      auto seed = random_vec<T>(m * n, rng);
      c_s = seed;
      c_v = seed;
      s.matmul_nn(m, n, k, a.data(), b.data(), c_s.data(), acc);
      v.matmul_nn(m, n, k, a.data(), b.data(), c_v.data(), acc);
      expect_close(c_s, c_v, tol_of<T>());

      c_s = seed;
      c_v = seed;
      s.matmul_nt(m, n, k, a.data(), bt.data(), c_s.data(), acc);
      v.matmul_nt(m, n, k, a.data(), bt.data(), c_v.data(), acc);
      expect_close(c_s, c_v, tol_of<T>());

      c_s = seed;
      c_v = seed;
      s.matmul_tn(m, n, k, at.data(), b.data(), c_s.data(), acc);
      v.matmul_tn(m, n, k, at.data(), b.data(), c_v.data(), acc);
      expect_close(c_s, c_v, tol_of<T>());
    }
  }
}

#endif  // KOG_HAVE_AVX2_KERNELS

TEST_CASE("scalar matmul matches hand arithmetic") {
  // [[1,2],[3,4]] * [[5],[6]] = [[17],[39]]
  const auto& s = kern::scalar::table<double>();
  std::vector<double> a{1, 2, 3, 4}, b{5, 6}, c(2);
  s.matmul_nn(2, 1, 2, a.data(), b.data(), c.data(), false);
  CHECK(c[0] == doctest::Approx(17.0));
  CHECK(c[1] == doctest::Approx(39.0));
}

TEST_CASE("matmul transpose variants are consistent with matmul_nn") {
  Rng rng(3);
  const auto& kr = kern::active<double>();
  const std::size_t m = 5, n = 4, k = 3;
  auto a = random_vec<double>(m * k, rng);
  auto b = random_vec<double>(k * n, rng);
  std::vector<double> c_ref(m * n);
  kr.matmul_nn(m, n, k, a.data(), b.data(), c_ref.data(), false);

  // Explicitly transposed copies fed to nt / tn must reproduce c_ref.
  std::vector<double> bt(n * k), at(k * m), c(m * n);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < n; ++j) bt[j * k + i] = b[i * n + j];
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j) at[j * m + i] = a[i * k + j];

  kr.matmul_nt(m, n, k, a.data(), bt.data(), c.data(), false);
  expect_close(c, c_ref, 1e-12);
  kr.matmul_tn(m, n, k, at.data(), b.data(), c.data(), false);
  expect_close(c, c_ref, 1e-12);
}

TEST_CASE("kernel dispatch reports a known variant") {
  const auto& name = kern::active_name();
  CHECK((name == "scalar" || name == "avx2"));
}
