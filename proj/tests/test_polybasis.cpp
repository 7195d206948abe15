#include "hpfem/polybasis.hpp"

#include <Eigen/LU>
#include <doctest.h>

#include <cmath>
#include <random>

using namespace hpfem;
using namespace hpfem::poly;

TEST_CASE("legendre values")
{
  CHECK(legendre(0, 0.7) == 1.0);
  CHECK(legendre(1, 0.3) == doctest::Approx(0.3));
  CHECK(legendre(2, 0.5) == doctest::Approx(-0.125).epsilon(1e-15));
  for (int j = 0; j < 12; ++j)
  {
    CHECK(legendre(j, 1.0) == doctest::Approx(1.0));
    CHECK(legendre(j, -1.0) == doctest::Approx(j % 2 ? -1.0 : 1.0));
  }
  const auto& r = gauss_rule(5);
  double s = 0.0;
  for (int q = 0; q < 5; ++q)
    s += r.weights[q] * legendre(3, r.points[q]) * legendre(4, r.points[q]);
  CHECK(std::abs(s) < 1e-14);
}

TEST_CASE("legendre derivative matches finite differences")
{
  for (int j = 0; j < 10; ++j)
    for (double t : {-0.8, -0.1, 0.35, 0.9})
    {
      const double h = 1e-6;
      const double fd = (legendre(j, t + h) - legendre(j, t - h)) / (2 * h);
      CHECK(legendre_with_derivative(j, t).second == doctest::Approx(fd).epsilon(1e-7));
    }
}

TEST_CASE("integrated legendre")
{
  CHECK(integrated_legendre(0, -1.0) == 1.0);
  CHECK(integrated_legendre(1, -1.0) == 0.0);
  CHECK(integrated_legendre(2, 0.0) == doctest::Approx(-0.5));
  CHECK(std::abs(integrated_legendre(5, 1.0)) < 1e-14);
  CHECK(std::abs(integrated_legendre(5, -1.0)) < 1e-14);
  for (int j = 2; j < 15; ++j)
  {
    CHECK(std::abs(integrated_legendre(j, 1.0)) < 1e-14);
    CHECK(std::abs(integrated_legendre(j, -1.0)) < 1e-14);
  }
  // psi_j' = L_{j-1}
  for (int j = 2; j < 10; ++j)
    for (double t : {-0.6, 0.2, 0.75})
    {
      const double h = 1e-6;
      const double fd = (integrated_legendre(j, t + h) - integrated_legendre(j, t - h)) / (2 * h);
      CHECK(fd == doctest::Approx(legendre(j - 1, t)).epsilon(1e-7));
    }
  const auto all = integrated_legendre_all(8, 0.3);
  for (int j = 0; j <= 8; ++j)
  {
    CHECK(all.value[j] == doctest::Approx(integrated_legendre(j, 0.3)).epsilon(1e-14));
    CHECK(all.d1[j] == doctest::Approx(integrated_legendre_derivative(j, 0.3)).epsilon(1e-14));
  }
}

TEST_CASE("derivative orthogonality of bubbles")
{
  const auto& r = gauss_rule(20);
  for (int j = 2; j < 12; ++j)
    for (int k = 2; k < 12; ++k)
    {
      if (j == k)
        continue;
      double s = 0.0;
      for (std::size_t q = 0; q < r.points.size(); ++q)
        s += r.weights[q] * integrated_legendre_derivative(j, r.points[q]) *
             integrated_legendre_derivative(k, r.points[q]);
      CHECK(std::abs(s) < 1e-13);
    }
}

TEST_CASE("gauss rules")
{
  CHECK(gauss_rule(1).points[0] == 0.0);
  CHECK(gauss_rule(1).weights[0] == 2.0);
  CHECK(gauss_rule(2).points[1] == doctest::Approx(1.0 / std::sqrt(3.0)).epsilon(1e-15));
  CHECK(gauss_rule(2).weights[0] == doctest::Approx(1.0).epsilon(1e-15));
  double s = 0.0;
  const auto& r6 = gauss_rule(6);
  for (int q = 0; q < 6; ++q)
    s += r6.weights[q] * std::pow(r6.points[q], 10);
  CHECK(std::abs(s - 2.0 / 11.0) < 1e-14);

  for (int n = 1; n <= 10; ++n)
  {
    const auto& r = gauss_rule(n);
    double wsum = 0.0;
    for (double w : r.weights)
    {
      CHECK(w > 0.0);
      wsum += w;
    }
    CHECK(std::abs(wsum - 2.0) < 1e-13);
    for (int m = 0; m <= 2 * n - 1; ++m)
    {
      double v = 0.0;
      for (int q = 0; q < n; ++q)
        v += r.weights[q] * std::pow(r.points[q], m);
      const double exact = (m % 2) ? 0.0 : 2.0 / (m + 1);
      CHECK(std::abs(v - exact) < 1e-13);
    }
  }
  CHECK_THROWS_AS(gauss_rule(0), InputError);
}

TEST_CASE("tensor rule integrates x^2 y^2")
{
  const auto rule = tensor_gauss_rule(3, 2);
  double s = 0.0;
  for (std::size_t q = 0; q < rule.points.size(); ++q)
    s += rule.weights[q] * std::pow(rule.points[q][0], 2) * std::pow(rule.points[q][1], 2);
  CHECK(s == doctest::Approx(4.0 / 9.0).epsilon(1e-14));
}

TEST_CASE("gauss lagrange basis")
{
  GaussLagrangeBasis b2(2, 1);
  CHECK(b2.value(0, Vec3::Zero()) == doctest::Approx(0.5));
  CHECK(b2.value(0, Vec3(0.3, 0, 0)) == doctest::Approx((1 - std::sqrt(3.0) * 0.3) / 2));

  GaussLagrangeBasis b(3, 2);
  CHECK(b.size() == 9);
  for (int k = 0; k < b.size(); ++k)
    for (int l = 0; l < b.size(); ++l)
      CHECK(std::abs(b.value(k, b.node(l)) - (k == l ? 1.0 : 0.0)) < 1e-14);

  std::mt19937 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int p = 1; p <= 5; ++p)
  {
    GaussLagrangeBasis bp(p, 3);
    for (int s = 0; s < 20; ++s)
    {
      const Vec3 x(u(rng), u(rng), u(rng));
      double sum = 0.0;
      Vec3 gsum = Vec3::Zero();
      for (int k = 0; k < bp.size(); ++k)
      {
        sum += bp.value(k, x);
        gsum += bp.gradient(k, x);
      }
      CHECK(std::abs(sum - 1.0) < 1e-13);
      CHECK(gsum.norm() < 1e-11);
      std::vector<double> vals;
      bp.values(x, vals);
      for (int k = 0; k < bp.size(); ++k)
        CHECK(vals[k] == doctest::Approx(bp.value(k, x)).epsilon(1e-14));
    }
  }
}

TEST_CASE("tensor shapes span Q_r")
{
  // interpolate a random polynomial of degree r per direction in the psi basis
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const int r = 4, dim = 2, n = r + 1;
  std::vector<double> a(n * n);
  for (auto& c : a)
    c = u(rng);
  auto f = [&](const Vec3& x) {
    double v = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        v += a[i * n + j] * std::pow(x[0], i) * std::pow(x[1], j);
    return v;
  };
  const int m = n * n;
  Matrix V(m, m);
  Vector rhs(m);
  const auto pts = chebyshev_lobatto_points(n);
  for (int s = 0; s < m; ++s)
  {
    const MultiIndex ps = unflatten(s, n, dim);
    const Vec3 x(pts[ps[0]], pts[ps[1]], 0.0);
    rhs[s] = f(x);
    for (int t = 0; t < m; ++t)
      V(s, t) = tensor_shape(unflatten(t, n, dim), x, dim);
  }
  const Vector c = V.fullPivLu().solve(rhs);
  for (int s = 0; s < 20; ++s)
  {
    const Vec3 x(u(rng), u(rng), 0.0);
    double v = 0.0;
    for (int t = 0; t < m; ++t)
      v += c[t] * tensor_shape(unflatten(t, n, dim), x, dim);
    CHECK(std::abs(v - f(x)) < 1e-12);
  }
}
