#include "hpfem/estimator.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

using namespace hpfem;

namespace
{

Vector interpolate_linear(const VSpace& V, const std::function<Vector(const Vec3&)>& u)
{
  const int nc = V.components();
  Vector c = Vector::Zero(V.num_dofs());
  for (int i = 0; i < V.num_scalar_dofs(); ++i)
    if (V.dof_info(i).entity_dim == 0)
    {
      const Vector val = u(V.dof_info(i).center);
      for (int k = 0; k < nc; ++k)
        c[nc * i + k] = val[k];
    }
  return c;
}

Mat3 random_mat(std::mt19937& rng, int d, double scale)
{
  std::normal_distribution<double> N(0.0, scale);
  Mat3 m = Mat3::Zero();
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      m(i, j) = N(rng);
  m = 0.5 * (m + m.transpose()).eval();
  m.topLeftCorner(d, d) -= m.trace() / d * Matrix::Identity(d, d);
  return m;
}

// u = (x y, x^2) with lambda = mu = 1: sigma = [[3y, 3x], [3x, y]] (elastic part).
Mat3 quadratic_stress(const Vec3& x)
{
  Mat3 s = Mat3::Zero();
  s(0, 0) = 3 * x[1];
  s(0, 1) = s(1, 0) = 3 * x[0];
  s(1, 1) = x[1];
  return s;
}

LoadData quadratic_data()
{
  LoadData data;
  data.f = [](const Vec3&) {
    Vector v(2);
    v << 0.0, -4.0;
    return v;
  };
  data.g = [](const Vec3& x, const Vec3& n) { return Vector((quadratic_stress(x) * n).head(2)); };
  return data;
}

Mesh clamped_left(const Mesh& m)
{
  return with_boundary_tags(m, [](const Vec3& x) {
    return x[0] < 1e-9 ? BoundaryTag::dirichlet : BoundaryTag::neumann;
  });
}

struct Solved
{
  VSpace V;
  QSpace Q;
  Material mat;
  MixedSystem S;
  NewtonResult result;
};

Solved solve(const Mesh& m, const Material& mat, const LoadData& data)
{
  Solved s{VSpace(m, m.dim()), QSpace(m, mat.sigma_y()), mat, {}, {}};
  s.S = assemble_mixed(s.V, s.Q, s.mat, data);
  s.result = solve_semismooth_newton(s.S, s.Q, s.mat);
  return s;
}

} // namespace

TEST_CASE("mu_star examples and feasibility")
{
  const double sy = 2.0;
  Mat3 a = Mat3::Zero();
  a(0, 1) = a(1, 0) = 0.5;
  CHECK((mu_star(a, Mat3::Zero(), sy) - a).norm() == 0.0);
  CHECK(mu_star(Mat3::Zero(), Mat3::Zero(), sy).norm() == 0.0);

  Mat3 n = Mat3::Zero();
  n(0, 0) = 1.0 / std::sqrt(2.0);
  n(1, 1) = -1.0 / std::sqrt(2.0);
  const Mat3 m = mu_star(2 * sy * n, Mat3::Zero(), sy);
  CHECK((m - sy * n).norm() < 1e-14);
  // mu_hat = lambda + p / 2
  CHECK((mu_star(Mat3::Zero(), 2 * a, sy) - a).norm() < 1e-15);

  std::mt19937 rng(3);
  for (int k = 0; k < 1000; ++k)
  {
    const Mat3 mu = mu_star(random_mat(rng, 3, 2.0), random_mat(rng, 3, 3.0), sy);
    CHECK(mu.norm() - sy <= 1e-12);
  }
}

TEST_CASE("mu_star minimizes the plasticity contribution")
{
  const Mesh m = with_uniform_degree(refine_uniformly(make_rectangle_mesh(0, 1, 0, 1, 2, 2), 1), 2);
  const QSpace Q(m, 1.0);
  std::mt19937 rng(11);
  std::normal_distribution<double> N(0.0, 1.0);
  Vector lambda(Q.num_dofs()), p(Q.num_dofs());
  for (int i = 0; i < lambda.size(); ++i)
  {
    lambda[i] = 0.8 * N(rng);
    p[i] = 1.5 * N(rng);
  }
  const double best = plasticity_error_contribution(Q, lambda, p, {});
  // mu* itself is feasible everywhere
  double worst_norm = 0.0;
  plasticity_error_contribution(Q, lambda, p, [&](ElementId, const Vec3&, const Mat3& l, const Mat3& q) {
    const Mat3 mu = mu_star(l, q, 1.0);
    worst_norm = std::max(worst_norm, mu.norm());
    return mu;
  });
  CHECK(worst_norm <= 1.0 + 1e-12);

  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial)
  {
    // random feasible field: a random constant direction scaled to a random radius,
    // perturbed pointwise and projected back to the ball
    const Mat3 dir = random_mat(rng, 2, 1.0);
    const double radius = U(rng);
    const unsigned seed = rng();
    const double val = plasticity_error_contribution(Q, lambda, p, [&](ElementId e, const Vec3& xh, const Mat3&,
                                                                         const Mat3&) {
      std::mt19937 local(seed + 7919u * static_cast<unsigned>(e) +
                         static_cast<unsigned>(1000 * (xh[0] + 2) + 100000 * (xh[1] + 2)));
      Mat3 nu = radius * dir / dir.norm() + random_mat(local, 2, 0.3);
      if (nu.norm() > 1.0)
        nu /= nu.norm();
      return nu;
    });
    CHECK(best <= val + 1e-10);
  }
}

TEST_CASE("polynomial solution has vanishing residual indicators")
{
  const Material mat = Material::isotropic(1.0, 1.0, 0.5, 1e6, 2);
  SUBCASE("uniform")
  {
    const Mesh m = clamped_left(with_uniform_degree(make_rectangle_mesh(0, 1, 0, 1, 2, 2), 2));
    const auto s = solve(m, mat, quadratic_data());
    REQUIRE(s.result.converged);
    const auto ind = estimate(s.V, s.Q, s.mat, quadratic_data(), s.result.solution);
    CHECK(ind.residual().cwiseAbs().maxCoeff() < 1e-11);
    CHECK(ind.osc2() < 1e-20);
    CHECK(ind.plasticity().cwiseAbs().maxCoeff() < 1e-11);
  }
  SUBCASE("hanging nodes and mixed degrees")
  {
    Mesh m = make_rectangle_mesh(0, 1, 0, 1, 2, 2);
    m = refine_element(m, m.active_elements()[0]);
    m = refine_element(m, m.active_elements()[3]);
    for (std::size_t i = 0; i < m.active_elements().size(); ++i)
      m = with_degree(m, m.active_elements()[i], 2 + static_cast<int>(i % 2));
    m = clamped_left(m);
    REQUIRE(m.hanging_vertices().size() > 0);
    const auto s = solve(m, mat, quadratic_data());
    REQUIRE(s.result.converged);
    const auto ind = estimate(s.V, s.Q, s.mat, quadratic_data(), s.result.solution);
    CHECK(ind.jump.cwiseAbs().maxCoeff() < 1e-11);
    CHECK(ind.residual().cwiseAbs().maxCoeff() < 1e-11);
  }
}

TEST_CASE("jump of a piecewise constant stress")
{
  // two unit squares, u = (phi(x), 0) with phi' = 1 on the left and 2 on the right
  const Mesh m = with_boundary_tags(make_rectangle_mesh(0, 2, 0, 1, 2, 1),
                                    [](const Vec3&) { return BoundaryTag::neumann; });
  const VSpace V(m, 2);
  const QSpace Q(m, 1.0);
  const Material mat = Material::isotropic(1.0, 1.0, 0.5, 1.0, 2);
  SolutionTriple x;
  x.u = interpolate_linear(V, [](const Vec3& y) {
    Vector v(2);
    v << (y[0] <= 1.0 ? y[0] : 1.0 + 2.0 * (y[0] - 1.0)), 0.0;
    return v;
  });
  x.p = Vector::Zero(Q.num_dofs());
  x.lambda = Vector::Zero(Q.num_dofs());
  const auto ind = estimate(V, Q, mat, LoadData{}, x);
  // [sigma n] = (lambda + 2 mu) * 1 = 3, |e| = 1, h_e = 1, p_e = 1
  for (int i = 0; i < 2; ++i)
    CHECK(ind.jump[i] == doctest::Approx(0.5 * 9.0).epsilon(1e-12));
  CHECK(ind.volume.cwiseAbs().maxCoeff() < 1e-24);
}

TEST_CASE("stress divergence on a curved element")
{
  std::vector<Vec3> verts = {Vec3(0, 0, 0), Vec3(1.2, 0.1, 0), Vec3(-0.1, 0.9, 0), Vec3(1.4, 1.3, 0)};
  Mesh m(2, verts, {{0, 1, 2, 3, 0, 0, 0, 0}});
  m = with_uniform_degree(m, 4);
  const VSpace V(m, 2);
  const QSpace Q(m, 1.0);
  // anisotropic C coupling the normal and shear parts
  const Material mat = Material::general(
      [](const Mat3& eps) {
        Mat3 s = 1.3 * eps.trace() * Mat3::Identity() + 1.8 * eps;
        s(0, 1) += 0.2 * eps(0, 0);
        s(1, 0) += 0.2 * eps(0, 0);
        s(0, 0) += 0.4 * eps(0, 1);
        s(2, 2) = 0.0;
        return s;
      },
      [](const Mat3& q) { return Mat3(0.5 * q); }, 1.0, 2, 5);
  std::mt19937 rng(2);
  std::normal_distribution<double> N(0.0, 1.0);
  Vector u(V.num_dofs()), p(Q.num_dofs());
  for (int i = 0; i < u.size(); ++i)
    u[i] = N(rng);
  for (int i = 0; i < p.size(); ++i)
    p[i] = N(rng);
  const ElementId e = m.active_elements()[0];
  const ElementMap map = m.element_map(e);
  for (const Vec3 xh : {Vec3(0.1, -0.3, 0), Vec3(-0.6, 0.5, 0)})
  {
    const Vec3 x = map.map(xh);
    const double h = 1e-5;
    Vector fd = Vector::Zero(2);
    for (int j = 0; j < 2; ++j)
    {
      Vec3 dx = Vec3::Zero();
      dx[j] = h;
      const Mat3 sp = stress_at(V, Q, mat, u, p, e, *map.inverse(x + dx));
      const Mat3 sm = stress_at(V, Q, mat, u, p, e, *map.inverse(x - dx));
      for (int i = 0; i < 2; ++i)
        fd[i] += (sp(i, j) - sm(i, j)) / (2 * h);
    }
    const Vector div = stress_divergence(V, Q, mat, u, p, e, xh);
    CHECK((div - fd).norm() < 1e-6 * (1.0 + fd.norm()));
  }
}

TEST_CASE("plasticity terms")
{
  const Material mat = Material::isotropic(1.0, 1.0, 0.5, 1.0, 2);
  LoadData data;
  data.g = [](const Vec3& x, const Vec3&) {
    Vector v(2);
    v << 0.0, (x[0] > 1.0 - 1e-9 ? 0.01 : 0.0);
    return v;
  };
  SUBCASE("elastic regime")
  {
    const Mesh m = clamped_left(with_uniform_degree(refine_uniformly(make_rectangle_mesh(0, 1, 0, 1, 2, 2), 1), 1));
    const auto s = solve(m, mat, data);
    REQUIRE(s.result.converged);
    CHECK(s.result.solution.p.cwiseAbs().maxCoeff() < 1e-10);
    CHECK(plasticity_error_contribution(s.Q, s.result.solution.lambda, s.result.solution.p, {}) < 1e-10);
    const auto ind = estimate(s.V, s.Q, s.mat, data, s.result.solution);
    CHECK((ind.mu_defect + ind.dissipation).sum() < 1e-10);
  }
  SUBCASE("plastic regime")
  {
    data.g = [](const Vec3& x, const Vec3&) {
      Vector v(2);
      v << 0.0, (x[0] > 1.0 - 1e-9 ? 0.5 : 0.0);
      return v;
    };
    for (int deg = 1; deg <= 3; ++deg)
    {
      const Mesh m =
          clamped_left(with_uniform_degree(refine_uniformly(make_rectangle_mesh(0, 1, 0, 1, 2, 2), 1), deg));
      const auto s = solve(m, mat, data);
      REQUIRE(s.result.converged);
      const auto ind = estimate(s.V, s.Q, s.mat, data, s.result.solution);
      CHECK(ind.min_part() >= -1e-12);
      CHECK(ind.eta2() > 0.0);
      CHECK(ind.mu_defect.sum() > 0.0);
      // global contribution matches the element-wise sum
      CHECK((ind.mu_defect + ind.dissipation).sum() ==
            doctest::Approx(plasticity_error_contribution(s.Q, s.result.solution.lambda, s.result.solution.p, {}))
                .epsilon(1e-12));
    }
  }
}

TEST_CASE("auxiliary problem")
{
  const Material mat = Material::isotropic(1.0, 1.0, 0.5, 1.0, 2);
  LoadData data;
  data.g = [](const Vec3& x, const Vec3&) {
    Vector v(2);
    v << 0.0, (x[0] > 1.0 - 1e-9 ? 0.5 : 0.0);
    return v;
  };
  const Mesh m = clamped_left(with_uniform_degree(refine_uniformly(make_rectangle_mesh(0, 1, 0, 1, 2, 2), 1), 2));
  const auto s = solve(m, mat, data);
  REQUIRE(s.result.converged);
  const auto& x = s.result.solution;
  const auto [u, p] = solve_auxiliary(s.S, x.lambda);
  CHECK((u - x.u).norm() < 1e-8 * x.u.norm());
  CHECK((p - x.p).norm() < 1e-8 * (1.0 + x.p.norm()));

  // lambda = 0: unconstrained minimizer of 1/2 a - l
  const auto [u0, p0] = solve_auxiliary(s.S, Vector::Zero(x.lambda.size()));
  CHECK((s.S.K * u0 - s.S.B * p0 - s.S.l).norm() < 1e-10);
  CHECK((-s.S.B.transpose() * u0 + s.S.C * p0).norm() < 1e-10);
  CHECK_THROWS_AS(solve_auxiliary(s.S, Vector::Zero(3)), InputError);
}

TEST_CASE("Dorfler marking")
{
  Vector a(5);
  a << 4, 1, 1, 1, 1;
  CHECK(mark_dorfler({10, 11, 12, 13, 14}, a, 0.5) == std::vector<ElementId>{10});
  Vector b(2);
  b << 2, 2;
  CHECK(mark_dorfler({7, 3}, b, 0.4) == std::vector<ElementId>{3});
  Vector c(4);
  c << 0.5, 0.0, 2.0, 1e-30;
  CHECK(mark_dorfler({0, 1, 2, 3}, c, 1.0) == std::vector<ElementId>{2, 0, 3});
  Vector d(3);
  d << 1, 3, 2;
  CHECK(mark_dorfler({0, 1, 2}, d, 0.6) == std::vector<ElementId>{1, 2});
  CHECK(mark_dorfler({0, 1}, Vector::Zero(2), 0.5).empty());
  CHECK_THROWS_AS(mark_dorfler({0}, Vector::Ones(1), 0.0), InputError);
  CHECK_THROWS_AS(mark_dorfler({0}, Vector::Ones(1), 1.5), InputError);
}

TEST_CASE("reference error and indicator export")
{
  const Material mat = Material::isotropic(1.0, 1.0, 0.5, 1.0, 2);
  LoadData data;
  data.g = [](const Vec3& x, const Vec3&) {
    Vector v(2);
    v << 0.0, (x[0] > 1.0 - 1e-9 ? 0.5 : 0.0);
    return v;
  };
  const Mesh m = clamped_left(with_uniform_degree(make_rectangle_mesh(0, 1, 0, 1, 2, 2), 1));
  const auto s = solve(m, mat, data);
  REQUIRE(s.result.converged);

  // same space: zero error
  const auto zero = reference_error(s.V, s.Q, s.result.solution, s.V, s.Q, s.result.solution, mat);
  CHECK(zero.total() < 1e-24);

  const Mesh fine = with_uniform_degree(refine_uniformly(m, 1), 2);
  const auto r = solve(fine, mat, data);
  REQUIRE(r.result.converged);
  const auto err = reference_error(r.V, r.Q, r.result.solution, s.V, s.Q, s.result.solution, mat);
  CHECK(err.energy2 > 0.0);
  CHECK(err.lambda2 > 0.0);
  // energy error of the coarse pair equals a(e, e) by the bilinear form on the fine space
  // (the coarse space embeds in the fine one)
  CHECK(err.p_l2 >= 0.0);
  CHECK_THROWS_AS(reference_error(s.V, s.Q, s.result.solution, r.V, r.Q, r.result.solution, mat), InputError);

  const auto ind = estimate(s.V, s.Q, s.mat, data, s.result.solution);
  const auto marked = mark_dorfler(ind.elements, ind.total(), 0.5);
  const std::string path = "test_estimator_indicators.csv";
  write_indicators_csv(path, ind, marked);
  std::ifstream in(path);
  std::string line;
  int rows = 0;
  std::getline(in, line);
  CHECK(line == "element,eta2,plasticity,marked");
  while (std::getline(in, line))
    ++rows;
  CHECK(rows == static_cast<int>(ind.elements.size()));
  std::remove(path.c_str());
}
