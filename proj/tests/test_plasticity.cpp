#include "hpfem/plasticity.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

using namespace hpfem;

namespace
{

Vector random_vector(int n, std::mt19937& rng, double scale = 1.0)
{
  std::normal_distribution<double> N(0.0, scale);
  Vector v(n);
  for (int i = 0; i < n; ++i)
    v[i] = N(rng);
  return v;
}

struct Problem
{
  Mesh mesh;
  VSpace V;
  QSpace Q;
  Material mat;
  MixedSystem S;
};

// Unit square clamped on the left, vertical traction on the right.
Problem square_problem(int refinements, int p, double sigma_y, double load)
{
  Mesh m = refine_uniformly(make_rectangle_mesh(0.0, 1.0, 0.0, 1.0, 2, 2), refinements);
  m = with_uniform_degree(m, p);
  m = with_boundary_tags(m, [](const Vec3& x) {
    return x[0] < 1e-9 ? BoundaryTag::dirichlet : BoundaryTag::neumann;
  });
  Problem pr{m, VSpace(m, 2), QSpace(m, sigma_y), Material::isotropic(1.0, 1.0, 0.5, sigma_y, 2), {}};
  LoadData data;
  data.g = [load](const Vec3& x, const Vec3&) {
    Vector v(2);
    v << 0.0, (x[0] > 1.0 - 1e-9 ? load : 0.0);
    return v;
  };
  pr.S = assemble_mixed(pr.V, pr.Q, pr.mat, data);
  return pr;
}

// Quadrilateral grid of the unit square with perturbed interior vertices.
Mesh skewed_mesh(int n, unsigned seed)
{
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> U(-0.25, 0.25);
  std::vector<Vec3> verts;
  for (int j = 0; j <= n; ++j)
    for (int i = 0; i <= n; ++i)
    {
      Vec3 x(double(i) / n, double(j) / n, 0.0);
      if (i > 0 && i < n && j > 0 && j < n)
      {
        x[0] += U(rng) / n;
        x[1] += U(rng) / n;
      }
      verts.push_back(x);
    }
  std::vector<std::array<VertexId, 8>> elems;
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i)
    {
      const int v0 = j * (n + 1) + i;
      elems.push_back({v0, v0 + 1, v0 + n + 1, v0 + n + 2, 0, 0, 0, 0});
    }
  return Mesh(2, verts, elems);
}

} // namespace

TEST_CASE("chi examples")
{
  Vector lam(2), p(2);
  lam << 0.3, -0.4;
  p.setZero();
  CHECK(chi(p, lam, 1.0, 2.0).norm() < 1e-15);

  lam.setZero();
  p << 1.0, 2.0;
  const Vector c = chi(p, lam, 0.5, 1.0);
  CHECK((c + 0.5 * p).norm() < 1e-15);
}

TEST_CASE("chi Jacobian against finite differences")
{
  std::mt19937 rng(1);
  std::uniform_real_distribution<double> U(0.2, 3.0);
  const double h = 1e-6;
  for (int L : {2, 5})
  {
    int tested = 0;
    while (tested < 20)
    {
      const Vector p = random_vector(L, rng), lam = random_vector(L, rng);
      const double sigma = U(rng), rho = U(rng);
      if ((lam + rho * p).norm() < sigma + 0.1)
        continue;
      ++tested;
      Matrix dp, dl;
      chi_jacobian(p, lam, sigma, rho, dp, dl);
      for (int k = 0; k < L; ++k)
      {
        Vector e = Vector::Zero(L);
        e[k] = h;
        const Vector fdp = (chi(p + e, lam, sigma, rho) - chi(p - e, lam, sigma, rho)) / (2 * h);
        const Vector fdl = (chi(p, lam + e, sigma, rho) - chi(p, lam - e, sigma, rho)) / (2 * h);
        CHECK((fdp - dp.col(k)).norm() < 1e-5);
        CHECK((fdl - dl.col(k)).norm() < 1e-5);
      }
    }
  }

  // inactive branch
  Vector p(2), lam(2);
  p << 0.01, 0.0;
  lam << 0.1, 0.2;
  Matrix dp, dl;
  chi_jacobian(p, lam, 1.0, 2.0, dp, dl);
  CHECK(dl.norm() == 0.0);
  CHECK((dp + 2.0 * Matrix::Identity(2, 2)).norm() < 1e-15);

  // kink: active branch
  p << 0.0, 0.0;
  lam << 0.6, 0.8;
  Matrix ap, al;
  chi_jacobian(p, lam, 1.0, 3.0, dp, dl);
  const Matrix lz = lam * lam.transpose();
  CHECK((dl - lz).norm() < 1e-15);
  CHECK((dp - 3.0 * lz + 3.0 * Matrix::Identity(2, 2)).norm() < 1e-14);

  // damped matrix equals the exact one inside the ball
  p << 0.4, -0.3;
  lam << 0.5, 0.2;
  chi_jacobian(p, lam, 1.0, 3.0, dp, dl, false);
  chi_jacobian(p, lam, 1.0, 3.0, ap, al, true);
  CHECK((dp - ap).norm() == 0.0);
  CHECK((dl - al).norm() == 0.0);
}

TEST_CASE("chi zero set equals complementarity (sampled)")
{
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  int mismatches = 0;
  for (int s = 0; s < 20000; ++s)
  {
    const int L = (s % 2) ? 2 : 5;
    const double sigma = 0.1 + 5.0 * U(rng), rho = std::pow(10.0, -2.0 + 4.0 * U(rng));
    Vector n = random_vector(L, rng);
    n /= n.norm();
    Vector p, lam;
    switch (s % 4)
    {
    case 0: // elastic point
      p = Vector::Zero(L);
      lam = U(rng) * sigma * n;
      break;
    case 1: // plastic point
      p = 3.0 * U(rng) * n;
      lam = sigma * n;
      break;
    case 2: // perturbed
      p = 3.0 * U(rng) * n + 1e-5 * random_vector(L, rng);
      lam = sigma * n + 1e-5 * random_vector(L, rng);
      break;
    default:
      p = random_vector(L, rng);
      lam = sigma * random_vector(L, rng);
    }
    const bool zero = chi(p, lam, sigma, rho).norm() < 1e-10;
    if (zero != complementarity_holds(p, lam, sigma, 1e-10))
      ++mismatches;
  }
  CHECK(mismatches == 0);

  Vector n(2);
  n << 0.6, -0.8;
  CHECK(complementarity_holds(2.0 * n, 1.5 * n, 1.5, 1e-14));
}

TEST_CASE("generalized Jacobian of F against finite differences")
{
  Problem pr = square_problem(0, 2, 0.3, 0.5);
  std::mt19937 rng(2);
  const int n = pr.V.num_dofs(), m = pr.Q.num_dofs();
  SolutionTriple x{random_vector(n, rng), random_vector(m, rng), random_vector(m, rng)};
  const double rho = 1.3;
  const Matrix J(generalized_jacobian(pr.S, pr.Q, x, rho));
  const Vector d = random_vector(n + 2 * m, rng);
  const double h = 1e-7;
  auto shifted = [&](double t) {
    SolutionTriple y = x;
    y.u += t * d.head(n);
    y.p += t * d.segment(n, m);
    y.lambda += t * d.tail(m);
    return residual(pr.S, pr.Q, y, rho);
  };
  const Vector fd = (shifted(h) - shifted(-h)) / (2 * h);
  CHECK((fd - J * d).norm() < 1e-5 * (1.0 + fd.norm()));
}

TEST_CASE("zero data gives zero residual")
{
  Problem pr = square_problem(0, 2, 1.0, 0.0);
  SolutionTriple x{Vector::Zero(pr.V.num_dofs()), Vector::Zero(pr.Q.num_dofs()), Vector::Zero(pr.Q.num_dofs())};
  CHECK(residual(pr.S, pr.Q, x, 1.0).norm() == 0.0);
}

TEST_CASE("elastic regime")
{
  Problem pr = square_problem(1, 2, 1e6, 0.5);
  const auto r = solve_semismooth_newton(pr.S, pr.Q, pr.mat);
  CHECK(r.converged);
  CHECK(r.iterations <= 2);
  CHECK(r.solution.p.lpNorm<Eigen::Infinity>() < 1e-10);
  const auto rep = check_complementarity(pr.Q, r.solution.p, r.solution.lambda);
  CHECK(rep.num_plastic == 0);
  const Vector ue = elastic_initial_guess(pr.S, pr.Q).u;
  CHECK((r.solution.u - ue).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("plastic solve: complementarity, recovery, variational inequality")
{
  Problem pr = square_problem(1, 2, 1.0, 0.5);
  const auto r = solve_semismooth_newton(pr.S, pr.Q, pr.mat);
  REQUIRE(r.converged);
  CHECK(r.residual < 1e-10);
  const SolutionTriple& x = r.solution;

  const auto rep = check_complementarity(pr.Q, x.p, x.lambda);
  CHECK(rep.num_plastic > 0);
  CHECK(rep.num_plastic < pr.Q.num_scalar_dofs());
  CHECK(rep.max_infeasibility < 1e-10);
  CHECK(rep.max_complementarity < 1e-9);
  CHECK(rep.num_misclassified == 0);

  const Vector lam = recover_multiplier(pr.V, pr.Q, pr.mat, x.u, x.p);
  CHECK((lam - x.lambda).lpNorm<Eigen::Infinity>() < 1e-9);

  std::mt19937 rng(3);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t)
  {
    const double s = (t % 2) ? 1e-2 : 1.0;
    const Vector v = x.u + random_vector(pr.V.num_dofs(), rng, s);
    const Vector q = x.p + random_vector(pr.Q.num_dofs(), rng, s);
    worst = std::min(worst, vi_residual(pr.S, pr.Q, x, v, q));
  }
  CHECK(worst >= -1e-9);

  const double E0 = energy(pr.S, pr.Q, x.u, x.p);
  for (int t = 0; t < 50; ++t)
  {
    const double s = (t % 2) ? 1e-3 : 1e-1;
    Vector du = random_vector(pr.V.num_dofs(), rng), dq = random_vector(pr.Q.num_dofs(), rng);
    const double nn = std::sqrt(du.squaredNorm() + dq.squaredNorm());
    du *= s / nn;
    dq *= s / nn;
    CHECK(energy(pr.S, pr.Q, x.u + du, x.p + dq) >= E0);
  }
}

TEST_CASE("iteration counts are robust in rho")
{
  Problem pr = square_problem(1, 2, 1.0, 0.5);
  int lo = 1000, hi = 0;
  for (double rho : {0.01, 1.0, 100.0})
  {
    NewtonConfig c;
    c.rho = rho;
    const auto r = solve_semismooth_newton(pr.S, pr.Q, pr.mat, c);
    CHECK(r.converged);
    lo = std::min(lo, r.iterations);
    hi = std::max(hi, r.iterations);
    // accepted steps decrease the line-search merit, so they never exceed 1
    for (double t : r.trace.step)
      CHECK(t <= 1.0);
  }
  CHECK(hi - lo <= 2);
}

TEST_CASE("recover_multiplier on a linear field")
{
  Mesh m = with_uniform_degree(skewed_mesh(3, 1), 2);
  m = with_boundary_tags(m, [](const Vec3&) { return BoundaryTag::neumann; });
  const VSpace V(m, 2);
  const QSpace Q(m, 1.0);
  const Material mat = Material::isotropic(0.7, 1.3, 0.5, 1.0, 2);
  // eps(u) = Phi_1 = diag(1,-1)/sqrt(2): u = (x, -y)/sqrt(2)
  Vector u = Vector::Zero(V.num_dofs());
  for (int i = 0; i < V.num_scalar_dofs(); ++i)
    if (V.dof_info(i).entity_dim == 0)
    {
      const Vec3 c = V.dof_info(i).center;
      u[2 * i] = c[0] / std::sqrt(2.0);
      u[2 * i + 1] = -c[1] / std::sqrt(2.0);
    }
  const Vector lam = recover_multiplier(V, Q, mat, u, Vector::Zero(Q.num_dofs()));
  for (int i = 0; i < Q.num_scalar_dofs(); ++i)
  {
    CHECK(lam[2 * i] == doctest::Approx(2.0 * 1.3).epsilon(1e-12));
    CHECK(std::abs(lam[2 * i + 1]) < 1e-12);
  }
  const Vector zero = recover_multiplier(V, Q, mat, Vector::Zero(V.num_dofs()), Vector::Zero(Q.num_dofs()));
  CHECK(zero.norm() == 0.0);
}

TEST_CASE("inf-sup witness")
{
  std::mt19937 rng(11);
  std::vector<Mesh> meshes;
  Mesh a = refine_element(make_lshape_mesh(1), 0);
  for (ElementId e : a.active_elements())
    a.set_degree_in_place(e, 1 + e % 4);
  meshes.push_back(a);
  Mesh b = skewed_mesh(3, 4);
  for (ElementId e : b.active_elements())
    b.set_degree_in_place(e, 1 + (e * 7) % 4);
  meshes.push_back(b);
  Mesh c = make_box_mesh(Vec3::Zero(), Vec3(1.0, 2.0, 1.0), 2, 1, 1);
  c.set_degree_in_place(0, 2);
  meshes.push_back(c);
  for (const Mesh& m : meshes)
  {
    const QSpace Q(m, 1.0);
    for (int t = 0; t < 5; ++t)
      CHECK(std::abs(infsup_witness(Q, random_vector(Q.num_dofs(), rng)) - 1.0) < 1e-10);
  }
  // single p = 1 element: sup attained at q = mu
  const QSpace Q1(make_rectangle_mesh(0.0, 2.0, 0.0, 1.0, 1, 1), 1.0);
  Vector mu(2);
  mu << 0.3, -1.2;
  CHECK(std::abs(infsup_witness(Q1, mu) - 1.0) < 1e-14);
  CHECK_THROWS_AS(infsup_witness(Q1, Vector::Zero(2)), InputError);
}

TEST_CASE("strong and weak descriptions of the multiplier set agree")
{
  std::mt19937 rng(21);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  Mesh m = skewed_mesh(3, 9);
  for (ElementId e : m.active_elements())
    m.set_degree_in_place(e, 1 + e % 3);
  REQUIRE(check_det_affine(m.element_map(4)));
  const QSpace Q(m, 1.5);
  const int L = Q.L();
  int disagreements = 0;
  for (int c = 0; c < 30; ++c)
  {
    Vector mu(Q.num_dofs());
    const bool infeasible = c % 2;
    for (int i = 0; i < Q.num_scalar_dofs(); ++i)
    {
      Vector dir = random_vector(L, rng);
      dir /= dir.norm();
      const double mag = (infeasible && U(rng) < 0.3) ? 1.5 * (1.5 + 1.5 * U(rng)) : 1.5 * U(rng);
      mu.segment(L * i, L) = mag * dir;
    }
    const bool strong = in_lambda_strong(Q, mu);
    const bool weak = in_lambda_weak(Q, mu, sample_weak_tests(Q, mu, 200, 100 + c));
    CHECK(strong == !infeasible);
    if (strong != weak)
      ++disagreements;
  }
  CHECK(disagreements == 0);
}

TEST_CASE("solver trace export")
{
  NewtonTrace t;
  t.residual = {1.0, 0.1, 1e-12};
  t.step = {1.0, 0.5};
  t.active = {0, 3, 3};
  const std::string path = "test_plasticity_trace.csv";
  write_trace_csv(path, t);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "iteration,residual,step,active");
  int rows = 0;
  while (std::getline(in, line))
    ++rows;
  CHECK(rows == 3);
  std::remove(path.c_str());
}
