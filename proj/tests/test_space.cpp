#include "hpfem/space.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace hpfem;

namespace
{

Mesh all_free(const Mesh& m)
{
  return with_boundary_tags(m, [](const Vec3&) { return BoundaryTag::neumann; });
}

// Maximal jump of every global basis function across all shared facets,
// sampled at 5 points per facet (part).
double max_basis_jump(const VSpace& V)
{
  const Mesh& mesh = V.mesh();
  const int d = mesh.dim();
  double jump = 0.0;
  const std::vector<double> ts{-0.9, -0.4, 0.0, 0.3, 0.8};
  for (ElementId e : mesh.active_elements())
    for (const auto& fn : mesh.facet_neighbors(e))
    {
      if (fn.neighbor < 0)
        continue;
      const int dir = facet_direction(fn.facet);
      for (int s = 0; s < 5; ++s)
      {
        Vec3 t = Vec3::Zero();
        int b = 0;
        for (int k = 0; k < d; ++k)
          if (k != dir)
            t[k] = ts[(s + 2 * b++) % 5];
        const Vec3 xo = fn.own_box.map(t);
        const Vec3 xn = fn.to_neighbor(xo);
        const auto& co = V.connectivity(e);
        const auto& cn = V.connectivity(fn.neighbor);
        std::vector<int> all = co.dofs;
        all.insert(all.end(), cn.dofs.begin(), cn.dofs.end());
        for (int g : all)
          jump = std::max(jump, std::abs(V.basis_value(g, e, xo) - V.basis_value(g, fn.neighbor, xn)));
      }
    }
  return jump;
}

} // namespace

TEST_CASE("deviatoric basis")
{
  for (int d = 2; d <= 3; ++d)
  {
    const auto& phi = deviatoric_basis(d);
    CHECK(static_cast<int>(phi.size()) == deviatoric_size(d));
    for (std::size_t k = 0; k < phi.size(); ++k)
    {
      CHECK(std::abs(phi[k].trace()) < 1e-15);
      CHECK((phi[k] - phi[k].transpose()).norm() < 1e-15);
      for (std::size_t l = 0; l < phi.size(); ++l)
        CHECK(std::abs((phi[k].array() * phi[l].array()).sum() - (k == l ? 1.0 : 0.0)) < 1e-15);
    }
  }
  CHECK(deviatoric_basis(1).empty());
}

TEST_CASE("dof counts")
{
  const auto m1 = with_uniform_degree(make_interval_mesh(0, 1, 2), 1);
  CHECK(VSpace(m1, 1).num_scalar_dofs() == 1);

  const auto m2 = all_free(with_uniform_degree(make_rectangle_mesh(0, 1, 0, 1, 1, 1), 3));
  CHECK(VSpace(m2, 1).num_scalar_dofs() == 16);

  const auto m3 = all_free(with_uniform_degree(make_rectangle_mesh(0, 2, 0, 1, 2, 1), 2));
  CHECK(VSpace(m3, 1).num_scalar_dofs() == 15);
  CHECK(VSpace(m3, 2).num_dofs() == 30);

  // minimum rule on the shared edge
  const auto m4 = all_free(with_degree(with_uniform_degree(make_rectangle_mesh(0, 2, 0, 1, 2, 1), 2), 1, 3));
  // vertices 6, edges: 3 (p=2) + 3 (p=3: 2 each) + shared min 1, interiors 1 + 4
  CHECK(VSpace(m4, 1).num_scalar_dofs() == 6 + 3 + 6 + 1 + 1 + 4);
}

TEST_CASE("constraint coefficients")
{
  const auto c0 = constraint_coeffs_1d(0, -1.0, 0.0, 3);
  CHECK(c0[0] == doctest::Approx(1.0));
  CHECK(c0[1] == doctest::Approx(0.5));
  CHECK(std::abs(c0[2]) < 1e-15);
  const auto c1 = constraint_coeffs_1d(1, -1.0, 0.0, 3);
  CHECK(std::abs(c1[0]) < 1e-15);
  CHECK(c1[1] == doctest::Approx(0.5));

  std::mt19937 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 10; ++trial)
  {
    const Vec3 z(0.6 * u(rng), 0.6 * u(rng), 0.0);
    const auto boxes = refinement_pattern(z, 2);
    const MultiIndex j{static_cast<int>(rng() % 5), static_cast<int>(rng() % 5), 0};
    for (const auto& box : boxes)
    {
      const Vector c = constraint_coeffs(j, box, 2, 4);
      for (int s = 0; s < 10; ++s)
      {
        const Vec3 t(u(rng), u(rng), 0.0);
        double v = 0.0;
        for (int i = 0; i < c.size(); ++i)
          v += c[i] * poly::tensor_shape(unflatten(i, 5, 2), t, 2);
        CHECK(std::abs(v - poly::tensor_shape(j, box.map(t), 2)) < 1e-12);
      }
    }
  }
}

TEST_CASE("continuity including hanging facets")
{
  std::mt19937 rng(9);
  for (int trial = 0; trial < 4; ++trial)
  {
    Mesh m = make_rectangle_mesh(0, 1, 0, 1, 2, 2);
    for (int s = 0; s < 4; ++s)
    {
      const auto& act = m.active_elements();
      m = refine_element(m, act[rng() % act.size()]);
    }
    for (ElementId e = 0; e < static_cast<ElementId>(m.num_elements_total()); ++e)
      m.set_degree_in_place(e, 1 + static_cast<int>(rng() % 4));
    m = all_free(m);
    const VSpace V(m, 1);
    CHECK(V.num_hanging_nodes() > 0);
    CHECK(max_basis_jump(V) < 1e-11);
  }
}

TEST_CASE("continuity across off-center splits")
{
  // the coarse edge midpoint lies inside a fine edge: no hanging node there
  Mesh m = refine_element(make_lshape_mesh(1), 2, Vec3(0.281, -0.375, 0));
  m = refine_element(m, m.active_elements().back(), Vec3(-0.2, 0.3, 0));
  m = all_free(with_uniform_degree(m, 3));
  const VSpace V(m, 1);
  CHECK(V.num_hanging_nodes() > 0);
  CHECK(max_basis_jump(V) < 1e-11);
}

TEST_CASE("continuity in 3D with hanging faces")
{
  Mesh m = make_box_mesh(Vec3(0, 0, 0), Vec3(1, 1, 1), 2, 1, 1);
  m = refine_element(m, 0);
  m = with_uniform_degree(m, 2);
  m.set_degree_in_place(1, 3);
  const VSpace V(all_free(m), 1);
  CHECK(V.num_hanging_nodes() > 0);
  CHECK(max_basis_jump(V) < 1e-11);
}

TEST_CASE("hanging vertex coefficient for p = 1")
{
  Mesh m = refine_element(make_rectangle_mesh(0, 2, 0, 1, 2, 1), 0);
  m = all_free(m);
  const VSpace V(m, 1);
  // child at the upper right of element 0 has its corner 1 at the hanging vertex (1, 0.5)
  ElementId child = -1;
  for (ElementId c : m.element(0).children)
    if ((m.element_map(c).corner(1) - Vec3(1, 0.5, 0)).norm() < 1e-14)
      child = c;
  REQUIRE(child >= 0);
  const auto& cm = V.connectivity(child);
  int halves = 0;
  for (std::size_t i = 0; i < cm.dofs.size(); ++i)
    if (std::abs(cm.coeffs(i, 1) - 0.5) < 1e-14)
      ++halves;
  CHECK(halves == 2);
}

TEST_CASE("p = 2 edge constraint matches constraint coefficients")
{
  Mesh m = with_uniform_degree(refine_element(make_rectangle_mesh(0, 2, 0, 1, 2, 1), 0), 2);
  m = all_free(m);
  const VSpace V(m, 1);
  // coarse element 1 edge x = 1: its edge dof
  const auto& c1 = V.connectivity(1);
  // local shape (0, 2) on facet x^ = -1 of element 1
  const int edge_local = flatten({0, 2, 0}, 3, 2);
  int edge_dof = -1;
  double coarse_sign = 0.0;
  for (std::size_t i = 0; i < c1.dofs.size(); ++i)
    if (std::abs(c1.coeffs(i, edge_local)) > 0.5 && V.dof_info(c1.dofs[i]).entity_dim == 1)
    {
      edge_dof = c1.dofs[i];
      coarse_sign = c1.coeffs(i, edge_local);
    }
  REQUIRE(edge_dof >= 0);
  // children of 0 on the shared edge: lower one covers y in (0, 0.5) = t in (-1, 0)
  for (ElementId c : m.element(0).children)
  {
    const Vec3 ctr = m.element_map(c).center();
    if (ctr[0] < 0.5)
      continue;
    const bool lower = ctr[1] < 0.5;
    const auto cc = constraint_coeffs_1d(2, lower ? -1.0 : 0.0, lower ? 0.0 : 1.0, 2);
    const auto& cm = V.connectivity(c);
    const int local = flatten({1, 2, 0}, 3, 2);
    for (std::size_t i = 0; i < cm.dofs.size(); ++i)
      if (cm.dofs[i] == edge_dof)
        CHECK(cm.coeffs(i, local) == doctest::Approx(coarse_sign * cc[2]).epsilon(1e-12));
  }
}

TEST_CASE("linear reproduction and partition of unity")
{
  Mesh m = make_lshape_mesh(1);
  m = refine_element(m, 0);
  m = refine_element(m, 4);
  // distort an interior vertex is not possible after refinement; use as is
  for (int p = 1; p <= 3; ++p)
  {
    const Mesh mp = all_free(with_uniform_degree(m, p));
    const VSpace V(mp, 1);
    Vector lin = Vector::Zero(V.num_dofs()), one = Vector::Zero(V.num_dofs());
    for (int i = 0; i < V.num_scalar_dofs(); ++i)
      if (V.dof_info(i).entity_dim == 0)
      {
        const Vec3 x = V.dof_info(i).center;
        lin[i] = 2.0 * x[0] - 3.0 * x[1] + 0.5;
        one[i] = 1.0;
      }
    std::mt19937 rng(1);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (ElementId e : mp.active_elements())
      for (int s = 0; s < 5; ++s)
      {
        const Vec3 xh(u(rng), u(rng), 0);
        const Vec3 x = mp.element_map(e).map(xh);
        CHECK(std::abs(V.value(lin, e, xh)[0] - (2.0 * x[0] - 3.0 * x[1] + 0.5)) < 1e-13);
        CHECK(std::abs(V.value(one, e, xh)[0] - 1.0) < 1e-13);
        const Mat3 g = V.gradient(lin, e, xh);
        CHECK(std::abs(g(0, 0) - 2.0) < 1e-12);
        CHECK(std::abs(g(0, 1) + 3.0) < 1e-12);
      }
  }
}

TEST_CASE("Dirichlet elimination")
{
  const Mesh m = with_uniform_degree(make_rectangle_mesh(0, 1, 0, 1, 3, 3), 2);
  const VSpace V(m, 2);
  // interior: 4 vertices, 12 edges, 9 cells
  CHECK(V.num_scalar_dofs() == 4 + 12 + 9);
  for (ElementId e : m.active_elements())
    for (const auto& fn : m.facet_neighbors(e))
      if (fn.kind == FacetKind::boundary)
        for (int g : V.connectivity(e).dofs)
          CHECK(std::abs(V.basis_value(g, e, fn.own_box.map(Vec3(0.3, -0.2, 0)))) < 1e-14);
}

TEST_CASE("qspace weights and biorthogonality")
{
  const Mesh sq = with_uniform_degree(make_rectangle_mesh(0, 2, 0, 2, 1, 1), 2);
  const QSpace Q(sq, 1.5);
  CHECK(Q.num_scalar_dofs() == 4);
  CHECK(Q.num_dofs() == 8);
  for (int i = 0; i < 4; ++i)
  {
    CHECK(Q.weights()[i] == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(Q.bounds()[i] == 1.5);
  }
  CHECK((Q.biorthogonal(0) - Matrix::Identity(4, 4)).norm() == 0.0);

  const Mesh p1 = with_uniform_degree(make_rectangle_mesh(0, 1, 0, 1, 2, 2), 1);
  const QSpace Q1(p1, 1.0);
  for (int i = 0; i < Q1.num_scalar_dofs(); ++i)
    CHECK(Q1.weights()[i] == doctest::Approx(0.25));

  // non-affine element: biorthogonality by independent quadrature
  const std::array<Vec3, 4> pts{Vec3(0, 0, 0), Vec3(2, 0.3, 0), Vec3(0.4, 1, 0), Vec3(1.5, 1.8, 0)};
  const Mesh skew = with_uniform_degree(Mesh(2, {pts.begin(), pts.end()}, {{0, 1, 2, 3, -1, -1, -1, -1}}), 3);
  const QSpace Qs(skew, 1.0);
  const auto fe = skew.element_map(0);
  const auto rule = poly::tensor_gauss_rule(8, 2);
  const int n = Qs.local_size(0);
  const Matrix& A = Qs.biorthogonal(0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
    {
      double s = 0.0;
      for (std::size_t q = 0; q < rule.points.size(); ++q)
      {
        double vj = 0.0;
        for (int l = 0; l < n; ++l)
          vj += A(j, l) * Qs.phi(0, l, rule.points[q]);
        s += rule.weights[q] * fe.det_jacobian(rule.points[q]) * Qs.phi(0, i, rule.points[q]) * vj;
      }
      CHECK(std::abs(s - (i == j ? Qs.weights()[i] : 0.0)) < 1e-12);
    }
  // Phi_1 coefficients give unit Frobenius norm
  Vector q = Vector::Zero(Qs.num_dofs());
  for (int i = 0; i < Qs.num_scalar_dofs(); ++i)
    q[Qs.L() * i] = 1.0;
  CHECK(Qs.value(q, 0, Vec3(0.3, -0.6, 0)).norm() == doctest::Approx(1.0).epsilon(1e-13));
}
