#include "hpfem/assembly.hpp"

#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

using namespace hpfem;

namespace
{

Mesh all_free(const Mesh& m)
{
  return with_boundary_tags(m, [](const Vec3&) { return BoundaryTag::neumann; });
}

Mesh random_hp_mesh(unsigned seed, int refinements = 4)
{
  std::mt19937 rng(seed);
  Mesh m = make_lshape_mesh(1);
  for (int r = 0; r < refinements; ++r)
  {
    const auto& act = m.active_elements();
    std::uniform_int_distribution<std::size_t> pick(0, act.size() - 1);
    m = refine_element(m, act[pick(rng)]);
  }
  std::uniform_int_distribution<int> deg(1, 4);
  for (ElementId e : m.active_elements())
    m.set_degree_in_place(e, deg(rng));
  return m;
}

Vector random_vector(int n, std::mt19937& rng)
{
  std::normal_distribution<double> N(0.0, 1.0);
  Vector v(n);
  for (int i = 0; i < n; ++i)
    v[i] = N(rng);
  return v;
}

// Coefficients of a linear vector field: vertex dofs take point values.
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

} // namespace

TEST_CASE("strain and stress")
{
  Mat3 g = Mat3::Zero();
  g(0, 1) = 1.0;
  const Mat3 e = strain(g);
  CHECK(e(0, 1) == doctest::Approx(0.5));
  CHECK(e(1, 0) == doctest::Approx(0.5));
  CHECK(e(0, 0) == 0.0);

  Mat3 skew = Mat3::Zero();
  skew(0, 1) = 2.0;
  skew(1, 0) = -2.0;
  CHECK(strain(skew).norm() == 0.0);

  const Material m = Material::isotropic(1.0, 1.0, 1.0, 1.0, 2);
  Mat3 I = Mat3::Zero();
  I.topLeftCorner(2, 2).setIdentity();
  CHECK((m.stress(I, Mat3::Zero()) - 4.0 * I).norm() < 1e-14);
  CHECK(m.stress(I, I).norm() < 1e-14);

  const Mat3& phi1 = deviatoric_basis(2)[0];
  CHECK((m.stress(phi1, 0.5 * phi1) - phi1).norm() < 1e-14);
}

TEST_CASE("material bounds and validation")
{
  const Material m = Material::isotropic(3.0, 2.0, 0.5, 1.0, 3);
  CHECK(m.c_min() == doctest::Approx(4.0));
  CHECK(m.c_max() == doctest::Approx(3 * 3.0 + 4.0));
  CHECK(m.h_min() == doctest::Approx(0.5));
  CHECK_NOTHROW(m.validate(1));

  // general hook reproduces the isotropic tensor
  const Material g = Material::general(
      [](const Mat3& e) {
        Mat3 s = 4.0 * e;
        s.topLeftCorner(3, 3) += 3.0 * e.trace() * Mat3::Identity();
        return s;
      },
      [](const Mat3& q) { return Mat3(0.5 * q); }, 1.0, 3);
  CHECK((g.C() - m.C()).norm() < 1e-13);

  // non-symmetric tensor is rejected
  CHECK_THROWS_AS(Material::general(
                      [](const Mat3& e) {
                        Mat3 s = e;
                        s(0, 0) += 3.0 * e(1, 1);
                        return s;
                      },
                      [](const Mat3& q) { return q; }, 1.0, 2),
                  InputError);
  CHECK_THROWS_AS(Material::isotropic(1.0, -1.0, 1.0, 1.0, 2), InputError);
}

TEST_CASE("K is symmetric on random hp meshes")
{
  for (unsigned s = 0; s < 4; ++s)
  {
    const Mesh mesh = random_hp_mesh(s);
    const VSpace V(mesh, 2);
    const Material mat = Material::isotropic(1.3, 0.7, 0.4, 1.0, 2);
    const SparseMatrix K = assemble_stiffness(V, &mat);
    const SparseMatrix diff = K - SparseMatrix(K.transpose());
    double mx = 0.0;
    for (int k = 0; k < diff.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(diff, k); it; ++it)
        mx = std::max(mx, std::abs(it.value()));
    CHECK(mx < 1e-12);
  }
}

TEST_CASE("single element blocks")
{
  const Mesh mesh = all_free(make_rectangle_mesh(0.0, 2.0, 0.0, 1.5, 1, 1));
  const VSpace V(mesh, 2);
  const QSpace Q(mesh, 1.0);
  const double mu = 0.8, kh = 0.3;
  const Material mat = Material::isotropic(1.1, mu, kh, 1.0, 2);
  LoadData data;
  data.f = [](const Vec3&) { Vector v(2); v << 1.0, 0.0; return v; };
  const MixedSystem S = assemble_mixed(V, Q, mat, data);
  const Matrix C(S.C);
  REQUIRE(C.rows() == 2);
  CHECK((C - 3.0 * (2 * mu + kh) * Matrix::Identity(2, 2)).norm() < 1e-13);
  CHECK(S.D[0] == doctest::Approx(3.0));

  // load: each vertex x-dof carries |T|/4
  const Mesh unit = all_free(make_rectangle_mesh(0.0, 1.0, 0.0, 1.0, 1, 1));
  const VSpace V1(unit, 2);
  const Vector l = assemble_load(V1, data);
  REQUIRE(l.size() == 8);
  for (int i = 0; i < 4; ++i)
  {
    CHECK(l[2 * i] == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(std::abs(l[2 * i + 1]) < 1e-15);
  }
}

TEST_CASE("Neumann traction integrates to the facet length")
{
  Mesh mesh = with_boundary_tags(make_rectangle_mesh(0.0, 2.0, 0.0, 1.0, 3, 2), [](const Vec3& x) {
    return x[0] > 2.0 - 1e-9 ? BoundaryTag::neumann : BoundaryTag::dirichlet;
  });
  mesh = with_uniform_degree(mesh, 2);
  // all-Neumann version to read off the total force through a constant field
  const Mesh free = all_free(mesh);
  const VSpace V(free, 2);
  LoadData data;
  data.g = [](const Vec3& x, const Vec3& n) {
    Vector v(2);
    v << (x[0] > 2.0 - 1e-9 ? n[0] : 0.0), 0.0;
    return v;
  };
  const Vector l = assemble_load(V, data);
  const Vector ones = interpolate_linear(V, [](const Vec3&) { Vector v(2); v << 1.0, 0.0; return v; });
  CHECK(l.dot(ones) == doctest::Approx(1.0).epsilon(1e-13));
}

TEST_CASE("quadrature functional")
{
  const Mesh lsh = random_hp_mesh(3);
  CHECK(quadrature_functional(lsh, [](ElementId, const Vec3&) { return 1.0; }) ==
        doctest::Approx(3.0).epsilon(1e-13));

  const Mesh sq = with_uniform_degree(make_rectangle_mesh(0.0, 1.0, 0.0, 1.0, 2, 3), 3);
  const double v = quadrature_functional(sq, [&](ElementId e, const Vec3& xh) {
    const Vec3 x = sq.element_map(e).map(xh);
    return x[0] * x[0] * x[1] * x[1];
  });
  CHECK(std::abs(v - 1.0 / 9.0) < 1e-13);

  // p = 1: midpoint value times |T| is exact for linear data
  const Mesh m1 = make_rectangle_mesh(0.0, 1.0, 0.0, 2.0, 2, 2);
  const double lin = quadrature_functional(m1, [&](ElementId e, const Vec3& xh) {
    const Vec3 x = m1.element_map(e).map(xh);
    return 1.0 + 2.0 * x[0] - x[1];
  });
  CHECK(lin == doctest::Approx(2.0 + 2.0 - 2.0).epsilon(1e-13));
}

TEST_CASE("discrete plasticity functional")
{
  const Mesh mesh = random_hp_mesh(5);
  const QSpace Q(mesh, 2.0);
  const int L = Q.L();
  CHECK(discrete_plasticity(Q, Vector::Zero(Q.num_dofs())) == 0.0);

  Vector q = Vector::Zero(Q.num_dofs());
  for (int i = 0; i < Q.num_scalar_dofs(); ++i)
    q[L * i] = 1.0;
  CHECK(discrete_plasticity(Q, q) == doctest::Approx(2.0 * 3.0).epsilon(1e-13));

  // psi_hp decouples into sum_i sigma_i D_i |q_i|
  std::mt19937 rng(7);
  const Vector r = random_vector(Q.num_dofs(), rng);
  double sum = 0.0;
  for (int i = 0; i < Q.num_scalar_dofs(); ++i)
    sum += Q.bounds()[i] * Q.weights()[i] * r.segment(L * i, L).norm();
  CHECK(discrete_plasticity(Q, r) == doctest::Approx(sum).epsilon(1e-12));

  // independent re-evaluation: explicit Gauss loop
  double ref = 0.0;
  for (ElementId e : mesh.active_elements())
  {
    const int p = mesh.degree(e);
    const ElementMap map = mesh.element_map(e);
    if (p == 1)
    {
      ref += 2.0 * map.volume() * Q.value(r, e, Vec3::Zero()).norm();
      continue;
    }
    const auto& g = poly::gauss_rule(p);
    for (int a = 0; a < p; ++a)
      for (int b = 0; b < p; ++b)
      {
        const Vec3 x(g.points[a], g.points[b], 0.0);
        ref += g.weights[a] * g.weights[b] * map.det_jacobian(x) * 2.0 * Q.value(r, e, x).norm();
      }
  }
  CHECK(discrete_plasticity(Q, r) == doctest::Approx(ref).epsilon(1e-13));
}

TEST_CASE("assembled form matches direct quadrature")
{
  for (unsigned s = 0; s < 3; ++s)
  {
    const Mesh mesh = random_hp_mesh(10 + s, 5);
    const VSpace V(mesh, 2);
    const QSpace Q(mesh, 1.0);
    const Material mat = Material::isotropic(2.0, 1.0, 0.5, 1.0, 2);
    const MixedSystem S = assemble_mixed(V, Q, mat, LoadData{});
    std::mt19937 rng(s);
    for (int t = 0; t < 5; ++t)
    {
      const Vector v = random_vector(V.num_dofs(), rng), w = random_vector(V.num_dofs(), rng);
      const Vector q = random_vector(Q.num_dofs(), rng), tau = random_vector(Q.num_dofs(), rng);
      const double a = form_from_blocks(S, v, q, w, tau);
      const double b = form_by_quadrature(V, Q, mat, v, q, w, tau);
      CHECK(std::abs(a - b) <= 1e-10 * std::abs(b));
    }
  }
}

TEST_CASE("3D blocks match direct quadrature")
{
  Mesh mesh = refine_element(make_box_mesh(Vec3::Zero(), Vec3::Ones(), 2, 1, 1), 0);
  for (ElementId e : mesh.active_elements())
    mesh.set_degree_in_place(e, 1 + e % 3);
  const VSpace V(mesh, 3);
  const QSpace Q(mesh, 1.0);
  const Material mat = Material::isotropic(1.0, 1.5, 0.5, 1.0, 3);
  const MixedSystem S = assemble_mixed(V, Q, mat, LoadData{});
  std::mt19937 rng(3);
  const Vector v = random_vector(V.num_dofs(), rng), w = random_vector(V.num_dofs(), rng);
  const Vector q = random_vector(Q.num_dofs(), rng), tau = random_vector(Q.num_dofs(), rng);
  const double b = form_by_quadrature(V, Q, mat, v, q, w, tau);
  CHECK(std::abs(form_from_blocks(S, v, q, w, tau) - b) <= 1e-10 * std::abs(b));
}

TEST_CASE("rigid body motions are in the kernel of K")
{
  const Mesh mesh = all_free(random_hp_mesh(21));
  const VSpace V(mesh, 2);
  const Material mat = Material::isotropic(1.0, 1.0, 1.0, 1.0, 2);
  const SparseMatrix K = assemble_stiffness(V, &mat);
  const Vector r1 = interpolate_linear(V, [](const Vec3& x) { Vector v(2); v << -x[1], x[0]; return v; });
  const Vector r2 = interpolate_linear(V, [](const Vec3&) { Vector v(2); v << 0.3, -1.0; return v; });
  CHECK((K * r1).norm() < 1e-10);
  CHECK((K * r2).norm() < 1e-10);
}

TEST_CASE("ellipticity and continuity of the block form")
{
  Mesh mesh = with_uniform_degree(make_rectangle_mesh(0.0, 1.0, 0.0, 1.0, 2, 2), 2);
  mesh = with_boundary_tags(mesh, [](const Vec3& x) {
    return x[0] < 1e-9 ? BoundaryTag::dirichlet : BoundaryTag::neumann;
  });
  const VSpace V(mesh, 2);
  const QSpace Q(mesh, 1.0);
  const Material mat = Material::isotropic(1.0, 0.6, 0.2, 1.0, 2);
  const MixedSystem S = assemble_mixed(V, Q, mat, LoadData{});
  const int n = V.num_dofs(), m = Q.num_dofs();
  Matrix A(n + m, n + m);
  A.topLeftCorner(n, n) = Matrix(S.K);
  A.topRightCorner(n, m) = -Matrix(S.B);
  A.bottomLeftCorner(m, n) = -Matrix(S.B).transpose();
  A.bottomRightCorner(m, m) = Matrix(S.C);
  Eigen::SelfAdjointEigenSolver<Matrix> es(A);
  CHECK(es.eigenvalues().minCoeff() > 0.0);

  // a <= 2 c_max (|eps|^2 + |q|^2) + h_max |q|^2
  const Material unit = Material::isotropic(0.0, 0.5, 1.0, 1.0, 2);
  const SparseMatrix E = assemble_stiffness(V, &unit);
  Matrix M = Matrix::Zero(m, m);
  for (ElementId e : mesh.active_elements())
  {
    const int o = Q.offset(e), nq = Q.local_size(e);
    for (int i = 0; i < nq; ++i)
      for (int j = 0; j < nq; ++j)
        for (int k = 0; k < Q.L(); ++k)
          M(Q.L() * (o + i) + k, Q.L() * (o + j) + k) = Q.mass(e)(i, j);
  }
  std::mt19937 rng(4);
  for (int t = 0; t < 20; ++t)
  {
    const Vector v = random_vector(n, rng), q = random_vector(m, rng);
    const double a = form_from_blocks(S, v, q, v, q);
    const double bound = 2.0 * mat.c_max() * (v.dot(E * v) + q.dot(M * q)) + mat.h_max() * q.dot(M * q);
    CHECK(a > 0.0);
    CHECK(a <= bound);
  }
}

TEST_CASE("energy")
{
  Mesh mesh = with_uniform_degree(make_rectangle_mesh(0.0, 2.0, 0.0, 1.0, 4, 2), 2);
  mesh = with_boundary_tags(mesh, [](const Vec3& x) {
    return x[0] < 1e-9 ? BoundaryTag::dirichlet : BoundaryTag::neumann;
  });
  const VSpace V(mesh, 2);
  const QSpace Q(mesh, 1e8);
  const Material mat = Material::isotropic(1.0, 1.0, 1.0, 1e8, 2);
  LoadData data;
  data.f = [](const Vec3& x) { Vector v(2); v << x[1], -1.0; return v; };
  const MixedSystem S = assemble_mixed(V, Q, mat, data);
  CHECK(energy(S, Q, Vector::Zero(V.num_dofs()), Vector::Zero(Q.num_dofs())) == 0.0);

  Eigen::SimplicialLDLT<SparseMatrix> ldlt(S.K);
  const Vector u = ldlt.solve(S.l);
  const Vector p0 = Vector::Zero(Q.num_dofs());
  const double E0 = energy(S, Q, u, p0);
  CHECK(E0 == doctest::Approx(-0.5 * S.l.dot(u)).epsilon(1e-12));

  std::mt19937 rng(9);
  for (int t = 0; t < 20; ++t)
  {
    const Vector du = 1e-3 * random_vector(V.num_dofs(), rng);
    CHECK(energy(S, Q, u + du, p0) >= E0);
  }
}

TEST_CASE("matrix market export")
{
  const Mesh mesh = make_rectangle_mesh(0.0, 1.0, 0.0, 1.0, 2, 2);
  const VSpace V(mesh, 1);
  const SparseMatrix K = assemble_stiffness(V, nullptr);
  const std::string path = "test_assembly_K.mtx";
  write_matrix_market(path, K);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "%%MatrixMarket matrix coordinate real general");
  int r = 0, c = 0, nnz = 0;
  in >> r >> c >> nnz;
  CHECK(r == K.rows());
  CHECK(nnz == K.nonZeros());
  in.close();
  std::remove(path.c_str());
}
