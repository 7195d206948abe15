#include "hpfem/assembly.hpp"
#include "hpfem/parallel.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>

namespace hpfem
{

namespace
{

using Triplet = Eigen::Triplet<double>;

// Orthonormal basis of symmetric d x d matrices.
std::vector<Mat3> symmetric_basis(int d)
{
  std::vector<Mat3> out;
  for (int a = 0; a < d; ++a)
    for (int b = a; b < d; ++b)
    {
      Mat3 m = Mat3::Zero();
      if (a == b)
        m(a, a) = 1.0;
      else
        m(a, b) = m(b, a) = std::sqrt(0.5);
      out.push_back(m);
    }
  return out;
}

// Tensor built from a map on symmetric matrices; the input is symmetrized first.
Tensor4 tensor_from_map(const Material::TensorMap& f)
{
  Tensor4 T = Tensor4::Zero();
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
    {
      Mat3 E = Mat3::Zero();
      E(a, b) += 0.5;
      E(b, a) += 0.5;
      T.col(3 * a + b) = vec9(f(E));
    }
  return T;
}

// Leading d^2 x d^2 block in the ordering 3a+b -> d a + b.
Matrix restrict_tensor(const Tensor4& T, int d)
{
  Matrix R(d * d, d * d);
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b)
      for (int c = 0; c < d; ++c)
        for (int e = 0; e < d; ++e)
          R(d * a + b, d * c + e) = T(3 * a + b, 3 * c + e);
  return R;
}

std::pair<double, double> extreme_eigenvalues(const Tensor4& T, const std::vector<Mat3>& basis)
{
  const int n = static_cast<int>(basis.size());
  if (n == 0)
    return {0.0, 0.0};
  Matrix G(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      G(i, j) = vec9(basis[i]).dot(T * vec9(basis[j]));
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (G + G.transpose()));
  return {es.eigenvalues().minCoeff(), es.eigenvalues().maxCoeff()};
}

// Physical gradients of all local shapes (n x d) and the Jacobian determinant.
struct ShapeAtPoint
{
  Vector value;
  Matrix grad;
  double det = 0.0;
};

ShapeAtPoint shapes_at(const ElementMap& map, int p, int d, const Vec3& xhat)
{
  const auto s = poly::tensor_shapes_all(p, d, xhat);
  const Mat3 J = map.jacobian(xhat);
  const Matrix Jd = J.topLeftCorner(d, d);
  ShapeAtPoint out;
  out.value = s.value;
  out.det = Jd.determinant();
  out.grad = s.grad.leftCols(d) * Jd.inverse();
  return out;
}

// Deviatoric basis stacked as columns of a d^2 x L matrix.
Matrix phi_columns(int d)
{
  const auto& Phi = deviatoric_basis(d);
  Matrix P(d * d, static_cast<int>(Phi.size()));
  for (std::size_t l = 0; l < Phi.size(); ++l)
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b)
        P(d * a + b, static_cast<int>(l)) = Phi[l](a, b);
  return P;
}

// Strain-displacement matrix: column (ncomp*a + k) holds vec(e_k grad psi_a^T).
Matrix gradient_matrix(const Matrix& grad, int d)
{
  const int n = static_cast<int>(grad.rows());
  Matrix G = Matrix::Zero(d * d, d * n);
  for (int a = 0; a < n; ++a)
    for (int k = 0; k < d; ++k)
      for (int m = 0; m < d; ++m)
        G(d * k + m, d * a + k) = grad(a, m);
  return G;
}

// C_K expanded to vector fields (index ncomp * i + k).
Matrix expand_connectivity(const ConnectivityMatrix& cm, int ncomp)
{
  const int nd = static_cast<int>(cm.dofs.size());
  const int nl = static_cast<int>(cm.coeffs.cols());
  Matrix Cv = Matrix::Zero(nd * ncomp, nl * ncomp);
  for (int i = 0; i < nd; ++i)
    for (int a = 0; a < nl; ++a)
      if (cm.coeffs(i, a) != 0.0)
        for (int k = 0; k < ncomp; ++k)
          Cv(ncomp * i + k, ncomp * a + k) = cm.coeffs(i, a);
  return Cv;
}

SparseMatrix from_triplets(int rows, int cols, const std::vector<std::vector<Triplet>>& parts)
{
  std::size_t total = 0;
  for (const auto& p : parts)
    total += p.size();
  std::vector<Triplet> all;
  all.reserve(total);
  for (const auto& p : parts)
    all.insert(all.end(), p.begin(), p.end());
  SparseMatrix A(rows, cols);
  A.setFromTriplets(all.begin(), all.end());
  A.makeCompressed();
  return A;
}

void check_same_mesh(const VSpace& V, const QSpace& Q)
{
  if (V.mesh().dim() != Q.mesh().dim() || V.mesh().active_elements() != Q.mesh().active_elements())
    throw InputError("assembly: V and Q are built on different meshes");
  for (ElementId e : V.mesh().active_elements())
    if (V.mesh().degree(e) != Q.mesh().degree(e))
      throw InputError("assembly: V and Q disagree on element degrees");
}

} // namespace

// ------------------------------------------------------------------ Material

Material Material::isotropic(double lambda, double mu, double k_h, double sigma_y, int dim)
{
  if (dim < 1 || dim > 3)
    throw InputError("Material: dimension must be 1, 2 or 3");
  if (!(lambda >= 0.0) || !(mu > 0.0) || !(k_h > 0.0) || !(sigma_y > 0.0))
    throw InputError("Material: need lambda >= 0, mu > 0, k_h > 0, sigma_y > 0");
  Material m;
  m.dim_ = dim;
  m.lambda_ = lambda;
  m.mu_ = mu;
  m.k_h_ = k_h;
  m.sigma_y_ = sigma_y;
  m.isotropic_ = true;
  const int d = dim;
  m.C_ = tensor_from_map([lambda, mu, d](const Mat3& e) {
    Mat3 s = 2.0 * mu * e;
    s.topLeftCorner(d, d) += lambda * e.topLeftCorner(d, d).trace() * Eigen::MatrixXd::Identity(d, d);
    return s;
  });
  m.H_ = tensor_from_map([k_h](const Mat3& q) -> Mat3 { return k_h * q; });
  m.compute_bounds();
  return m;
}

Material Material::general(const TensorMap& C, const TensorMap& H, double sigma_y, int dim, unsigned seed)
{
  if (dim < 1 || dim > 3)
    throw InputError("Material: dimension must be 1, 2 or 3");
  if (!(sigma_y > 0.0))
    throw InputError("Material: sigma_y must be positive");
  Material m;
  m.dim_ = dim;
  m.sigma_y_ = sigma_y;
  m.C_ = tensor_from_map(C);
  m.H_ = tensor_from_map(H);
  m.compute_bounds();
  m.validate(seed);
  return m;
}

void Material::compute_bounds()
{
  std::tie(c_min_, c_max_) = extreme_eigenvalues(C_, symmetric_basis(dim_));
  if (dim_ > 1)
    std::tie(h_min_, h_max_) = extreme_eigenvalues(H_, deviatoric_basis(dim_));
  else
    std::tie(h_min_, h_max_) = extreme_eigenvalues(H_, symmetric_basis(dim_));
}

void Material::validate(unsigned seed, int samples) const
{
  std::mt19937 rng(seed);
  std::normal_distribution<double> N(0.0, 1.0);
  auto random_sym = [&] {
    Mat3 m = Mat3::Zero();
    for (int a = 0; a < dim_; ++a)
      for (int b = 0; b < dim_; ++b)
        m(a, b) = N(rng);
    return Mat3(0.5 * (m + m.transpose()));
  };
  auto random_dev = [&] {
    Mat3 m = random_sym();
    if (dim_ > 1)
      m.topLeftCorner(dim_, dim_) -= m.trace() / dim_ * Matrix::Identity(dim_, dim_);
    return m;
  };
  for (int s = 0; s < samples; ++s)
  {
    const Mat3 a = random_sym(), b = random_sym();
    const double scale = a.norm() * b.norm() * std::max(1.0, c_max_);
    const double ab = (apply_C(a).array() * b.array()).sum();
    const double ba = (apply_C(b).array() * a.array()).sum();
    if (std::abs(ab - ba) > 1e-12 * scale)
      throw InputError("Material: elasticity tensor is not symmetric");
    const Mat3 Ca = apply_C(a);
    if ((Ca - Ca.transpose()).norm() > 1e-12 * scale)
      throw InputError("Material: elasticity tensor does not map into symmetric matrices");
    if (!((Ca.array() * a.array()).sum() > 0.0))
      throw InputError("Material: elasticity tensor is not positive definite");

    const Mat3 q = random_dev(), r = random_dev();
    const double hs = q.norm() * r.norm() * std::max(1.0, h_max_);
    const double qr = (apply_H(q).array() * r.array()).sum();
    const double rq = (apply_H(r).array() * q.array()).sum();
    if (std::abs(qr - rq) > 1e-12 * hs)
      throw InputError("Material: hardening tensor is not symmetric");
    if (!((apply_H(q).array() * q.array()).sum() > 0.0))
      throw InputError("Material: hardening tensor is not positive definite");
  }
  if (!(c_min_ > 0.0) || !(h_min_ > 0.0))
    throw InputError("Material: tensors are not uniformly elliptic");
}

// ------------------------------------------------------------------ quadrature helpers

int stiffness_order(const Mesh& mesh, ElementId e)
{
  const int p = mesh.degree(e);
  return mesh.element_map(e).is_affine() ? p + 1 : p + 2;
}

std::pair<double, Vec3> facet_measure_normal(const ElementMap& map, int facet, const Vec3& xhat)
{
  const int d = map.dim();
  const int k = facet_direction(facet);
  const double s = facet_side(facet) ? 1.0 : -1.0;
  const Mat3 J = map.jacobian(xhat);
  const Matrix Jd = J.topLeftCorner(d, d);
  const double det = Jd.determinant();
  const Matrix JinvT = Jd.inverse().transpose();
  Vector nvec = s * JinvT.col(k);
  const double len = nvec.norm();
  Vec3 n = Vec3::Zero();
  n.head(d) = nvec / len;
  return {std::abs(det) * len, n};
}

// ------------------------------------------------------------------ stiffness and load

Matrix element_stiffness(const ElementMap& map, int p, int ncomp, const Material* material)
{
  const int d = map.dim();
  if (material && ncomp != d)
    throw InputError("element_stiffness: elasticity needs d components");
  const Matrix Cd = material ? restrict_tensor(material->C(), d) : Matrix();
  const auto rule = poly::tensor_gauss_rule(map.is_affine() ? p + 1 : p + 2, d);
  const int nl = ipow(p + 1, d);
  Matrix Aloc = Matrix::Zero(nl * ncomp, nl * ncomp);
  for (std::size_t q = 0; q < rule.points.size(); ++q)
  {
    const auto s = shapes_at(map, p, d, rule.points[q]);
    const double w = rule.weights[q] * std::abs(s.det);
    if (material)
    {
      const Matrix G = gradient_matrix(s.grad, d);
      Aloc.noalias() += w * G.transpose() * Cd * G;
    }
    else
    {
      const Matrix L = w * s.grad * s.grad.transpose();
      for (int k = 0; k < ncomp; ++k)
        for (int a = 0; a < nl; ++a)
          for (int b = 0; b < nl; ++b)
            Aloc(ncomp * a + k, ncomp * b + k) += L(a, b);
    }
  }
  return Aloc;
}

SparseMatrix assemble_stiffness(const VSpace& V, const Material* material)
{
  const Mesh& mesh = V.mesh();
  const int d = mesh.dim();
  const int nc = V.components();
  if (material && nc != d)
    throw InputError("assemble_stiffness: elasticity needs a vector space with d components");
  const auto& active = mesh.active_elements();
  std::vector<std::vector<Triplet>> parts(active.size());

  parallel_for(active.size(), [&](std::size_t idx) {
    const ElementId e = active[idx];
    const Matrix Aloc = element_stiffness(mesh.element_map(e), mesh.degree(e), nc, material);
    const auto& cm = V.connectivity(e);
    const Matrix Cv = expand_connectivity(cm, nc);
    const Matrix Gm = Cv * Aloc * Cv.transpose();
    auto& out = parts[idx];
    for (int i = 0; i < Gm.rows(); ++i)
      for (int j = 0; j < Gm.cols(); ++j)
        if (Gm(i, j) != 0.0)
          out.emplace_back(nc * cm.dofs[i / nc] + i % nc, nc * cm.dofs[j / nc] + j % nc, Gm(i, j));
  });
  return from_triplets(V.num_dofs(), V.num_dofs(), parts);
}

Vector element_load(const ElementMap& map, int p, int ncomp, const LoadData& data,
                    const std::array<BoundaryTag, 6>& facet_tags)
{
  const int d = map.dim();
  const int nl = ipow(p + 1, d);
  Vector bloc = Vector::Zero(nl * ncomp);
  auto add = [&](const Vector& shapes, const Vector& val, double w) {
    for (int a = 0; a < nl; ++a)
      for (int k = 0; k < ncomp; ++k)
        bloc[ncomp * a + k] += w * shapes[a] * val[k];
  };
  if (data.f)
  {
    const auto rule = poly::tensor_gauss_rule((map.is_affine() ? p + 1 : p + 2) + data.order_bump, d);
    for (std::size_t q = 0; q < rule.points.size(); ++q)
    {
      const Vec3& xh = rule.points[q];
      const auto s = poly::tensor_shapes_all(p, d, xh);
      const Vector fv = data.f(map.map(xh));
      if (fv.size() != ncomp)
        throw InputError("assemble_load: volume force has the wrong number of components");
      add(s.value, fv, rule.weights[q] * std::abs(map.det_jacobian(xh)));
    }
  }
  if (data.g)
  {
    for (int f = 0; f < 2 * d; ++f)
    {
      if (facet_tags[f] != BoundaryTag::neumann)
        continue;
      const int k = facet_direction(f);
      const double side = facet_side(f) ? 1.0 : -1.0;
      const auto frule = poly::tensor_gauss_rule(p + 2 + std::max(0, data.order_bump - 2), std::max(d - 1, 0));
      for (std::size_t q = 0; q < frule.points.size(); ++q)
      {
        Vec3 xh = Vec3::Zero();
        int c = 0;
        for (int m = 0; m < d; ++m)
          xh[m] = (m == k) ? side : frule.points[q][c++];
        const auto [meas, normal] = facet_measure_normal(map, f, xh);
        const auto s = poly::tensor_shapes_all(p, d, xh);
        const Vector gv = data.g(map.map(xh), normal);
        if (gv.size() != ncomp)
          throw InputError("assemble_load: traction has the wrong number of components");
        add(s.value, gv, frule.weights[q] * meas);
      }
    }
  }
  return bloc;
}

Vector assemble_load(const VSpace& V, const LoadData& data)
{
  const Mesh& mesh = V.mesh();
  const int nc = V.components();
  const auto& active = mesh.active_elements();
  std::vector<Vector> parts(active.size());

  parallel_for(active.size(), [&](std::size_t idx) {
    const ElementId e = active[idx];
    const Vector bloc = element_load(mesh.element_map(e), mesh.degree(e), nc, data, mesh.element(e).facet_tags);
    parts[idx] = expand_connectivity(V.connectivity(e), nc) * bloc;
  });

  Vector l = Vector::Zero(V.num_dofs());
  for (std::size_t idx = 0; idx < active.size(); ++idx)
  {
    const auto& cm = V.connectivity(active[idx]);
    for (int i = 0; i < parts[idx].size(); ++i)
      l[nc * cm.dofs[i / nc] + i % nc] += parts[idx][i];
  }
  return l;
}

// ------------------------------------------------------------------ mixed system

MixedSystem assemble_mixed(const VSpace& V, const QSpace& Q, const Material& material, const LoadData& data)
{
  check_same_mesh(V, Q);
  const Mesh& mesh = V.mesh();
  const int d = mesh.dim();
  if (V.components() != d)
    throw InputError("assemble_mixed: V must have d components");
  if (material.dim() != d)
    throw InputError("assemble_mixed: material dimension does not match the mesh");
  const int L = Q.L();
  const Matrix Cd = restrict_tensor(material.C(), d);
  const Matrix Hd = restrict_tensor(material.H(), d);
  const Matrix P = phi_columns(d);
  const Matrix CP = Cd * P;                              // d^2 x L
  const Matrix PCHP = P.transpose() * (Cd + Hd) * P;     // L x L

  MixedSystem S;
  S.K = assemble_stiffness(V, &material);
  S.l = assemble_load(V, data);
  S.D = Vector::Zero(Q.num_dofs());
  for (int i = 0; i < Q.num_scalar_dofs(); ++i)
    for (int k = 0; k < L; ++k)
      S.D[L * i + k] = Q.weights()[i];

  const auto& active = mesh.active_elements();
  std::vector<std::vector<Triplet>> bparts(active.size()), cparts(active.size());
  parallel_for(active.size(), [&](std::size_t idx) {
    const ElementId e = active[idx];
    const int p = mesh.degree(e);
    const ElementMap map = mesh.element_map(e);
    const auto& qb = Q.basis(e);
    const int nq = qb.size();
    const int nl = V.num_local(e);
    const int off = Q.offset(e);

    // C block: mass (x) Phi^T (C + H) Phi
    const Matrix& M = Q.mass(e);
    for (int i = 0; i < nq; ++i)
      for (int j = 0; j < nq; ++j)
        for (int k = 0; k < L; ++k)
          for (int l = 0; l < L; ++l)
          {
            const double v = M(i, j) * PCHP(k, l);
            if (v != 0.0)
              cparts[idx].emplace_back(L * (off + i) + k, L * (off + j) + l, v);
          }

    // B block: (C Phi_l phi_j, eps(e_k psi_a))
    Matrix Bloc = Matrix::Zero(nl * d, nq * L);
    const auto rule = poly::tensor_gauss_rule(stiffness_order(mesh, e), d);
    std::vector<double> phis;
    for (std::size_t q = 0; q < rule.points.size(); ++q)
    {
      const auto s = shapes_at(map, p, d, rule.points[q]);
      const double w = rule.weights[q] * std::abs(s.det);
      qb.values(rule.points[q], phis);
      const Matrix GtCP = gradient_matrix(s.grad, d).transpose() * CP; // (nl d) x L
      for (int j = 0; j < nq; ++j)
        Bloc.middleCols(L * j, L).noalias() += (w * phis[j]) * GtCP;
    }
    const auto& cm = V.connectivity(e);
    const Matrix Bg = expand_connectivity(cm, d) * Bloc;
    for (int i = 0; i < Bg.rows(); ++i)
      for (int j = 0; j < Bg.cols(); ++j)
        if (Bg(i, j) != 0.0)
          bparts[idx].emplace_back(d * cm.dofs[i / d] + i % d, L * off + j, Bg(i, j));
  });
  S.B = from_triplets(V.num_dofs(), Q.num_dofs(), bparts);
  S.C = from_triplets(Q.num_dofs(), Q.num_dofs(), cparts);
  return S;
}

double form_from_blocks(const MixedSystem& S, const Vector& v, const Vector& q, const Vector& w, const Vector& tau)
{
  return w.dot(S.K * v) - w.dot(S.B * q) - tau.dot(S.B.transpose() * v) + tau.dot(S.C * q);
}

double form_by_quadrature(const VSpace& V, const QSpace& Q, const Material& material, const Vector& v,
                          const Vector& q, const Vector& w, const Vector& tau)
{
  check_same_mesh(V, Q);
  const Mesh& mesh = V.mesh();
  const int d = mesh.dim();
  double total = 0.0;
  for (ElementId e : mesh.active_elements())
  {
    const ElementMap map = mesh.element_map(e);
    const int n = stiffness_order(mesh, e) + 2;
    const auto rule = poly::tensor_gauss_rule(n, d);
    for (std::size_t k = 0; k < rule.points.size(); ++k)
    {
      const Vec3& xh = rule.points[k];
      const double wq = rule.weights[k] * std::abs(map.det_jacobian(xh));
      Mat3 ev = Mat3::Zero(), ew = Mat3::Zero();
      ev.topLeftCorner(d, d) = strain(V.gradient(v, e, xh)).topLeftCorner(d, d);
      ew.topLeftCorner(d, d) = strain(V.gradient(w, e, xh)).topLeftCorner(d, d);
      const Mat3 qv = Q.value(q, e, xh);
      const Mat3 tv = Q.value(tau, e, xh);
      const Mat3 sig = material.stress(ev, qv);
      total += wq * ((sig.array() * (ew - tv).array()).sum() + (material.apply_H(qv).array() * tv.array()).sum());
    }
  }
  return total;
}

// ------------------------------------------------------------------ Q_hp, psi_hp, energy

double quadrature_functional(const Mesh& mesh, const std::function<double(ElementId, const Vec3&)>& f)
{
  const int d = mesh.dim();
  double total = 0.0;
  for (ElementId e : mesh.active_elements())
  {
    const int p = mesh.degree(e);
    const ElementMap map = mesh.element_map(e);
    if (p == 1)
    {
      total += map.volume() * f(e, Vec3::Zero());
      continue;
    }
    const auto rule = poly::tensor_gauss_rule(p, d);
    for (std::size_t k = 0; k < rule.points.size(); ++k)
      total += rule.weights[k] * std::abs(map.det_jacobian(rule.points[k])) * f(e, rule.points[k]);
  }
  return total;
}

double discrete_plasticity(const QSpace& Q, const Vector& q)
{
  if (q.size() != Q.num_dofs())
    throw InputError("discrete_plasticity: coefficient vector has the wrong size");
  const double sy = Q.yield_stress();
  return quadrature_functional(Q.mesh(), [&](ElementId e, const Vec3& xh) { return sy * Q.value(q, e, xh).norm(); });
}

double energy(const MixedSystem& S, const QSpace& Q, const Vector& v, const Vector& q)
{
  return 0.5 * form_from_blocks(S, v, q, v, q) + discrete_plasticity(Q, q) - S.l.dot(v);
}

// ------------------------------------------------------------------ export

void write_matrix_market(const std::string& path, const SparseMatrix& A)
{
  std::ofstream out(path);
  if (!out)
    throw InputError("cannot open " + path + " for writing");
  out << "%%MatrixMarket matrix coordinate real general\n";
  out << A.rows() << ' ' << A.cols() << ' ' << A.nonZeros() << '\n';
  out << std::setprecision(17);
  for (int k = 0; k < A.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(A, k); it; ++it)
      out << it.row() + 1 << ' ' << it.col() + 1 << ' ' << it.value() << '\n';
}

} // namespace hpfem
