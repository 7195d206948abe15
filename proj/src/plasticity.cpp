#include "hpfem/plasticity.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>

namespace hpfem
{

namespace
{

using Triplet = Eigen::Triplet<double>;

void append(std::vector<Triplet>& out, const SparseMatrix& A, int r0, int c0, double s, bool transpose)
{
  for (int k = 0; k < A.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(A, k); it; ++it)
    {
      const int r = static_cast<int>(transpose ? it.col() : it.row());
      const int c = static_cast<int>(transpose ? it.row() : it.col());
      out.emplace_back(r0 + r, c0 + c, s * it.value());
    }
}

// Constant part of the Newton matrix: [[K, -B, 0], [-B^T, C, D], [0, 0, 0]].
std::vector<Triplet> constant_blocks(const MixedSystem& S)
{
  const int n = static_cast<int>(S.K.rows());
  const int m = static_cast<int>(S.C.rows());
  std::vector<Triplet> t;
  t.reserve(S.K.nonZeros() + 2 * S.B.nonZeros() + S.C.nonZeros() + m);
  append(t, S.K, 0, 0, 1.0, false);
  append(t, S.B, 0, n, -1.0, false);
  append(t, S.B, n, 0, -1.0, true);
  append(t, S.C, n, n, 1.0, false);
  for (int i = 0; i < m; ++i)
    t.emplace_back(n + i, n + m + i, S.D[i]);
  return t;
}

void add_chi_blocks(std::vector<Triplet>& t, const QSpace& Q, const SolutionTriple& x, double rho, int n,
                    bool damped)
{
  const int L = Q.L();
  const int m = Q.num_dofs();
  Matrix dp, dl;
  for (int i = 0; i < Q.num_scalar_dofs(); ++i)
  {
    chi_jacobian(x.p.segment(L * i, L), x.lambda.segment(L * i, L), Q.bounds()[i], rho, dp, dl, damped);
    for (int a = 0; a < L; ++a)
      for (int b = 0; b < L; ++b)
      {
        // explicit zeros keep the sparsity pattern fixed between iterations
        t.emplace_back(n + m + L * i + a, n + L * i + b, dp(a, b));
        t.emplace_back(n + m + L * i + a, n + m + L * i + b, dl(a, b));
      }
  }
}

int active_count(const QSpace& Q, const SolutionTriple& x, double rho)
{
  const int L = Q.L();
  int count = 0;
  for (int i = 0; i < Q.num_scalar_dofs(); ++i)
    if ((x.lambda.segment(L * i, L) + rho * x.p.segment(L * i, L)).norm() >= Q.bounds()[i])
      ++count;
  return count;
}

// Line-search merit: the chi blocks divided by max{sigma_i, |lambda_i + rho p_i|}
// and weighted by D_i, i.e. D_i (lambda_i - P(lambda_i + rho p_i)) with the
// projection P onto the ball of radius sigma_i. Same zero set as F.
double merit_value(const Vector& F, const QSpace& Q, const SolutionTriple& x, double rho, int n)
{
  const int L = Q.L();
  const int m = Q.num_dofs();
  double sum = F.head(n + m).squaredNorm();
  for (int i = 0; i < Q.num_scalar_dofs(); ++i)
  {
    const double zn = (x.lambda.segment(L * i, L) + rho * x.p.segment(L * i, L)).norm();
    const double w = Q.weights()[i] / std::max(Q.bounds()[i], zn);
    sum += w * w * F.segment(n + m + L * i, L).squaredNorm();
  }
  return 0.5 * sum;
}

SolutionTriple split(const Vector& z, int n, int m)
{
  return {z.head(n), z.segment(n, m), z.tail(m)};
}

Vector join(const SolutionTriple& x)
{
  Vector z(x.u.size() + x.p.size() + x.lambda.size());
  z << x.u, x.p, x.lambda;
  return z;
}

} // namespace

// ------------------------------------------------------------------ chi

Vector chi(const Vector& p, const Vector& lambda, double sigma, double rho)
{
  const Vector z = lambda + rho * p;
  const double n = z.norm();
  if (n >= sigma)
    return n * lambda - sigma * z;
  return -sigma * rho * p;
}

void chi_jacobian(const Vector& p, const Vector& lambda, double sigma, double rho, Matrix& dp, Matrix& dlambda,
                  bool damped)
{
  const int L = static_cast<int>(p.size());
  const Vector z = lambda + rho * p;
  const double n = z.norm();
  const Matrix I = Matrix::Identity(L, L);
  if (n >= sigma && n > 0.0)
  {
    const double ln = lambda.norm();
    const double scale = (damped && ln > sigma) ? sigma / ln : 1.0;
    const Matrix lz = scale * lambda * z.transpose() / n;
    dlambda = (n - sigma) * I + lz;
    dp = rho * lz - sigma * rho * I;
  }
  else
  {
    dlambda = Matrix::Zero(L, L);
    dp = -sigma * rho * I;
  }
}

bool complementarity_holds(const Vector& p, const Vector& lambda, double sigma, double tol)
{
  return lambda.norm() <= sigma + tol && std::abs(lambda.dot(p) - sigma * p.norm()) <= tol;
}

double effective_rho(const NewtonConfig& config, const Material& material)
{
  if (!(config.rho > 0.0))
    throw InputError("NewtonConfig: rho must be positive");
  if (!config.scale_rho)
    return config.rho;
  const double scale = material.is_isotropic() ? 2.0 * material.mu() + material.k_h()
                                               : material.c_min() + material.h_min();
  return config.rho * scale;
}

// ------------------------------------------------------------------ F and its Jacobian

Vector residual(const MixedSystem& S, const QSpace& Q, const SolutionTriple& x, double rho)
{
  const int n = static_cast<int>(S.K.rows());
  const int m = Q.num_dofs();
  const int L = Q.L();
  if (x.u.size() != n || x.p.size() != m || x.lambda.size() != m)
    throw InputError("residual: inconsistent coefficient vector sizes");
  Vector F(n + 2 * m);
  F.head(n) = S.K * x.u - S.B * x.p - S.l;
  F.segment(n, m) = -(S.B.transpose() * x.u) + S.C * x.p + S.D.cwiseProduct(x.lambda);
  for (int i = 0; i < Q.num_scalar_dofs(); ++i)
    F.segment(n + m + L * i, L) = chi(x.p.segment(L * i, L), x.lambda.segment(L * i, L), Q.bounds()[i], rho);
  return F;
}

SparseMatrix generalized_jacobian(const MixedSystem& S, const QSpace& Q, const SolutionTriple& x, double rho)
{
  const int n = static_cast<int>(S.K.rows());
  const int m = Q.num_dofs();
  auto t = constant_blocks(S);
  add_chi_blocks(t, Q, x, rho, n, false);
  SparseMatrix J(n + 2 * m, n + 2 * m);
  J.setFromTriplets(t.begin(), t.end());
  J.makeCompressed();
  return J;
}

SolutionTriple elastic_initial_guess(const MixedSystem& S, const QSpace& Q)
{
  Eigen::SimplicialLDLT<SparseMatrix> ldlt(S.K);
  if (ldlt.info() != Eigen::Success)
    throw SolverError("elastic solve: stiffness matrix is singular");
  SolutionTriple x;
  x.u = ldlt.solve(S.l);
  x.p = Vector::Zero(Q.num_dofs());
  x.lambda = Vector::Zero(Q.num_dofs());
  return x;
}

// ------------------------------------------------------------------ Newton

NewtonResult solve_semismooth_newton(const MixedSystem& S, const QSpace& Q, const Material& material,
                                     const NewtonConfig& config, const SolutionTriple* initial)
{
  if (!(config.tol > 0.0) || config.max_iter < 1)
    throw InputError("NewtonConfig: tol and max_iter must be positive");
  const int n = static_cast<int>(S.K.rows());
  const int m = Q.num_dofs();
  double rho = effective_rho(config, material);

  NewtonResult res;
  SolutionTriple x = initial ? *initial : elastic_initial_guess(S, Q);
  Vector F = residual(S, Q, x, rho);
  const auto base = constant_blocks(S);

  Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>> lu;
  bool analyzed = false;
  bool shifted = false;

  for (int it = 0;; ++it)
  {
    const double fn = F.lpNorm<Eigen::Infinity>();
    res.trace.residual.push_back(fn);
    res.trace.active.push_back(active_count(Q, x, rho));
    if (fn < config.tol)
    {
      res.converged = true;
      break;
    }
    if (it == config.max_iter)
    {
      res.diagnostic = "maximum number of iterations reached";
      break;
    }

    auto t = base;
    add_chi_blocks(t, Q, x, rho, n, config.damped_jacobian);
    SparseMatrix J(n + 2 * m, n + 2 * m);
    J.setFromTriplets(t.begin(), t.end());
    J.makeCompressed();
    if (!analyzed)
    {
      lu.analyzePattern(J);
      analyzed = true;
    }
    lu.factorize(J);
    if (lu.info() != Eigen::Success)
    {
      if (shifted)
        throw SolverError("semi-smooth Newton: singular Newton matrix");
      // the zero set of chi does not depend on rho; retry once with a shifted value
      shifted = true;
      rho *= 2.0;
      res.diagnostic = "singular Newton matrix, rho doubled";
      F = residual(S, Q, x, rho);
      --it;
      res.trace.residual.pop_back();
      res.trace.active.pop_back();
      continue;
    }
    const Vector dz = lu.solve(-F);

    const Vector z = join(x);
    const double merit = merit_value(F, Q, x, rho, n);
    double step = 1.0;
    bool accepted = false;
    SolutionTriple xn;
    Vector Fn;
    while (step >= config.t_min)
    {
      xn = split(z + step * dz, n, m);
      Fn = residual(S, Q, xn, rho);
      if (!config.line_search || merit_value(Fn, Q, xn, rho, n) <= (1.0 - 2.0 * config.armijo_c * step) * merit)
      {
        accepted = true;
        break;
      }
      step *= config.shrink;
    }
    if (!accepted)
    {
      res.diagnostic = "line search failed";
      break;
    }
    x = std::move(xn);
    F = std::move(Fn);
    res.trace.step.push_back(step);
    ++res.iterations;
  }
  res.solution = std::move(x);
  res.residual = res.trace.residual.back();
  res.rho_effective = rho;
  return res;
}

// ------------------------------------------------------------------ recovery and checks

Vector recover_multiplier(const VSpace& V, const QSpace& Q, const Material& material, const Vector& u,
                          const Vector& p)
{
  const Mesh& mesh = V.mesh();
  const int d = mesh.dim();
  const int L = Q.L();
  const auto& Phi = deviatoric_basis(d);
  Vector lambda = Vector::Zero(Q.num_dofs());
  std::vector<double> phis;
  for (ElementId e : mesh.active_elements())
  {
    const int deg = mesh.degree(e);
    const ElementMap map = mesh.element_map(e);
    const Matrix loc = V.local_coefficients(u, e);
    const auto rule = poly::tensor_gauss_rule(stiffness_order(mesh, e) + 1, d);
    const int off = Q.offset(e);
    for (std::size_t q = 0; q < rule.points.size(); ++q)
    {
      const Vec3& xh = rule.points[q];
      const auto s = poly::tensor_shapes_all(deg, d, xh);
      const Mat3 J = map.jacobian(xh);
      const Matrix Jd = J.topLeftCorner(d, d);
      const double w = rule.weights[q] * std::abs(Jd.determinant());
      Mat3 grad = Mat3::Zero();
      grad.topLeftCorner(d, d) = (loc.transpose() * s.grad.leftCols(d)) * Jd.inverse();
      const Mat3 pv = Q.value(p, e, xh);
      Mat3 t = material.stress(strain(grad), pv) - material.apply_H(pv);
      if (d > 1)
        t.topLeftCorner(d, d) -= t.trace() / d * Matrix::Identity(d, d);
      Q.basis(e).values(xh, phis);
      for (std::size_t i = 0; i < phis.size(); ++i)
        for (int k = 0; k < L; ++k)
          lambda[L * (off + static_cast<int>(i)) + k] += w * phis[i] * (t.array() * Phi[k].array()).sum();
    }
  }
  for (int i = 0; i < Q.num_scalar_dofs(); ++i)
    lambda.segment(L * i, L) /= Q.weights()[i];
  return lambda;
}

ComplementarityReport check_complementarity(const QSpace& Q, const Vector& p, const Vector& lambda)
{
  const int L = Q.L();
  ComplementarityReport r;
  r.plastic.resize(Q.num_scalar_dofs());
  r.max_infeasibility = -std::numeric_limits<double>::infinity();
  const double pscale = 1.0 + (p.size() ? p.lpNorm<Eigen::Infinity>() : 0.0);
  for (int i = 0; i < Q.num_scalar_dofs(); ++i)
  {
    const Vector pi = p.segment(L * i, L), li = lambda.segment(L * i, L);
    const double s = Q.bounds()[i];
    const double ln = li.norm();
    r.max_infeasibility = std::max(r.max_infeasibility, ln - s);
    r.max_complementarity = std::max(r.max_complementarity, std::abs(li.dot(pi) - s * pi.norm()));
    const bool plastic = ln >= s * (1.0 - 1e-8);
    r.plastic[i] = plastic;
    if (plastic)
    {
      ++r.num_plastic;
      const Vector dir = li / ln;
      const double c = pi.dot(dir);
      if (c < -1e-8 * pscale || (pi - c * dir).norm() > 1e-8 * pscale)
        ++r.num_misclassified;
    }
    else if (pi.norm() > 1e-8 * pscale)
    {
      ++r.num_misclassified;
    }
  }
  if (Q.num_scalar_dofs() == 0)
    r.max_infeasibility = 0.0;
  return r;
}

double dual_pairing(const QSpace& Q, const Vector& mu, const Vector& q)
{
  const Mesh& mesh = Q.mesh();
  const int d = mesh.dim();
  double total = 0.0;
  for (ElementId e : mesh.active_elements())
  {
    const ElementMap map = mesh.element_map(e);
    const auto rule = poly::tensor_gauss_rule(mesh.degree(e) + 2, d);
    for (std::size_t k = 0; k < rule.points.size(); ++k)
    {
      const Vec3& xh = rule.points[k];
      total += rule.weights[k] * std::abs(map.det_jacobian(xh)) *
               (Q.value_dual(mu, e, xh).array() * Q.value(q, e, xh).array()).sum();
    }
  }
  return total;
}

double infsup_witness(const QSpace& Q, const Vector& mu)
{
  const Mesh& mesh = Q.mesh();
  const int d = mesh.dim();
  const int L = Q.L();
  const auto& Phi = deviatoric_basis(d);
  double sup2 = 0.0, norm2 = 0.0;
  std::vector<double> phis;
  for (ElementId e : mesh.active_elements())
  {
    const ElementMap map = mesh.element_map(e);
    const auto rule = poly::tensor_gauss_rule(mesh.degree(e) + 2, d);
    const int nq = Q.local_size(e);
    // g = ((mu, Phi_k phi_i))_{i,k} on this element
    Matrix g = Matrix::Zero(nq, L);
    for (std::size_t k = 0; k < rule.points.size(); ++k)
    {
      const Vec3& xh = rule.points[k];
      const double w = rule.weights[k] * std::abs(map.det_jacobian(xh));
      const Mat3 mv = Q.value_dual(mu, e, xh);
      norm2 += w * mv.squaredNorm();
      Q.basis(e).values(xh, phis);
      for (int i = 0; i < nq; ++i)
        for (int l = 0; l < L; ++l)
          g(i, l) += w * phis[i] * (mv.array() * Phi[l].array()).sum();
    }
    // Riesz representer q = M^{-1} g; sup = sqrt(g^T M^{-1} g), attained at v = 0
    const Matrix q = Q.mass(e).ldlt().solve(g);
    sup2 += (g.array() * q.array()).sum();
  }
  if (!(norm2 > 0.0))
    throw InputError("infsup_witness: mu must be nonzero");
  return std::sqrt(sup2 / norm2);
}

bool in_lambda_strong(const QSpace& Q, const Vector& mu, double tol)
{
  const Mesh& mesh = Q.mesh();
  const double s = Q.yield_stress();
  for (ElementId e : mesh.active_elements())
  {
    const auto& b = Q.basis(e);
    for (int k = 0; k < b.size(); ++k)
      if (Q.value_dual(mu, e, b.node(k)).norm() > s * (1.0 + tol))
        return false;
  }
  return true;
}

bool in_lambda_weak(const QSpace& Q, const Vector& mu, const std::vector<Vector>& tests, double tol)
{
  for (const Vector& q : tests)
  {
    const double lhs = dual_pairing(Q, mu, q);
    const double rhs = discrete_plasticity(Q, q);
    if (lhs > rhs + tol * (std::abs(lhs) + std::abs(rhs)))
      return false;
  }
  return true;
}

std::vector<Vector> sample_weak_tests(const QSpace& Q, const Vector& mu, int count, unsigned seed)
{
  const int L = Q.L();
  const int N = Q.num_scalar_dofs();
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::normal_distribution<double> G(0.0, 1.0);
  std::vector<Vector> out;
  out.reserve(count);
  // mu in the primal basis: coefficients of the field at the Gauss nodes
  Vector target = Vector::Zero(Q.num_dofs());
  for (ElementId e : Q.mesh().active_elements())
  {
    const auto& b = Q.basis(e);
    for (int k = 0; k < b.size(); ++k)
    {
      const Vector c = deviatoric_coords(Q.value_dual(mu, e, b.node(k)), Q.dim());
      target.segment(L * (Q.offset(e) + k), L) = c;
    }
  }
  for (int t = 0; t < count; ++t)
  {
    const double prob = std::exp(std::log(1.0 / std::max(N, 1)) * U(rng));
    Vector q = Vector::Zero(Q.num_dofs());
    for (int i = 0; i < N; ++i)
    {
      if (U(rng) > prob)
        continue;
      Vector dir = target.segment(L * i, L);
      const double dn = dir.norm();
      if (dn > 0.0)
        dir /= dn;
      for (int k = 0; k < L; ++k)
        dir[k] += 0.2 * G(rng);
      q.segment(L * i, L) = (0.5 + U(rng)) * dir;
    }
    out.push_back(std::move(q));
  }
  return out;
}

double vi_residual(const MixedSystem& S, const QSpace& Q, const SolutionTriple& x, const Vector& v, const Vector& q)
{
  const Vector dv = v - x.u, dq = q - x.p;
  return form_from_blocks(S, x.u, x.p, dv, dq) + discrete_plasticity(Q, q) - discrete_plasticity(Q, x.p) -
         S.l.dot(dv);
}

void write_trace_csv(const std::string& path, const NewtonTrace& trace)
{
  std::ofstream out(path);
  if (!out)
    throw InputError("cannot open " + path + " for writing");
  out << "iteration,residual,step,active\n" << std::setprecision(12);
  for (std::size_t k = 0; k < trace.residual.size(); ++k)
  {
    out << k << ',' << trace.residual[k] << ',';
    if (k > 0 && k - 1 < trace.step.size())
      out << trace.step[k - 1];
    out << ',' << (k < trace.active.size() ? trace.active[k] : 0) << '\n';
  }
}

} // namespace hpfem
