#include "hpfem/estimator.hpp"
#include "hpfem/parallel.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <unordered_map>

namespace hpfem
{

namespace
{

Mat3 dev(const Mat3& m, int d)
{
  Mat3 r = m;
  if (d > 1)
    r.topLeftCorner(d, d) -= m.trace() / d * Matrix::Identity(d, d);
  return r;
}

double frob(const Mat3& a, const Mat3& b) { return (a.array() * b.array()).sum(); }

// Local coefficients of u and p on one element with point evaluation of the
// gradient, the stress and its divergence.
class LocalFields
{
public:
  LocalFields(const VSpace& V, const QSpace& Q, const Material& mat, const Vector& u, const Vector& p, ElementId e)
      : Q_(&Q), mat_(&mat), e_(e), d_(V.dim()), deg_(V.degree(e)), map_(V.mesh().element_map(e))
  {
    uloc_ = V.local_coefficients(u, e);
    const int nq = Q.local_size(e);
    const int L = Q.L();
    ploc_.resize(nq);
    for (int i = 0; i < nq; ++i)
      ploc_[i] = from_deviatoric_coords(p.segment(L * (Q.offset(e) + i), L), d_);
  }

  struct Point
  {
    Mat3 grad = Mat3::Zero();
    Mat3 p = Mat3::Zero();
    Mat3 sigma = Mat3::Zero();
    Vector div;
    double det = 0.0;
  };

  Point eval(const Vec3& xh, bool with_div) const
  {
    const int d = d_;
    Point out;
    const auto s = poly::tensor_shapes_all(deg_, d, xh, with_div);
    const Mat3 J = map_.jacobian(xh);
    const Matrix Jd = J.topLeftCorner(d, d);
    out.det = Jd.determinant();
    const Matrix G = Jd.inverse();
    const Matrix gref = uloc_.transpose() * s.grad.leftCols(d); // d x d
    out.grad.topLeftCorner(d, d) = gref * G;

    const auto& basis = Q_->basis(e_);
    std::vector<double> vals;
    basis.values(xh, vals);
    for (std::size_t i = 0; i < vals.size(); ++i)
      out.p += vals[i] * ploc_[i];
    out.sigma = mat_->stress(strain(out.grad), out.p);
    if (!with_div)
      return out;

    // physical Hessians H_k = G^T (Hhat_k - sum_m grad(k,m) F''_m) G
    const auto F2 = map_.second_derivatives(xh);
    std::array<Matrix, max_dim> H;
    for (int k = 0; k < d; ++k)
    {
      Matrix Hh = Matrix::Zero(d, d);
      for (int a = 0; a < uloc_.rows(); ++a)
        if (uloc_(a, k) != 0.0)
          Hh += uloc_(a, k) * s.hess[a].topLeftCorner(d, d);
      for (int m = 0; m < d; ++m)
        Hh -= out.grad(k, m) * F2[m].topLeftCorner(d, d);
      H[k] = G.transpose() * Hh * G;
    }
    // physical derivatives of p
    std::array<Mat3, max_dim> dp;
    for (auto& m : dp)
      m.setZero();
    for (std::size_t i = 0; i < vals.size(); ++i)
    {
      const Vec3 gr = basis.gradient(static_cast<int>(i), xh);
      for (int j = 0; j < d; ++j)
      {
        double c = 0.0;
        for (int r = 0; r < d; ++r)
          c += G(r, j) * gr[r];
        dp[j] += c * ploc_[i];
      }
    }
    const Tensor4& C = mat_->C();
    out.div = Vector::Zero(d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        for (int k = 0; k < d; ++k)
          for (int l = 0; l < d; ++l)
            out.div[i] += C(3 * i + j, 3 * k + l) * (H[k](j, l) - dp[j](k, l));
    return out;
  }

  const ElementMap& map() const { return map_; }
  int degree() const { return deg_; }

private:
  const QSpace* Q_;
  const Material* mat_;
  ElementId e_;
  int d_;
  int deg_;
  ElementMap map_;
  Matrix uloc_;
  std::vector<Mat3> ploc_;
};

// Tensor Legendre polynomials of degree <= p per direction in `dim` variables.
Vector legendre_tensor(int p, int dim, const Vec3& x)
{
  const int n = ipow(p + 1, dim);
  Vector v(n);
  for (int a = 0; a < n; ++a)
  {
    const MultiIndex j = unflatten(a, p + 1, dim);
    double prod = 1.0;
    for (int k = 0; k < dim; ++k)
      prod *= poly::legendre(j[k], x[k]);
    v[a] = prod;
  }
  return v;
}

// Weighted L2 projection of vector data sampled at quadrature points onto the
// tensor Legendre space; returns the projected values at the same points.
std::vector<Vector> project_samples(const std::vector<Vector>& basis, const std::vector<double>& w,
                                    const std::vector<Vector>& data)
{
  if (data.empty())
    return {};
  const int nb = static_cast<int>(basis[0].size());
  const int nc = static_cast<int>(data[0].size());
  Matrix M = Matrix::Zero(nb, nb), b = Matrix::Zero(nb, nc);
  for (std::size_t q = 0; q < basis.size(); ++q)
  {
    M.noalias() += w[q] * basis[q] * basis[q].transpose();
    b.noalias() += w[q] * basis[q] * data[q].transpose();
  }
  const Matrix c = M.ldlt().solve(b);
  std::vector<Vector> out(data.size());
  for (std::size_t q = 0; q < basis.size(); ++q)
    out[q] = c.transpose() * basis[q];
  return out;
}

// Reference point on facet `facet` of a (sub)box from tangential parameters t.
Vec3 facet_point(const RefBox& box, int facet, const Vec3& t, int d)
{
  const int k = facet_direction(facet);
  Vec3 x = Vec3::Zero();
  int c = 0;
  for (int m = 0; m < d; ++m)
    x[m] = (m == k) ? (facet_side(facet) ? 1.0 : -1.0) : t[c++];
  return box.map(x);
}

double tangential_scale(const RefBox& box, int facet, int d)
{
  double s = 1.0;
  for (int m = 0; m < d; ++m)
    if (m != facet_direction(facet))
      s *= 0.5 * (box.upper[m] - box.lower[m]);
  return s;
}

double part_diameter(const ElementMap& map, const RefBox& box, int facet, int d)
{
  if (d == 1)
    return 1.0;
  std::vector<Vec3> pts;
  for (int c = 0; c < (1 << (d - 1)); ++c)
  {
    Vec3 t = Vec3::Zero();
    for (int m = 0; m < d - 1; ++m)
      t[m] = (c >> m) & 1 ? 1.0 : -1.0;
    pts.push_back(map.map(facet_point(box, facet, t, d)));
  }
  double h = 0.0;
  for (std::size_t a = 0; a < pts.size(); ++a)
    for (std::size_t b = a + 1; b < pts.size(); ++b)
      h = std::max(h, (pts[a] - pts[b]).norm());
  return h;
}

} // namespace

double IndicatorField::min_part() const
{
  double m = 0.0;
  for (const Vector* v : {&volume, &jump, &neumann, &dev_defect, &mu_defect, &dissipation, &osc})
    if (v->size())
      m = std::min(m, v->minCoeff());
  return m;
}

Mat3 mu_star(const Mat3& lambda, const Mat3& p, double sigma_y)
{
  const Mat3 hat = lambda + 0.5 * p;
  const double n = hat.norm();
  if (n <= sigma_y)
    return hat;
  return (sigma_y / n) * hat;
}

Vector stress_divergence(const VSpace& V, const QSpace& Q, const Material& material, const Vector& u,
                         const Vector& p, ElementId e, const Vec3& xhat)
{
  return LocalFields(V, Q, material, u, p, e).eval(xhat, true).div;
}

Mat3 stress_at(const VSpace& V, const QSpace& Q, const Material& material, const Vector& u, const Vector& p,
               ElementId e, const Vec3& xhat)
{
  return LocalFields(V, Q, material, u, p, e).eval(xhat, false).sigma;
}

IndicatorField estimate(const VSpace& V, const QSpace& Q, const Material& material, const LoadData& data,
                        const SolutionTriple& x, const MultiplierField& mu)
{
  const Mesh& mesh = V.mesh();
  const int d = mesh.dim();
  if (V.components() != d)
    throw InputError("estimate: V must have d components");
  const auto& active = mesh.active_elements();
  const std::size_t n = active.size();

  std::unordered_map<ElementId, std::size_t> index;
  for (std::size_t i = 0; i < n; ++i)
    index[active[i]] = i;
  std::vector<std::unique_ptr<LocalFields>> fields(n);
  parallel_for(n, [&](std::size_t i) {
    fields[i] = std::make_unique<LocalFields>(V, Q, material, x.u, x.p, active[i]);
  });

  IndicatorField ind;
  ind.elements = active;
  for (Vector* v : {&ind.volume, &ind.jump, &ind.neumann, &ind.dev_defect, &ind.mu_defect, &ind.dissipation,
                    &ind.osc})
    *v = Vector::Zero(static_cast<int>(n));

  const double sy = Q.yield_stress();
  parallel_for(n, [&](std::size_t idx) {
    const ElementId e = active[idx];
    const LocalFields& F = *fields[idx];
    const int p = F.degree();
    const ElementMap& map = F.map();
    const double hT = map.diameter();
    const int nq = p + 2 + (map.is_affine() ? 0 : 1);

    // volume residual and plasticity terms
    const auto rule = poly::tensor_gauss_rule(nq, d);
    std::vector<Vector> basis, fvals, divs;
    std::vector<double> w;
    for (std::size_t q = 0; q < rule.points.size(); ++q)
    {
      const Vec3& xh = rule.points[q];
      const auto pt = F.eval(xh, true);
      const double wq = rule.weights[q] * std::abs(pt.det);
      w.push_back(wq);
      basis.push_back(legendre_tensor(p, d, xh));
      fvals.push_back(data.f ? data.f(map.map(xh)) : Vector::Zero(d));
      divs.push_back(pt.div);

      const Mat3 lam = Q.value_dual(x.lambda, e, xh);
      const Mat3 t = dev(pt.sigma - material.apply_H(pt.p), d) - lam;
      const Mat3 m = mu ? mu(e, xh, lam, pt.p) : mu_star(lam, pt.p, sy);
      ind.dev_defect[idx] += wq * t.squaredNorm();
      ind.mu_defect[idx] += wq * (m - lam).squaredNorm();
      ind.dissipation[idx] += wq * (sy * pt.p.norm() - frob(m, pt.p));
    }
    const auto fN = project_samples(basis, w, fvals);
    double res = 0.0, osc = 0.0;
    for (std::size_t q = 0; q < w.size(); ++q)
    {
      res += w[q] * (fN[q] + divs[q]).squaredNorm();
      osc += w[q] * (fvals[q] - fN[q]).squaredNorm();
    }
    ind.volume[idx] = hT * hT / (p * p) * res;
    ind.osc[idx] = hT * hT / (p * p) * osc;

    // facet terms
    for (const auto& fn : mesh.facet_neighbors(e))
    {
      const bool interior = fn.neighbor >= 0;
      const bool neumann = !interior && fn.tag == BoundaryTag::neumann;
      if (!interior && !neumann)
        continue;
      const int pn = interior ? mesh.degree(fn.neighbor) : p;
      const int pe = std::max(p, pn);
      const double he = part_diameter(map, fn.own_box, fn.facet, d);
      const double ts = tangential_scale(fn.own_box, fn.facet, d);
      const auto frule = poly::tensor_gauss_rule(pe + 2, d - 1);
      if (interior)
      {
        const LocalFields& G = *fields.at(index.at(fn.neighbor));
        double jsum = 0.0;
        for (std::size_t q = 0; q < frule.points.size(); ++q)
        {
          const Vec3 xo = facet_point(fn.own_box, fn.facet, frule.points[q], d);
          const auto [meas, normal] = facet_measure_normal(map, fn.facet, xo);
          const Mat3 so = F.eval(xo, false).sigma;
          const Mat3 sn = G.eval(fn.to_neighbor(xo), false).sigma;
          jsum += frule.weights[q] * ts * meas * ((so - sn) * normal).squaredNorm();
        }
        ind.jump[idx] += he / (2.0 * pe) * jsum;
      }
      else
      {
        std::vector<Vector> fb, gv, sn;
        std::vector<double> fw;
        for (std::size_t q = 0; q < frule.points.size(); ++q)
        {
          const Vec3 xo = facet_point(fn.own_box, fn.facet, frule.points[q], d);
          const auto [meas, normal] = facet_measure_normal(map, fn.facet, xo);
          fw.push_back(frule.weights[q] * ts * meas);
          fb.push_back(legendre_tensor(p, d - 1, frule.points[q]));
          gv.push_back(data.g ? data.g(map.map(xo), normal) : Vector::Zero(d));
          sn.push_back((F.eval(xo, false).sigma * normal).head(d));
        }
        const auto gN = project_samples(fb, fw, gv);
        double nsum = 0.0, gosc = 0.0;
        for (std::size_t q = 0; q < fw.size(); ++q)
        {
          nsum += fw[q] * (sn[q] - gN[q]).squaredNorm();
          gosc += fw[q] * (gv[q] - gN[q]).squaredNorm();
        }
        ind.neumann[idx] += he / p * nsum;
        ind.osc[idx] += he / p * gosc;
      }
    }
  });
  return ind;
}

double plasticity_error_contribution(const QSpace& Q, const Vector& lambda, const Vector& p, const MultiplierField& mu)
{
  const Mesh& mesh = Q.mesh();
  const int d = mesh.dim();
  const double sy = Q.yield_stress();
  double total = 0.0;
  for (ElementId e : mesh.active_elements())
  {
    const ElementMap map = mesh.element_map(e);
    const int nq = mesh.degree(e) + 2 + (map.is_affine() ? 0 : 1);
    const auto rule = poly::tensor_gauss_rule(nq, d);
    for (std::size_t q = 0; q < rule.points.size(); ++q)
    {
      const Vec3& xh = rule.points[q];
      const double w = rule.weights[q] * std::abs(map.det_jacobian(xh));
      const Mat3 lam = Q.value_dual(lambda, e, xh);
      const Mat3 pv = Q.value(p, e, xh);
      const Mat3 m = mu ? mu(e, xh, lam, pv) : mu_star(lam, pv, sy);
      total += w * ((m - lam).squaredNorm() + sy * pv.norm() - frob(m, pv));
    }
  }
  return total;
}

std::vector<ElementId> mark_dorfler(const std::vector<ElementId>& ids, const Vector& indicators, double theta)
{
  if (!(theta > 0.0 && theta <= 1.0))
    throw InputError("mark_dorfler: theta must lie in (0, 1]");
  if (static_cast<int>(ids.size()) != indicators.size())
    throw InputError("mark_dorfler: size mismatch");
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (indicators[a] != indicators[b])
      return indicators[a] > indicators[b];
    return ids[a] < ids[b];
  });
  const double total = indicators.sum();
  std::vector<ElementId> marked;
  if (!(total > 0.0))
    return marked;
  double acc = 0.0;
  for (std::size_t k : order)
  {
    if (indicators[k] <= 0.0)
      break;
    if (theta < 1.0 && acc >= theta * total)
      break;
    marked.push_back(ids[k]);
    acc += indicators[k];
  }
  return marked;
}

std::pair<Vector, Vector> solve_auxiliary(const MixedSystem& S, const Vector& lambda)
{
  const int n = static_cast<int>(S.K.rows());
  const int m = static_cast<int>(S.C.rows());
  if (lambda.size() != m)
    throw InputError("solve_auxiliary: multiplier has the wrong size");
  std::vector<Eigen::Triplet<double>> t;
  auto add = [&](const SparseMatrix& A, int r0, int c0, double s, bool tr) {
    for (int k = 0; k < A.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(A, k); it; ++it)
        t.emplace_back(r0 + (tr ? it.col() : it.row()), c0 + (tr ? it.row() : it.col()), s * it.value());
  };
  add(S.K, 0, 0, 1.0, false);
  add(S.B, 0, n, -1.0, false);
  add(S.B, n, 0, -1.0, true);
  add(S.C, n, n, 1.0, false);
  SparseMatrix A(n + m, n + m);
  A.setFromTriplets(t.begin(), t.end());
  Vector rhs(n + m);
  rhs << S.l, -S.D.cwiseProduct(lambda);
  Eigen::SimplicialLDLT<SparseMatrix> ldlt(A);
  if (ldlt.info() != Eigen::Success)
    throw SolverError("solve_auxiliary: singular block system");
  const Vector z = ldlt.solve(rhs);
  return {z.head(n), z.tail(m)};
}

ReferenceError reference_error(const VSpace& Vref, const QSpace& Qref, const SolutionTriple& ref, const VSpace& V,
                               const QSpace& Q, const SolutionTriple& x, const Material& material)
{
  const Mesh& fine = Vref.mesh();
  const Mesh& coarse = V.mesh();
  const int d = fine.dim();
  const auto& active = fine.active_elements();
  struct Part
  {
    double e2 = 0.0, l2 = 0.0, p2 = 0.0;
  };
  std::vector<Part> parts(active.size());
  parallel_for(active.size(), [&](std::size_t idx) {
    const ElementId ef = active[idx];
    const auto anc = fine.ancestor_active_in(coarse, ef);
    if (!anc)
      throw InputError("reference_error: reference mesh does not refine the coarse mesh");
    const ElementId ec = anc->first;
    const RefBox box = anc->second;
    const LocalFields Ff(Vref, Qref, material, ref.u, ref.p, ef);
    const LocalFields Fc(V, Q, material, x.u, x.p, ec);
    const ElementMap map = fine.element_map(ef);
    const int nq = std::max(fine.degree(ef), coarse.degree(ec)) + 2 + (map.is_affine() ? 0 : 1);
    const auto rule = poly::tensor_gauss_rule(nq, d);
    Part part;
    for (std::size_t q = 0; q < rule.points.size(); ++q)
    {
      const Vec3& xf = rule.points[q];
      const Vec3 xc = box.map(xf);
      const auto a = Ff.eval(xf, false);
      const auto b = Fc.eval(xc, false);
      const double w = rule.weights[q] * std::abs(a.det);
      const Mat3 du = strain(a.grad - b.grad);
      const Mat3 dq = a.p - b.p;
      part.e2 += w * (frob(material.apply_C(du - dq), du - dq) + frob(material.apply_H(dq), dq));
      part.l2 += w * (Qref.value_dual(ref.lambda, ef, xf) - Q.value_dual(x.lambda, ec, xc)).squaredNorm();
      part.p2 += w * dq.squaredNorm();
    }
    parts[idx] = part;
  });
  ReferenceError r;
  double p2 = 0.0;
  for (const auto& p : parts)
  {
    r.energy2 += p.e2;
    r.lambda2 += p.l2;
    p2 += p.p2;
  }
  r.p_l2 = std::sqrt(p2);
  return r;
}

void write_indicators_csv(const std::string& path, const IndicatorField& ind, const std::vector<ElementId>& marked)
{
  std::ofstream out(path);
  if (!out)
    throw InputError("cannot open " + path + " for writing");
  out << "element,eta2,plasticity,marked\n" << std::setprecision(12);
  const Vector total = ind.total(), plast = ind.plasticity();
  for (std::size_t i = 0; i < ind.elements.size(); ++i)
  {
    const bool m = std::find(marked.begin(), marked.end(), ind.elements[i]) != marked.end();
    out << ind.elements[i] << ',' << total[static_cast<int>(i)] << ',' << plast[static_cast<int>(i)] << ','
        << (m ? 1 : 0) << '\n';
  }
}

} // namespace hpfem
