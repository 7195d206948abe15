#include "hpfem/polybasis.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>

namespace hpfem::poly
{

std::pair<double, double> legendre_with_derivative(int j, double t)
{
  if (j == 0)
    return {1.0, 0.0};
  double l_prev = 1.0, l = t;
  double d_prev = 0.0, d = 1.0;
  for (int k = 2; k <= j; ++k)
  {
    const double l_next = ((2 * k - 1) * t * l - (k - 1) * l_prev) / k;
    // derivative recurrence: L_k' = L_{k-2}' + (2k-1) L_{k-1}
    const double d_next = d_prev + (2 * k - 1) * l;
    l_prev = l;
    l = l_next;
    d_prev = d;
    d = d_next;
  }
  return {l, d};
}

double legendre(int j, double t)
{
  return legendre_with_derivative(j, t).first;
}

double integrated_legendre(int j, double t)
{
  if (j == 0)
    return 0.5 * (1.0 - t);
  if (j == 1)
    return 0.5 * (1.0 + t);
  return (legendre(j, t) - legendre(j - 2, t)) / (2 * j - 1);
}

double integrated_legendre_derivative(int j, double t)
{
  if (j == 0)
    return -0.5;
  if (j == 1)
    return 0.5;
  return legendre(j - 1, t);
}

Shape1D integrated_legendre_all(int n, double t)
{
  Shape1D s;
  s.value.assign(n + 1, 0.0);
  s.d1.assign(n + 1, 0.0);
  s.d2.assign(n + 1, 0.0);

  // Legendre values and derivatives up to degree n
  std::vector<double> l(n + 1, 0.0), dl(n + 1, 0.0);
  l[0] = 1.0;
  if (n >= 1)
  {
    l[1] = t;
    dl[1] = 1.0;
  }
  for (int k = 2; k <= n; ++k)
  {
    l[k] = ((2 * k - 1) * t * l[k - 1] - (k - 1) * l[k - 2]) / k;
    dl[k] = dl[k - 2] + (2 * k - 1) * l[k - 1];
  }

  s.value[0] = 0.5 * (1.0 - t);
  s.d1[0] = -0.5;
  if (n >= 1)
  {
    s.value[1] = 0.5 * (1.0 + t);
    s.d1[1] = 0.5;
  }
  for (int j = 2; j <= n; ++j)
  {
    s.value[j] = (l[j] - l[j - 2]) / (2 * j - 1);
    s.d1[j] = l[j - 1];
    s.d2[j] = dl[j - 1];
  }
  return s;
}

double tensor_shape(const MultiIndex& j, const Vec3& x, int dim)
{
  double v = 1.0;
  for (int k = 0; k < dim; ++k)
    v *= integrated_legendre(j[k], x[k]);
  return v;
}

Vec3 tensor_shape_gradient(const MultiIndex& j, const Vec3& x, int dim)
{
  Vec3 g = Vec3::Zero();
  std::array<double, max_dim> v{}, dv{};
  for (int k = 0; k < dim; ++k)
  {
    v[k] = integrated_legendre(j[k], x[k]);
    dv[k] = integrated_legendre_derivative(j[k], x[k]);
  }
  for (int k = 0; k < dim; ++k)
  {
    double prod = dv[k];
    for (int m = 0; m < dim; ++m)
      if (m != k)
        prod *= v[m];
    g[k] = prod;
  }
  return g;
}

ShapeTable tensor_shapes_all(int p, int dim, const Vec3& x, bool with_hessian)
{
  std::array<Shape1D, max_dim> s;
  for (int k = 0; k < dim; ++k)
    s[k] = integrated_legendre_all(p, x[k]);
  const int n = ipow(p + 1, dim);
  ShapeTable t;
  t.value.resize(n);
  t.grad = Matrix::Zero(n, 3);
  if (with_hessian)
    t.hess.assign(n, Mat3::Zero());
  for (int i = 0; i < n; ++i)
  {
    const MultiIndex j = unflatten(i, p + 1, dim);
    double v = 1.0;
    for (int k = 0; k < dim; ++k)
      v *= s[k].value[j[k]];
    t.value[i] = v;
    for (int a = 0; a < dim; ++a)
    {
      double g = 1.0;
      for (int k = 0; k < dim; ++k)
        g *= (k == a) ? s[k].d1[j[k]] : s[k].value[j[k]];
      t.grad(i, a) = g;
      if (!with_hessian)
        continue;
      for (int b = a; b < dim; ++b)
      {
        double h = 1.0;
        for (int k = 0; k < dim; ++k)
        {
          if (k == a && k == b)
            h *= s[k].d2[j[k]];
          else if (k == a || k == b)
            h *= s[k].d1[j[k]];
          else
            h *= s[k].value[j[k]];
        }
        t.hess[i](a, b) = h;
        t.hess[i](b, a) = h;
      }
    }
  }
  return t;
}

namespace
{

GaussRule1D compute_gauss_rule(int n)
{
  GaussRule1D rule;
  rule.points.resize(n);
  rule.weights.resize(n);
  if (n == 1)
  {
    rule.points[0] = 0.0;
    rule.weights[0] = 2.0;
    return rule;
  }

  // Golub-Welsch: eigenvalues of the symmetric Jacobi matrix
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k)
  {
    const double beta = k / std::sqrt(4.0 * k * k - 1.0);
    jacobi(k, k - 1) = beta;
    jacobi(k - 1, k) = beta;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
  for (int i = 0; i < n; ++i)
  {
    // polish the root by Newton on L_n
    double x = eig.eigenvalues()[i];
    for (int it = 0; it < 4; ++it)
    {
      const auto [l, dl] = legendre_with_derivative(n, x);
      x -= l / dl;
    }
    const auto [l, dl] = legendre_with_derivative(n, x);
    rule.points[i] = x;
    rule.weights[i] = 2.0 / ((1.0 - x * x) * dl * dl);
  }
  // exact symmetry
  for (int i = 0; i < n / 2; ++i)
  {
    const double x = 0.5 * (rule.points[n - 1 - i] - rule.points[i]);
    const double w = 0.5 * (rule.weights[n - 1 - i] + rule.weights[i]);
    rule.points[i] = -x;
    rule.points[n - 1 - i] = x;
    rule.weights[i] = w;
    rule.weights[n - 1 - i] = w;
  }
  if (n % 2 == 1)
    rule.points[n / 2] = 0.0;
  return rule;
}

constexpr int max_cached_rule = 64;

} // namespace

const GaussRule1D& gauss_rule(int n)
{
  static const std::vector<GaussRule1D> cache = [] {
    std::vector<GaussRule1D> rules(max_cached_rule + 1);
    for (int k = 1; k <= max_cached_rule; ++k)
      rules[k] = compute_gauss_rule(k);
    return rules;
  }();
  if (n < 1 || n > max_cached_rule)
    throw InputError("gauss_rule: number of points out of range: " + std::to_string(n));
  return cache[n];
}

GaussRule tensor_gauss_rule(int n, int dim)
{
  const auto& r = gauss_rule(n);
  GaussRule rule;
  rule.dim = dim;
  rule.n = n;
  const int total = ipow(n, dim);
  rule.points.reserve(total);
  rule.weights.reserve(total);
  for (int q = 0; q < total; ++q)
  {
    const MultiIndex idx = unflatten(q, n, dim);
    Vec3 x = Vec3::Zero();
    double w = 1.0;
    for (int k = 0; k < dim; ++k)
    {
      x[k] = r.points[idx[k]];
      w *= r.weights[idx[k]];
    }
    rule.points.push_back(x);
    rule.weights.push_back(w);
  }
  return rule;
}

std::vector<double> chebyshev_lobatto_points(int n)
{
  if (n == 1)
    return {0.0};
  std::vector<double> pts(n);
  for (int i = 0; i < n; ++i)
    pts[i] = -std::cos(std::numbers::pi * i / (n - 1));
  return pts;
}

GaussLagrangeBasis::GaussLagrangeBasis(int p, int dim) : p_(p), dim_(dim)
{
  if (p < 1)
    throw InputError("GaussLagrangeBasis: degree must be >= 1");
  nodes_ = gauss_rule(p).points;
  bary_weights_.assign(p, 1.0);
  for (int i = 0; i < p; ++i)
    for (int k = 0; k < p; ++k)
      if (k != i)
        bary_weights_[i] /= (nodes_[i] - nodes_[k]);
}

Vec3 GaussLagrangeBasis::node(int k) const
{
  const MultiIndex idx = unflatten(k, p_, dim_);
  Vec3 x = Vec3::Zero();
  for (int d = 0; d < dim_; ++d)
    x[d] = nodes_[idx[d]];
  return x;
}

double GaussLagrangeBasis::lagrange_1d(int i, double t) const
{
  if (p_ == 1)
    return 1.0;
  // second (true) barycentric form
  double num = 0.0, den = 0.0;
  for (int k = 0; k < p_; ++k)
  {
    const double diff = t - nodes_[k];
    if (diff == 0.0)
      return k == i ? 1.0 : 0.0;
    const double term = bary_weights_[k] / diff;
    den += term;
    if (k == i)
      num = term;
  }
  return num / den;
}

double GaussLagrangeBasis::lagrange_1d_derivative(int i, double t) const
{
  if (p_ == 1)
    return 0.0;
  double sum = 0.0;
  for (int m = 0; m < p_; ++m)
  {
    if (m == i)
      continue;
    double prod = 1.0 / (nodes_[i] - nodes_[m]);
    for (int k = 0; k < p_; ++k)
      if (k != i && k != m)
        prod *= (t - nodes_[k]) / (nodes_[i] - nodes_[k]);
    sum += prod;
  }
  return sum;
}

double GaussLagrangeBasis::value(int k, const Vec3& x) const
{
  const MultiIndex idx = unflatten(k, p_, dim_);
  double v = 1.0;
  for (int d = 0; d < dim_; ++d)
    v *= lagrange_1d(idx[d], x[d]);
  return v;
}

Vec3 GaussLagrangeBasis::gradient(int k, const Vec3& x) const
{
  const MultiIndex idx = unflatten(k, p_, dim_);
  std::array<double, max_dim> v{}, dv{};
  for (int d = 0; d < dim_; ++d)
  {
    v[d] = lagrange_1d(idx[d], x[d]);
    dv[d] = lagrange_1d_derivative(idx[d], x[d]);
  }
  Vec3 g = Vec3::Zero();
  for (int d = 0; d < dim_; ++d)
  {
    double prod = dv[d];
    for (int m = 0; m < dim_; ++m)
      if (m != d)
        prod *= v[m];
    g[d] = prod;
  }
  return g;
}

void GaussLagrangeBasis::values(const Vec3& x, std::vector<double>& out) const
{
  std::array<std::vector<double>, max_dim> v;
  for (int d = 0; d < dim_; ++d)
  {
    v[d].resize(p_);
    for (int i = 0; i < p_; ++i)
      v[d][i] = lagrange_1d(i, x[d]);
  }
  out.resize(size());
  for (int k = 0; k < size(); ++k)
  {
    const MultiIndex idx = unflatten(k, p_, dim_);
    double val = 1.0;
    for (int d = 0; d < dim_; ++d)
      val *= v[d][idx[d]];
    out[k] = val;
  }
}

} // namespace hpfem::poly
