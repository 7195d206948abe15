#pragma once

#include "hpfem/types.hpp"

#include <utility>
#include <vector>

/// One-dimensional Legendre and integrated-Legendre polynomials, tensor shape
/// functions on the reference cube [-1,1]^d, Gauss-Legendre rules and the
/// Lagrange bases attached to Gauss points.
namespace hpfem::poly
{

inline constexpr int default_max_degree = 20;

/// Legendre polynomial L_j(t), normalized by L_j(1) = 1.
double legendre(int j, double t);

/// Value and first derivative of L_j at t.
std::pair<double, double> legendre_with_derivative(int j, double t);

/// Integrated Legendre family: psi_0 = (1-t)/2, psi_1 = (1+t)/2 and
/// psi_j = (L_j - L_{j-2}) / (2j - 1) for j >= 2, so that psi_j' = L_{j-1}.
double integrated_legendre(int j, double t);

/// Derivative of integrated_legendre.
double integrated_legendre_derivative(int j, double t);

/// Values, first and second derivatives of psi_0..psi_n at t.
struct Shape1D
{
  std::vector<double> value;
  std::vector<double> d1;
  std::vector<double> d2;
};
Shape1D integrated_legendre_all(int n, double t);

/// Tensor shape function psi_j(x) = prod_k psi_{j_k}(x_k).
double tensor_shape(const MultiIndex& j, const Vec3& x, int dim);

/// Gradient (reference coordinates) of the tensor shape function.
Vec3 tensor_shape_gradient(const MultiIndex& j, const Vec3& x, int dim);

/// Values, reference gradients and (optionally) reference Hessians of all tensor
/// shapes psi_j with 0 <= j_k <= p, indexed by flatten(j, p+1, dim).
struct ShapeTable
{
  Vector value;
  Matrix grad;              ///< n x 3
  std::vector<Mat3> hess;   ///< empty unless requested
};
ShapeTable tensor_shapes_all(int p, int dim, const Vec3& x, bool with_hessian = false);

/// One-dimensional Gauss-Legendre rule on [-1,1].
struct GaussRule1D
{
  std::vector<double> points;
  std::vector<double> weights;
};

/// n-point rule, exact for polynomials of degree 2n-1. Cached per n.
const GaussRule1D& gauss_rule(int n);

/// Tensor Gauss rule on [-1,1]^d with n points per direction.
struct GaussRule
{
  int dim = 0;
  int n = 0;
  std::vector<Vec3> points;
  std::vector<double> weights;
};
GaussRule tensor_gauss_rule(int n, int dim);

/// Gauss-Lobatto-like sampling points (Chebyshev extrema) for fits on [-1,1].
std::vector<double> chebyshev_lobatto_points(int n);

/// Lagrange basis in P_{p-1} per direction attached to the p Gauss points of
/// gauss_rule(p); the tensor basis has n = p^d functions. For p = 1 the basis is
/// the single constant function.
class GaussLagrangeBasis
{
public:
  GaussLagrangeBasis(int p, int dim);

  int degree() const { return p_; }
  int dim() const { return dim_; }
  int size() const { return ipow(p_, dim_); }

  /// Node of the k-th basis function (a tensor Gauss point).
  Vec3 node(int k) const;

  double value(int k, const Vec3& x) const;
  Vec3 gradient(int k, const Vec3& x) const;

  /// Values of all basis functions at x.
  void values(const Vec3& x, std::vector<double>& out) const;

private:
  // 1D barycentric Lagrange polynomial l_i and its derivative.
  double lagrange_1d(int i, double t) const;
  double lagrange_1d_derivative(int i, double t) const;

  int p_;
  int dim_;
  std::vector<double> nodes_;
  std::vector<double> bary_weights_;
};

} // namespace hpfem::poly
