#pragma once

#include "hpfem/mesh.hpp"
#include "hpfem/polybasis.hpp"

#include <map>
#include <vector>

namespace hpfem
{

/// Orthonormal (Frobenius) basis of the symmetric trace-free d x d matrices;
/// L = (d-1)(d+2)/2 entries, empty for d = 1.
const std::vector<Mat3>& deviatoric_basis(int dim);
inline int deviatoric_size(int dim) { return (dim - 1) * (dim + 2) / 2; }

/// Coordinates of the deviatoric part of a symmetric matrix in deviatoric_basis.
Vector deviatoric_coords(const Mat3& m, int dim);
Mat3 from_deviatoric_coords(const Vector& c, int dim);

/// Global dofs with support on an element and the coefficients c_ij of the local
/// tensor shapes (local index flatten(j, p+1, d)).
struct ConnectivityMatrix
{
  std::vector<int> dofs;
  Matrix coeffs; ///< dofs.size() x n_local
};

/// Geometric entity carrying global scalar dofs.
struct DofInfo
{
  int entity_dim = 0;
  /// Canonical multi-index (components >= 2 in the entity directions).
  MultiIndex index{0, 0, 0};
  /// Element owning the dof if it is an interior (cell) dof, -1 otherwise.
  ElementId cell = -1;
  Vec3 center = Vec3::Zero();
};

/// Coefficients expressing the parent shape psi_j composed with the embedding of
/// the child box in the child's shape basis of degree r per direction (local
/// index flatten(m, r+1, d)). Computed per direction: endpoint values for the
/// vertex part and Legendre projections of the derivative for the bubbles.
Vector constraint_coeffs(const MultiIndex& j, const RefBox& child_box, int dim, int r);

/// One-dimensional version: psi_j(a + (b-a)(t+1)/2) = sum_m c_m psi_m(t), m <= r.
std::vector<double> constraint_coeffs_1d(int j, double a, double b, int r);

/// Continuous hp space V_hp with homogeneous Dirichlet conditions and
/// constrained approximation at hanging nodes. Vector-valued spaces use the
/// dof index ncomp * i + k for scalar dof i and component k.
class VSpace
{
public:
  VSpace() = default;
  VSpace(const Mesh& mesh, int components);

  const Mesh& mesh() const { return mesh_; }
  int dim() const { return mesh_.dim(); }
  int components() const { return ncomp_; }
  int num_scalar_dofs() const { return static_cast<int>(dofs_.size()); }
  int num_dofs() const { return ncomp_ * num_scalar_dofs(); }
  int degree(ElementId e) const { return mesh_.degree(e); }
  int num_local(ElementId e) const { return ipow(degree(e) + 1, dim()); }

  const ConnectivityMatrix& connectivity(ElementId e) const { return conn_.at(e); }
  const DofInfo& dof_info(int i) const { return dofs_.at(i); }

  /// Scalar dofs whose support is contained in the closure of e (cell dofs).
  std::vector<int> interior_dofs(ElementId e) const;

  /// Local shape coefficients of the field on e; `coeffs` has num_dofs() entries.
  /// Result is n_local x components.
  Matrix local_coefficients(const Vector& coeffs, ElementId e) const;

  /// Field value (components entries) at a reference point.
  Vector value(const Vector& coeffs, ElementId e, const Vec3& xhat) const;
  /// Physical gradient, components x d (leading block of a 3x3 matrix).
  Mat3 gradient(const Vector& coeffs, ElementId e, const Vec3& xhat) const;

  /// Value of a single global scalar basis function.
  double basis_value(int scalar_dof, ElementId e, const Vec3& xhat) const;

  /// Number of hanging local nodes encountered while building.
  int num_hanging_nodes() const { return num_hanging_; }

private:
  Mesh mesh_;
  int ncomp_ = 1;
  std::vector<DofInfo> dofs_;
  std::map<ElementId, ConnectivityMatrix> conn_;
  int num_hanging_ = 0;
};

/// Discontinuous space Q_hp of S_{d,0}-valued fields: on T the Lagrange basis of
/// degree p_T - 1 attached to the p_T^d Gauss points (a constant if p_T = 1),
/// with biorthogonal partners and the weights D_i and bounds sigma_i.
/// Tensor coefficients use index L * i + k for scalar dof i and Phi_k.
class QSpace
{
public:
  QSpace() = default;
  QSpace(const Mesh& mesh, double yield_stress);

  const Mesh& mesh() const { return mesh_; }
  int dim() const { return mesh_.dim(); }
  int num_scalar_dofs() const { return n_total_; }
  int L() const { return deviatoric_size(dim()); }
  int num_dofs() const { return L() * n_total_; }

  /// First scalar dof of element e; its dofs are offset(e) .. offset(e)+n_T-1.
  int offset(ElementId e) const { return offset_.at(e); }
  int local_size(ElementId e) const { return ipow(mesh_.degree(e), dim()); }
  const poly::GaussLagrangeBasis& basis(ElementId e) const;

  /// D_i = (phi_i, 1).
  const Vector& weights() const { return D_; }
  /// sigma_i = D_i^{-1} (sigma_y, phi_i).
  const Vector& bounds() const { return sigma_; }
  double yield_stress() const { return sigma_y_; }

  /// Biorthogonal coefficients A_T: varphi_{offset+k} = sum_l A_T(k,l) phi_{offset+l}.
  const Matrix& biorthogonal(ElementId e) const { return bior_.at(e); }
  /// Local mass matrix (phi_k, phi_l)_T.
  const Matrix& mass(ElementId e) const { return mass_.at(e); }

  /// Value of the scalar basis function phi_i (i local to e) at xhat.
  double phi(ElementId e, int k, const Vec3& xhat) const;
  /// Tensor field sum_i sum_k q_{L i + k} Phi_k phi_i at xhat on e.
  Mat3 value(const Vector& q, ElementId e, const Vec3& xhat) const;
  /// Same with the biorthogonal functions varphi_i.
  Mat3 value_dual(const Vector& mu, ElementId e, const Vec3& xhat) const;

private:
  Mesh mesh_;
  double sigma_y_ = 1.0;
  int n_total_ = 0;
  std::map<ElementId, int> offset_;
  std::map<int, poly::GaussLagrangeBasis> bases_;
  std::map<ElementId, Matrix> bior_;
  std::map<ElementId, Matrix> mass_;
  Vector D_;
  Vector sigma_;
};

} // namespace hpfem
