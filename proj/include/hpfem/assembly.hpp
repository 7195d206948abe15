#pragma once

#include "hpfem/space.hpp"

#include <Eigen/Sparse>

#include <functional>
#include <string>

namespace hpfem
{

using SparseMatrix = Eigen::SparseMatrix<double>;
/// Fourth-order tensor acting on 3x3 matrices stored row-major as 9-vectors.
using Tensor4 = Eigen::Matrix<double, 9, 9>;

inline Eigen::Matrix<double, 9, 1> vec9(const Mat3& m)
{
  Eigen::Matrix<double, 9, 1> v;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      v[3 * a + b] = m(a, b);
  return v;
}

inline Mat3 mat9(const Eigen::Matrix<double, 9, 1>& v)
{
  Mat3 m;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      m(a, b) = v[3 * a + b];
  return m;
}

/// Infinitesimal strain: symmetric part of a gradient.
inline Mat3 strain(const Mat3& grad) { return 0.5 * (grad + grad.transpose()); }

/// Elasticity tensor C, hardening tensor H and yield stress.
class Material
{
public:
  using TensorMap = std::function<Mat3(const Mat3&)>;

  /// C e = lambda tr(e) I + 2 mu e, H q = k_h q.
  static Material isotropic(double lambda, double mu, double k_h, double sigma_y, int dim);
  /// General tensors given as maps on symmetric matrices; checked for symmetry
  /// and ellipticity on random samples.
  static Material general(const TensorMap& C, const TensorMap& H, double sigma_y, int dim, unsigned seed = 0);

  int dim() const { return dim_; }
  double sigma_y() const { return sigma_y_; }
  double lambda() const { return lambda_; }
  double mu() const { return mu_; }
  double k_h() const { return k_h_; }
  bool is_isotropic() const { return isotropic_; }

  const Tensor4& C() const { return C_; }
  const Tensor4& H() const { return H_; }
  Mat3 apply_C(const Mat3& e) const { return mat9(C_ * vec9(e)); }
  Mat3 apply_H(const Mat3& q) const { return mat9(H_ * vec9(q)); }
  /// sigma = C(eps - p).
  Mat3 stress(const Mat3& eps, const Mat3& p) const { return apply_C(eps - p); }

  /// Smallest / largest eigenvalue of C and H on symmetric d x d matrices.
  double c_min() const { return c_min_; }
  double c_max() const { return c_max_; }
  double h_min() const { return h_min_; }
  double h_max() const { return h_max_; }

  /// Symmetry and ellipticity checks on `samples` random symmetric tensors.
  void validate(unsigned seed = 0, int samples = 10) const;

  Material with_sigma_y(double s) const
  {
    Material m = *this;
    m.sigma_y_ = s;
    return m;
  }

private:
  void compute_bounds();

  int dim_ = 2;
  double sigma_y_ = 1.0;
  double lambda_ = 0.0, mu_ = 0.0, k_h_ = 0.0;
  bool isotropic_ = false;
  Tensor4 C_ = Tensor4::Zero();
  Tensor4 H_ = Tensor4::Zero();
  double c_min_ = 0.0, c_max_ = 0.0, h_min_ = 0.0, h_max_ = 0.0;
};

/// Volume force f and surface traction g (evaluated on Neumann facets with the
/// outward unit normal). Empty functions mean zero data.
struct LoadData
{
  std::function<Vector(const Vec3&)> f;
  std::function<Vector(const Vec3& x, const Vec3& normal)> g;
  /// Extra Gauss points per direction for data integrals.
  int order_bump = 2;
};

/// Blocks of the mixed elastoplastic system.
struct MixedSystem
{
  SparseMatrix K; ///< dM x dM
  SparseMatrix B; ///< dM x LN, B = (C Phi_l phi_j, eps(e_k theta_i))
  SparseMatrix C; ///< LN x LN
  Vector D;       ///< diagonal of D (LN)
  Vector l;       ///< dM
};

/// Gauss points per direction for stiffness-type integrals on element e.
int stiffness_order(const Mesh& mesh, ElementId e);

/// Local stiffness in the tensor shapes of degree p on one element (index
/// ncomp * a + k); Laplacian per component if material is null.
Matrix element_stiffness(const ElementMap& map, int p, int ncomp, const Material* material);
/// Local load vector; traction is applied on facets tagged neumann.
Vector element_load(const ElementMap& map, int p, int ncomp, const LoadData& data,
                    const std::array<BoundaryTag, 6>& facet_tags);

/// Elastic stiffness (vector space, components = d) or Laplacian (scalar space).
SparseMatrix assemble_stiffness(const VSpace& V, const Material* material);
/// Load vector l_i = (f, theta_i) + (g, theta_i)_{Gamma_N}.
Vector assemble_load(const VSpace& V, const LoadData& data);
/// All blocks of the mixed system.
MixedSystem assemble_mixed(const VSpace& V, const QSpace& Q, const Material& material, const LoadData& data);

/// Bilinear form a((v,q),(w,tau)) from the assembled blocks.
double form_from_blocks(const MixedSystem& S, const Vector& v, const Vector& q, const Vector& w, const Vector& tau);
/// Same form evaluated by direct quadrature of (C(eps(v)-q), eps(w)-tau) + (Hq, tau).
double form_by_quadrature(const VSpace& V, const QSpace& Q, const Material& material, const Vector& v,
                          const Vector& q, const Vector& w, const Vector& tau);

/// Q_hp(f): tensor Gauss rule with p_T points per direction, |T| f(F_T(0)) if p_T = 1.
double quadrature_functional(const Mesh& mesh, const std::function<double(ElementId, const Vec3& xhat)>& f);

/// psi_hp(q) = Q_hp(sigma_y |q_hp|_F).
double discrete_plasticity(const QSpace& Q, const Vector& q);

/// E(v,q) = 1/2 a((v,q),(v,q)) + psi_hp(q) - l(v).
double energy(const MixedSystem& S, const QSpace& Q, const Vector& v, const Vector& q);

/// Matrix Market coordinate export.
void write_matrix_market(const std::string& path, const SparseMatrix& A);

/// Surface measure and outward unit normal of facet `facet` at a reference point on it.
std::pair<double, Vec3> facet_measure_normal(const ElementMap& map, int facet, const Vec3& xhat);

} // namespace hpfem
