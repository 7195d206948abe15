#pragma once

#include "hpfem/plasticity.hpp"

#include <functional>
#include <string>
#include <vector>

namespace hpfem
{

/// Per-element parts of eta_T^2(mu) and the data oscillation, in the order of
/// mesh.active_elements().
struct IndicatorField
{
  std::vector<ElementId> elements;
  Vector volume;      ///< (h_T/p_T)^2 ||f_N + div sigma||^2
  Vector jump;        ///< sum over interior facets of h_e/(2 p_e) ||[sigma n]||^2
  Vector neumann;     ///< sum over Neumann facets of h_e/p_e ||sigma n - g_N||^2
  Vector dev_defect;  ///< ||dev(sigma - H p) - lambda||^2
  Vector mu_defect;   ///< ||mu - lambda||^2
  Vector dissipation; ///< (sigma_y, |p|) - (mu, p)
  Vector osc;         ///< data oscillation per element

  /// eta_T^2 without the plasticity terms.
  Vector residual() const { return volume + jump + neumann; }
  Vector plasticity() const { return dev_defect + mu_defect + dissipation; }
  Vector total() const { return residual() + plasticity(); }
  double eta2() const { return total().sum(); }
  double osc2() const { return osc.sum(); }
  /// Smallest entry over all parts (nonnegativity check).
  double min_part() const;
};

/// mu* = min{1, sigma_y / |mu_hat|} mu_hat with mu_hat = lambda + p / 2.
Mat3 mu_star(const Mat3& lambda, const Mat3& p, double sigma_y);

/// Multiplier field used in the plasticity terms (default mu*).
using MultiplierField = std::function<Mat3(ElementId, const Vec3& xhat, const Mat3& lambda, const Mat3& p)>;

/// Residual indicators and plasticity terms for a triple (u_N, p_N, lambda_N);
/// lambda_N is given in the biorthogonal basis of Q.
IndicatorField estimate(const VSpace& V, const QSpace& Q, const Material& material, const LoadData& data,
                        const SolutionTriple& x, const MultiplierField& mu = {});

/// Global plasticity error contribution ||mu - lambda||^2 + psi(p) - (mu, p)
/// by element quadrature with p_T + 2 points per direction.
double plasticity_error_contribution(const QSpace& Q, const Vector& lambda, const Vector& p, const MultiplierField& mu);

/// div sigma(u, p) at a reference point of e (exact differentiation of the
/// mapped polynomials).
Vector stress_divergence(const VSpace& V, const QSpace& Q, const Material& material, const Vector& u,
                         const Vector& p, ElementId e, const Vec3& xhat);

/// Stress sigma(u, p) = C(eps(u) - p) at a reference point of e.
Mat3 stress_at(const VSpace& V, const QSpace& Q, const Material& material, const Vector& u, const Vector& p,
               ElementId e, const Vec3& xhat);

/// Minimal set carrying theta of the total (greedy, descending, ties by id).
std::vector<ElementId> mark_dorfler(const std::vector<ElementId>& ids, const Vector& indicators, double theta);

/// (u*, p*) with a((u*,p*),(v,q)) = l(v) - (lambda, q) on the discrete spaces.
std::pair<Vector, Vector> solve_auxiliary(const MixedSystem& S, const Vector& lambda);

/// Squared errors of a coarse triple against a reference triple living on a
/// refinement of the same mesh hierarchy.
struct ReferenceError
{
  double energy2 = 0.0; ///< a((u - u_N, p - p_N), (u - u_N, p - p_N))
  double lambda2 = 0.0; ///< ||lambda - lambda_N||^2
  double p_l2 = 0.0;    ///< ||p - p_N||
  double total() const { return energy2 + lambda2; }
};
ReferenceError reference_error(const VSpace& Vref, const QSpace& Qref, const SolutionTriple& ref, const VSpace& V,
                               const QSpace& Q, const SolutionTriple& x, const Material& material);

/// CSV with element id, eta_T^2, plasticity part, marked flag.
void write_indicators_csv(const std::string& path, const IndicatorField& ind, const std::vector<ElementId>& marked);

} // namespace hpfem
