#pragma once

#include "hpfem/assembly.hpp"

#include <random>
#include <string>
#include <vector>

namespace hpfem
{

/// Coefficients of (u_hp, p_hp, lambda_hp) with respect to e_k theta_i,
/// Phi_k phi_i and Phi_k varphi_i.
struct SolutionTriple
{
  Vector u;
  Vector p;
  Vector lambda;
};

struct NewtonConfig
{
  /// Projection parameter of chi.
  double rho = 1.0;
  /// Multiply rho by 2 mu + k_h (or c_min + h_min for general tensors).
  bool scale_rho = true;
  double tol = 1e-10;
  int max_iter = 50;
  /// Newton matrix with the damped chi blocks (see chi_jacobian).
  bool damped_jacobian = true;
  /// Armijo backtracking on 1/2 ||F||^2; full steps otherwise.
  bool line_search = true;
  double armijo_c = 1e-4;
  double shrink = 0.5;
  double t_min = 1.0 / 1048576.0;
};

struct NewtonTrace
{
  std::vector<double> residual; ///< ||F||_inf before each step and at the end
  std::vector<double> step;     ///< accepted step lengths
  std::vector<int> active;      ///< active (plastic) set size per iterate
};

struct NewtonResult
{
  SolutionTriple solution;
  NewtonTrace trace;
  int iterations = 0;
  bool converged = false;
  double residual = 0.0;
  double rho_effective = 0.0;
  std::string diagnostic;
};

/// chi_i(p, lambda) = max{sigma, |lambda + rho p|} lambda - sigma (lambda + rho p)
/// in Phi coordinates.
Vector chi(const Vector& p, const Vector& lambda, double sigma, double rho);

/// Clarke element of d chi / d p and d chi / d lambda; the active branch is
/// used on the kink |lambda + rho p| = sigma. With `damped`, lambda is replaced
/// by sigma lambda / max{sigma, |lambda|} in the rank-one terms; this matrix
/// agrees with the exact one wherever |lambda| <= sigma.
void chi_jacobian(const Vector& p, const Vector& lambda, double sigma, double rho, Matrix& dp, Matrix& dlambda,
                  bool damped = false);

/// Complementarity predicate |lambda| <= sigma and lambda : p = sigma |p|.
bool complementarity_holds(const Vector& p, const Vector& lambda, double sigma, double tol);

/// rho actually used in chi for a given configuration and material.
double effective_rho(const NewtonConfig& config, const Material& material);

/// F = [K u - B p - l; -B^T u + C p + D lambda; chi_1 .. chi_N].
Vector residual(const MixedSystem& S, const QSpace& Q, const SolutionTriple& x, double rho);

/// Generalized Jacobian of residual().
SparseMatrix generalized_jacobian(const MixedSystem& S, const QSpace& Q, const SolutionTriple& x, double rho);

/// Elastic solve for u with p = lambda = 0.
SolutionTriple elastic_initial_guess(const MixedSystem& S, const QSpace& Q);

/// Semi-smooth Newton iteration with Armijo backtracking on 1/2 ||F||^2.
NewtonResult solve_semismooth_newton(const MixedSystem& S, const QSpace& Q, const Material& material,
                                     const NewtonConfig& config = {}, const SolutionTriple* initial = nullptr);

/// lambda_i = D_i^{-1} (dev(sigma(u,p) - H p), Phi_k phi_i) by element quadrature.
Vector recover_multiplier(const VSpace& V, const QSpace& Q, const Material& material, const Vector& u,
                          const Vector& p);

struct ComplementarityReport
{
  /// max_i (|lambda_i| - sigma_i)
  double max_infeasibility = 0.0;
  /// max_i |lambda_i : p_i - sigma_i |p_i||
  double max_complementarity = 0.0;
  std::vector<bool> plastic;
  int num_plastic = 0;
  /// Dofs violating |lambda_i| < sigma_i => p_i = 0 or p_i = c lambda_i, c >= 0.
  int num_misclassified = 0;
};
ComplementarityReport check_complementarity(const QSpace& Q, const Vector& p, const Vector& lambda);

/// sup_{(v,q)} (mu, q) / ||(v,q)|| divided by ||mu||_0 (both by quadrature).
double infsup_witness(const QSpace& Q, const Vector& mu);

/// L2 inner product (mu_hp, q_hp) with mu in the biorthogonal and q in the primal basis.
double dual_pairing(const QSpace& Q, const Vector& mu, const Vector& q);

/// |mu_hp(x)| <= sigma_y at every Gauss point.
bool in_lambda_strong(const QSpace& Q, const Vector& mu, double tol = 1e-12);
/// (mu_hp, q_hp) <= psi_hp(q_hp) for every q in `tests`.
bool in_lambda_weak(const QSpace& Q, const Vector& mu, const std::vector<Vector>& tests, double tol = 1e-12);

/// Random test fields for in_lambda_weak around a candidate mu: each q keeps a
/// random subset of dofs (inclusion probability log-uniform in [1/N, 1]) and
/// points roughly along mu_i there, with random positive magnitudes.
std::vector<Vector> sample_weak_tests(const QSpace& Q, const Vector& mu, int count, unsigned seed);

/// a((u,p),(v-u,q-p)) + psi_hp(q) - psi_hp(p) - l(v-u) for a discrete test pair.
double vi_residual(const MixedSystem& S, const QSpace& Q, const SolutionTriple& x, const Vector& v, const Vector& q);

/// CSV with columns iteration, residual, step, active.
void write_trace_csv(const std::string& path, const NewtonTrace& trace);

} // namespace hpfem
