#pragma once

#include "hpfem/estimator.hpp"
#include "hpfem/predictor.hpp"

#include <array>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace hpfem
{

enum class LoopKind
{
  plastic_estimator,
  elliptic_predictor,
  uniform_h,
  uniform_p
};

enum class ProblemKind
{
  poisson,
  elasticity,
  elastoplasticity
};

enum class DomainKind
{
  interval,
  unit_square,
  lshape,
  unit_cube
};

/// Built-in problems; `custom` takes everything from the config.
enum class Benchmark
{
  custom,
  interval_power, ///< -u'' = f on (0,1), u = x^alpha - x
  lshape_poisson, ///< -div grad u = 1 on the L-shape
  elastic_square, ///< linear elasticity, manufactured polynomial solution
  plastic_square  ///< clamped left, vertical traction on the right
};

std::string to_string(LoopKind v);
std::string to_string(ProblemKind v);
std::string to_string(DomainKind v);
std::string to_string(Benchmark v);
LoopKind parse_loop(const std::string& s);

/// Boundary sides in the order left, right, bottom, top, front, back
/// (x = min, x = max, y = min, ...). Facets on none of them are "other".
constexpr int num_sides = 6;

struct ProblemConfig
{
  // [problem]
  Benchmark benchmark = Benchmark::custom;
  ProblemKind kind = ProblemKind::poisson;
  DomainKind domain = DomainKind::unit_square;
  double alpha = 1.6;
  unsigned seed = 0;
  int threads = 1;
  // [mesh]
  int cells = 1;
  int refinements = 0;
  int degree = 1;
  // [material]
  double lambda = 1.0;
  double mu = 1.0;
  double k_h = 0.5;
  double sigma_y = 1.0;
  // [load]: one polynomial per component; f is derived from exact if empty
  std::vector<std::string> f;
  std::vector<std::string> exact;
  // [boundary]
  std::array<BoundaryTag, num_sides> sides{BoundaryTag::dirichlet, BoundaryTag::dirichlet, BoundaryTag::dirichlet,
                                           BoundaryTag::dirichlet, BoundaryTag::dirichlet, BoundaryTag::dirichlet};
  BoundaryTag other = BoundaryTag::dirichlet;
  // [traction]
  std::array<std::vector<std::string>, num_sides> traction;
  // [adapt]
  LoopKind loop = LoopKind::uniform_h;
  double theta = 0.5;
  int max_dofs = 200000;
  int max_iterations = 8;
  double tol = 0.0;
  bool reference = false;
  // [newton]
  double rho = 1.0;
  double newton_tol = 1e-10;
  int newton_max_iter = 50;
  // [predictor]
  DegreeRule p_rule = DegreeRule::full;
  DegreeRule hp_rule = DegreeRule::full;
  bool use_p = true;
  bool use_hp = true;
  int max_degree = 10;
  // [output]
  bool vtk = true;

  bool operator==(const ProblemConfig&) const = default;
};

/// Defaults of a built-in problem.
ProblemConfig benchmark_config(Benchmark b);

/// Sections of `key = value` lines; '#' starts a comment. A `benchmark` key in
/// [problem] selects the starting defaults, the other keys override them.
/// Unknown sections or keys are errors (InputError).
ProblemConfig parse_config(const std::string& text);
ProblemConfig load_config(const std::string& path);
/// Complete echo that parses back to the same config.
std::string format_config(const ProblemConfig& config);

/// Discrete problem data built from a config.
struct ProblemData
{
  Mesh mesh;
  int components = 1;
  /// Null for Poisson.
  std::optional<Material> material;
  LoadData load;
  /// Physical gradient of the exact solution (components x d), if known.
  std::function<Mat3(const Vec3&)> exact_gradient;
  /// a(u, u) of the exact solution, NaN if unknown.
  double reference_energy = std::numeric_limits<double>::quiet_NaN();

  const Material* material_ptr() const { return material ? &*material : nullptr; }
};

ProblemData build_problem(const ProblemConfig& config);

/// a(u, u) of the exact solution of a Poisson problem on the L-shape, by an
/// hp solution on a mesh graded geometrically towards the re-entrant corner.
double lshape_reference_energy(const LoadData& load, int layers = 26, int degree = 8);

/// One solved discretization.
struct SolveState
{
  Mesh mesh;
  VSpace V;
  std::optional<QSpace> Q;
  /// u for elliptic problems; (u, p, lambda) for elastoplasticity.
  SolutionTriple x;
  /// Stiffness matrix and load vector (elliptic problems).
  SparseMatrix K;
  Vector l;
  double energy = 0.0;
  int newton_iterations = 0;
};

/// Solve on a mesh; SolverError if the linear solve or Newton fails.
SolveState solve_on(const ProblemConfig& config, const ProblemData& data, const Mesh& mesh);

/// Energy norm error against the exact gradient (elliptic problems).
double energy_error(const ProblemData& data, const SolveState& state);

struct RunRecord
{
  int iteration = 0;
  int dofs = 0;
  double h = 0.0;
  double energy = 0.0;
  int newton_iterations = 0;
  /// eta^2 (elastoplastic problems) or sum of predicted reductions.
  double estimate = 0.0;
  double error = 0.0;
  int marked = 0;
  double seconds = 0.0;
};

struct RunResult
{
  std::vector<RunRecord> records;
  std::vector<SolveState> states;
  /// Which indicators the loop consulted.
  bool used_estimator = false;
  bool used_predictor = false;
};

/// Solve, mark and refine until max dofs, max iterations or tol is reached.
/// Writes convergence.csv, timing.csv, config.echo and step_NNN.vtk into
/// out_dir if it is not empty.
RunResult run_adaptive(const ProblemConfig& config, const std::string& out_dir = "");

struct ConvergenceRow
{
  int dofs = 0;
  double h = 0.0;
  double error = 0.0;
  /// log(e_i / e_{i+1}) / log(h_i / h_{i+1}) with the previous row; NaN first.
  double rate = 0.0;
};

/// Rates against h (use_h) or against dofs^{-1/dim}.
std::vector<ConvergenceRow> convergence_table(const std::vector<RunRecord>& records, int dim, bool use_h = true);
/// Least-squares slope of log error against log h (or dofs^{-1/dim}).
double fitted_rate(const std::vector<RunRecord>& records, int dim, bool use_h = true);

void write_records_csv(const std::string& path, const std::vector<RunRecord>& records);
std::vector<RunRecord> read_records_csv(const std::string& path);
void write_timing_csv(const std::string& path, const std::vector<RunRecord>& records);
void write_table_csv(const std::string& path, const std::vector<ConvergenceRow>& rows);

/// VTK legacy ASCII: active elements, cell data degree, indicator and |p|_F
/// at the element centers, point data u at the element corners.
void write_vtk(const std::string& path, const SolveState& state, const Vector& indicator = {});

/// Text format holding the level-0 mesh, the refinement history, degrees and
/// facet tags of the active elements.
void write_mesh(const std::string& path, const Mesh& mesh);
Mesh read_mesh(const std::string& path);

} // namespace hpfem
