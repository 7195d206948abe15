#include "hpfem/driver.hpp"
#include "hpfem/expression.hpp"
#include "hpfem/parallel.hpp"

#include <Eigen/SparseCholesky>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

namespace hpfem
{

namespace
{

constexpr double nan_value = std::numeric_limits<double>::quiet_NaN();

Mesh base_mesh(const ProblemConfig& c)
{
  switch (c.domain)
  {
  case DomainKind::interval:
    return make_interval_mesh(0.0, 1.0, c.cells);
  case DomainKind::unit_square:
    return make_rectangle_mesh(0.0, 1.0, 0.0, 1.0, c.cells, c.cells);
  case DomainKind::lshape:
    return make_lshape_mesh(c.cells);
  case DomainKind::unit_cube:
    return make_box_mesh(Vec3(0, 0, 0), Vec3(1, 1, 1), c.cells, c.cells, c.cells);
  }
  throw InputError("unknown domain");
}

std::pair<Vec3, Vec3> domain_box(DomainKind d)
{
  if (d == DomainKind::lshape)
    return {Vec3(-1, -1, 0), Vec3(1, 1, 0)};
  return {Vec3::Zero(), Vec3::Ones()};
}

// Side index (2k + s) of a boundary point, -1 if it lies on none of them.
int side_of(const Vec3& x, const std::pair<Vec3, Vec3>& box, int dim)
{
  for (int k = 0; k < dim; ++k)
  {
    if (std::abs(x[k] - box.first[k]) < 1e-9)
      return 2 * k;
    if (std::abs(x[k] - box.second[k]) < 1e-9)
      return 2 * k + 1;
  }
  return -1;
}

std::vector<Polynomial> parse_components(const std::vector<std::string>& v, int nc, const std::string& what)
{
  if (static_cast<int>(v.size()) != nc)
    throw InputError(what + " needs " + std::to_string(nc) + " component(s), got " + std::to_string(v.size()));
  std::vector<Polynomial> out;
  for (const auto& s : v)
    out.push_back(Polynomial::parse(s));
  return out;
}

// f = -div sigma(u) (elasticity) or f = -laplace u.
std::vector<Polynomial> derived_load(const std::vector<Polynomial>& u, int dim, const ProblemConfig& c)
{
  const int nc = static_cast<int>(u.size());
  std::vector<Polynomial> f(nc);
  if (c.kind == ProblemKind::poisson)
  {
    for (int k = 0; k < dim; ++k)
      f[0] = f[0] - u[0].derivative(k).derivative(k);
    return f;
  }
  Polynomial div;
  for (int k = 0; k < dim; ++k)
    div = div + u[k].derivative(k);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j)
    {
      const Polynomial eps = (u[i].derivative(j) + u[j].derivative(i)) * 0.5;
      Polynomial sigma = eps * (2.0 * c.mu);
      if (i == j)
        sigma = sigma + div * c.lambda;
      f[i] = f[i] - sigma.derivative(j);
    }
  return f;
}

std::vector<int> elements_touching(const Mesh& m, const std::vector<Vec3>& points)
{
  std::vector<int> ids;
  for (ElementId e : m.active_elements())
  {
    bool touch = false;
    for (int c = 0; c < (1 << m.dim()); ++c)
      for (const Vec3& x : points)
        touch = touch || (m.vertex(m.element(e).vertices[c]) - x).norm() < 1e-13;
    if (touch)
      ids.push_back(e);
  }
  return ids;
}

double max_diameter(const Mesh& m)
{
  double h = 0.0;
  for (ElementId e : m.active_elements())
    h = std::max(h, m.element_size(e));
  return h;
}

} // namespace

ProblemData build_problem(const ProblemConfig& config)
{
  ProblemData d;
  Mesh m = with_uniform_degree(refine_uniformly(base_mesh(config), config.refinements), config.degree);
  const int dim = m.dim();
  const auto box = domain_box(config.domain);
  m = with_boundary_tags(m, [&](const Vec3& x) {
    const int s = side_of(x, box, dim);
    return s < 0 ? config.other : config.sides[s];
  });
  d.mesh = m;
  d.components = config.kind == ProblemKind::poisson ? 1 : dim;
  if (config.kind != ProblemKind::poisson)
    d.material = Material::isotropic(config.lambda, config.mu, config.k_h, config.sigma_y, dim);
  const int nc = d.components;

  if (config.benchmark == Benchmark::interval_power)
  {
    if (config.kind != ProblemKind::poisson || dim != 1)
      throw InputError("interval-power needs a Poisson problem on the interval");
    const double a = config.alpha;
    d.load.f = [a](const Vec3& x) { return Vector::Constant(1, -a * (a - 1.0) * std::pow(x[0], a - 2.0)); };
    d.exact_gradient = [a](const Vec3& x) {
      Mat3 g = Mat3::Zero();
      g(0, 0) = a * std::pow(x[0], a - 1.0) - 1.0;
      return g;
    };
    // the load is singular at x = 0
    d.load.order_bump = 8;
  }
  else
  {
    std::vector<Polynomial> f;
    if (!config.exact.empty())
    {
      const auto u = parse_components(config.exact, nc, "load.exact");
      if (config.kind != ProblemKind::elastoplasticity)
      {
        std::vector<std::array<Polynomial, 3>> grad(nc);
        for (int k = 0; k < nc; ++k)
          for (int j = 0; j < dim; ++j)
            grad[k][j] = u[k].derivative(j);
        d.exact_gradient = [grad, dim](const Vec3& x) {
          Mat3 g = Mat3::Zero();
          for (std::size_t k = 0; k < grad.size(); ++k)
            for (int j = 0; j < dim; ++j)
              g(static_cast<int>(k), j) = grad[k][j](x);
          return g;
        };
      }
      f = config.f.empty() ? derived_load(u, dim, config) : parse_components(config.f, nc, "load.f");
    }
    else if (!config.f.empty())
      f = parse_components(config.f, nc, "load.f");
    if (!f.empty())
      d.load.f = [f](const Vec3& x) {
        Vector v(static_cast<int>(f.size()));
        for (std::size_t k = 0; k < f.size(); ++k)
          v[static_cast<int>(k)] = f[k](x);
        return v;
      };
  }

  std::array<std::vector<Polynomial>, num_sides> g;
  bool any = false;
  for (int s = 0; s < num_sides; ++s)
    if (!config.traction[s].empty())
    {
      g[s] = parse_components(config.traction[s], nc, "traction");
      any = true;
    }
  if (any)
    d.load.g = [g, box, dim, nc](const Vec3& x, const Vec3&) {
      Vector v = Vector::Zero(nc);
      const int s = side_of(x, box, dim);
      if (s >= 0 && !g[s].empty())
        for (int k = 0; k < nc; ++k)
          v[k] = g[s][k](x);
      return v;
    };
  if (config.domain == DomainKind::lshape && config.kind == ProblemKind::poisson && !d.exact_gradient)
    d.reference_energy = lshape_reference_energy(d.load);
  return d;
}

double lshape_reference_energy(const LoadData& load, int layers, int degree)
{
  // geometric grading towards the re-entrant corner and, less deep, the convex corners
  const std::vector<Vec3> convex{Vec3(-1, -1, 0), Vec3(0, -1, 0), Vec3(1, 0, 0), Vec3(1, 1, 0), Vec3(-1, 1, 0)};
  Mesh m = make_lshape_mesh(1);
  for (int i = 0; i < layers; ++i)
  {
    std::vector<Vec3> pts{Vec3::Zero()};
    if (2 * i < layers)
      pts.insert(pts.end(), convex.begin(), convex.end());
    m = refine_elements(m, elements_touching(m, pts));
  }
  m = with_uniform_degree(m, degree);
  const VSpace V(m, 1);
  const SparseMatrix K = assemble_stiffness(V, nullptr);
  const Vector l = assemble_load(V, load);
  Eigen::SimplicialLDLT<SparseMatrix> solver(K);
  if (solver.info() != Eigen::Success)
    throw SolverError("lshape_reference_energy: factorization failed");
  return l.dot(solver.solve(l));
}

SolveState solve_on(const ProblemConfig& config, const ProblemData& data, const Mesh& mesh)
{
  SolveState s;
  s.mesh = mesh;
  s.V = VSpace(mesh, data.components);
  if (config.kind != ProblemKind::elastoplasticity)
  {
    s.K = assemble_stiffness(s.V, data.material_ptr());
    s.l = assemble_load(s.V, data.load);
    s.x.u = Vector::Zero(s.V.num_dofs());
    if (s.V.num_dofs() > 0)
    {
      Eigen::SimplicialLDLT<SparseMatrix> solver(s.K);
      if (solver.info() != Eigen::Success)
        throw SolverError("factorization of the stiffness matrix failed");
      s.x.u = solver.solve(s.l);
    }
    s.energy = s.l.dot(s.x.u);
    return s;
  }
  s.Q = QSpace(mesh, config.sigma_y);
  const MixedSystem S = assemble_mixed(s.V, *s.Q, *data.material, data.load);
  NewtonConfig nc;
  nc.rho = config.rho;
  nc.tol = config.newton_tol;
  nc.max_iter = config.newton_max_iter;
  const NewtonResult r = solve_semismooth_newton(S, *s.Q, *data.material, nc);
  if (!r.converged)
    throw SolverError("semi-smooth Newton did not converge in " + std::to_string(r.iterations) +
                      " iterations (residual " + std::to_string(r.residual) + "): " + r.diagnostic);
  s.x = r.solution;
  s.newton_iterations = r.iterations;
  s.energy = energy(S, *s.Q, s.x.u, s.x.p);
  return s;
}

double energy_error(const ProblemData& data, const SolveState& state)
{
  if (!data.exact_gradient)
    return std::isnan(data.reference_energy) ? nan_value
                                             : std::sqrt(std::max(data.reference_energy - state.energy, 0.0));
  const Mesh& m = state.mesh;
  const int d = m.dim();
  const auto& ids = m.active_elements();
  Vector part = Vector::Zero(static_cast<int>(ids.size()));
  parallel_for(ids.size(), [&](std::size_t i) {
    const ElementId e = ids[i];
    const ElementMap map = m.element_map(e);
    const auto rule = poly::tensor_gauss_rule(m.degree(e) + 6, d);
    double s = 0.0;
    for (std::size_t q = 0; q < rule.points.size(); ++q)
    {
      const Vec3& xh = rule.points[q];
      const double w = rule.weights[q] * std::abs(map.det_jacobian(xh));
      const Mat3 err = data.exact_gradient(map.map(xh)) - state.V.gradient(state.x.u, e, xh);
      if (data.material)
      {
        const Mat3 eps = strain(err);
        s += w * (data.material->stress(eps, Mat3::Zero()).cwiseProduct(eps)).sum();
      }
      else
        s += w * err.squaredNorm();
    }
    part[static_cast<int>(i)] = s;
  });
  return std::sqrt(part.sum());
}

RunResult run_adaptive(const ProblemConfig& config, const std::string& out_dir)
{
  set_num_threads(config.threads);
  const ProblemData data = build_problem(config);
  const bool plastic = config.kind == ProblemKind::elastoplasticity;
  RunResult res;
  res.used_estimator = plastic;
  res.used_predictor = config.loop == LoopKind::elliptic_predictor;

  if (!out_dir.empty())
  {
    std::filesystem::create_directories(out_dir);
    std::ofstream echo(out_dir + "/config.echo");
    echo << format_config(config);
    if (!echo)
      throw Error("cannot write " + out_dir + "/config.echo");
  }

  PredictorOptions popt;
  popt.p_rule = config.p_rule;
  popt.hp_rule = config.hp_rule;
  popt.use_p = config.use_p;
  popt.use_hp = config.use_hp;
  popt.max_degree = config.max_degree;

  Mesh mesh = data.mesh;
  for (int it = 0;; ++it)
  {
    const auto t0 = std::chrono::steady_clock::now();
    SolveState state;
    try
    {
      state = solve_on(config, data, mesh);
    }
    catch (const SolverError& e)
    {
      throw SolverError("adaptive iteration " + std::to_string(it) + ": " + e.what());
    }
    RunRecord rec;
    rec.iteration = it;
    rec.dofs = state.V.num_dofs() + (state.Q ? state.Q->num_dofs() : 0);
    rec.h = max_diameter(mesh);
    rec.energy = state.energy;
    rec.newton_iterations = state.newton_iterations;
    rec.error = plastic ? nan_value : energy_error(data, state);
    if (!res.records.empty() && rec.dofs <= res.records.back().dofs)
      break;

    const auto& ids = mesh.active_elements();
    Vector indicator = Vector::Zero(static_cast<int>(ids.size()));
    std::vector<ElementId> marked;
    std::vector<ElementPrediction> preds;
    if (plastic)
    {
      const IndicatorField ind = estimate(state.V, *state.Q, *data.material, data.load, state.x);
      indicator = ind.total();
      rec.estimate = ind.eta2();
      if (config.loop == LoopKind::plastic_estimator)
        marked = mark_dorfler(ind.elements, indicator, config.theta);
    }
    else if (config.loop == LoopKind::elliptic_predictor)
    {
      const auto ctx = make_prediction_context(state.V, data.material_ptr(), data.load, state.K, state.l, state.x.u);
      preds = predict_all(ctx, popt);
      for (std::size_t i = 0; i < preds.size(); ++i)
        indicator[static_cast<int>(i)] = std::max(preds[i].best_reduction, 0.0);
      rec.estimate = indicator.sum();
      marked = mark_dorfler(ids, indicator, config.theta);
    }
    else
      rec.estimate = nan_value;
    rec.marked = static_cast<int>(config.loop == LoopKind::uniform_h || config.loop == LoopKind::uniform_p
                                      ? ids.size()
                                      : marked.size());

    if (!out_dir.empty() && config.vtk)
    {
      char name[32];
      std::snprintf(name, sizeof name, "/step_%03d.vtk", it);
      write_vtk(out_dir + name, state, indicator);
    }

    const double measure = std::isnan(rec.error) ? std::sqrt(std::max(rec.estimate, 0.0)) : rec.error;
    bool stop = rec.dofs >= config.max_dofs || it + 1 >= config.max_iterations ||
                (config.tol > 0.0 && measure < config.tol);

    Mesh next = mesh;
    if (!stop)
    {
      switch (config.loop)
      {
      case LoopKind::uniform_h:
        next = refine_uniformly(mesh, 1);
        break;
      case LoopKind::uniform_p:
        stop = true;
        for (ElementId e : ids)
          if (mesh.degree(e) < config.max_degree)
          {
            next.set_degree_in_place(e, mesh.degree(e) + 1);
            stop = false;
          }
        break;
      case LoopKind::plastic_estimator:
        stop = marked.empty();
        if (!stop)
          next = refine_elements(mesh, marked);
        break;
      case LoopKind::elliptic_predictor:
        stop = marked.empty();
        if (!stop)
          next = apply_enrichments(mesh, preds, marked, popt);
        break;
      }
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.records.push_back(rec);
    res.states.push_back(std::move(state));
    if (stop)
      break;
    mesh = std::move(next);
  }

  if (plastic && config.reference)
  {
    // overkill: two more uniform refinements of the finest mesh, degree + 1
    Mesh fine = refine_uniformly(res.states.back().mesh, 2);
    for (ElementId e : fine.active_elements())
      fine.set_degree_in_place(e, fine.degree(e) + 1);
    SolveState ref;
    try
    {
      ref = solve_on(config, data, fine);
    }
    catch (const SolverError& e)
    {
      throw SolverError(std::string("reference solve: ") + e.what());
    }
    for (std::size_t i = 0; i < res.states.size(); ++i)
    {
      const auto& s = res.states[i];
      const ReferenceError re = reference_error(ref.V, *ref.Q, ref.x, s.V, *s.Q, s.x, *data.material);
      res.records[i].error = std::sqrt(re.total());
    }
  }

  if (!out_dir.empty())
  {
    write_records_csv(out_dir + "/convergence.csv", res.records);
    write_timing_csv(out_dir + "/timing.csv", res.records);
    write_mesh(out_dir + "/mesh.txt", res.states.back().mesh);
  }
  return res;
}

std::vector<ConvergenceRow> convergence_table(const std::vector<RunRecord>& records, int dim, bool use_h)
{
  std::vector<ConvergenceRow> rows;
  for (const auto& r : records)
  {
    ConvergenceRow row;
    row.dofs = r.dofs;
    row.h = use_h ? r.h : std::pow(static_cast<double>(r.dofs), -1.0 / dim);
    row.error = r.error;
    row.rate = nan_value;
    if (!rows.empty())
    {
      const auto& prev = rows.back();
      const double dh = std::log(prev.h / row.h);
      if (dh != 0.0)
        row.rate = std::log(prev.error / row.error) / dh;
    }
    rows.push_back(row);
  }
  return rows;
}

double fitted_rate(const std::vector<RunRecord>& records, int dim, bool use_h)
{
  const auto rows = convergence_table(records, dim, use_h);
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(rows.size());
  for (const auto& r : rows)
  {
    const double x = std::log(r.h), y = std::log(r.error);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double den = n * sxx - sx * sx;
  return den == 0.0 ? nan_value : (n * sxy - sx * sy) / den;
}

} // namespace hpfem
