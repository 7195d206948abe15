#include "hpfem/driver.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

using namespace hpfem;

namespace
{

struct Options
{
  std::string config;
  std::string out;
  std::string loop;
  int threads = 0;
  long seed = -1;
};

ProblemConfig effective_config(const Options& o)
{
  ProblemConfig c = load_config(o.config);
  if (!o.loop.empty())
    c.loop = parse_loop(o.loop);
  if (o.threads > 0)
    c.threads = o.threads;
  if (o.seed >= 0)
    c.seed = static_cast<unsigned>(o.seed);
  // reparse so that overrides go through the same validation
  return parse_config(format_config(c));
}

void print_records(const std::vector<RunRecord>& records, int dim)
{
  const auto rows = convergence_table(records, dim);
  std::printf("%5s %9s %12s %14s %6s %12s %12s %7s %7s\n", "iter", "dofs", "h", "energy", "newton", "estimate",
              "error", "rate", "marked");
  for (std::size_t i = 0; i < records.size(); ++i)
  {
    const auto& r = records[i];
    std::printf("%5d %9d %12.4e %14.6e %6d %12.4e %12.4e %7.3f %7d\n", r.iteration, r.dofs, r.h, r.energy,
                r.newton_iterations, r.estimate, r.error, rows[i].rate, r.marked);
  }
}

int run_solve(const Options& o, bool export_only)
{
  const ProblemConfig c = effective_config(o);
  const ProblemData data = build_problem(c);
  const SolveState s = solve_on(c, data, data.mesh);
  RunRecord r;
  r.dofs = s.V.num_dofs() + (s.Q ? s.Q->num_dofs() : 0);
  r.energy = s.energy;
  r.newton_iterations = s.newton_iterations;
  r.error = c.kind == ProblemKind::elastoplasticity ? std::nan("") : energy_error(data, s);
  r.estimate = std::nan("");
  Vector indicator;
  if (s.Q)
  {
    const IndicatorField ind = estimate(s.V, *s.Q, *data.material, data.load, s.x);
    indicator = ind.total();
    r.estimate = ind.eta2();
    const auto rep = check_complementarity(*s.Q, s.x.p, s.x.lambda);
    std::printf("plastic dofs: %d of %d\n", rep.num_plastic, s.Q->num_scalar_dofs());
  }
  if (!export_only)
    print_records({r}, s.mesh.dim());
  if (!o.out.empty())
  {
    std::filesystem::create_directories(o.out);
    write_vtk(o.out + "/solution.vtk", s, indicator);
    write_mesh(o.out + "/mesh.txt", s.mesh);
    write_records_csv(o.out + "/solution.csv", {r});
    std::ofstream(o.out + "/config.echo") << format_config(c);
  }
  return 0;
}

int run_adapt(const Options& o)
{
  const ProblemConfig c = effective_config(o);
  const RunResult res = run_adaptive(c, o.out);
  print_records(res.records, res.states.back().mesh.dim());
  return 0;
}

int run_table(const Options& o)
{
  if (o.out.empty())
    throw InputError("table: --out <dir> holding convergence.csv is required");
  const auto records = read_records_csv(o.out + "/convergence.csv");
  int dim = 2;
  if (!o.config.empty())
    dim = build_problem(effective_config(o)).mesh.dim();
  write_table_csv(o.out + "/table.csv", convergence_table(records, dim));
  print_records(records, dim);
  return 0;
}

} // namespace

int main(int argc, char** argv)
{
  CLI::App app{"hp finite elements for elastoplasticity and predicted-reduction adaptivity"};
  app.require_subcommand(1);
  Options o;
  auto add_common = [&](CLI::App* sub, bool need_config) {
    auto* opt = sub->add_option("--config", o.config, "config file")->check(CLI::ExistingFile);
    if (need_config)
      opt->required();
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--threads", o.threads, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--seed", o.seed, "random seed")->check(CLI::NonNegativeNumber);
    sub->add_option("--loop", o.loop, "adaptive loop")
        ->check(CLI::IsMember({"plastic-estimator", "elliptic-predictor", "uniform-h", "uniform-p"}));
  };
  auto* solve = app.add_subcommand("solve", "solve on the initial mesh and print a summary");
  auto* adapt = app.add_subcommand("adapt", "run the adaptive loop");
  auto* table = app.add_subcommand("table", "convergence table with rates from <out>/convergence.csv");
  auto* exp = app.add_subcommand("export", "solve on the initial mesh and write VTK, mesh and CSV files");
  add_common(solve, true);
  add_common(adapt, true);
  add_common(table, false);
  add_common(exp, true);

  try
  {
    app.parse(argc, argv);
  }
  catch (const CLI::Success& e)
  {
    return app.exit(e);
  }
  catch (const CLI::ParseError& e)
  {
    app.exit(e);
    return 3;
  }

  try
  {
    if (*solve)
      return run_solve(o, false);
    if (*adapt)
      return run_adapt(o);
    if (*table)
      return run_table(o);
    if (*exp)
    {
      if (o.out.empty())
        throw InputError("export: --out <dir> is required");
      return run_solve(o, true);
    }
  }
  catch (const InputError& e)
  {
    std::cerr << "config error: " << e.what() << '\n';
    return 3;
  }
  catch (const SolverError& e)
  {
    std::cerr << "solver failure: " << e.what() << '\n';
    return 2;
  }
  catch (const std::exception& e)
  {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
