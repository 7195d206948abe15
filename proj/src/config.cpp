#include "hpfem/driver.hpp"
#include "hpfem/expression.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace hpfem
{

namespace
{

template <class E, std::size_t N>
using NameTable = std::array<std::pair<E, const char*>, N>;

constexpr NameTable<LoopKind, 4> loop_names{{{LoopKind::plastic_estimator, "plastic-estimator"},
                                              {LoopKind::elliptic_predictor, "elliptic-predictor"},
                                              {LoopKind::uniform_h, "uniform-h"},
                                              {LoopKind::uniform_p, "uniform-p"}}};
constexpr NameTable<ProblemKind, 3> kind_names{{{ProblemKind::poisson, "poisson"},
                                                 {ProblemKind::elasticity, "elasticity"},
                                                 {ProblemKind::elastoplasticity, "elastoplasticity"}}};
constexpr NameTable<DomainKind, 4> domain_names{{{DomainKind::interval, "interval"},
                                                  {DomainKind::unit_square, "unit-square"},
                                                  {DomainKind::lshape, "lshape"},
                                                  {DomainKind::unit_cube, "unit-cube"}}};
constexpr NameTable<Benchmark, 5> benchmark_names{{{Benchmark::custom, "custom"},
                                                    {Benchmark::interval_power, "interval-power"},
                                                    {Benchmark::lshape_poisson, "lshape-poisson"},
                                                    {Benchmark::elastic_square, "elastic-square"},
                                                    {Benchmark::plastic_square, "plastic-square"}}};
constexpr NameTable<BoundaryTag, 2> tag_names{{{BoundaryTag::dirichlet, "dirichlet"},
                                                {BoundaryTag::neumann, "neumann"}}};
constexpr NameTable<DegreeRule, 2> rule_names{{{DegreeRule::top, "top"}, {DegreeRule::full, "full"}}};

constexpr std::array<const char*, num_sides> side_names{"left", "right", "bottom", "top", "front", "back"};

template <class E, std::size_t N>
std::string name_of(const NameTable<E, N>& t, E v)
{
  for (const auto& [e, n] : t)
    if (e == v)
      return n;
  return "?";
}

template <class E, std::size_t N>
E value_of(const NameTable<E, N>& t, const std::string& s, const std::string& key)
{
  for (const auto& [e, n] : t)
    if (s == n)
      return e;
  std::string options;
  for (const auto& [e, n] : t)
    options += std::string(options.empty() ? "" : ", ") + n;
  throw InputError("config: " + key + " = '" + s + "' (expected one of " + options + ")");
}

std::string trim(const std::string& s)
{
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos)
    return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double to_double(const std::string& s, const std::string& key)
{
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0')
    throw InputError("config: " + key + " = '" + s + "' is not a number");
  return v;
}

long to_long(const std::string& s, const std::string& key)
{
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (s.empty() || *end != '\0')
    throw InputError("config: " + key + " = '" + s + "' is not an integer");
  return v;
}

bool to_bool(const std::string& s, const std::string& key)
{
  if (s == "true")
    return true;
  if (s == "false")
    return false;
  throw InputError("config: " + key + " = '" + s + "' (expected true or false)");
}

std::vector<std::string> to_list(const std::string& s, const std::string& key)
{
  std::vector<std::string> out;
  if (s.empty())
    return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
  {
    item = trim(item);
    if (item.empty())
      throw InputError("config: " + key + " has an empty entry");
    try
    {
      Polynomial::parse(item);
    }
    catch (const InputError& e)
    {
      throw InputError("config: " + key + ": " + e.what());
    }
    out.push_back(item);
  }
  return out;
}

std::string fmt_double(double v)
{
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_list(const std::vector<std::string>& v)
{
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i)
    s += (i ? ", " : "") + v[i];
  return s;
}

struct Key
{
  const char* section;
  const char* name;
  std::function<void(ProblemConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const ProblemConfig&)> get;
};

#define HPFEM_DOUBLE(sec, nm, field)                                                                    \
  Key{sec, nm, [](ProblemConfig& c, const std::string& v, const std::string& k) { c.field = to_double(v, k); }, \
      [](const ProblemConfig& c) { return fmt_double(c.field); }}
#define HPFEM_INT(sec, nm, field, type)                                                                 \
  Key{sec, nm,                                                                                          \
      [](ProblemConfig& c, const std::string& v, const std::string& k) { c.field = static_cast<type>(to_long(v, k)); }, \
      [](const ProblemConfig& c) { return std::to_string(c.field); }}
#define HPFEM_BOOL(sec, nm, field)                                                                      \
  Key{sec, nm, [](ProblemConfig& c, const std::string& v, const std::string& k) { c.field = to_bool(v, k); }, \
      [](const ProblemConfig& c) { return std::string(c.field ? "true" : "false"); }}
#define HPFEM_ENUM(sec, nm, field, table)                                                               \
  Key{sec, nm,                                                                                          \
      [](ProblemConfig& c, const std::string& v, const std::string& k) { c.field = value_of(table, v, k); }, \
      [](const ProblemConfig& c) { return name_of(table, c.field); }}
#define HPFEM_LIST(sec, nm, field)                                                                      \
  Key{sec, nm, [](ProblemConfig& c, const std::string& v, const std::string& k) { c.field = to_list(v, k); }, \
      [](const ProblemConfig& c) { return fmt_list(c.field); }}

const std::vector<Key>& keys()
{
  static const std::vector<Key> table = [] {
    std::vector<Key> k{
        HPFEM_ENUM("problem", "benchmark", benchmark, benchmark_names),
        HPFEM_ENUM("problem", "kind", kind, kind_names),
        HPFEM_ENUM("problem", "domain", domain, domain_names),
        HPFEM_DOUBLE("problem", "alpha", alpha),
        HPFEM_INT("problem", "seed", seed, unsigned),
        HPFEM_INT("problem", "threads", threads, int),
        HPFEM_INT("mesh", "cells", cells, int),
        HPFEM_INT("mesh", "refinements", refinements, int),
        HPFEM_INT("mesh", "degree", degree, int),
        HPFEM_DOUBLE("material", "lambda", lambda),
        HPFEM_DOUBLE("material", "mu", mu),
        HPFEM_DOUBLE("material", "k_h", k_h),
        HPFEM_DOUBLE("material", "sigma_y", sigma_y),
        HPFEM_LIST("load", "f", f),
        HPFEM_LIST("load", "exact", exact),
        HPFEM_ENUM("adapt", "loop", loop, loop_names),
        HPFEM_DOUBLE("adapt", "theta", theta),
        HPFEM_INT("adapt", "max_dofs", max_dofs, int),
        HPFEM_INT("adapt", "max_iterations", max_iterations, int),
        HPFEM_DOUBLE("adapt", "tol", tol),
        HPFEM_BOOL("adapt", "reference", reference),
        HPFEM_DOUBLE("newton", "rho", rho),
        HPFEM_DOUBLE("newton", "tol", newton_tol),
        HPFEM_INT("newton", "max_iter", newton_max_iter, int),
        HPFEM_ENUM("predictor", "p_rule", p_rule, rule_names),
        HPFEM_ENUM("predictor", "hp_rule", hp_rule, rule_names),
        HPFEM_BOOL("predictor", "use_p", use_p),
        HPFEM_BOOL("predictor", "use_hp", use_hp),
        HPFEM_INT("predictor", "max_degree", max_degree, int),
        HPFEM_BOOL("output", "vtk", vtk),
    };
    for (int s = 0; s < num_sides; ++s)
    {
      k.push_back(Key{"boundary", side_names[s],
                      [s](ProblemConfig& c, const std::string& v, const std::string& key) {
                        c.sides[s] = value_of(tag_names, v, key);
                      },
                      [s](const ProblemConfig& c) { return name_of(tag_names, c.sides[s]); }});
    }
    k.push_back(HPFEM_ENUM("boundary", "other", other, tag_names));
    for (int s = 0; s < num_sides; ++s)
    {
      k.push_back(Key{"traction", side_names[s],
                      [s](ProblemConfig& c, const std::string& v, const std::string& key) {
                        c.traction[s] = to_list(v, key);
                      },
                      [s](const ProblemConfig& c) { return fmt_list(c.traction[s]); }});
    }
    return k;
  }();
  return table;
}

#undef HPFEM_DOUBLE
#undef HPFEM_INT
#undef HPFEM_BOOL
#undef HPFEM_ENUM
#undef HPFEM_LIST

void validate(const ProblemConfig& c)
{
  auto require = [](bool ok, const std::string& what) {
    if (!ok)
      throw InputError("config: " + what);
  };
  require(c.cells >= 1, "mesh.cells must be >= 1");
  require(c.refinements >= 0, "mesh.refinements must be >= 0");
  require(c.degree >= 1 && c.degree <= c.max_degree, "mesh.degree must lie in [1, predictor.max_degree]");
  require(c.theta > 0.0 && c.theta <= 1.0, "adapt.theta must lie in (0, 1]");
  require(c.max_dofs > 0, "adapt.max_dofs must be positive");
  require(c.max_iterations >= 1, "adapt.max_iterations must be >= 1");
  require(c.tol >= 0.0, "adapt.tol must be >= 0");
  require(c.rho > 0.0, "newton.rho must be positive");
  require(c.newton_tol > 0.0, "newton.tol must be positive");
  require(c.newton_max_iter >= 1, "newton.max_iter must be >= 1");
  require(c.threads >= 1, "problem.threads must be >= 1");
  require(c.max_degree >= 1 && c.max_degree <= 20, "predictor.max_degree must lie in [1, 20]");
  require(c.sigma_y > 0.0, "material.sigma_y must be positive");
  require(c.benchmark != Benchmark::interval_power || c.alpha > 0.5, "problem.alpha must exceed 1/2");
  if (c.kind == ProblemKind::elastoplasticity)
    require(c.domain != DomainKind::interval, "elastoplasticity needs a 2D or 3D domain");
  if (c.loop == LoopKind::plastic_estimator)
    require(c.kind == ProblemKind::elastoplasticity, "loop plastic-estimator needs kind = elastoplasticity");
  if (c.loop == LoopKind::elliptic_predictor)
    require(c.kind != ProblemKind::elastoplasticity, "loop elliptic-predictor needs an elliptic problem");
}

} // namespace

std::string to_string(LoopKind v) { return name_of(loop_names, v); }
std::string to_string(ProblemKind v) { return name_of(kind_names, v); }
std::string to_string(DomainKind v) { return name_of(domain_names, v); }
std::string to_string(Benchmark v) { return name_of(benchmark_names, v); }
LoopKind parse_loop(const std::string& s) { return value_of(loop_names, s, "loop"); }

ProblemConfig benchmark_config(Benchmark b)
{
  ProblemConfig c;
  c.benchmark = b;
  switch (b)
  {
  case Benchmark::custom:
    break;
  case Benchmark::interval_power:
    c.domain = DomainKind::interval;
    c.cells = 4;
    c.loop = LoopKind::elliptic_predictor;
    c.max_iterations = 12;
    break;
  case Benchmark::lshape_poisson:
    c.domain = DomainKind::lshape;
    c.f = {"1"};
    c.loop = LoopKind::elliptic_predictor;
    c.max_iterations = 40;
    break;
  case Benchmark::elastic_square:
    c.kind = ProblemKind::elasticity;
    c.cells = 2;
    c.exact = {"x*(1-x)*y*(1-y)*(1+y)", "x*(1-x)*y*(1-y)*(2-x)"};
    c.loop = LoopKind::uniform_h;
    c.max_iterations = 5;
    break;
  case Benchmark::plastic_square:
    c.kind = ProblemKind::elastoplasticity;
    c.cells = 2;
    c.sides = {BoundaryTag::dirichlet, BoundaryTag::neumann, BoundaryTag::neumann,
               BoundaryTag::neumann,   BoundaryTag::neumann, BoundaryTag::neumann};
    c.traction[1] = {"0", "0.5"};
    c.loop = LoopKind::plastic_estimator;
    c.max_iterations = 6;
    break;
  }
  return c;
}

ProblemConfig parse_config(const std::string& text)
{
  struct Entry
  {
    std::string section, key, value;
    int line;
  };
  std::vector<Entry> entries;
  std::stringstream in(text);
  std::string raw, section;
  int line_no = 0;
  while (std::getline(in, raw))
  {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty())
      continue;
    const std::string where = "config line " + std::to_string(line_no) + ": ";
    if (line.front() == '[')
    {
      if (line.back() != ']')
        throw InputError(where + "malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      bool known = false;
      for (const auto& k : keys())
        known = known || section == k.section;
      if (!known)
        throw InputError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw InputError(where + "expected key = value");
    if (section.empty())
      throw InputError(where + "key outside of a section");
    entries.push_back({section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)), line_no});
  }

  ProblemConfig c;
  for (const auto& e : entries)
    if (e.section == "problem" && e.key == "benchmark")
      c = benchmark_config(value_of(benchmark_names, e.value, "problem.benchmark"));

  for (const auto& e : entries)
  {
    const Key* found = nullptr;
    for (const auto& k : keys())
      if (e.section == k.section && e.key == k.name)
        found = &k;
    if (!found)
      throw InputError("config line " + std::to_string(e.line) + ": unknown key '" + e.key + "' in [" + e.section +
                       "]");
    found->set(c, e.value, e.section + "." + e.key);
  }
  validate(c);
  return c;
}

ProblemConfig load_config(const std::string& path)
{
  std::ifstream in(path);
  if (!in)
    throw InputError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const ProblemConfig& config)
{
  std::string out, section;
  for (const auto& k : keys())
  {
    if (section != k.section)
    {
      section = k.section;
      out += (out.empty() ? "[" : "\n[") + section + "]\n";
    }
    out += std::string(k.name) + " = " + k.get(config) + "\n";
  }
  return out;
}

} // namespace hpfem
