#include "hpfem/driver.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace hpfem
{

namespace
{

std::string num(double v)
{
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12e", v);
  return buf;
}

std::ofstream open_out(const std::string& path)
{
  std::ofstream out(path);
  if (!out)
    throw Error("cannot open '" + path + "' for writing");
  return out;
}

void finish(std::ofstream& out, const std::string& path)
{
  out.flush();
  if (!out)
    throw Error("write to '" + path + "' failed");
}

// VTK corner order of the tensor corners 0 .. 2^d - 1.
constexpr std::array<int, 8> vtk_order{0, 1, 3, 2, 4, 5, 7, 6};

} // namespace

void write_records_csv(const std::string& path, const std::vector<RunRecord>& records)
{
  auto out = open_out(path);
  out << "iteration,dofs,h,energy,newton_iterations,estimate,error,marked\n";
  for (const auto& r : records)
    out << r.iteration << ',' << r.dofs << ',' << num(r.h) << ',' << num(r.energy) << ',' << r.newton_iterations << ','
        << num(r.estimate) << ',' << num(r.error) << ',' << r.marked << '\n';
  finish(out, path);
}

std::vector<RunRecord> read_records_csv(const std::string& path)
{
  std::ifstream in(path);
  if (!in)
    throw InputError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != "iteration,dofs,h,energy,newton_iterations,estimate,error,marked")
    throw InputError("'" + path + "' is not a convergence table");
  std::vector<RunRecord> out;
  while (std::getline(in, line))
  {
    if (line.empty())
      continue;
    std::stringstream ss(line);
    std::vector<std::string> f;
    std::string cell;
    while (std::getline(ss, cell, ','))
      f.push_back(cell);
    if (f.size() != 8)
      throw InputError("'" + path + "': malformed row '" + line + "'");
    RunRecord r;
    try
    {
      r.iteration = std::stoi(f[0]);
      r.dofs = std::stoi(f[1]);
      r.h = std::stod(f[2]);
      r.energy = std::stod(f[3]);
      r.newton_iterations = std::stoi(f[4]);
      r.estimate = std::stod(f[5]);
      r.error = std::stod(f[6]);
      r.marked = std::stoi(f[7]);
    }
    catch (const std::exception&)
    {
      throw InputError("'" + path + "': malformed row '" + line + "'");
    }
    out.push_back(r);
  }
  return out;
}

void write_timing_csv(const std::string& path, const std::vector<RunRecord>& records)
{
  auto out = open_out(path);
  out << "iteration,dofs,seconds\n";
  for (const auto& r : records)
    out << r.iteration << ',' << r.dofs << ',' << num(r.seconds) << '\n';
  finish(out, path);
}

void write_table_csv(const std::string& path, const std::vector<ConvergenceRow>& rows)
{
  auto out = open_out(path);
  out << "dofs,h,error,rate\n";
  for (const auto& r : rows)
    out << r.dofs << ',' << num(r.h) << ',' << num(r.error) << ',' << num(r.rate) << '\n';
  finish(out, path);
}

void write_vtk(const std::string& path, const SolveState& state, const Vector& indicator)
{
  const Mesh& m = state.mesh;
  const int d = m.dim();
  const int nc = 1 << d;
  const auto& ids = m.active_elements();
  if (indicator.size() != 0 && indicator.size() != static_cast<int>(ids.size()))
    throw InputError("write_vtk: indicator size does not match the active elements");

  // points: corners of active elements, each with the element that evaluates u there
  std::map<VertexId, int> index;
  std::vector<std::pair<ElementId, int>> owner;
  for (ElementId e : ids)
    for (int c = 0; c < nc; ++c)
      if (index.emplace(m.element(e).vertices[c], static_cast<int>(owner.size())).second)
        owner.emplace_back(e, c);

  auto out = open_out(path);
  out << "# vtk DataFile Version 3.0\nhpfem\nASCII\nDATASET UNSTRUCTURED_GRID\n";
  out << "POINTS " << owner.size() << " double\n";
  for (const auto& [e, c] : owner)
  {
    const Vec3& x = m.vertex(m.element(e).vertices[c]);
    out << num(x[0]) << ' ' << num(x[1]) << ' ' << num(x[2]) << '\n';
  }
  out << "CELLS " << ids.size() << ' ' << ids.size() * (nc + 1) << '\n';
  for (ElementId e : ids)
  {
    out << nc;
    for (int c = 0; c < nc; ++c)
      out << ' ' << index.at(m.element(e).vertices[vtk_order[c]]);
    out << '\n';
  }
  const int cell_type = d == 1 ? 3 : d == 2 ? 9 : 12;
  out << "CELL_TYPES " << ids.size() << '\n';
  for (std::size_t i = 0; i < ids.size(); ++i)
    out << cell_type << '\n';

  out << "CELL_DATA " << ids.size() << "\nSCALARS degree int 1\nLOOKUP_TABLE default\n";
  for (ElementId e : ids)
    out << m.degree(e) << '\n';
  out << "SCALARS indicator double 1\nLOOKUP_TABLE default\n";
  for (std::size_t i = 0; i < ids.size(); ++i)
    out << num(indicator.size() ? indicator[static_cast<int>(i)] : 0.0) << '\n';
  out << "SCALARS p_norm double 1\nLOOKUP_TABLE default\n";
  for (ElementId e : ids)
    out << num(state.Q && state.x.p.size() ? state.Q->value(state.x.p, e, Vec3::Zero()).norm() : 0.0) << '\n';

  const int ncomp = state.V.components();
  out << "POINT_DATA " << owner.size() << '\n';
  out << (ncomp == 1 ? "SCALARS u double 1\nLOOKUP_TABLE default\n" : "VECTORS u double\n");
  for (const auto& [e, c] : owner)
  {
    Vector v = Vector::Zero(ncomp);
    if (state.x.u.size())
      v = state.V.value(state.x.u, e, ElementMap::reference_corner(c, d));
    if (ncomp == 1)
      out << num(v[0]) << '\n';
    else
      out << num(v[0]) << ' ' << num(ncomp > 1 ? v[1] : 0.0) << ' ' << num(ncomp > 2 ? v[2] : 0.0) << '\n';
  }
  finish(out, path);
}

// Format:
//   hpfem-mesh 1
//   dim d
//   vertices n / x y z per line
//   elements m / id v_0 .. v_{2^d-1} tag_0 .. tag_{2d-1} per line (level 0)
//   refinements r / parent zx zy zz child_0 .. child_{2^d-1} per line
//   active a / id degree tag_0 .. tag_{2d-1} per line
void write_mesh(const std::string& path, const Mesh& mesh)
{
  const int d = mesh.dim();
  const int nc = 1 << d;
  const auto n = static_cast<ElementId>(mesh.num_elements_total());
  std::vector<ElementId> roots;
  std::vector<ElementId> refined;
  std::map<VertexId, int> vindex;
  for (ElementId e = 0; e < n; ++e)
  {
    const Element& el = mesh.element(e);
    if (el.level == 0)
    {
      roots.push_back(e);
      for (int c = 0; c < nc; ++c)
        vindex.emplace(el.vertices[c], 0);
    }
  }
  // refinements reachable from the roots, replayed in the order their children were created
  std::vector<ElementId> stack = roots;
  while (!stack.empty())
  {
    const ElementId e = stack.back();
    stack.pop_back();
    const Element& el = mesh.element(e);
    if (!el.children.empty())
    {
      refined.push_back(e);
      stack.insert(stack.end(), el.children.begin(), el.children.end());
    }
  }
  std::sort(refined.begin(), refined.end(),
            [&](ElementId a, ElementId b) { return mesh.element(a).children[0] < mesh.element(b).children[0]; });
  int next = 0;
  for (auto& [v, i] : vindex)
    i = next++;

  auto out = open_out(path);
  out << "hpfem-mesh 1\ndim " << d << "\nvertices " << vindex.size() << '\n';
  for (const auto& [v, i] : vindex)
  {
    const Vec3& x = mesh.vertex(v);
    char buf[96];
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g\n", x[0], x[1], x[2]);
    out << buf;
  }
  auto tags = [&](const Element& el) {
    std::string s;
    for (int f = 0; f < 2 * d; ++f)
      s += ' ' + std::to_string(static_cast<int>(el.facet_tags[f]));
    return s;
  };
  out << "elements " << roots.size() << '\n';
  for (ElementId e : roots)
  {
    const Element& el = mesh.element(e);
    out << e;
    for (int c = 0; c < nc; ++c)
      out << ' ' << vindex.at(el.vertices[c]);
    out << tags(el) << '\n';
  }
  out << "refinements " << refined.size() << '\n';
  for (ElementId e : refined)
  {
    const Element& el = mesh.element(e);
    char buf[96];
    std::snprintf(buf, sizeof buf, " %.17g %.17g %.17g", el.dividing_point[0], el.dividing_point[1],
                  el.dividing_point[2]);
    out << e << buf;
    for (ElementId c : el.children)
      out << ' ' << c;
    out << '\n';
  }
  out << "active " << mesh.num_active() << '\n';
  for (ElementId e : mesh.active_elements())
    out << e << ' ' << mesh.degree(e) << tags(mesh.element(e)) << '\n';
  finish(out, path);
}

Mesh read_mesh(const std::string& path)
{
  std::ifstream in(path);
  if (!in)
    throw InputError("cannot open mesh file '" + path + "'");
  auto expect = [&](const std::string& word) {
    std::string w;
    if (!(in >> w) || w != word)
      throw InputError("mesh file '" + path + "': expected '" + word + "'");
  };
  auto read_int = [&]() {
    long v;
    if (!(in >> v))
      throw InputError("mesh file '" + path + "': expected an integer");
    return static_cast<int>(v);
  };
  auto read_tag = [&]() {
    const int t = read_int();
    if (t < 0 || t > 2)
      throw InputError("mesh file '" + path + "': bad facet tag");
    return static_cast<BoundaryTag>(t);
  };
  expect("hpfem-mesh");
  if (read_int() != 1)
    throw InputError("mesh file '" + path + "': unsupported version");
  expect("dim");
  const int d = read_int();
  if (d < 1 || d > 3)
    throw InputError("mesh file '" + path + "': bad dimension");
  const int nc = 1 << d;
  expect("vertices");
  const int nv = read_int();
  std::vector<Vec3> verts(std::max(nv, 0));
  for (auto& x : verts)
    if (!(in >> x[0] >> x[1] >> x[2]))
      throw InputError("mesh file '" + path + "': bad vertex");
  expect("elements");
  const int ne = read_int();
  std::vector<int> root_ids;
  std::vector<std::array<VertexId, 8>> elems;
  std::vector<std::array<BoundaryTag, 6>> root_tags;
  for (int i = 0; i < ne; ++i)
  {
    root_ids.push_back(read_int());
    std::array<VertexId, 8> v;
    v.fill(-1);
    for (int c = 0; c < nc; ++c)
    {
      v[c] = read_int();
      if (v[c] < 0 || v[c] >= nv)
        throw InputError("mesh file '" + path + "': vertex index out of range");
    }
    elems.push_back(v);
    std::array<BoundaryTag, 6> t{};
    for (int f = 0; f < 2 * d; ++f)
      t[f] = read_tag();
    root_tags.push_back(t);
  }
  Mesh m(d, verts, elems, BoundaryTag::dirichlet);
  std::map<int, ElementId> id;
  for (int i = 0; i < ne; ++i)
  {
    id[root_ids[i]] = i;
    for (int f = 0; f < 2 * d; ++f)
      if (m.facet_tag(i, f) != BoundaryTag::interior)
        m.set_facet_tag_in_place(i, f, root_tags[i][f]);
  }
  auto lookup = [&](int old) {
    const auto it = id.find(old);
    if (it == id.end())
      throw InputError("mesh file '" + path + "': unknown element " + std::to_string(old));
    return it->second;
  };
  expect("refinements");
  const int nr = read_int();
  for (int i = 0; i < nr; ++i)
  {
    const ElementId e = lookup(read_int());
    Vec3 z;
    if (!(in >> z[0] >> z[1] >> z[2]))
      throw InputError("mesh file '" + path + "': bad dividing point");
    m.refine_in_place(e, z, false);
    const auto& kids = m.element(e).children;
    for (int c = 0; c < nc; ++c)
      id[read_int()] = kids[c];
  }
  expect("active");
  const int na = read_int();
  if (na != static_cast<int>(m.num_active()))
    throw InputError("mesh file '" + path + "': active element count does not match the refinements");
  for (int i = 0; i < na; ++i)
  {
    const ElementId e = lookup(read_int());
    if (!m.is_active(e))
      throw InputError("mesh file '" + path + "': element listed as active is refined");
    m.set_degree_in_place(e, read_int());
    for (int f = 0; f < 2 * d; ++f)
    {
      const BoundaryTag t = read_tag();
      if (m.facet_tag(e, f) != BoundaryTag::interior)
        m.set_facet_tag_in_place(e, f, t);
    }
  }
  return m;
}

} // namespace hpfem
