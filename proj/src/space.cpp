#include "hpfem/space.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/QR>

#include <algorithm>
#include <climits>
#include <cmath>
#include <functional>
#include <mutex>

namespace hpfem
{

// ------------------------------------------------------ deviatoric basis

const std::vector<Mat3>& deviatoric_basis(int dim)
{
  static const std::array<std::vector<Mat3>, 4> bases = [] {
    std::array<std::vector<Mat3>, 4> b;
    const double s2 = 1.0 / std::sqrt(2.0);
    const double s6 = 1.0 / std::sqrt(6.0);
    Mat3 m;
    // d = 2
    m.setZero();
    m(0, 0) = s2;
    m(1, 1) = -s2;
    b[2].push_back(m);
    m.setZero();
    m(0, 1) = m(1, 0) = s2;
    b[2].push_back(m);
    // d = 3
    m.setZero();
    m(0, 0) = s2;
    m(1, 1) = -s2;
    b[3].push_back(m);
    m.setZero();
    m(0, 0) = s6;
    m(1, 1) = s6;
    m(2, 2) = -2.0 * s6;
    b[3].push_back(m);
    m.setZero();
    m(0, 1) = m(1, 0) = s2;
    b[3].push_back(m);
    m.setZero();
    m(0, 2) = m(2, 0) = s2;
    b[3].push_back(m);
    m.setZero();
    m(1, 2) = m(2, 1) = s2;
    b[3].push_back(m);
    return b;
  }();
  if (dim < 1 || dim > 3)
    throw InputError("deviatoric_basis: dimension out of range");
  return bases[dim];
}

Vector deviatoric_coords(const Mat3& m, int dim)
{
  const auto& phi = deviatoric_basis(dim);
  Vector c(phi.size());
  for (std::size_t k = 0; k < phi.size(); ++k)
    c[k] = (phi[k].array() * m.array()).sum();
  return c;
}

Mat3 from_deviatoric_coords(const Vector& c, int dim)
{
  const auto& phi = deviatoric_basis(dim);
  Mat3 m = Mat3::Zero();
  for (std::size_t k = 0; k < phi.size(); ++k)
    m += c[k] * phi[k];
  return m;
}

// ---------------------------------------------------- constraint coefficients

std::vector<double> constraint_coeffs_1d(int j, double a, double b, int r)
{
  std::vector<double> c(r + 1, 0.0);
  auto f = [&](double t) { return poly::integrated_legendre(j, a + 0.5 * (b - a) * (t + 1.0)); };
  c[0] = f(-1.0);
  if (r >= 1)
    c[1] = f(1.0);
  const auto& rule = poly::gauss_rule(std::max(j, r) + 2);
  for (int m = 2; m <= r; ++m)
  {
    double s = 0.0;
    for (std::size_t q = 0; q < rule.points.size(); ++q)
    {
      const double t = rule.points[q];
      const double df = poly::integrated_legendre_derivative(j, a + 0.5 * (b - a) * (t + 1.0)) * 0.5 * (b - a);
      s += rule.weights[q] * df * poly::legendre(m - 1, t);
    }
    c[m] = 0.5 * (2 * m - 1) * s;
  }
  return c;
}

Vector constraint_coeffs(const MultiIndex& j, const RefBox& child_box, int dim, int r)
{
  std::array<std::vector<double>, max_dim> c1;
  for (int k = 0; k < dim; ++k)
    c1[k] = constraint_coeffs_1d(j[k], child_box.lower[k], child_box.upper[k], r);
  const int n = ipow(r + 1, dim);
  Vector out(n);
  for (int i = 0; i < n; ++i)
  {
    const MultiIndex m = unflatten(i, r + 1, dim);
    double v = 1.0;
    for (int k = 0; k < dim; ++k)
      v *= c1[k][m[k]];
    out[i] = v;
  }
  return out;
}

// ------------------------------------------------------------------ VSpace

namespace
{

constexpr double node_tol = 1e-8;

// Node type t in {0,1,2}^d; 2 marks a free direction.
struct NodeType
{
  MultiIndex t{0, 0, 0};
  int dim = 0; // number of free directions
};

NodeType node_of_index(int idx, int d)
{
  NodeType n;
  n.t = unflatten(idx, 3, d);
  for (int k = 0; k < d; ++k)
    if (n.t[k] == 2)
      ++n.dim;
  return n;
}

int node_index_of_shape(const MultiIndex& j, int d)
{
  MultiIndex t{0, 0, 0};
  for (int k = 0; k < d; ++k)
    t[k] = j[k] <= 1 ? j[k] : 2;
  return flatten(t, 3, d);
}

Vec3 node_center(const MultiIndex& t, int d)
{
  Vec3 c = Vec3::Zero();
  for (int k = 0; k < d; ++k)
    c[k] = t[k] == 0 ? -1.0 : (t[k] == 1 ? 1.0 : 0.0);
  return c;
}

// Whether the closed entity of node t (on the element with map fe) lies in the
// closed entity of node tm of element m.
bool entity_inside(const Mesh& mesh, const ElementMap& fe, const MultiIndex& t, ElementId m, const MultiIndex& tm)
{
  const int d = mesh.dim();
  const ElementMap fm = mesh.element_map(m);
  MultiIndex lo = t, hi = t;
  for (int k = 0; k < d; ++k)
    if (t[k] == 2)
    {
      lo[k] = 0;
      hi[k] = 1;
    }
  for (int c = 0; c < (1 << d); ++c)
  {
    Vec3 xh = Vec3::Zero();
    bool corner = true;
    for (int k = 0; k < d; ++k)
    {
      const int b = (c >> k) & 1;
      if (b < lo[k] || b > hi[k])
        corner = false;
      xh[k] = b ? 1.0 : -1.0;
    }
    if (!corner)
      continue;
    const auto y = fm.inverse(fe.map(xh));
    if (!y)
      return false;
    for (int k = 0; k < d; ++k)
    {
      const bool ok = tm[k] == 2 ? std::abs((*y)[k]) <= 1.0 + node_tol
                                 : std::abs((*y)[k] - (tm[k] ? 1.0 : -1.0)) < node_tol;
      if (!ok)
        return false;
    }
  }
  return true;
}

// Element corners of a node, ordered by the bits of its free directions.
std::vector<int> node_corners(const MultiIndex& t, int d)
{
  std::vector<int> free;
  int base = 0;
  for (int k = 0; k < d; ++k)
  {
    if (t[k] == 2)
      free.push_back(k);
    else if (t[k] == 1)
      base |= 1 << k;
  }
  std::vector<int> out;
  for (int s = 0; s < (1 << free.size()); ++s)
  {
    int c = base;
    for (std::size_t b = 0; b < free.size(); ++b)
      if ((s >> b) & 1)
        c |= 1 << free[b];
    out.push_back(c);
  }
  return out;
}

using EntityKey = std::vector<VertexId>;

EntityKey node_key(const Mesh& mesh, ElementId e, const MultiIndex& t)
{
  EntityKey key;
  for (int c : node_corners(t, mesh.dim()))
    key.push_back(mesh.element(e).vertices[c]);
  std::sort(key.begin(), key.end());
  return key;
}

bool node_on_dirichlet(const Mesh& mesh, ElementId e, const MultiIndex& t)
{
  for (int k = 0; k < mesh.dim(); ++k)
    if (t[k] != 2 && mesh.facet_tag(e, 2 * k + t[k]) == BoundaryTag::dirichlet)
      return true;
  return false;
}

struct NodeRecord
{
  bool hanging = false;
  ElementId master = -1;
  int master_node = -1;
  EntityKey key;
};

struct EntityData
{
  int dim = 0;
  int degree = INT_MAX;
  bool dirichlet = false;
  int first_dof = -1;
  ElementId cell = -1;
  Vec3 center = Vec3::Zero();
};

// Canonical frame of an entity as seen from a node of an element: for each free
// local direction its canonical axis and whether it is reversed.
struct Frame
{
  std::array<int, max_dim> axis{0, 0, 0};
  std::array<bool, max_dim> flipped{false, false, false};
  std::vector<int> free;
};

Frame canonical_frame(const Mesh& mesh, ElementId e, const MultiIndex& t)
{
  const int d = mesh.dim();
  Frame fr;
  for (int k = 0; k < d; ++k)
    if (t[k] == 2)
      fr.free.push_back(k);
  const auto corners = node_corners(t, d);
  const auto& verts = mesh.element(e).vertices;
  // origin: corner with minimal vertex id
  int o = 0;
  for (std::size_t s = 1; s < corners.size(); ++s)
    if (verts[corners[s]] < verts[corners[o]])
      o = static_cast<int>(s);
  std::vector<std::pair<VertexId, int>> adj;
  for (std::size_t b = 0; b < fr.free.size(); ++b)
  {
    adj.emplace_back(verts[corners[o ^ (1 << b)]], static_cast<int>(b));
    fr.flipped[fr.free[b]] = (o >> b) & 1;
  }
  std::sort(adj.begin(), adj.end());
  for (std::size_t a = 0; a < adj.size(); ++a)
    fr.axis[fr.free[adj[a].second]] = static_cast<int>(a);
  return fr;
}

// Pseudo-inverse of the trace basis on a closure of an r-dimensional node, with
// (p+2)^r Chebyshev-Lobatto points.
struct TraceFit
{
  std::vector<Vec3> points; // coordinates along the free directions
  Matrix basis;             // points x (p+1)^r
  Matrix pinv;
};

const TraceFit& trace_fit(int p, int r)
{
  static std::map<std::pair<int, int>, TraceFit> cache;
  static std::mutex mutex;
  std::lock_guard<std::mutex> lock(mutex);
  const auto key = std::make_pair(p, r);
  auto it = cache.find(key);
  if (it != cache.end())
    return it->second;
  TraceFit f;
  const int n = p + 2;
  const auto pts = poly::chebyshev_lobatto_points(n);
  const int np = ipow(n, r);
  const int nb = ipow(p + 1, r);
  f.basis.resize(np, nb);
  for (int s = 0; s < np; ++s)
  {
    const MultiIndex ps = unflatten(s, n, r);
    Vec3 x = Vec3::Zero();
    for (int b = 0; b < r; ++b)
      x[b] = pts[ps[b]];
    f.points.push_back(x);
    for (int i = 0; i < nb; ++i)
      f.basis(s, i) = poly::tensor_shape(unflatten(i, p + 1, r), x, r);
  }
  f.pinv = f.basis.completeOrthogonalDecomposition().pseudoInverse();
  return cache.emplace(key, std::move(f)).first->second;
}

} // namespace

VSpace::VSpace(const Mesh& mesh, int components) : mesh_(mesh), ncomp_(components)
{
  if (components < 1)
    throw InputError("VSpace: components must be positive");
  const int d = mesh_.dim();
  const int n_nodes = ipow(3, d);
  const auto& active = mesh_.active_elements();

  // pass 1: classify local nodes
  std::map<ElementId, std::vector<NodeRecord>> records;
  for (ElementId e : active)
  {
    auto& rec = records[e];
    rec.resize(n_nodes);
    const ElementMap fe = mesh_.element_map(e);
    for (int ni = 0; ni < n_nodes; ++ni)
    {
      const NodeType nt = node_of_index(ni, d);
      rec[ni].key = node_key(mesh_, e, nt.t);
      if (nt.dim == d)
        continue;
      const Vec3 x = fe.map(node_center(nt.t, d));
      int best_dim = -1;
      ElementId best = -1;
      int best_node = -1;
      for (const auto& [m, xm] : mesh_.locate(x))
      {
        if (m == e)
          continue;
        MultiIndex tm{0, 0, 0};
        int rm = 0;
        for (int k = 0; k < d; ++k)
        {
          if (std::abs(xm[k] + 1.0) < node_tol)
            tm[k] = 0;
          else if (std::abs(xm[k] - 1.0) < node_tol)
            tm[k] = 1;
          else
          {
            tm[k] = 2;
            ++rm;
          }
        }
        if (rm < nt.dim || rm == d)
        {
          if (rm == d)
            throw SolverError("VSpace: node center inside another element (overlapping elements)");
          continue;
        }
        if (node_key(mesh_, m, tm) == rec[ni].key)
          continue;
        // same-dimensional entities: hanging only if the own entity lies inside
        // m's (an off-center split puts the coarse midpoint inside a fine edge)
        if (rm == nt.dim && !entity_inside(mesh_, fe, nt.t, m, tm))
          continue;
        const bool better = rm > best_dim ||
                            (rm == best_dim && (mesh_.element(m).level < mesh_.element(best).level ||
                                                (mesh_.element(m).level == mesh_.element(best).level && m < best)));
        if (better)
        {
          best_dim = rm;
          best = m;
          best_node = flatten(tm, 3, d);
        }
      }
      if (best >= 0)
      {
        rec[ni].hanging = true;
        rec[ni].master = best;
        rec[ni].master_node = best_node;
        ++num_hanging_;
      }
    }
  }

  // pass 2: entities, degrees (minimum rule), Dirichlet flags
  std::map<EntityKey, EntityData> entities;
  std::vector<EntityKey> order;
  for (ElementId e : active)
  {
    const ElementMap fe = mesh_.element_map(e);
    for (int ni = 0; ni < n_nodes; ++ni)
    {
      const NodeRecord& r = records[e][ni];
      if (r.hanging)
        continue;
      const NodeType nt = node_of_index(ni, d);
      auto [it, inserted] = entities.try_emplace(r.key);
      if (inserted)
      {
        order.push_back(r.key);
        it->second.dim = nt.dim;
        it->second.center = fe.map(node_center(nt.t, d));
        if (nt.dim == d)
          it->second.cell = e;
      }
      it->second.degree = std::min(it->second.degree, mesh_.degree(e));
      if (node_on_dirichlet(mesh_, e, nt.t))
        it->second.dirichlet = true;
    }
  }
  // hanging nodes limit the degree of the master entity and its sub-entities
  std::function<void(ElementId, int, int)> limit = [&](ElementId m, int ni, int p) {
    const NodeRecord& r = records.at(m)[ni];
    if (r.hanging)
    {
      limit(r.master, r.master_node, p);
      return;
    }
    auto& ent = entities.at(r.key);
    ent.degree = std::min(ent.degree, p);
    // sub-entities of this node in m
    const NodeType nt = node_of_index(ni, d);
    for (int sj = 0; sj < n_nodes; ++sj)
    {
      const NodeType st = node_of_index(sj, d);
      if (sj == ni || st.dim >= nt.dim)
        continue;
      bool sub = true;
      for (int k = 0; k < d; ++k)
        if (nt.t[k] != 2 && st.t[k] != nt.t[k])
          sub = false;
      if (sub)
        limit(m, sj, p);
    }
  };
  for (ElementId e : active)
    for (int ni = 0; ni < n_nodes; ++ni)
    {
      const NodeRecord& r = records[e][ni];
      if (r.hanging)
        limit(r.master, r.master_node, mesh_.degree(e));
    }

  // pass 3: number dofs
  for (const auto& key : order)
  {
    EntityData& ent = entities.at(key);
    if (ent.dirichlet)
      continue;
    const int count = ent.dim == 0 ? 1 : (ent.degree >= 2 ? ipow(ent.degree - 1, ent.dim) : 0);
    if (count == 0)
      continue;
    ent.first_dof = static_cast<int>(dofs_.size());
    for (int s = 0; s < count; ++s)
    {
      DofInfo info;
      info.entity_dim = ent.dim;
      info.cell = ent.cell;
      info.center = ent.center;
      if (ent.dim > 0)
      {
        const MultiIndex m = unflatten(s, ent.degree - 1, ent.dim);
        for (int b = 0; b < ent.dim; ++b)
          info.index[b] = m[b] + 2;
      }
      dofs_.push_back(info);
    }
  }

  // pass 4: connectivity, masters first
  std::map<ElementId, int> state;
  std::function<void(ElementId)> build = [&](ElementId e) {
    int& st = state[e];
    if (st == 2)
      return;
    if (st == 1)
      throw SolverError("VSpace: cyclic hanging-node dependency");
    st = 1;
    const int p = mesh_.degree(e);
    const int nloc = ipow(p + 1, d);
    std::map<int, Vector> rows;
    auto row = [&](int dof) -> Vector& {
      auto it = rows.find(dof);
      if (it == rows.end())
        it = rows.emplace(dof, Vector::Zero(nloc)).first;
      return it->second;
    };

    // regular nodes
    std::vector<Frame> frames(n_nodes);
    for (int ni = 0; ni < n_nodes; ++ni)
      if (!records[e][ni].hanging)
        frames[ni] = canonical_frame(mesh_, e, node_of_index(ni, d).t);
    for (int jl = 0; jl < nloc; ++jl)
    {
      const MultiIndex j = unflatten(jl, p + 1, d);
      const int ni = node_index_of_shape(j, d);
      const NodeRecord& r = records[e][ni];
      if (r.hanging)
        continue;
      const EntityData& ent = entities.at(r.key);
      if (ent.first_dof < 0)
        continue;
      const Frame& fr = frames[ni];
      MultiIndex m{0, 0, 0};
      double sign = 1.0;
      bool ok = true;
      for (int k : fr.free)
      {
        if (j[k] > ent.degree)
          ok = false;
        m[fr.axis[k]] = j[k] - 2;
        if (fr.flipped[k] && (j[k] % 2))
          sign = -sign;
      }
      if (!ok)
        continue;
      const int dof = ent.first_dof + (ent.dim == 0 ? 0 : flatten(m, ent.degree - 1, ent.dim));
      row(dof)[jl] += sign;
    }

    // hanging nodes: fit the traces of the master's global functions
    const ElementMap fe = mesh_.element_map(e);
    for (int ni = 0; ni < n_nodes; ++ni)
    {
      const NodeRecord& r = records[e][ni];
      if (!r.hanging)
        continue;
      const NodeType nt = node_of_index(ni, d);
      std::vector<int> free;
      for (int k = 0; k < d; ++k)
        if (nt.t[k] == 2)
          free.push_back(k);
      const int rdim = nt.dim;
      // shapes of this node
      std::vector<int> own_shapes;
      for (int jl = 0; jl < nloc; ++jl)
        if (node_index_of_shape(unflatten(jl, p + 1, d), d) == ni)
          own_shapes.push_back(jl);

      const ElementId m = r.master;
      build(m);
      const ConnectivityMatrix& cm = conn_.at(m);
      if (cm.dofs.empty())
        continue;
      const ElementMap fm = mesh_.element_map(m);
      const int pm = mesh_.degree(m);

      const TraceFit& tf = trace_fit(p, rdim);
      const int np = static_cast<int>(tf.points.size());
      Matrix vals(np, cm.dofs.size());
      for (int s = 0; s < np; ++s)
      {
        Vec3 xk = node_center(nt.t, d);
        for (int b = 0; b < rdim; ++b)
          xk[free[b]] = tf.points[s][b];
        const auto xm = fm.inverse(fe.map(xk));
        if (!xm)
          throw SolverError("VSpace: inverse map failed at a hanging node");
        Vec3 xc = *xm;
        for (int k = 0; k < d; ++k)
          xc[k] = std::clamp(xc[k], -1.0, 1.0);
        const auto shapes = poly::tensor_shapes_all(pm, d, xc);
        vals.row(s) = (cm.coeffs * shapes.value).transpose();
      }
      const Matrix coef = tf.pinv * vals; // (p+1)^r x ndofs
      const double scale = std::max(1.0, vals.cwiseAbs().maxCoeff());
      if ((tf.basis * coef - vals).cwiseAbs().maxCoeff() > 1e-9 * scale)
        throw SolverError("VSpace: master trace not representable on hanging node of element " +
                          std::to_string(e) + " (degree too low)");
      for (int jl : own_shapes)
      {
        const MultiIndex j = unflatten(jl, p + 1, d);
        MultiIndex jr{0, 0, 0};
        for (int b = 0; b < rdim; ++b)
          jr[b] = j[free[b]];
        const int ci = flatten(jr, p + 1, rdim);
        for (std::size_t g = 0; g < cm.dofs.size(); ++g)
        {
          const double c = coef(ci, g);
          if (std::abs(c) > 1e-13)
            row(cm.dofs[g])[jl] += c;
        }
      }
    }

    ConnectivityMatrix cmat;
    for (const auto& [dof, v] : rows)
      if (v.cwiseAbs().maxCoeff() > 0.0)
        cmat.dofs.push_back(dof);
    cmat.coeffs.resize(cmat.dofs.size(), nloc);
    for (std::size_t i = 0; i < cmat.dofs.size(); ++i)
      cmat.coeffs.row(i) = rows.at(cmat.dofs[i]).transpose();
    conn_[e] = std::move(cmat);
    st = 2;
  };
  for (ElementId e : active)
    build(e);
}

std::vector<int> VSpace::interior_dofs(ElementId e) const
{
  std::vector<int> out;
  for (int i : connectivity(e).dofs)
    if (dofs_[i].cell == e)
      out.push_back(i);
  return out;
}

Matrix VSpace::local_coefficients(const Vector& coeffs, ElementId e) const
{
  if (coeffs.size() != num_dofs())
    throw InputError("VSpace: coefficient vector has wrong length");
  const auto& c = connectivity(e);
  Matrix u(c.dofs.size(), ncomp_);
  for (std::size_t i = 0; i < c.dofs.size(); ++i)
    for (int k = 0; k < ncomp_; ++k)
      u(i, k) = coeffs[ncomp_ * c.dofs[i] + k];
  return c.coeffs.transpose() * u;
}

Vector VSpace::value(const Vector& coeffs, ElementId e, const Vec3& xhat) const
{
  const Matrix loc = local_coefficients(coeffs, e);
  const auto s = poly::tensor_shapes_all(degree(e), dim(), xhat);
  return loc.transpose() * s.value;
}

Mat3 VSpace::gradient(const Vector& coeffs, ElementId e, const Vec3& xhat) const
{
  const int d = dim();
  const Matrix loc = local_coefficients(coeffs, e);
  const auto s = poly::tensor_shapes_all(degree(e), d, xhat);
  const Mat3 J = mesh_.element_map(e).jacobian(xhat);
  Mat3 Jinv = Mat3::Zero();
  Jinv.topLeftCorner(d, d) = J.topLeftCorner(d, d).inverse();
  Mat3 g = Mat3::Zero();
  const Matrix gref = loc.transpose() * s.grad; // ncomp x 3
  for (int k = 0; k < ncomp_; ++k)
    g.row(k) = gref.row(k) * Jinv;
  return g;
}

double VSpace::basis_value(int scalar_dof, ElementId e, const Vec3& xhat) const
{
  const auto& c = connectivity(e);
  const auto it = std::lower_bound(c.dofs.begin(), c.dofs.end(), scalar_dof);
  if (it == c.dofs.end() || *it != scalar_dof)
    return 0.0;
  const auto s = poly::tensor_shapes_all(degree(e), dim(), xhat);
  return c.coeffs.row(it - c.dofs.begin()).dot(s.value);
}

// ------------------------------------------------------------------ QSpace

QSpace::QSpace(const Mesh& mesh, double yield_stress) : mesh_(mesh), sigma_y_(yield_stress)
{
  if (!(yield_stress > 0.0))
    throw InputError("QSpace: yield stress must be positive");
  const int d = mesh_.dim();
  std::vector<double> D;
  for (ElementId e : mesh_.active_elements())
  {
    const int p = mesh_.degree(e);
    offset_[e] = n_total_;
    if (!bases_.count(p))
      bases_.emplace(p, poly::GaussLagrangeBasis(p, d));
    const auto& b = bases_.at(p);
    const int n = b.size();
    n_total_ += n;

    const ElementMap fe = mesh_.element_map(e);
    const auto rule = poly::tensor_gauss_rule(p + 2, d);
    Matrix M = Matrix::Zero(n, n);
    std::vector<double> vals;
    for (std::size_t q = 0; q < rule.points.size(); ++q)
    {
      const double det = fe.det_jacobian(rule.points[q]);
      if (!(det > 0.0))
        throw InputError("QSpace: degenerate element " + std::to_string(e));
      b.values(rule.points[q], vals);
      const double w = rule.weights[q] * det;
      for (int k = 0; k < n; ++k)
        for (int l = 0; l < n; ++l)
          M(k, l) += w * vals[k] * vals[l];
    }
    const Vector De = M.rowwise().sum();
    // A M = diag(D)  =>  A = diag(D) M^{-1}
    const Matrix Minv = M.ldlt().solve(Matrix::Identity(n, n));
    Matrix A = De.asDiagonal() * Minv;
    // exact identity when the local mass matrix is diagonal
    bool diagonal = true;
    for (int k = 0; k < n && diagonal; ++k)
      for (int l = 0; l < n; ++l)
        if (k != l && std::abs(M(k, l)) > 1e-15 * M(k, k))
        {
          diagonal = false;
          break;
        }
    if (diagonal)
      A.setIdentity();
    mass_[e] = M;
    bior_[e] = A;
    for (int k = 0; k < n; ++k)
      D.push_back(De[k]);
  }
  D_ = Eigen::Map<Vector>(D.data(), D.size());
  sigma_ = Vector::Constant(D_.size(), sigma_y_);
}

const poly::GaussLagrangeBasis& QSpace::basis(ElementId e) const
{
  return bases_.at(mesh_.degree(e));
}

double QSpace::phi(ElementId e, int k, const Vec3& xhat) const
{
  return basis(e).value(k, xhat);
}

Mat3 QSpace::value(const Vector& q, ElementId e, const Vec3& xhat) const
{
  const int L = this->L();
  const int off = offset(e);
  std::vector<double> vals;
  basis(e).values(xhat, vals);
  Vector c = Vector::Zero(L);
  for (std::size_t k = 0; k < vals.size(); ++k)
    c += vals[k] * q.segment(L * (off + k), L);
  return from_deviatoric_coords(c, dim());
}

Mat3 QSpace::value_dual(const Vector& mu, ElementId e, const Vec3& xhat) const
{
  const int L = this->L();
  const int off = offset(e);
  std::vector<double> vals;
  basis(e).values(xhat, vals);
  const Matrix& A = biorthogonal(e);
  const int n = static_cast<int>(vals.size());
  Vector c = Vector::Zero(L);
  for (int k = 0; k < n; ++k)
  {
    double w = 0.0;
    for (int l = 0; l < n; ++l)
      w += A(k, l) * vals[l];
    c += w * mu.segment(L * (off + k), L);
  }
  return from_deviatoric_coords(c, dim());
}

} // namespace hpfem
