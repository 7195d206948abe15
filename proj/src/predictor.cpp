#include "hpfem/predictor.hpp"
#include "hpfem/parallel.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <set>

namespace hpfem
{

namespace
{

// Child (bit k = upper side of z_k) containing a reference point.
int child_of(const Vec3& xhat, const Vec3& z, int d)
{
  int i = 0;
  for (int k = 0; k < d; ++k)
    if (xhat[k] > z[k])
      i |= 1 << k;
  return i;
}

bool in_node_support(const InternalNode& n, int child)
{
  for (std::size_t m = 0; m < n.a.size(); ++m)
    if (((child >> n.a[m]) & 1) != n.ell[m])
      return false;
  return true;
}

// j(i, p): distribution entries along a, hat 1 - i_k elsewhere.
MultiIndex child_index(const InternalNode& n, const MultiIndex& dist, int child, int d)
{
  MultiIndex j{0, 0, 0};
  for (int k = 0; k < d; ++k)
    j[k] = 1 - ((child >> k) & 1);
  for (std::size_t m = 0; m < n.a.size(); ++m)
    j[n.a[m]] = dist[m];
  return j;
}

// Distributions over r directions with entries in [lo, hi].
std::vector<MultiIndex> distributions(int r, int lo, int hi)
{
  std::vector<MultiIndex> out;
  if (hi < lo)
    return out;
  const int n = hi - lo + 1;
  for (int q = 0; q < ipow(n, r); ++q)
  {
    MultiIndex m = unflatten(q, n, r);
    for (int k = 0; k < r; ++k)
      m[k] += lo;
    for (int k = r; k < max_dim; ++k)
      m[k] = 0;
    out.push_back(m);
  }
  return out;
}

std::array<BoundaryTag, 6> child_tags(const std::array<BoundaryTag, 6>& parent, int child, int d)
{
  std::array<BoundaryTag, 6> t;
  t.fill(BoundaryTag::interior);
  for (int f = 0; f < 2 * d; ++f)
    if (((child >> facet_direction(f)) & 1) == facet_side(f))
      t[f] = parent[f];
  return t;
}

// Scalar representation expanded to ncomp components (index ncomp * a + k).
Matrix expand(const Matrix& M, int nc)
{
  if (nc == 1)
    return M;
  Matrix out = Matrix::Zero(M.rows() * nc, M.cols() * nc);
  for (int i = 0; i < M.rows(); ++i)
    for (int j = 0; j < M.cols(); ++j)
      for (int k = 0; k < nc; ++k)
        out(nc * i + k, nc * j + k) = M(i, j);
  return out;
}

Vector flatten_local(const Matrix& coeffs)
{
  // n_local x nc -> index nc * a + k
  const Matrix t = coeffs.transpose();
  return Eigen::Map<const Vector>(t.data(), t.size());
}

} // namespace

// ------------------------------------------------------------------ decomposition

LocalDecomposition local_split(const VSpace& V, const Vector& u, ElementId e)
{
  if (u.size() != V.num_dofs())
    throw InputError("local_split: coefficient vector has the wrong size");
  const int nc = V.components();
  LocalDecomposition out;
  out.element = e;
  out.u_loc = Vector::Zero(u.size());
  for (int i : V.interior_dofs(e))
    for (int k = 0; k < nc; ++k)
    {
      out.local_dofs.push_back(nc * i + k);
      out.u_loc[nc * i + k] = u[nc * i + k];
    }
  out.u_tilde = u - out.u_loc;
  return out;
}

// ------------------------------------------------------------------ enrichment sets

std::vector<InternalNode> internal_nodes(int dim)
{
  std::vector<InternalNode> out;
  for (int r = 0; r <= dim; ++r)
    for (int mask = 0; mask < (1 << dim); ++mask)
    {
      if (__builtin_popcount(static_cast<unsigned>(mask)) != r)
        continue;
      std::vector<int> a;
      for (int k = 0; k < dim; ++k)
        if ((mask >> k) & 1)
          a.push_back(k);
      for (int l = 0; l < (1 << r); ++l)
      {
        InternalNode n;
        n.a = a;
        for (int m = 0; m < r; ++m)
          n.ell.push_back((l >> m) & 1);
        out.push_back(n);
      }
    }
  // order by r, then a (lexicographic), then ell
  std::stable_sort(out.begin(), out.end(), [](const InternalNode& x, const InternalNode& y) {
    if (x.a.size() != y.a.size())
      return x.a.size() < y.a.size();
    return x.a < y.a;
  });
  return out;
}

int EnrichmentSet::required_degree() const
{
  int r = 1;
  if (kind == EnrichmentKind::p)
  {
    for (const auto& j : J)
      for (int k = 0; k < dim; ++k)
        r = std::max(r, j[k]);
  }
  else
  {
    for (const auto& [n, dist] : functions)
      for (std::size_t m = 0; m < nodes[n].a.size(); ++m)
        r = std::max(r, dist[m]);
  }
  return r;
}

int EnrichmentSet::target_degree() const
{
  return kind == EnrichmentKind::p ? required_degree() : std::max(parent_degree, required_degree());
}

double EnrichmentSet::value(int l, const Vec3& xhat) const
{
  if (kind == EnrichmentKind::p)
    return poly::tensor_shape(J.at(l), xhat, dim);
  const auto& [ni, dist] = functions.at(l);
  const int i = child_of(xhat, z, dim);
  if (!in_node_support(nodes[ni], i))
    return 0.0;
  const RefBox box = refinement_pattern(z, dim)[i];
  return poly::tensor_shape(child_index(nodes[ni], dist, i, dim), box.unmap(xhat), dim);
}

Vec3 EnrichmentSet::gradient(int l, const Vec3& xhat) const
{
  if (kind == EnrichmentKind::p)
    return poly::tensor_shape_gradient(J.at(l), xhat, dim);
  const auto& [ni, dist] = functions.at(l);
  const int i = child_of(xhat, z, dim);
  if (!in_node_support(nodes[ni], i))
    return Vec3::Zero();
  const RefBox box = refinement_pattern(z, dim)[i];
  Vec3 g = poly::tensor_shape_gradient(child_index(nodes[ni], dist, i, dim), box.unmap(xhat), dim);
  for (int k = 0; k < dim; ++k)
    g[k] *= 2.0 / (box.upper[k] - box.lower[k]);
  return g;
}

std::vector<int> EnrichmentSet::support(int l) const
{
  std::vector<int> out;
  for (int i = 0; i < (1 << dim); ++i)
    if (kind == EnrichmentKind::p || in_node_support(nodes[functions.at(l).first], i))
      out.push_back(i);
  return out;
}

EnrichmentSet build_p_enrichment(int dim, int parent_degree, DegreeRule rule)
{
  const int top = parent_degree + 1;
  std::vector<MultiIndex> J;
  for (const auto& j : distributions(dim, 2, top))
  {
    int mx = 0;
    for (int k = 0; k < dim; ++k)
      mx = std::max(mx, j[k]);
    if (rule == DegreeRule::full || mx == top)
      J.push_back(j);
  }
  return build_p_enrichment(dim, parent_degree, std::move(J));
}

EnrichmentSet build_p_enrichment(int dim, int parent_degree, std::vector<MultiIndex> J)
{
  if (dim < 1 || dim > max_dim || parent_degree < 1)
    throw InputError("build_p_enrichment: invalid dimension or degree");
  if (J.empty())
    throw InputError("build_p_enrichment: empty multi-index set");
  for (const auto& j : J)
    for (int k = 0; k < dim; ++k)
      if (j[k] < 2)
        throw InputError("build_p_enrichment: multi-indices need j_k >= 2");
  EnrichmentSet E;
  E.kind = EnrichmentKind::p;
  E.dim = dim;
  E.parent_degree = parent_degree;
  E.J = std::move(J);
  return E;
}

EnrichmentSet build_hp_enrichment(int dim, int parent_degree, const Vec3& z, DegreeRule rule)
{
  if (dim < 1 || dim > max_dim || parent_degree < 1)
    throw InputError("build_hp_enrichment: invalid dimension or degree");
  for (int k = 0; k < dim; ++k)
    if (!(std::abs(z[k]) < 1.0))
      throw InputError("build_hp_enrichment: dividing point must lie in the open reference cube");
  EnrichmentSet E;
  E.kind = EnrichmentKind::hp;
  E.dim = dim;
  E.parent_degree = parent_degree;
  E.z = Vec3::Zero();
  E.z.head(dim) = z.head(dim);
  E.nodes = internal_nodes(dim);
  for (std::size_t n = 0; n < E.nodes.size(); ++n)
  {
    const int r = static_cast<int>(E.nodes[n].a.size());
    if (r == 0)
    {
      E.functions.emplace_back(static_cast<int>(n), MultiIndex{0, 0, 0});
      continue;
    }
    const int lo = rule == DegreeRule::top ? parent_degree : 2;
    for (const auto& dist : distributions(r, std::max(lo, 2), parent_degree))
      E.functions.emplace_back(static_cast<int>(n), dist);
  }
  return E;
}

// ------------------------------------------------------------------ representation

RepresentationMatrices representation_matrices(const VSpace& V, ElementId e, const EnrichmentSet& E, int child_degree)
{
  const Mesh& mesh = V.mesh();
  const int d = mesh.dim();
  const int p = mesh.degree(e);
  if (E.dim != d || E.parent_degree != p)
    throw InputError("representation_matrices: enrichment does not match the element");
  RepresentationMatrices R;
  R.child_degree = std::max({child_degree, E.required_degree(), p});
  const int r = R.child_degree;
  R.boxes = refinement_pattern(E.z, d);
  const auto& cm = V.connectivity(e);
  R.dofs = cm.dofs;
  R.CQ = cm.coeffs;
  const int np = ipow(p + 1, d);
  const int nr = ipow(r + 1, d);
  const int L = E.size();
  for (std::size_t i = 0; i < R.boxes.size(); ++i)
  {
    Matrix B(np, nr);
    for (int a = 0; a < np; ++a)
      B.row(a) = constraint_coeffs(unflatten(a, p + 1, d), R.boxes[i], d, r).transpose();
    R.B.push_back(B);
    Matrix D = Matrix::Zero(L, nr);
    for (int l = 0; l < L; ++l)
    {
      if (E.kind == EnrichmentKind::p)
        D.row(l) = constraint_coeffs(E.J[l], R.boxes[i], d, r).transpose();
      else
      {
        const auto& [ni, dist] = E.functions[l];
        if (in_node_support(E.nodes[ni], static_cast<int>(i)))
          D(l, flatten(child_index(E.nodes[ni], dist, static_cast<int>(i), d), r + 1, d)) = 1.0;
      }
    }
    R.D.push_back(D);
  }
  return R;
}

// ------------------------------------------------------------------ prediction

PredictionContext make_prediction_context(const VSpace& V, const Material* material, const LoadData& data,
                                          const SparseMatrix& K, const Vector& load, const Vector& u)
{
  PredictionContext ctx;
  ctx.V = &V;
  ctx.material = material;
  ctx.data = data;
  ctx.u = u;
  ctx.load = load;
  ctx.energy2 = u.dot(K * u);
  return ctx;
}

PredictionSystem predict_reduction(const PredictionContext& ctx, ElementId e, const EnrichmentSet& E)
{
  const VSpace& V = *ctx.V;
  const Mesh& mesh = V.mesh();
  const int nc = V.components();
  const int p = mesh.degree(e);
  PredictionSystem S;
  S.kind = E.kind;
  S.L = nc * E.size();

  const auto split = local_split(V, ctx.u, e);
  const bool reduced = split.u_tilde.lpNorm<Eigen::Infinity>() == 0.0;
  const ElementMap map = mesh.element_map(e);
  const Vector uloc_q = flatten_local(V.local_coefficients(split.u_loc, e));
  const Vector ut_q = flatten_local(V.local_coefficients(split.u_tilde, e));
  S.uloc_norm2 = uloc_q.dot(element_stiffness(map, p, nc, ctx.material) * uloc_q);
  S.delta = ctx.load.dot(split.u_loc) - S.uloc_norm2;
  S.a00 = ctx.energy2 - S.uloc_norm2 - 2.0 * S.delta;

  const auto R = representation_matrices(V, e, E);
  const int r = R.child_degree;
  S.A = Matrix::Zero(S.L, S.L);
  S.b = Vector::Zero(S.L);
  S.c = Vector::Zero(S.L);
  const auto& tags = mesh.element(e).facet_tags;
  for (std::size_t i = 0; i < R.boxes.size(); ++i)
  {
    const Matrix Dv = expand(R.D[i], nc);
    if (Dv.cwiseAbs().maxCoeff() == 0.0)
      continue;
    const ElementMap cmap = map.sub_map(R.boxes[i]);
    const Matrix Ai = element_stiffness(cmap, r, nc, ctx.material);
    const Vector bi = element_load(cmap, r, nc, ctx.data, child_tags(tags, static_cast<int>(i), mesh.dim()));
    const Vector ut_i = expand(R.B[i], nc).transpose() * ut_q;
    const Matrix DA = Dv * Ai;
    S.A.noalias() += DA * Dv.transpose();
    S.b.noalias() += Dv * bi;
    S.c.noalias() += DA * ut_i;
  }

  S.A = (0.5 * (S.A + S.A.transpose())).eval();
  if (reduced)
  {
    // Y = span(xi) without the global part: eps drops out
    S.reason = "u_tilde vanishes, reduced system";
    Eigen::FullPivLU<Matrix> lu(S.A);
    lu.setThreshold(1e-13);
    if (!lu.isInvertible())
    {
      S.reason = "singular enrichment Gram matrix";
      return S;
    }
    S.y = lu.solve(S.b - S.c);
    S.epsilon = 0.0;
    S.reduction = S.y.dot(S.b - S.c) - S.uloc_norm2;
    S.ok = true;
    return S;
  }
  Matrix M(S.L + 1, S.L + 1);
  M(0, 0) = S.a00;
  M.block(0, 1, 1, S.L) = S.c.transpose();
  M.block(1, 0, S.L, 1) = S.c;
  M.bottomRightCorner(S.L, S.L) = S.A;
  Vector rhs(S.L + 1);
  rhs[0] = S.delta;
  rhs.tail(S.L) = S.b - S.c;
  Eigen::FullPivLU<Matrix> lu(M);
  lu.setThreshold(1e-13);
  if (!lu.isInvertible())
  {
    S.reason = "singular bordered system";
    return S;
  }
  const Vector sol = lu.solve(rhs);
  S.epsilon = sol[0];
  S.y = sol.tail(S.L);
  S.reduction = S.y.dot(S.b - S.c) - S.uloc_norm2 + S.epsilon * S.delta;
  S.ok = true;
  return S;
}

std::vector<EnrichmentSet> candidate_menu(const Mesh& mesh, ElementId e, const PredictorOptions& options)
{
  const int d = mesh.dim();
  const int p = mesh.degree(e);
  std::vector<EnrichmentSet> menu;
  if (options.use_p && p + 1 <= options.max_degree)
    menu.push_back(build_p_enrichment(d, p, options.p_rule));
  if (options.use_hp && mesh.element(e).level < options.max_level)
    menu.push_back(build_hp_enrichment(d, p, options.z, options.hp_rule));
  return menu;
}

int choose_enrichment(const std::vector<PredictionSystem>& candidates)
{
  int best = -1;
  for (std::size_t i = 0; i < candidates.size(); ++i)
  {
    const auto& c = candidates[i];
    if (!c.ok)
      continue;
    if (best < 0)
    {
      best = static_cast<int>(i);
      continue;
    }
    const auto& b = candidates[best];
    if (c.reduction > b.reduction ||
        (c.reduction == b.reduction && c.kind == EnrichmentKind::p && b.kind == EnrichmentKind::hp))
      best = static_cast<int>(i);
  }
  return best;
}

std::vector<ElementPrediction> predict_all(const PredictionContext& ctx, const PredictorOptions& options)
{
  const Mesh& mesh = ctx.V->mesh();
  const auto& active = mesh.active_elements();
  std::vector<ElementPrediction> out(active.size());
  parallel_for(active.size(), [&](std::size_t idx) {
    ElementPrediction& ep = out[idx];
    ep.element = active[idx];
    for (const auto& E : candidate_menu(mesh, ep.element, options))
      ep.candidates.push_back(predict_reduction(ctx, ep.element, E));
    ep.best = choose_enrichment(ep.candidates);
    ep.best_reduction = ep.best >= 0 ? ep.candidates[ep.best].reduction : 0.0;
  });
  return out;
}

Mesh apply_enrichments(const Mesh& mesh, const std::vector<ElementPrediction>& predictions,
                       const std::vector<ElementId>& marked, const PredictorOptions& options)
{
  Mesh out = mesh;
  const std::set<ElementId> mset(marked.begin(), marked.end());
  std::vector<ElementId> refine;
  // degree changes first, refinements afterwards (closure may refine neighbors)
  for (const auto& ep : predictions)
  {
    if (!mset.count(ep.element) || ep.best < 0)
      continue;
    const auto& c = ep.candidates[ep.best];
    if (c.kind == EnrichmentKind::p)
      out.set_degree_in_place(ep.element, std::min(options.max_degree, mesh.degree(ep.element) + 1));
    else
      refine.push_back(ep.element);
  }
  for (ElementId e : refine)
  {
    if (out.element(e).level >= options.max_level)
      throw InputError("apply_enrichments: maximal refinement level reached");
    if (out.is_active(e))
      out.refine_in_place(e, options.z, true);
  }
  return out;
}

void write_predictions_csv(const std::string& path, const std::vector<ElementPrediction>& predictions,
                           const std::vector<ElementId>& marked)
{
  std::ofstream out(path);
  if (!out)
    throw InputError("cannot open " + path + " for writing");
  const std::set<ElementId> mset(marked.begin(), marked.end());
  out << "element,kind,L,reduction,chosen\n" << std::setprecision(12);
  for (const auto& ep : predictions)
    for (std::size_t i = 0; i < ep.candidates.size(); ++i)
    {
      const auto& c = ep.candidates[i];
      const bool chosen = mset.count(ep.element) && static_cast<int>(i) == ep.best;
      out << ep.element << ',' << (c.kind == EnrichmentKind::p ? "p" : "hp") << ',' << c.L << ','
          << c.reduction << ',' << (chosen ? 1 : 0) << '\n';
    }
}

} // namespace hpfem
