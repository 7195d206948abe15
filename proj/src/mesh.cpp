#include "hpfem/mesh.hpp"

#include "hpfem/polybasis.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace hpfem
{

namespace
{

constexpr double ref_tol = 1e-9;

double hat(int side, double t) { return side ? 0.5 * (1.0 + t) : 0.5 * (1.0 - t); }
double hat_derivative(int side) { return side ? 0.5 : -0.5; }

// Corner indices of facet f in tensor order of the remaining directions.
std::vector<int> facet_corner_indices(int facet, int dim)
{
  const int dir = facet_direction(facet);
  const int side = facet_side(facet);
  std::vector<int> out;
  for (int c = 0; c < (1 << dim); ++c)
    if (((c >> dir) & 1) == side)
      out.push_back(c);
  return out;
}

bool inside_reference(const Vec3& xhat, int dim, double tol)
{
  for (int k = 0; k < dim; ++k)
    if (std::abs(xhat[k]) > 1.0 + tol)
      return false;
  return true;
}

bool is_reference_corner(const Vec3& xhat, int dim, double tol)
{
  for (int k = 0; k < dim; ++k)
    if (std::abs(std::abs(xhat[k]) - 1.0) > tol)
      return false;
  return true;
}

} // namespace

// ---------------------------------------------------------------- ElementMap

ElementMap::ElementMap(int dim, std::span<const Vec3> corners) : dim_(dim)
{
  if (dim < 1 || dim > max_dim)
    throw InputError("ElementMap: dimension must be 1, 2 or 3");
  if (static_cast<int>(corners.size()) != (1 << dim))
    throw InputError("ElementMap: expected 2^d corners");
  for (int c = 0; c < (1 << dim); ++c)
  {
    corners_[c] = Vec3::Zero();
    corners_[c].head(dim) = corners[c].head(dim);
  }
}

Vec3 ElementMap::reference_corner(int c, int dim)
{
  Vec3 x = Vec3::Zero();
  for (int k = 0; k < dim; ++k)
    x[k] = ((c >> k) & 1) ? 1.0 : -1.0;
  return x;
}

Vec3 ElementMap::map(const Vec3& xhat) const
{
  Vec3 x = Vec3::Zero();
  for (int c = 0; c < num_corners(); ++c)
  {
    double w = 1.0;
    for (int k = 0; k < dim_; ++k)
      w *= hat((c >> k) & 1, xhat[k]);
    x += w * corners_[c];
  }
  return x;
}

Mat3 ElementMap::jacobian(const Vec3& xhat) const
{
  Mat3 J = Mat3::Zero();
  for (int c = 0; c < num_corners(); ++c)
  {
    for (int k = 0; k < dim_; ++k)
    {
      double w = hat_derivative((c >> k) & 1);
      for (int m = 0; m < dim_; ++m)
        if (m != k)
          w *= hat((c >> m) & 1, xhat[m]);
      J.col(k) += w * corners_[c];
    }
  }
  return J;
}

double ElementMap::det_jacobian(const Vec3& xhat) const
{
  const Mat3 J = jacobian(xhat);
  switch (dim_)
  {
  case 1:
    return J(0, 0);
  case 2:
    return J(0, 0) * J(1, 1) - J(0, 1) * J(1, 0);
  default:
    return J.determinant();
  }
}

std::array<Mat3, max_dim> ElementMap::second_derivatives(const Vec3& xhat) const
{
  std::array<Mat3, max_dim> h;
  for (auto& m : h)
    m.setZero();
  for (int c = 0; c < num_corners(); ++c)
  {
    for (int k = 0; k < dim_; ++k)
      for (int l = k + 1; l < dim_; ++l)
      {
        double w = hat_derivative((c >> k) & 1) * hat_derivative((c >> l) & 1);
        for (int m = 0; m < dim_; ++m)
          if (m != k && m != l)
            w *= hat((c >> m) & 1, xhat[m]);
        for (int i = 0; i < dim_; ++i)
        {
          h[i](k, l) += w * corners_[c][i];
          h[i](l, k) += w * corners_[c][i];
        }
      }
  }
  return h;
}

std::optional<Vec3> ElementMap::inverse(const Vec3& x) const
{
  Vec3 xhat = Vec3::Zero();
  const double scale = std::max(diameter(), 1e-300);
  for (int it = 0; it < 60; ++it)
  {
    const Vec3 r = map(xhat) - x;
    const Mat3 J = jacobian(xhat);
    Vec3 dx = Vec3::Zero();
    switch (dim_)
    {
    case 1:
      if (J(0, 0) == 0.0)
        return std::nullopt;
      dx[0] = r[0] / J(0, 0);
      break;
    case 2:
    {
      const Eigen::Matrix2d J2 = J.topLeftCorner<2, 2>();
      const double det = J2.determinant();
      if (det == 0.0)
        return std::nullopt;
      dx.head<2>() = J2.inverse() * r.head<2>();
      break;
    }
    default:
    {
      Eigen::PartialPivLU<Mat3> lu(J);
      dx = lu.solve(r);
      break;
    }
    }
    if (!dx.allFinite())
      return std::nullopt;
    xhat -= dx;
    if (dx.norm() < 1e-15 * (1.0 + xhat.norm()))
      return xhat;
    if (xhat.norm() > 1e6)
      return std::nullopt;
  }
  // accept if the residual is tiny even though the update stagnated
  // (roundoff of the physical coordinates dominates on tiny elements far from the origin)
  if ((map(xhat) - x).norm() < 1e-13 * scale + 1e-14 * x.norm())
    return xhat;
  return std::nullopt;
}

ElementMap ElementMap::sub_map(const RefBox& box) const
{
  std::array<Vec3, 8> pts;
  for (int c = 0; c < num_corners(); ++c)
    pts[c] = map(box.map(reference_corner(c, dim_)));
  return ElementMap(dim_, std::span<const Vec3>(pts.data(), num_corners()));
}

bool ElementMap::is_valid() const
{
  for (int c = 0; c < num_corners(); ++c)
    if (!(det_jacobian(reference_corner(c, dim_)) > 0.0))
      return false;
  const auto rule = poly::tensor_gauss_rule(3, dim_);
  for (const auto& x : rule.points)
    if (!(det_jacobian(x) > 0.0))
      return false;
  return true;
}

bool ElementMap::is_affine(double tol) const
{
  const double scale = std::max(diameter(), 1e-300);
  for (int c = 0; c < num_corners(); ++c)
  {
    Vec3 x = corners_[0];
    for (int k = 0; k < dim_; ++k)
      if ((c >> k) & 1)
        x += corners_[1 << k] - corners_[0];
    if ((x - corners_[c]).norm() > tol * scale)
      return false;
  }
  return true;
}

double ElementMap::volume() const
{
  const auto rule = poly::tensor_gauss_rule(3, dim_);
  double v = 0.0;
  for (std::size_t q = 0; q < rule.points.size(); ++q)
    v += rule.weights[q] * det_jacobian(rule.points[q]);
  return v;
}

double ElementMap::diameter() const
{
  double d = 0.0;
  for (int a = 0; a < num_corners(); ++a)
    for (int b = a + 1; b < num_corners(); ++b)
      d = std::max(d, (corners_[a] - corners_[b]).norm());
  return d;
}

bool check_det_affine(const ElementMap& map, int samples_per_direction)
{
  const int dim = map.dim();
  const int n = std::max(samples_per_direction, 3);
  std::array<double, 8> corner_det{};
  double scale = 0.0;
  for (int c = 0; c < map.num_corners(); ++c)
  {
    corner_det[c] = map.det_jacobian(ElementMap::reference_corner(c, dim));
    scale = std::max(scale, std::abs(corner_det[c]));
  }
  for (int s = 0; s < ipow(n, dim); ++s)
  {
    const MultiIndex idx = unflatten(s, n, dim);
    Vec3 x = Vec3::Zero();
    for (int k = 0; k < dim; ++k)
      x[k] = -1.0 + 2.0 * idx[k] / (n - 1);
    double interp = 0.0;
    for (int c = 0; c < map.num_corners(); ++c)
    {
      double w = 1.0;
      for (int k = 0; k < dim; ++k)
        w *= hat((c >> k) & 1, x[k]);
      interp += w * corner_det[c];
    }
    const double det = map.det_jacobian(x);
    scale = std::max(scale, std::abs(det));
    if (std::abs(det - interp) > 1e-12 * scale)
      return false;
  }
  return true;
}

std::vector<RefBox> refinement_pattern(const Vec3& zhat, int dim)
{
  std::vector<RefBox> boxes(1 << dim);
  for (int i = 0; i < (1 << dim); ++i)
  {
    RefBox& b = boxes[i];
    b.lower = Vec3::Zero();
    b.upper = Vec3::Zero();
    for (int k = 0; k < dim; ++k)
    {
      if ((i >> k) & 1)
      {
        b.lower[k] = zhat[k];
        b.upper[k] = 1.0;
      }
      else
      {
        b.lower[k] = -1.0;
        b.upper[k] = zhat[k];
      }
    }
    for (int k = dim; k < max_dim; ++k)
    {
      b.lower[k] = -1.0;
      b.upper[k] = 1.0;
    }
  }
  return boxes;
}

// ---------------------------------------------------------------------- Mesh

Mesh::Mesh(int dim, std::vector<Vec3> vertices, const std::vector<std::array<VertexId, 8>>& elements,
           BoundaryTag default_tag)
  : dim_(dim), vertices_(std::move(vertices))
{
  if (dim < 1 || dim > max_dim)
    throw InputError("Mesh: dimension must be 1, 2 or 3");
  if (elements.empty())
    throw InputError("Mesh: no elements");
  for (auto& v : vertices_)
    for (int k = dim; k < max_dim; ++k)
      v[k] = 0.0;

  bbox_lo_ = vertices_.front();
  bbox_hi_ = vertices_.front();
  for (const auto& v : vertices_)
  {
    bbox_lo_ = bbox_lo_.cwiseMin(v);
    bbox_hi_ = bbox_hi_.cwiseMax(v);
  }
  const double diam = std::max((bbox_hi_ - bbox_lo_).norm(), 1e-300);
  tol_ = 1e-10 * diam;
  vertex_cell_ = 1e-6 * diam;

  const int nc = 1 << dim;
  for (const auto& ev : elements)
  {
    Element el;
    el.vertices.fill(-1);
    for (int c = 0; c < nc; ++c)
    {
      if (ev[c] < 0 || ev[c] >= static_cast<VertexId>(vertices_.size()))
        throw InputError("Mesh: vertex index out of range");
      el.vertices[c] = ev[c];
    }
    el.facet_tags.fill(BoundaryTag::interior);
    elements_.push_back(el);
  }

  // facets shared by two elements are interior
  std::map<std::vector<VertexId>, std::vector<std::pair<ElementId, int>>> facet_owner;
  for (ElementId e = 0; e < static_cast<ElementId>(elements_.size()); ++e)
  {
    const ElementMap m = element_map(e);
    if (!m.is_valid())
      throw InputError("Mesh: element " + std::to_string(e) + " is degenerate or inverted");
    for (int f = 0; f < 2 * dim; ++f)
    {
      std::vector<VertexId> key;
      for (int c : facet_corner_indices(f, dim))
        key.push_back(elements_[e].vertices[c]);
      std::sort(key.begin(), key.end());
      facet_owner[key].emplace_back(e, f);
    }
  }
  for (const auto& [key, owners] : facet_owner)
  {
    if (owners.size() > 2)
      throw InputError("Mesh: facet shared by more than two elements");
    if (owners.size() == 1)
      elements_[owners[0].first].facet_tags[owners[0].second] = default_tag;
  }

  for (VertexId v = 0; v < static_cast<VertexId>(vertices_.size()); ++v)
  {
    const Vec3& x = vertices_[v];
    std::array<std::int64_t, max_dim> cell{0, 0, 0};
    for (int k = 0; k < dim_; ++k)
      cell[k] = static_cast<std::int64_t>(std::floor(x[k] / vertex_cell_));
    vertex_hash_[vertex_key(cell)].push_back(v);
  }

  for (ElementId e = 0; e < static_cast<ElementId>(elements_.size()); ++e)
    active_.push_back(e);
  rebuild_index();
}

ElementMap Mesh::element_map(ElementId e) const
{
  const Element& el = elements_.at(e);
  std::array<Vec3, 8> pts;
  for (int c = 0; c < (1 << dim_); ++c)
    pts[c] = vertices_[el.vertices[c]];
  return ElementMap(dim_, std::span<const Vec3>(pts.data(), 1 << dim_));
}

std::vector<Vec3> Mesh::facet_corners(ElementId e, int facet) const
{
  std::vector<Vec3> pts;
  for (int c : facet_corner_indices(facet, dim_))
    pts.push_back(vertices_[elements_.at(e).vertices[c]]);
  return pts;
}

double Mesh::domain_volume() const
{
  double v = 0.0;
  for (ElementId e : active_)
    v += element_map(e).volume();
  return v;
}

std::int64_t Mesh::vertex_key(const std::array<std::int64_t, max_dim>& cell) const
{
  std::uint64_t h = 1469598103934665603ull;
  for (int k = 0; k < max_dim; ++k)
  {
    h ^= static_cast<std::uint64_t>(cell[k]) + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    h *= 1099511628211ull;
  }
  return static_cast<std::int64_t>(h);
}

std::optional<VertexId> Mesh::find_vertex(const Vec3& x) const
{
  std::array<std::int64_t, max_dim> base{0, 0, 0};
  for (int k = 0; k < dim_; ++k)
    base[k] = static_cast<std::int64_t>(std::floor(x[k] / vertex_cell_));
  const int n_nb = ipow(3, dim_);
  for (int s = 0; s < n_nb; ++s)
  {
    const MultiIndex off = unflatten(s, 3, dim_);
    std::array<std::int64_t, max_dim> cell = base;
    for (int k = 0; k < dim_; ++k)
      cell[k] += off[k] - 1;
    const auto it = vertex_hash_.find(vertex_key(cell));
    if (it == vertex_hash_.end())
      continue;
    for (VertexId v : it->second)
      if ((vertices_[v] - x).norm() <= tol_)
        return v;
  }
  return std::nullopt;
}

VertexId Mesh::find_or_add_vertex(const Vec3& x)
{
  if (auto v = find_vertex(x))
    return *v;
  Vec3 y = Vec3::Zero();
  y.head(dim_) = x.head(dim_);
  vertices_.push_back(y);
  const auto id = static_cast<VertexId>(vertices_.size() - 1);
  std::array<std::int64_t, max_dim> cell{0, 0, 0};
  for (int k = 0; k < dim_; ++k)
    cell[k] = static_cast<std::int64_t>(std::floor(y[k] / vertex_cell_));
  vertex_hash_[vertex_key(cell)].push_back(id);
  return id;
}

void Mesh::bbox_of(ElementId e)
{
  Vec3 lo = vertices_[elements_[e].vertices[0]];
  Vec3 hi = lo;
  for (int c = 1; c < (1 << dim_); ++c)
  {
    lo = lo.cwiseMin(vertices_[elements_[e].vertices[c]]);
    hi = hi.cwiseMax(vertices_[elements_[e].vertices[c]]);
  }
  elem_bbox_[e] = {lo, hi};
}

template <class F>
void Mesh::for_each_bucket(ElementId e, F&& f)
{
  const auto& [lo, hi] = elem_bbox_[e];
  std::array<int, max_dim> a{0, 0, 0}, b{0, 0, 0};
  for (int k = 0; k < dim_; ++k)
  {
    a[k] = std::clamp(static_cast<int>(std::floor((lo[k] - tol_ - bbox_lo_[k]) / grid_h_[k])), 0, grid_n_[k] - 1);
    b[k] = std::clamp(static_cast<int>(std::floor((hi[k] + tol_ - bbox_lo_[k]) / grid_h_[k])), 0, grid_n_[k] - 1);
  }
  for (int z = a[2]; z <= b[2]; ++z)
    for (int y = a[1]; y <= b[1]; ++y)
      for (int x = a[0]; x <= b[0]; ++x)
        f(buckets_[(static_cast<std::size_t>(z) * grid_n_[1] + y) * grid_n_[0] + x]);
}

void Mesh::rebuild_index()
{
  active_.clear();
  for (ElementId e = 0; e < static_cast<ElementId>(elements_.size()); ++e)
    if (elements_[e].active)
      active_.push_back(e);

  elem_bbox_.assign(elements_.size(), {Vec3::Zero(), Vec3::Zero()});
  for (ElementId e : active_)
    bbox_of(e);

  const double n = static_cast<double>(active_.size());
  const int per_dim = std::clamp(static_cast<int>(std::ceil(std::pow(n, 1.0 / dim_))), 1, 256);
  grid_n_ = {1, 1, 1};
  grid_h_ = Vec3::Ones();
  for (int k = 0; k < dim_; ++k)
  {
    grid_n_[k] = per_dim;
    grid_h_[k] = std::max((bbox_hi_[k] - bbox_lo_[k]) / per_dim, 1e-300);
  }
  buckets_.assign(static_cast<std::size_t>(grid_n_[0]) * grid_n_[1] * grid_n_[2], {});
  for (ElementId e : active_)
    for_each_bucket(e, [e](std::vector<ElementId>& bucket) { bucket.push_back(e); });
  indexed_count_ = active_.size();
}

void Mesh::index_refinement(ElementId parent, const std::vector<ElementId>& kids)
{
  // the bucket grid is sized for the active count of the last full rebuild
  if (active_.size() + kids.size() > 2 * indexed_count_ + 64)
  {
    rebuild_index();
    return;
  }
  const auto it = std::lower_bound(active_.begin(), active_.end(), parent);
  if (it != active_.end() && *it == parent)
    active_.erase(it);
  for_each_bucket(parent, [parent](std::vector<ElementId>& bucket) {
    bucket.erase(std::remove(bucket.begin(), bucket.end(), parent), bucket.end());
  });
  elem_bbox_.resize(elements_.size(), {Vec3::Zero(), Vec3::Zero()});
  for (ElementId k : kids)
  {
    active_.push_back(k);
    bbox_of(k);
    for_each_bucket(k, [k](std::vector<ElementId>& bucket) { bucket.push_back(k); });
  }
}

std::vector<ElementId> Mesh::candidates(const Vec3& lo, const Vec3& hi) const
{
  std::array<int, max_dim> a{0, 0, 0}, b{0, 0, 0};
  for (int k = 0; k < dim_; ++k)
  {
    a[k] = std::clamp(static_cast<int>(std::floor((lo[k] - tol_ - bbox_lo_[k]) / grid_h_[k])), 0, grid_n_[k] - 1);
    b[k] = std::clamp(static_cast<int>(std::floor((hi[k] + tol_ - bbox_lo_[k]) / grid_h_[k])), 0, grid_n_[k] - 1);
  }
  std::vector<ElementId> out;
  for (int z = a[2]; z <= b[2]; ++z)
    for (int y = a[1]; y <= b[1]; ++y)
      for (int x = a[0]; x <= b[0]; ++x)
        for (ElementId e : buckets_[(static_cast<std::size_t>(z) * grid_n_[1] + y) * grid_n_[0] + x])
        {
          const auto& [elo, ehi] = elem_bbox_[e];
          bool overlap = true;
          for (int k = 0; k < dim_; ++k)
            if (elo[k] > hi[k] + tol_ || ehi[k] < lo[k] - tol_)
              overlap = false;
          if (overlap)
            out.push_back(e);
        }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<std::pair<ElementId, Vec3>> Mesh::locate(const Vec3& x, double tol) const
{
  std::vector<std::pair<ElementId, Vec3>> out;
  for (ElementId e : candidates(x, x))
  {
    const auto xhat = element_map(e).inverse(x);
    if (!xhat || !inside_reference(*xhat, dim_, std::max(tol, ref_tol)))
      continue;
    Vec3 c = *xhat;
    for (int k = 0; k < dim_; ++k)
      c[k] = std::clamp(c[k], -1.0, 1.0);
    out.emplace_back(e, c);
  }
  return out;
}

namespace
{

// Affine map from own reference coordinates on the shared facet part to the
// neighbor's reference coordinates, from the images of the part's corners.
void fit_facet_map(FacetNeighbor& fn, const ElementMap& own, const ElementMap& nbr, int dim)
{
  const int dir = facet_direction(fn.facet);
  std::vector<int> free_dirs;
  for (int k = 0; k < dim; ++k)
    if (k != dir)
      free_dirs.push_back(k);
  auto to_nbr = [&](const Vec3& xhat_own) {
    const auto y = nbr.inverse(own.map(xhat_own));
    if (!y)
      throw SolverError("facet_neighbors: inverse map failed");
    return *y;
  };
  const Vec3 origin = fn.own_box.lower;
  const Vec3 y0 = to_nbr(origin);
  fn.linear.setZero();
  for (int k : free_dirs)
  {
    Vec3 pt = origin;
    pt[k] = fn.own_box.upper[k];
    fn.linear.col(k) = (to_nbr(pt) - y0) / (fn.own_box.upper[k] - fn.own_box.lower[k]);
  }
  fn.offset = y0 - fn.linear * origin;
  // snap round-off
  for (int i = 0; i < dim; ++i)
  {
    for (int k = 0; k < dim; ++k)
      if (std::abs(fn.linear(i, k)) < 1e-12)
        fn.linear(i, k) = 0.0;
    for (double v : {-1.0, 0.0, 1.0})
      if (std::abs(fn.offset[i] - v) < 1e-12)
        fn.offset[i] = v;
  }
  const int nd = facet_direction(fn.neighbor_facet);
  fn.offset[nd] = facet_side(fn.neighbor_facet) ? 1.0 : -1.0;
  fn.linear.row(nd).setZero();
}

// All points lie on facet f of the map's element.
bool points_on_facet(const ElementMap& m, int facet, const std::vector<Vec3>& pts, int dim, RefBox* box)
{
  const int dir = facet_direction(facet);
  const double val = facet_side(facet) ? 1.0 : -1.0;
  Vec3 lo = Vec3::Constant(1.0), hi = Vec3::Constant(-1.0);
  for (const auto& x : pts)
  {
    const auto y = m.inverse(x);
    if (!y)
      return false;
    if (std::abs((*y)[dir] - val) > ref_tol || !inside_reference(*y, dim, ref_tol))
      return false;
    lo = lo.cwiseMin(*y);
    hi = hi.cwiseMax(*y);
  }
  if (box)
  {
    box->lower = Vec3(-1, -1, -1);
    box->upper = Vec3(1, 1, 1);
    for (int k = 0; k < dim; ++k)
    {
      box->lower[k] = std::clamp(lo[k], -1.0, 1.0);
      box->upper[k] = std::clamp(hi[k], -1.0, 1.0);
      for (double v : {-1.0, 0.0, 1.0})
      {
        if (std::abs(box->lower[k] - v) < 1e-12)
          box->lower[k] = v;
        if (std::abs(box->upper[k] - v) < 1e-12)
          box->upper[k] = v;
      }
    }
    box->lower[dir] = val;
    box->upper[dir] = val;
  }
  return true;
}

} // namespace

std::vector<FacetNeighbor> Mesh::facet_neighbors(ElementId e) const
{
  if (!is_active(e))
    throw InputError("facet_neighbors: element " + std::to_string(e) + " is not active");
  std::vector<FacetNeighbor> out;
  const ElementMap own = element_map(e);
  for (int f = 0; f < 2 * dim_; ++f)
  {
    const auto fc = facet_corners(e, f);
    Vec3 lo = fc.front(), hi = fc.front();
    for (const auto& x : fc)
    {
      lo = lo.cwiseMin(x);
      hi = hi.cwiseMax(x);
    }
    bool found = false;
    for (ElementId m : candidates(lo, hi))
    {
      if (m == e)
        continue;
      const ElementMap nbr = element_map(m);
      for (int g = 0; g < 2 * dim_; ++g)
      {
        const auto gc = facet_corners(m, g);
        const bool own_in_nbr = points_on_facet(nbr, g, fc, dim_, nullptr);
        RefBox part;
        const bool nbr_in_own = points_on_facet(own, f, gc, dim_, &part);
        if (!own_in_nbr && !nbr_in_own)
          continue;
        FacetNeighbor fn;
        fn.facet = f;
        fn.tag = BoundaryTag::interior;
        fn.neighbor = m;
        fn.neighbor_facet = g;
        if (own_in_nbr && nbr_in_own)
          fn.kind = FacetKind::conforming;
        else if (own_in_nbr)
          fn.kind = FacetKind::neighbor_coarser;
        else
          fn.kind = FacetKind::neighbor_finer;
        if (fn.kind == FacetKind::neighbor_finer)
          fn.own_box = part;
        else
        {
          fn.own_box = RefBox{};
          for (int k = dim_; k < max_dim; ++k)
          {
            fn.own_box.lower[k] = -1.0;
            fn.own_box.upper[k] = 1.0;
          }
          const int dir = facet_direction(f);
          fn.own_box.lower[dir] = fn.own_box.upper[dir] = facet_side(f) ? 1.0 : -1.0;
        }
        fit_facet_map(fn, own, nbr, dim_);
        out.push_back(fn);
        found = true;
      }
    }
    if (!found)
    {
      FacetNeighbor fn;
      fn.facet = f;
      fn.kind = FacetKind::boundary;
      fn.tag = elements_[e].facet_tags[f];
      if (fn.tag == BoundaryTag::interior)
        throw SolverError("facet_neighbors: interior facet without neighbor on element " + std::to_string(e));
      const int dir = facet_direction(f);
      fn.own_box.lower[dir] = fn.own_box.upper[dir] = facet_side(f) ? 1.0 : -1.0;
      out.push_back(fn);
    }
  }
  return out;
}

std::vector<VertexId> Mesh::hanging_vertices() const
{
  std::set<VertexId> used;
  for (ElementId e : active_)
    for (int c = 0; c < (1 << dim_); ++c)
      used.insert(elements_[e].vertices[c]);
  std::vector<VertexId> out;
  for (VertexId v : used)
    for (const auto& [e, xhat] : locate(vertices_[v]))
      if (!is_reference_corner(xhat, dim_, ref_tol))
      {
        out.push_back(v);
        break;
      }
  return out;
}

std::optional<std::pair<ElementId, RefBox>> Mesh::ancestor_active_in(const Mesh& coarse, ElementId e) const
{
  RefBox box;
  ElementId cur = e;
  while (cur >= 0)
  {
    if (cur < static_cast<ElementId>(coarse.num_elements_total()) && coarse.is_active(cur))
      return std::make_pair(cur, box);
    const Element& el = elements_.at(cur);
    box = el.box_in_parent.compose(box);
    cur = el.parent;
  }
  return std::nullopt;
}

int Mesh::max_degree_jump() const
{
  int jump = 0;
  for (ElementId e : active_)
    for (const auto& fn : facet_neighbors(e))
      if (fn.neighbor >= 0)
        jump = std::max(jump, std::abs(degree(e) - degree(fn.neighbor)));
  return jump;
}

bool Mesh::shares_segment(ElementId fine, ElementId coarse) const
{
  const ElementMap m = element_map(coarse);
  int count = 0;
  for (int c = 0; c < (1 << dim_); ++c)
  {
    const auto y = m.inverse(vertices_[elements_[fine].vertices[c]]);
    if (y && inside_reference(*y, dim_, ref_tol))
      ++count;
  }
  return count >= 2;
}

void Mesh::check_conformity(ElementId child) const
{
  const Element& ce = elements_[child];
  const ElementMap cm = element_map(child);
  const auto& [lo, hi] = elem_bbox_[child];
  for (ElementId m : candidates(lo, hi))
  {
    if (m == child || elements_[m].level < ce.level)
      continue;
    const ElementMap mm = element_map(m);
    auto check = [&](const ElementMap& target, const Element& src) {
      for (int c = 0; c < (1 << dim_); ++c)
      {
        const auto y = target.inverse(vertices_[src.vertices[c]]);
        if (y && inside_reference(*y, dim_, ref_tol) && !is_reference_corner(*y, dim_, ref_tol))
          throw InputError("refine_element: dividing point incompatible with the refinement of a neighbor");
      }
    };
    check(cm, elements_[m]);
    check(mm, ce);
  }
}

void Mesh::refine_in_place(ElementId e, const Vec3& zhat, bool closure)
{
  if (e < 0 || e >= static_cast<ElementId>(elements_.size()))
    throw InputError("refine_element: element id out of range");
  if (!elements_[e].active)
    throw InputError("refine_element: element " + std::to_string(e) + " is not active");
  for (int k = 0; k < dim_; ++k)
    if (!(std::abs(zhat[k]) < 1.0 - 1e-12))
      throw InputError("refine_element: dividing point must lie in the open reference cube");

  if (closure)
  {
    for (;;)
    {
      const auto [lo, hi] = elem_bbox_[e];
      ElementId coarse = -1;
      for (ElementId m : candidates(lo, hi))
        if (m != e && elements_[m].level < elements_[e].level && shares_segment(e, m))
        {
          coarse = m;
          break;
        }
      if (coarse < 0)
        break;
      refine_in_place(coarse, Vec3::Zero(), true);
    }
  }

  const ElementMap parent_map = element_map(e);
  const auto boxes = refinement_pattern(zhat, dim_);
  const int nc = 1 << dim_;
  std::vector<ElementId> kids;
  for (int i = 0; i < nc; ++i)
  {
    Element child;
    child.level = elements_[e].level + 1;
    child.parent = e;
    child.box_in_parent = boxes[i];
    child.degree = elements_[e].degree;
    child.active = true;
    child.vertices.fill(-1);
    for (int c = 0; c < nc; ++c)
      child.vertices[c] = find_or_add_vertex(parent_map.map(boxes[i].map(ElementMap::reference_corner(c, dim_))));
    child.facet_tags.fill(BoundaryTag::interior);
    // facets on the parent's boundary inherit its tags
    for (int f = 0; f < 2 * dim_; ++f)
    {
      const int dir = facet_direction(f);
      const int side = facet_side(f);
      if (((i >> dir) & 1) == side)
        child.facet_tags[f] = elements_[e].facet_tags[f];
    }
    kids.push_back(static_cast<ElementId>(elements_.size()));
    elements_.push_back(child);
  }
  elements_[e].active = false;
  elements_[e].children = kids;
  elements_[e].dividing_point = zhat;
  index_refinement(e, kids);
  for (ElementId k : kids)
    check_conformity(k);
}

void Mesh::coarsen_in_place(ElementId parent)
{
  if (parent < 0 || parent >= static_cast<ElementId>(elements_.size()))
    throw InputError("coarsen_element: element id out of range");
  Element& p = elements_[parent];
  if (p.active || p.children.empty())
    throw InputError("coarsen_element: element " + std::to_string(parent) + " has no children");
  for (ElementId c : p.children)
    if (!elements_[c].active)
      throw InputError("coarsen_element: children must be active leaves");
  // keep 1-irregularity: no active element two levels finer may touch the parent
  Vec3 lo = vertices_[p.vertices[0]], hi = lo;
  for (int c = 1; c < (1 << dim_); ++c)
  {
    lo = lo.cwiseMin(vertices_[p.vertices[c]]);
    hi = hi.cwiseMax(vertices_[p.vertices[c]]);
  }
  for (ElementId m : candidates(lo, hi))
  {
    if (std::find(p.children.begin(), p.children.end(), m) != p.children.end())
      continue;
    if (elements_[m].level > p.level + 1 && shares_segment(m, parent))
      throw InputError("coarsen_element: coarsening would violate 1-irregularity");
  }
  for (ElementId c : p.children)
  {
    elements_[c].active = false;
    elements_[c].parent = -1;
  }
  p.children.clear();
  p.active = true;
  rebuild_index();
}

void Mesh::set_degree_in_place(ElementId e, int p)
{
  if (p < 1 || p > poly::default_max_degree)
    throw InputError("degree out of range: " + std::to_string(p));
  elements_.at(e).degree = p;
}

void Mesh::set_facet_tag_in_place(ElementId e, int facet, BoundaryTag tag)
{
  elements_.at(e).facet_tags.at(facet) = tag;
}

void Mesh::enforce_degree_comparability_in_place(int max_jump)
{
  bool changed = true;
  while (changed)
  {
    changed = false;
    for (ElementId e : active_)
      for (const auto& fn : facet_neighbors(e))
        if (fn.neighbor >= 0 && degree(e) - degree(fn.neighbor) > max_jump)
        {
          elements_[fn.neighbor].degree = degree(e) - max_jump;
          changed = true;
        }
  }
}

void Mesh::retag_boundary_in_place(const std::function<BoundaryTag(const Vec3&)>& tag_of)
{
  for (ElementId e = 0; e < static_cast<ElementId>(elements_.size()); ++e)
    for (int f = 0; f < 2 * dim_; ++f)
    {
      if (elements_[e].facet_tags[f] == BoundaryTag::interior)
        continue;
      Vec3 c = Vec3::Zero();
      const auto pts = facet_corners(e, f);
      for (const auto& x : pts)
        c += x;
      c /= static_cast<double>(pts.size());
      const BoundaryTag t = tag_of(c);
      if (t == BoundaryTag::interior)
        throw InputError("boundary facet cannot be tagged interior");
      elements_[e].facet_tags[f] = t;
    }
}

// ------------------------------------------------------- snapshot functions

Mesh refine_element(const Mesh& mesh, ElementId e, const Vec3& zhat)
{
  Mesh out = mesh;
  out.refine_in_place(e, zhat);
  return out;
}

Mesh refine_elements(const Mesh& mesh, const std::vector<ElementId>& ids)
{
  Mesh out = mesh;
  std::vector<ElementId> sorted = ids;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  for (ElementId e : sorted)
    if (out.is_active(e))
      out.refine_in_place(e, Vec3::Zero());
  return out;
}

Mesh refine_uniformly(const Mesh& mesh, int times)
{
  Mesh out = mesh;
  for (int t = 0; t < times; ++t)
  {
    const auto ids = out.active_elements();
    for (ElementId e : ids)
      out.refine_in_place(e, Vec3::Zero(), false);
  }
  return out;
}

Mesh coarsen_element(const Mesh& mesh, ElementId parent)
{
  Mesh out = mesh;
  out.coarsen_in_place(parent);
  return out;
}

Mesh with_degree(const Mesh& mesh, ElementId e, int p)
{
  Mesh out = mesh;
  out.set_degree_in_place(e, p);
  return out;
}

Mesh with_uniform_degree(const Mesh& mesh, int p)
{
  Mesh out = mesh;
  for (ElementId e = 0; e < static_cast<ElementId>(out.num_elements_total()); ++e)
    out.set_degree_in_place(e, p);
  return out;
}

Mesh with_boundary_tags(const Mesh& mesh, const std::function<BoundaryTag(const Vec3&)>& tag_of)
{
  Mesh out = mesh;
  out.retag_boundary_in_place(tag_of);
  return out;
}

// -------------------------------------------------------- built-in meshes

Mesh make_interval_mesh(double a, double b, int n)
{
  if (n < 1 || !(b > a))
    throw InputError("make_interval_mesh: invalid arguments");
  std::vector<Vec3> v;
  for (int i = 0; i <= n; ++i)
    v.emplace_back(a + (b - a) * i / n, 0.0, 0.0);
  std::vector<std::array<VertexId, 8>> el;
  for (int i = 0; i < n; ++i)
    el.push_back({i, i + 1, -1, -1, -1, -1, -1, -1});
  return Mesh(1, std::move(v), el);
}

Mesh make_rectangle_mesh(double x0, double x1, double y0, double y1, int nx, int ny)
{
  if (nx < 1 || ny < 1 || !(x1 > x0) || !(y1 > y0))
    throw InputError("make_rectangle_mesh: invalid arguments");
  std::vector<Vec3> v;
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i)
      v.emplace_back(x0 + (x1 - x0) * i / nx, y0 + (y1 - y0) * j / ny, 0.0);
  auto id = [&](int i, int j) { return j * (nx + 1) + i; };
  std::vector<std::array<VertexId, 8>> el;
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i)
      el.push_back({id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1), -1, -1, -1, -1});
  return Mesh(2, std::move(v), el);
}

Mesh make_box_mesh(const Vec3& lo, const Vec3& hi, int nx, int ny, int nz)
{
  if (nx < 1 || ny < 1 || nz < 1)
    throw InputError("make_box_mesh: invalid arguments");
  std::vector<Vec3> v;
  for (int k = 0; k <= nz; ++k)
    for (int j = 0; j <= ny; ++j)
      for (int i = 0; i <= nx; ++i)
        v.emplace_back(lo[0] + (hi[0] - lo[0]) * i / nx, lo[1] + (hi[1] - lo[1]) * j / ny,
                       lo[2] + (hi[2] - lo[2]) * k / nz);
  auto id = [&](int i, int j, int k) { return (k * (ny + 1) + j) * (nx + 1) + i; };
  std::vector<std::array<VertexId, 8>> el;
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i)
        el.push_back({id(i, j, k), id(i + 1, j, k), id(i, j + 1, k), id(i + 1, j + 1, k), id(i, j, k + 1),
                      id(i + 1, j, k + 1), id(i, j + 1, k + 1), id(i + 1, j + 1, k + 1)});
  return Mesh(3, std::move(v), el);
}

Mesh make_lshape_mesh(int n)
{
  if (n < 1)
    throw InputError("make_lshape_mesh: invalid arguments");
  const int m = 2 * n;
  std::vector<Vec3> v;
  for (int j = 0; j <= m; ++j)
    for (int i = 0; i <= m; ++i)
      v.emplace_back(-1.0 + 2.0 * i / m, -1.0 + 2.0 * j / m, 0.0);
  auto id = [&](int i, int j) { return j * (m + 1) + i; };
  std::vector<std::array<VertexId, 8>> el;
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < m; ++i)
    {
      if (i >= n && j < n)
        continue;
      el.push_back({id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1), -1, -1, -1, -1});
    }
  // drop vertices of the removed quadrant that no element uses
  std::vector<int> remap(v.size(), -1);
  std::vector<Vec3> used;
  for (auto& e : el)
    for (int c = 0; c < 4; ++c)
    {
      if (remap[e[c]] < 0)
      {
        remap[e[c]] = static_cast<int>(used.size());
        used.push_back(v[e[c]]);
      }
      e[c] = remap[e[c]];
    }
  return Mesh(2, std::move(used), el);
}

} // namespace hpfem
