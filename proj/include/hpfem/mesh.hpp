#pragma once

#include "hpfem/types.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace hpfem
{

enum class BoundaryTag : std::uint8_t
{
  interior,
  dirichlet,
  neumann
};

/// Axis-aligned box inside the reference cube [-1,1]^d.
struct RefBox
{
  Vec3 lower = Vec3(-1, -1, -1);
  Vec3 upper = Vec3(1, 1, 1);

  /// Affine map of [-1,1]^d onto the box.
  Vec3 map(const Vec3& xhat) const
  {
    return 0.5 * (lower + upper) + 0.5 * (upper - lower).cwiseProduct(xhat);
  }
  /// Inverse of map.
  Vec3 unmap(const Vec3& x) const
  {
    return (2.0 * x - lower - upper).cwiseQuotient(upper - lower);
  }
  /// Box of a sub-box given in the coordinates of this box.
  RefBox compose(const RefBox& inner) const { return {map(inner.lower), map(inner.upper)}; }
};

/// Multilinear map F_Q : [-1,1]^d -> Q interpolating the 2^d corners. Corner c
/// sits at the reference point whose k-th coordinate is +1 if bit k of c is set
/// and -1 otherwise.
class ElementMap
{
public:
  ElementMap() = default;
  ElementMap(int dim, std::span<const Vec3> corners);

  int dim() const { return dim_; }
  int num_corners() const { return 1 << dim_; }
  const Vec3& corner(int c) const { return corners_[c]; }

  Vec3 map(const Vec3& xhat) const;
  /// J(i,k) = dF_i / dxhat_k (leading d x d block).
  Mat3 jacobian(const Vec3& xhat) const;
  double det_jacobian(const Vec3& xhat) const;
  /// Second derivatives: result[i](k,l) = d^2 F_i / dxhat_k dxhat_l.
  std::array<Mat3, max_dim> second_derivatives(const Vec3& xhat) const;

  /// Reference coordinates of a physical point (Newton iteration). Returns
  /// nothing if the iteration fails; the result may lie outside [-1,1]^d.
  std::optional<Vec3> inverse(const Vec3& x) const;

  /// The map restricted to a reference sub-box, F_Q composed with the affine
  /// map of [-1,1]^d onto the box.
  ElementMap sub_map(const RefBox& box) const;

  /// Jacobian determinant strictly positive at corners and at order-3 Gauss points.
  bool is_valid() const;
  /// True if F_Q is affine (parallelogram / parallelepiped).
  bool is_affine(double tol = 1e-12) const;

  double volume() const;
  double diameter() const;
  Vec3 center() const { return map(Vec3::Zero()); }

  /// Reference point of a corner.
  static Vec3 reference_corner(int c, int dim);

private:
  int dim_ = 0;
  std::array<Vec3, 8> corners_{};
};

/// True iff det(grad F), sampled on a tensor grid with at least three points per
/// direction, is reproduced by its interpolant of degree one per direction
/// (relative tolerance 1e-12).
bool check_det_affine(const ElementMap& map, int samples_per_direction = 4);

/// Children boxes of [-1,1]^d split at the dividing point zhat; child i has bit k
/// set if it lies on the upper side of zhat_k.
std::vector<RefBox> refinement_pattern(const Vec3& zhat, int dim);

struct Element
{
  std::array<VertexId, 8> vertices{};
  std::array<BoundaryTag, 6> facet_tags{};
  int level = 0;
  ElementId parent = -1;
  std::vector<ElementId> children;
  /// Box of this element inside its parent's reference cube.
  RefBox box_in_parent;
  Vec3 dividing_point = Vec3::Zero();
  int degree = 1;
  bool active = true;
};

/// Facet numbering: facet 2k+s is the facet xhat_k = -1 (s = 0) or +1 (s = 1).
inline int facet_direction(int facet) { return facet / 2; }
inline int facet_side(int facet) { return facet % 2; }

enum class FacetKind : std::uint8_t
{
  boundary,
  conforming,       ///< identical facets
  neighbor_coarser, ///< own facet is a proper part of the neighbor's facet
  neighbor_finer    ///< neighbor facet is a proper part of the own facet
};

/// Coupling of one facet (or a part of it) with a neighbor.
struct FacetNeighbor
{
  int facet = -1;
  FacetKind kind = FacetKind::boundary;
  BoundaryTag tag = BoundaryTag::interior;
  ElementId neighbor = -1;
  int neighbor_facet = -1;
  /// Shared part of the facet in own reference coordinates (degenerate in the
  /// facet direction).
  RefBox own_box;
  /// Affine map of own reference coordinates on the shared part to neighbor
  /// reference coordinates: xhat_nbr = offset + linear * xhat_own.
  Vec3 offset = Vec3::Zero();
  Mat3 linear = Mat3::Zero();

  Vec3 to_neighbor(const Vec3& xhat) const { return offset + linear * xhat; }
};

/// Hierarchy of transformed hexahedra. Refinement and degree changes produce new
/// snapshots through the free functions below.
class Mesh
{
public:
  Mesh() = default;

  /// Build a conforming level-0 mesh. Element vertex lists use the tensor corner
  /// order of ElementMap. Facets on the boundary default to `default_tag`.
  Mesh(int dim, std::vector<Vec3> vertices, const std::vector<std::array<VertexId, 8>>& elements,
       BoundaryTag default_tag = BoundaryTag::dirichlet);

  int dim() const { return dim_; }
  std::size_t num_vertices() const { return vertices_.size(); }
  std::size_t num_elements_total() const { return elements_.size(); }
  const Vec3& vertex(VertexId v) const { return vertices_[v]; }
  const std::vector<Vec3>& vertices() const { return vertices_; }

  const Element& element(ElementId e) const { return elements_.at(e); }
  const std::vector<ElementId>& active_elements() const { return active_; }
  std::size_t num_active() const { return active_.size(); }
  bool is_active(ElementId e) const { return elements_.at(e).active; }

  ElementMap element_map(ElementId e) const;
  int degree(ElementId e) const { return elements_.at(e).degree; }
  BoundaryTag facet_tag(ElementId e, int facet) const { return elements_.at(e).facet_tags[facet]; }

  /// Physical points of the facet corners (2^{d-1} points in tensor order).
  std::vector<Vec3> facet_corners(ElementId e, int facet) const;

  double domain_volume() const;
  double element_size(ElementId e) const { return element_map(e).diameter(); }

  /// Active elements whose closure contains x, with reference coordinates.
  std::vector<std::pair<ElementId, Vec3>> locate(const Vec3& x, double tol = 1e-10) const;

  /// Active elements whose bounding box intersects [lo, hi] (enlarged by tol).
  std::vector<ElementId> candidates(const Vec3& lo, const Vec3& hi) const;

  /// Facet couplings of an active element.
  std::vector<FacetNeighbor> facet_neighbors(ElementId e) const;

  /// Vertices lying in the interior of a facet or edge of some active element.
  std::vector<VertexId> hanging_vertices() const;

  /// Ancestor-or-self of e (an element of this mesh) that is active in `coarse`,
  /// an earlier snapshot of the same hierarchy, with the box of e inside it.
  std::optional<std::pair<ElementId, RefBox>> ancestor_active_in(const Mesh& coarse, ElementId e) const;

  /// Maximal absolute degree difference across facets.
  int max_degree_jump() const;

  double tolerance() const { return tol_; }

  // mutation, used by the snapshot-producing free functions
  void refine_in_place(ElementId e, const Vec3& zhat, bool closure = true);
  void coarsen_in_place(ElementId parent);
  void set_degree_in_place(ElementId e, int p);
  void set_facet_tag_in_place(ElementId e, int facet, BoundaryTag tag);
  void enforce_degree_comparability_in_place(int max_jump = 1);
  /// Re-tag every boundary facet (of all elements) by its physical center.
  void retag_boundary_in_place(const std::function<BoundaryTag(const Vec3&)>& tag_of);

private:
  VertexId find_or_add_vertex(const Vec3& x);
  void rebuild_index();
  /// Incremental update of the active list and buckets after refining parent.
  void index_refinement(ElementId parent, const std::vector<ElementId>& kids);
  void bbox_of(ElementId e);
  template <class F>
  void for_each_bucket(ElementId e, F&& f);
  bool shares_segment(ElementId fine, ElementId coarse) const;
  void check_conformity(ElementId child) const;

  int dim_ = 0;
  std::vector<Vec3> vertices_;
  std::vector<Element> elements_;
  std::vector<ElementId> active_;
  double tol_ = 1e-10;
  Vec3 bbox_lo_ = Vec3::Zero();
  Vec3 bbox_hi_ = Vec3::Zero();

  // bucket grid for point location
  std::array<int, max_dim> grid_n_{1, 1, 1};
  Vec3 grid_h_ = Vec3::Ones();
  std::vector<std::vector<ElementId>> buckets_;
  std::vector<std::pair<Vec3, Vec3>> elem_bbox_;
  std::size_t indexed_count_ = 0;
  // vertex hash
  std::unordered_map<std::int64_t, std::vector<VertexId>> vertex_hash_;
  double vertex_cell_ = 1.0;
  std::int64_t vertex_key(const std::array<std::int64_t, max_dim>& cell) const;
  std::optional<VertexId> find_vertex(const Vec3& x) const;
};

/// New snapshot with element e refined at zhat (closure refinements restore
/// 1-irregularity). Throws InputError if e is not active or zhat is not interior.
Mesh refine_element(const Mesh& mesh, ElementId e, const Vec3& zhat = Vec3::Zero());
Mesh refine_elements(const Mesh& mesh, const std::vector<ElementId>& ids);
Mesh refine_uniformly(const Mesh& mesh, int times = 1);
/// New snapshot with the children of `parent` removed and `parent` active again.
Mesh coarsen_element(const Mesh& mesh, ElementId parent);
Mesh with_degree(const Mesh& mesh, ElementId e, int p);
Mesh with_uniform_degree(const Mesh& mesh, int p);
Mesh with_boundary_tags(const Mesh& mesh, const std::function<BoundaryTag(const Vec3&)>& tag_of);

// Built-in geometries.
Mesh make_interval_mesh(double a, double b, int n);
Mesh make_rectangle_mesh(double x0, double x1, double y0, double y1, int nx, int ny);
Mesh make_box_mesh(const Vec3& lo, const Vec3& hi, int nx, int ny, int nz);
/// L-shape (-1,1)^2 without the quadrant (0,1)x(-1,0), as three unit squares
/// each split n x n.
Mesh make_lshape_mesh(int n = 1);

} // namespace hpfem
