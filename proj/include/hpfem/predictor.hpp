#pragma once

#include "hpfem/assembly.hpp"

#include <string>
#include <vector>

namespace hpfem
{

/// u_W = u_loc + u_tilde with u_loc carried by the cell dofs of one element.
struct LocalDecomposition
{
  ElementId element = -1;
  /// Vector dof indices (ncomp * i + k) of the cell dofs of the element.
  std::vector<int> local_dofs;
  Vector u_loc;
  Vector u_tilde;
};

LocalDecomposition local_split(const VSpace& V, const Vector& u, ElementId e);

enum class EnrichmentKind
{
  p,
  hp
};

/// Polynomial distributions used for enrichment functions: `top` keeps only the
/// highest degree, `full` every degree from 2 up to it.
enum class DegreeRule
{
  top,
  full
};

/// Internal node of the refinement of the reference cube: orientation tuple a
/// (increasing directions) and location tuple ell.
struct InternalNode
{
  std::vector<int> a;
  std::vector<int> ell;
};

/// All internal nodes, ordered by dimension r, then a, then ell.
std::vector<InternalNode> internal_nodes(int dim);

/// Scalar enrichment functions on one element; vector problems use each of them
/// once per component.
struct EnrichmentSet
{
  EnrichmentKind kind = EnrichmentKind::p;
  int dim = 1;
  int parent_degree = 1;
  Vec3 z = Vec3::Zero();
  /// p-kind: multi-indices j (all j_k >= 2).
  std::vector<MultiIndex> J;
  /// hp-kind: node index and polynomial distribution (entries for the node's a directions).
  std::vector<InternalNode> nodes;
  std::vector<std::pair<int, MultiIndex>> functions;

  int size() const { return kind == EnrichmentKind::p ? static_cast<int>(J.size()) : static_cast<int>(functions.size()); }
  /// Degree per direction needed to represent every function on the children.
  int required_degree() const;
  /// Degree of the element (p-kind) or of the children (hp-kind) after applying it.
  int target_degree() const;
  /// Value and reference gradient at a point of the reference cube.
  double value(int l, const Vec3& xhat) const;
  Vec3 gradient(int l, const Vec3& xhat) const;
  /// Children (bit k = upper side of z_k) on which function l is nonzero.
  std::vector<int> support(int l) const;
};

/// Default multi-indices: 2 <= j_k <= p_Q + 1 with max_k j_k = p_Q + 1 (`top`) or
/// all 2 <= j_k <= p_Q + 1 (`full`).
EnrichmentSet build_p_enrichment(int dim, int parent_degree, DegreeRule rule = DegreeRule::top);
EnrichmentSet build_p_enrichment(int dim, int parent_degree, std::vector<MultiIndex> J);
/// Vertex hat plus, for p_Q >= 2, bubbles on every internal edge, face and child
/// with distributions p_k = p_Q (`top`) or all 2 <= p_k <= p_Q (`full`).
EnrichmentSet build_hp_enrichment(int dim, int parent_degree, const Vec3& z = Vec3::Zero(),
                                  DegreeRule rule = DegreeRule::top);

/// Representation of global dofs and enrichment functions on the children T_i.
struct RepresentationMatrices
{
  int child_degree = 1;
  std::vector<RefBox> boxes;
  /// Global scalar dofs meeting the element.
  std::vector<int> dofs;
  /// dofs x parent shapes (constrained approximation included).
  Matrix CQ;
  /// parent shapes x child shapes, per child.
  std::vector<Matrix> B;
  /// scalar enrichment functions x child shapes, per child.
  std::vector<Matrix> D;
  Matrix C(int i) const { return CQ * B[i]; }
};

RepresentationMatrices representation_matrices(const VSpace& V, ElementId e, const EnrichmentSet& E,
                                               int child_degree = -1);

/// Inputs shared by all element predictions: the elliptic form (Laplacian per
/// component if material is null), its data and the Galerkin solution.
struct PredictionContext
{
  const VSpace* V = nullptr;
  const Material* material = nullptr;
  LoadData data;
  Vector u;
  Vector load;
  /// ||u_W||^2 = a(u_W, u_W).
  double energy2 = 0.0;
};

PredictionContext make_prediction_context(const VSpace& V, const Material* material, const LoadData& data,
                                          const SparseMatrix& K, const Vector& load, const Vector& u);

struct PredictionSystem
{
  EnrichmentKind kind = EnrichmentKind::p;
  int L = 0;
  Matrix A;
  Vector b, c;
  double a00 = 0.0;
  double delta = 0.0;
  double uloc_norm2 = 0.0;
  double epsilon = 0.0;
  Vector y;
  /// Predicted error reduction Delta e^2.
  double reduction = 0.0;
  bool ok = false;
  std::string reason;
};

/// Bordered (L+1) system and Delta e^2 = y^T (b - c) - ||u_loc||^2 + eps delta.
PredictionSystem predict_reduction(const PredictionContext& ctx, ElementId e, const EnrichmentSet& E);

struct PredictorOptions
{
  DegreeRule p_rule = DegreeRule::full;
  DegreeRule hp_rule = DegreeRule::full;
  bool use_p = true;
  bool use_hp = true;
  Vec3 z = Vec3::Zero();
  int max_degree = 10;
  int max_level = 30;
};

struct ElementPrediction
{
  ElementId element = -1;
  std::vector<PredictionSystem> candidates;
  int best = -1;
  double best_reduction = 0.0;
};

/// Candidate menu of one element.
std::vector<EnrichmentSet> candidate_menu(const Mesh& mesh, ElementId e, const PredictorOptions& options);

/// Argmax of the predicted reductions; ties prefer p-kind, then the lower index.
int choose_enrichment(const std::vector<PredictionSystem>& candidates);

/// Predictions for all active elements (in mesh.active_elements() order).
std::vector<ElementPrediction> predict_all(const PredictionContext& ctx, const PredictorOptions& options);

/// Apply the chosen candidate on each marked element.
Mesh apply_enrichments(const Mesh& mesh, const std::vector<ElementPrediction>& predictions,
                       const std::vector<ElementId>& marked, const PredictorOptions& options);

/// CSV with columns element, kind, L, reduction, chosen.
void write_predictions_csv(const std::string& path, const std::vector<ElementPrediction>& predictions,
                           const std::vector<ElementId>& marked);

} // namespace hpfem
