#pragma once

// Exact log-space inference on smooth, decomposable fusion circuits.
//
// Every query is a single bottom-up pass over the arena. Absent variables
// are marginalized by letting their leaves evaluate to log 1 = 0; this is
// exact because every leaf density integrates (or sums) to one and the
// circuit is smooth and decomposable.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "credfuse/circuit.hpp"
#include "credfuse/prob_vector.hpp"

namespace credfuse {

/// Simplex coordinates are clamped to [kSimplexFloor, 1 - kSimplexFloor]
/// and renormalized before a Dirichlet leaf sees them.
inline constexpr double kSimplexFloor = 1e-12;

/// Partial assignment of circuit variables. modalities[j - 1] holds p_j.
struct Evidence {
  std::optional<std::size_t> target;
  std::vector<std::optional<ProbVector>> modalities;

  static Evidence none(std::size_t num_modalities);
  static Evidence full(std::size_t y, std::span<const ProbVector> preds);
  static Evidence of_modalities(std::span<const ProbVector> preds);

  bool has(VarId var) const;
  /// Copy with one variable removed.
  Evidence without(VarId var) const;
  Evidence with_target(std::size_t y) const;
};

double categorical_log_mass(const CategoricalLeaf& leaf, std::size_t y);
/// log Dir(p; alpha) after the clamp policy above.
double dirichlet_log_density(const DirichletLeaf& leaf, std::span<const double> p);

/// Log density of a single leaf under the evidence; 0 when its variable is absent.
double leaf_log_density(const LeafNode& leaf, const Evidence& evidence);

/// Node log-values from one bottom-up pass plus the evidence preprocessing
/// the reverse sweep needs.
struct ForwardCache {
  Evidence evidence;
  std::vector<std::vector<double>> clamped;  // per modality, empty if absent
  std::vector<double> log_values;
  NodeId root = 0;

  bool empty() const { return log_values.empty(); }
  double root_value() const { return log_values.at(root); }
};

/// Bottom-up evaluation. Throws NumericError naming the node if a leaf
/// produces a NaN or +inf.
ForwardCache forward(const Circuit& circuit, const Evidence& evidence);

/// Requires every variable present.
double log_joint(const Circuit& circuit, const Evidence& evidence);
double log_marginal(const Circuit& circuit, const Evidence& evidence);

/// log P(Y = y, supplied modalities) for every class y.
std::vector<double> log_target_scores(const Circuit& circuit, std::span<const std::optional<ProbVector>> modalities);

/// P(Y | supplied modalities) by K-way enumeration of the target.
ProbVector posterior_over_target(const Circuit& circuit, std::span<const std::optional<ProbVector>> modalities);
ProbVector posterior_over_target(const Circuit& circuit, std::span<const ProbVector> preds);

/// Per-node parameter gradients. Sum nodes: d/d weight_logits. Categorical
/// leaves: d/d logits at logits = log_probs. Dirichlet leaves: d/d alpha.
/// Product nodes: empty.
struct CircuitGradients {
  std::vector<std::vector<double>> node;

  static CircuitGradients zeros_like(const Circuit& circuit);
  void add_scaled(const CircuitGradients& other, double scale);
};

/// Per-modality gradient of the root log-value with respect to the supplied
/// p_j (unprojected); empty for absent modalities.
using EvidenceGradients = std::vector<std::vector<double>>;

/// Reverse sweep over the cached pass, adding upstream * d(root)/d(.) into
/// the sinks. Either sink may be null. Throws UsageError on an empty or
/// mismatched cache.
void backward(const Circuit& circuit, const ForwardCache& cache, double upstream, CircuitGradients* params,
              EvidenceGradients* evidence);

/// Gradient of log_marginal w.r.t. each supplied p_j. Throws NumericError
/// when a supplied p_j touches the simplex boundary in a coordinate where
/// some Dirichlet leaf on that block has alpha < 1.
EvidenceGradients grad_wrt_evidence(const Circuit& circuit, const Evidence& evidence);

// --- brute-force oracles ---------------------------------------------------

/// Midpoint cells of a regular grid on the (K-1)-simplex in the coordinates
/// (p_1..p_{K-1}). Weights are cell volumes; they sum to the simplex volume
/// 1/(K-1)!. Supports K = 2 (R intervals) and K = 3 (R^2 triangles).
struct SimplexGrid {
  std::vector<ProbVector> points;
  std::vector<double> weights;
};
SimplexGrid simplex_grid(std::size_t num_classes, std::size_t resolution);

/// Sums the joint over absent Y and integrates it over absent Dirichlet
/// blocks on the simplex grid. Linear-space density. Refuses K > 3, M > 3,
/// or grids beyond a few hundred million points.
double brute_force_marginal_oracle(const Circuit& circuit, const Evidence& evidence, std::size_t grid_resolution);

struct DominanceViolation {
  std::vector<VarId> marginalized;
  Evidence point;
  double marginal = 0.0;
  double joint = 0.0;
};

/// Checks P(x^{-j}) >= P(x) - 1e-9 for every nonempty variable subset j and
/// every full grid assignment x. Requires K <= 3, M <= 2.
std::vector<DominanceViolation> check_marginal_dominance(const Circuit& circuit, std::size_t grid_resolution);

}  // namespace credfuse
