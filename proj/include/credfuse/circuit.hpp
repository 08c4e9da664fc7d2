#pragma once

// Probabilistic circuit over a target class Y and M atomic modality blocks
// p_1..p_M. Nodes live in an arena in topological order: every child id is
// smaller than its parent's id.

#include <boost/dynamic_bitset.hpp>
#include <cstddef>
#include <cstdint>
#include <span>
#include <variant>
#include <vector>

namespace credfuse {

using NodeId = std::size_t;

/// Circuit variable. Index 0 is the target Y; index j in 1..M is the
/// probability-vector block of modality j.
struct VarId {
  std::size_t index = 0;

  static constexpr VarId target() { return VarId{0}; }
  static constexpr VarId modality(std::size_t j) { return VarId{j}; }
  constexpr bool is_target() const { return index == 0; }

  friend constexpr auto operator<=>(VarId, VarId) = default;
};

/// Set of variables a node depends on, one bit per VarId.
using Scope = boost::dynamic_bitset<>;

class CategoricalLeaf {
 public:
  /// Log-probabilities must be finite and exponentiate to a distribution
  /// within 1e-9.
  explicit CategoricalLeaf(std::vector<double> log_probs);
  static CategoricalLeaf from_probs(std::span<const double> probs);

  std::size_t num_classes() const { return log_probs_.size(); }
  std::span<const double> log_probs() const { return log_probs_; }
  std::vector<double> probs() const;

 private:
  std::vector<double> log_probs_;
};

class DirichletLeaf {
 public:
  /// All concentrations must be finite and > 0.
  explicit DirichletLeaf(std::vector<double> alpha);

  std::size_t dimension() const { return alpha_.size(); }
  std::span<const double> alpha() const { return alpha_; }
  std::span<const double> alpha_minus_one() const { return alpha_minus_one_; }
  /// log Gamma(sum alpha) - sum log Gamma(alpha_i)
  double log_normalizer() const { return log_normalizer_; }
  /// digamma(sum alpha) - digamma(alpha_i): the alpha-gradient of the log
  /// density minus its log p_i term.
  std::span<const double> normalizer_gradient() const { return normalizer_gradient_; }

 private:
  std::vector<double> alpha_;
  std::vector<double> alpha_minus_one_;
  std::vector<double> normalizer_gradient_;
  double log_normalizer_ = 0.0;
};

using LeafDistribution = std::variant<CategoricalLeaf, DirichletLeaf>;

struct SumNode {
  std::vector<NodeId> children;
  std::vector<double> weight_logits;  // weights are softmax(weight_logits)
};

struct ProductNode {
  std::vector<NodeId> children;
};

struct LeafNode {
  VarId var;
  LeafDistribution dist;
};

using Node = std::variant<SumNode, ProductNode, LeafNode>;

std::span<const NodeId> children_of(const Node& node);

class Circuit {
 public:
  /// K >= 2 classes and M >= 1 modalities; throws ContractError otherwise.
  Circuit(std::size_t num_classes, std::size_t num_modalities);

  /// Leaf families are tied to roles: Y takes a K-class categorical,
  /// every p_j a K-dimensional Dirichlet.
  NodeId add_leaf(VarId var, LeafDistribution dist);
  NodeId add_product(std::vector<NodeId> children);
  NodeId add_sum(std::vector<NodeId> children, std::vector<double> weight_logits);

  /// Defaults to the most recently added node.
  void set_root(NodeId id);

  std::size_t num_classes() const { return num_classes_; }
  std::size_t num_modalities() const { return num_modalities_; }
  std::size_t num_variables() const { return num_modalities_ + 1; }
  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  NodeId root() const;

  const Node& node(NodeId id) const { return nodes_.at(id); }
  std::span<const Node> nodes() const { return nodes_; }

  /// Parameter updates. Structure is immutable once built.
  void set_weight_logits(NodeId id, std::vector<double> logits);
  void set_leaf_distribution(NodeId id, LeafDistribution dist);

  std::vector<double> sum_weights(NodeId id) const;

  friend bool operator==(const Circuit& a, const Circuit& b);

 private:
  void check_children(const std::vector<NodeId>& children) const;
  void check_leaf(VarId var, const LeafDistribution& dist) const;

  std::size_t num_classes_;
  std::size_t num_modalities_;
  std::vector<Node> nodes_;
  std::size_t root_ = 0;
  bool root_set_ = false;
};

bool operator==(const CategoricalLeaf& a, const CategoricalLeaf& b);
bool operator==(const DirichletLeaf& a, const DirichletLeaf& b);
bool operator==(const SumNode& a, const SumNode& b);
bool operator==(const ProductNode& a, const ProductNode& b);
bool operator==(const LeafNode& a, const LeafNode& b);

// --- structure ------------------------------------------------------------

struct InitConfig {
  enum class Scheme {
    /// Dirichlet concentrations drawn uniformly per coordinate, categorical
    /// leaves drawn from a symmetric Dirichlet, sum logits Gaussian.
    kRandom,
    /// Every Dirichlet leaf equal; component c's categorical leans toward
    /// class c mod K. Y starts independent of every p_j.
    kSymmetric,
  };
  Scheme scheme = Scheme::kRandom;
  double alpha_low = 1.0;
  double alpha_high = 2.0;
  double categorical_concentration = 1.0;
  double logit_scale = 0.0;
  double symmetric_alpha = 1.0;
  double symmetric_bias = 1.0;
};

/// Root sum over `components` products, each a full factorization
/// Cat(Y) x Dir(p_1) x ... x Dir(p_M). Deterministic in `seed`.
Circuit build_fusion_circuit(std::size_t num_modalities, std::size_t num_classes, std::size_t components,
                             std::uint64_t seed, const InitConfig& init = {});

/// Scope of every node (sum scope is the union of its children's).
std::vector<Scope> compute_scopes(const Circuit& circuit);

struct ValidationResult {
  std::vector<NodeId> offending;
  bool ok() const { return offending.empty(); }
};

/// Sum nodes whose children do not all share the sum's scope.
ValidationResult validate_smooth(const Circuit& circuit);
/// Product nodes with two children whose scopes overlap.
ValidationResult validate_decomposable(const Circuit& circuit);
/// ok iff the root's scope covers every variable.
ValidationResult validate_root_scope(const Circuit& circuit);

struct LeafBound {
  bool bounded = false;
  double max_density = 0.0;  // +inf when the density diverges
};

/// Whether the leaf density (mass, for a categorical) never exceeds one.
LeafBound check_leaf_density_bound(const LeafDistribution& leaf);

/// Leaf node ids whose density is not bounded by one.
std::vector<NodeId> unbounded_leaves(const Circuit& circuit);

}  // namespace credfuse
