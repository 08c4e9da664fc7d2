#include "credfuse/circuit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "credfuse/error.hpp"
#include "credfuse/numeric.hpp"
#include "credfuse/random.hpp"

namespace credfuse {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

// Density ceiling for the boundedness check.
constexpr double kUnitBoundSlack = 1e-12;

}  // namespace

// --- leaves ----------------------------------------------------------------

CategoricalLeaf::CategoricalLeaf(std::vector<double> log_probs) : log_probs_(std::move(log_probs)) {
  if (log_probs_.size() < 2) throw ParameterError("categorical leaf needs at least two classes");
  double total = 0.0;
  for (double v : log_probs_) {
    if (!std::isfinite(v)) throw ParameterError("categorical leaf log-probability is not finite");
    total += std::exp(v);
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw ParameterError("categorical leaf probabilities sum to " + std::to_string(total));
}

CategoricalLeaf CategoricalLeaf::from_probs(std::span<const double> probs) {
  std::vector<double> logs(probs.size());
  std::transform(probs.begin(), probs.end(), logs.begin(), [](double p) { return std::log(p); });
  return CategoricalLeaf(std::move(logs));
}

std::vector<double> CategoricalLeaf::probs() const {
  std::vector<double> out(log_probs_.size());
  std::transform(log_probs_.begin(), log_probs_.end(), out.begin(), [](double v) { return std::exp(v); });
  return out;
}

DirichletLeaf::DirichletLeaf(std::vector<double> alpha) : alpha_(std::move(alpha)) {
  if (alpha_.size() < 2) throw ParameterError("Dirichlet leaf needs at least two coordinates");
  double total = 0.0;
  alpha_minus_one_.reserve(alpha_.size());
  for (double a : alpha_) {
    if (!(a > 0.0) || !std::isfinite(a)) throw ParameterError("Dirichlet concentration must be finite and > 0");
    total += a;
    log_normalizer_ -= log_gamma(a);
    alpha_minus_one_.push_back(a - 1.0);
  }
  log_normalizer_ += log_gamma(total);
  const double psi_total = digamma(total);
  normalizer_gradient_.reserve(alpha_.size());
  for (double a : alpha_) normalizer_gradient_.push_back(psi_total - digamma(a));
}

bool operator==(const CategoricalLeaf& a, const CategoricalLeaf& b) {
  return std::ranges::equal(a.log_probs(), b.log_probs());
}
bool operator==(const DirichletLeaf& a, const DirichletLeaf& b) { return std::ranges::equal(a.alpha(), b.alpha()); }
bool operator==(const SumNode& a, const SumNode& b) {
  return a.children == b.children && a.weight_logits == b.weight_logits;
}
bool operator==(const ProductNode& a, const ProductNode& b) { return a.children == b.children; }
bool operator==(const LeafNode& a, const LeafNode& b) { return a.var == b.var && a.dist == b.dist; }

std::span<const NodeId> children_of(const Node& node) {
  return std::visit(Overloaded{[](const SumNode& s) { return std::span<const NodeId>(s.children); },
                               [](const ProductNode& p) { return std::span<const NodeId>(p.children); },
                               [](const LeafNode&) { return std::span<const NodeId>(); }},
                    node);
}

// --- circuit ---------------------------------------------------------------

Circuit::Circuit(std::size_t num_classes, std::size_t num_modalities)
    : num_classes_(num_classes), num_modalities_(num_modalities) {
  if (num_classes < 2) throw ContractError("circuit needs K >= 2 classes");
  if (num_modalities < 1) throw ContractError("circuit needs M >= 1 modalities");
}

void Circuit::check_children(const std::vector<NodeId>& children) const {
  if (children.empty()) throw ContractError("internal node needs at least one child");
  for (NodeId c : children)
    if (c >= nodes_.size()) throw ContractError("child id " + std::to_string(c) + " does not precede its parent");
}

void Circuit::check_leaf(VarId var, const LeafDistribution& dist) const {
  if (var.index > num_modalities_) throw ContractError("leaf variable " + std::to_string(var.index) + " out of range");
  if (var.is_target()) {
    const auto* cat = std::get_if<CategoricalLeaf>(&dist);
    if (cat == nullptr) throw ContractError("target leaf must be categorical");
    if (cat->num_classes() != num_classes_) throw ContractError("categorical leaf has wrong class count");
  } else {
    const auto* dir = std::get_if<DirichletLeaf>(&dist);
    if (dir == nullptr) throw ContractError("modality leaf must be Dirichlet");
    if (dir->dimension() != num_classes_) throw ContractError("Dirichlet leaf has wrong dimension");
  }
}

NodeId Circuit::add_leaf(VarId var, LeafDistribution dist) {
  check_leaf(var, dist);
  nodes_.emplace_back(LeafNode{var, std::move(dist)});
  return nodes_.size() - 1;
}

NodeId Circuit::add_product(std::vector<NodeId> children) {
  check_children(children);
  nodes_.emplace_back(ProductNode{std::move(children)});
  return nodes_.size() - 1;
}

NodeId Circuit::add_sum(std::vector<NodeId> children, std::vector<double> weight_logits) {
  check_children(children);
  if (weight_logits.size() != children.size()) throw ContractError("sum node needs one weight logit per child");
  for (double w : weight_logits)
    if (!std::isfinite(w)) throw ParameterError("sum weight logit is not finite");
  nodes_.emplace_back(SumNode{std::move(children), std::move(weight_logits)});
  return nodes_.size() - 1;
}

void Circuit::set_root(NodeId id) {
  if (id >= nodes_.size()) throw ContractError("root id out of range");
  root_ = id;
  root_set_ = true;
}

NodeId Circuit::root() const {
  if (nodes_.empty()) throw UsageError("empty circuit has no root");
  return root_set_ ? root_ : nodes_.size() - 1;
}

void Circuit::set_weight_logits(NodeId id, std::vector<double> logits) {
  auto* sum = std::get_if<SumNode>(&nodes_.at(id));
  if (sum == nullptr) throw ContractError("node " + std::to_string(id) + " is not a sum node");
  if (logits.size() != sum->children.size()) throw ContractError("weight logit count mismatch");
  for (double w : logits)
    if (!std::isfinite(w)) throw ParameterError("sum weight logit is not finite");
  sum->weight_logits = std::move(logits);
}

void Circuit::set_leaf_distribution(NodeId id, LeafDistribution dist) {
  auto* leaf = std::get_if<LeafNode>(&nodes_.at(id));
  if (leaf == nullptr) throw ContractError("node " + std::to_string(id) + " is not a leaf");
  check_leaf(leaf->var, dist);
  leaf->dist = std::move(dist);
}

std::vector<double> Circuit::sum_weights(NodeId id) const {
  const auto* sum = std::get_if<SumNode>(&nodes_.at(id));
  if (sum == nullptr) throw ContractError("node " + std::to_string(id) + " is not a sum node");
  return softmax(sum->weight_logits);
}

bool operator==(const Circuit& a, const Circuit& b) {
  return a.num_classes_ == b.num_classes_ && a.num_modalities_ == b.num_modalities_ && a.nodes_ == b.nodes_ &&
         a.root() == b.root();
}

// --- builder ---------------------------------------------------------------

Circuit build_fusion_circuit(std::size_t num_modalities, std::size_t num_classes, std::size_t components,
                             std::uint64_t seed, const InitConfig& init) {
  if (components < 1) throw ContractError("fusion circuit needs at least one component");
  if (init.alpha_low <= 0.0 || init.alpha_high < init.alpha_low)
    throw ParameterError("invalid Dirichlet init range");
  Circuit circuit(num_classes, num_modalities);
  Rng rng(seed);

  std::vector<NodeId> products;
  std::vector<double> logits(components, 0.0);
  for (std::size_t c = 0; c < components; ++c) {
    std::vector<NodeId> factors;
    if (init.scheme == InitConfig::Scheme::kSymmetric) {
      std::vector<double> cat_logits(num_classes, 0.0);
      cat_logits[c % num_classes] = init.symmetric_bias;
      factors.push_back(circuit.add_leaf(VarId::target(), CategoricalLeaf(log_softmax(cat_logits))));
      for (std::size_t j = 1; j <= num_modalities; ++j)
        factors.push_back(circuit.add_leaf(VarId::modality(j),
                                           DirichletLeaf(std::vector<double>(num_classes, init.symmetric_alpha))));
    } else {
      std::vector<double> conc(num_classes, init.categorical_concentration);
      std::vector<double> probs = sample_dirichlet(conc, rng);
      // keep every class reachable so log-probs stay finite
      for (double& p : probs) p = std::max(p, 1e-6);
      const double total = std::accumulate(probs.begin(), probs.end(), 0.0);
      std::vector<double> logs(probs.size());
      for (std::size_t i = 0; i < probs.size(); ++i) logs[i] = std::log(probs[i] / total);
      factors.push_back(circuit.add_leaf(VarId::target(), CategoricalLeaf(log_softmax(logs))));
      for (std::size_t j = 1; j <= num_modalities; ++j) {
        std::vector<double> alpha(num_classes);
        for (double& a : alpha) a = init.alpha_low + (init.alpha_high - init.alpha_low) * sample_uniform(rng);
        factors.push_back(circuit.add_leaf(VarId::modality(j), DirichletLeaf(std::move(alpha))));
      }
      logits[c] = init.logit_scale * sample_normal(rng);
    }
    products.push_back(circuit.add_product(std::move(factors)));
  }
  circuit.add_sum(std::move(products), std::move(logits));
  return circuit;
}

// --- scopes and validators -------------------------------------------------

std::vector<Scope> compute_scopes(const Circuit& circuit) {
  const std::size_t nvars = circuit.num_variables();
  std::vector<Scope> scopes;
  scopes.reserve(circuit.size());
  for (const Node& node : circuit.nodes()) {
    Scope s(nvars);
    if (const auto* leaf = std::get_if<LeafNode>(&node)) {
      s.set(leaf->var.index);
    } else {
      for (NodeId c : children_of(node)) s |= scopes[c];
    }
    scopes.push_back(std::move(s));
  }
  return scopes;
}

ValidationResult validate_smooth(const Circuit& circuit) {
  const auto scopes = compute_scopes(circuit);
  ValidationResult result;
  for (NodeId id = 0; id < circuit.size(); ++id) {
    const auto* sum = std::get_if<SumNode>(&circuit.node(id));
    if (sum == nullptr) continue;
    for (NodeId c : sum->children) {
      if (scopes[c] != scopes[id]) {
        result.offending.push_back(id);
        break;
      }
    }
  }
  return result;
}

ValidationResult validate_decomposable(const Circuit& circuit) {
  const auto scopes = compute_scopes(circuit);
  ValidationResult result;
  for (NodeId id = 0; id < circuit.size(); ++id) {
    const auto* prod = std::get_if<ProductNode>(&circuit.node(id));
    if (prod == nullptr) continue;
    Scope seen(circuit.num_variables());
    for (NodeId c : prod->children) {
      if (seen.intersects(scopes[c])) {
        result.offending.push_back(id);
        break;
      }
      seen |= scopes[c];
    }
  }
  return result;
}

ValidationResult validate_root_scope(const Circuit& circuit) {
  ValidationResult result;
  if (circuit.empty()) return result;
  const auto scopes = compute_scopes(circuit);
  if (!scopes[circuit.root()].all()) result.offending.push_back(circuit.root());
  return result;
}

LeafBound check_leaf_density_bound(const LeafDistribution& leaf) {
  return std::visit(
      Overloaded{
          [](const CategoricalLeaf& cat) {
            const auto lp = cat.log_probs();
            return LeafBound{true, std::exp(*std::max_element(lp.begin(), lp.end()))};
          },
          [](const DirichletLeaf& dir) {
            const auto alpha = dir.alpha();
            const double k = static_cast<double>(alpha.size());
            if (std::any_of(alpha.begin(), alpha.end(), [](double a) { return a < 1.0; }))
              return LeafBound{false, std::numeric_limits<double>::infinity()};
            const double total = std::accumulate(alpha.begin(), alpha.end(), 0.0);
            double log_density = dir.log_normalizer();
            for (double a : alpha) {
              // 0 * log 0 = 0 for coordinates with alpha == 1
              if (a == 1.0) continue;
              const double mode = total > k ? (a - 1.0) / (total - k) : 1.0 / k;
              log_density += (a - 1.0) * std::log(mode);
            }
            const double max_density = std::exp(log_density);
            return LeafBound{max_density <= 1.0 + kUnitBoundSlack, max_density};
          }},
      leaf);
}

std::vector<NodeId> unbounded_leaves(const Circuit& circuit) {
  std::vector<NodeId> out;
  for (NodeId id = 0; id < circuit.size(); ++id)
    if (const auto* leaf = std::get_if<LeafNode>(&circuit.node(id)); leaf && !check_leaf_density_bound(leaf->dist).bounded)
      out.push_back(id);
  return out;
}

}  // namespace credfuse
