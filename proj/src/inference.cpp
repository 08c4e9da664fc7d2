#include "credfuse/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "credfuse/error.hpp"
#include "credfuse/kernels.hpp"
#include "credfuse/numeric.hpp"

namespace credfuse {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
// Oracle cost ceilings (number of joint evaluations).
constexpr double kMaxOracleEvaluations = 4e8;
constexpr double kMaxDominanceEvaluations = 5e7;
constexpr double kDominanceTolerance = 1e-9;

void check_evidence(const Circuit& circuit, const Evidence& ev) {
  if (ev.modalities.size() != circuit.num_modalities())
    throw ContractError("evidence has " + std::to_string(ev.modalities.size()) + " modality slots, circuit has " +
                        std::to_string(circuit.num_modalities()));
  if (ev.target && *ev.target >= circuit.num_classes())
    throw ContractError("target class " + std::to_string(*ev.target) + " out of range");
  for (const auto& p : ev.modalities)
    if (p && p->size() != circuit.num_classes())
      throw ContractError("probability vector has " + std::to_string(p->size()) + " entries, expected " +
                          std::to_string(circuit.num_classes()));
}

std::vector<double> clamp_to_simplex(std::span<const double> p) {
  std::vector<double> out(p.begin(), p.end());
  double total = 0.0;
  for (double& v : out) {
    v = std::clamp(v, kSimplexFloor, 1.0 - kSimplexFloor);
    total += v;
  }
  for (double& v : out) v /= total;
  return out;
}

std::vector<double> logs_of(std::span<const double> p) {
  std::vector<double> out(p.size());
  std::transform(p.begin(), p.end(), out.begin(), [](double v) { return std::log(v); });
  return out;
}

bool clamp_active(double raw) { return raw < kSimplexFloor || raw > 1.0 - kSimplexFloor; }

}  // namespace

// --- evidence --------------------------------------------------------------

Evidence Evidence::none(std::size_t num_modalities) {
  Evidence ev;
  ev.modalities.resize(num_modalities);
  return ev;
}

Evidence Evidence::full(std::size_t y, std::span<const ProbVector> preds) {
  Evidence ev = of_modalities(preds);
  ev.target = y;
  return ev;
}

Evidence Evidence::of_modalities(std::span<const ProbVector> preds) {
  Evidence ev;
  ev.modalities.assign(preds.begin(), preds.end());
  return ev;
}

bool Evidence::has(VarId var) const {
  if (var.is_target()) return target.has_value();
  return var.index <= modalities.size() && modalities[var.index - 1].has_value();
}

Evidence Evidence::without(VarId var) const {
  Evidence ev = *this;
  if (var.is_target()) ev.target.reset();
  else ev.modalities.at(var.index - 1).reset();
  return ev;
}

Evidence Evidence::with_target(std::size_t y) const {
  Evidence ev = *this;
  ev.target = y;
  return ev;
}

// --- leaves ----------------------------------------------------------------

double categorical_log_mass(const CategoricalLeaf& leaf, std::size_t y) {
  if (y >= leaf.num_classes()) throw ContractError("class index out of range");
  return leaf.log_probs()[y];
}

double dirichlet_log_density(const DirichletLeaf& leaf, std::span<const double> p) {
  if (p.size() != leaf.dimension()) throw ContractError("Dirichlet evaluated at a point of wrong dimension");
  const auto logp = logs_of(clamp_to_simplex(p));
  return leaf.log_normalizer() + kernels::dot(leaf.alpha_minus_one(), logp);
}

double leaf_log_density(const LeafNode& leaf, const Evidence& evidence) {
  if (!evidence.has(leaf.var)) return 0.0;
  if (const auto* cat = std::get_if<CategoricalLeaf>(&leaf.dist)) return categorical_log_mass(*cat, *evidence.target);
  return dirichlet_log_density(std::get<DirichletLeaf>(leaf.dist),
                               evidence.modalities[leaf.var.index - 1]->values());
}

// --- forward ---------------------------------------------------------------

ForwardCache forward(const Circuit& circuit, const Evidence& evidence) {
  check_evidence(circuit, evidence);
  ForwardCache cache;
  cache.evidence = evidence;
  const std::size_t m = circuit.num_modalities();
  cache.clamped.resize(m);
  std::vector<std::vector<double>> logp(m);
  for (std::size_t j = 0; j < m; ++j) {
    if (!evidence.modalities[j]) continue;
    cache.clamped[j] = clamp_to_simplex(evidence.modalities[j]->values());
    logp[j] = logs_of(cache.clamped[j]);
  }

  auto& values = cache.log_values;
  values.resize(circuit.size());
  std::vector<double> terms;
  for (NodeId id = 0; id < circuit.size(); ++id) {
    const Node& node = circuit.node(id);
    double v = 0.0;
    if (const auto* leaf = std::get_if<LeafNode>(&node)) {
      if (leaf->var.is_target()) {
        if (evidence.target) v = std::get<CategoricalLeaf>(leaf->dist).log_probs()[*evidence.target];
      } else if (const auto& lp = logp[leaf->var.index - 1]; !lp.empty()) {
        const auto& dir = std::get<DirichletLeaf>(leaf->dist);
        v = dir.log_normalizer() + kernels::dot(dir.alpha_minus_one(), lp);
      }
      if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
        throw NumericError("leaf node " + std::to_string(id) + " evaluated to a non-finite log-density");
    } else if (const auto* prod = std::get_if<ProductNode>(&node)) {
      for (NodeId c : prod->children) v += values[c];
    } else {
      const auto& sum = std::get<SumNode>(node);
      const double norm = log_sum_exp(sum.weight_logits);
      terms.resize(sum.children.size());
      for (std::size_t i = 0; i < sum.children.size(); ++i)
        terms[i] = sum.weight_logits[i] - norm + values[sum.children[i]];
      v = log_sum_exp(terms);
    }
    values[id] = v;
  }
  cache.root = circuit.root();
  return cache;
}

double log_joint(const Circuit& circuit, const Evidence& evidence) {
  if (!evidence.target || std::any_of(evidence.modalities.begin(), evidence.modalities.end(),
                                      [](const auto& p) { return !p.has_value(); }))
    throw ContractError("log_joint requires every variable to be observed");
  return forward(circuit, evidence).root_value();
}

double log_marginal(const Circuit& circuit, const Evidence& evidence) {
  return forward(circuit, evidence).root_value();
}

std::vector<double> log_target_scores(const Circuit& circuit,
                                      std::span<const std::optional<ProbVector>> modalities) {
  Evidence ev;
  ev.modalities.assign(modalities.begin(), modalities.end());
  std::vector<double> scores(circuit.num_classes());
  for (std::size_t y = 0; y < scores.size(); ++y) {
    ev.target = y;
    scores[y] = forward(circuit, ev).root_value();
  }
  return scores;
}

ProbVector posterior_over_target(const Circuit& circuit, std::span<const std::optional<ProbVector>> modalities) {
  const auto scores = log_target_scores(circuit, modalities);
  if (log_sum_exp(scores) == kNegInf) throw NumericError("every class has zero joint density under the evidence");
  return ProbVector::unchecked(softmax(scores));
}

ProbVector posterior_over_target(const Circuit& circuit, std::span<const ProbVector> preds) {
  std::vector<std::optional<ProbVector>> mods(preds.begin(), preds.end());
  return posterior_over_target(circuit, mods);
}

// --- reverse sweep ---------------------------------------------------------

CircuitGradients CircuitGradients::zeros_like(const Circuit& circuit) {
  CircuitGradients g;
  g.node.resize(circuit.size());
  for (NodeId id = 0; id < circuit.size(); ++id) {
    const Node& node = circuit.node(id);
    if (const auto* sum = std::get_if<SumNode>(&node)) g.node[id].assign(sum->children.size(), 0.0);
    else if (std::holds_alternative<LeafNode>(node)) g.node[id].assign(circuit.num_classes(), 0.0);
  }
  return g;
}

void CircuitGradients::add_scaled(const CircuitGradients& other, double scale) {
  if (other.node.size() != node.size()) throw ContractError("gradient shape mismatch");
  for (std::size_t i = 0; i < node.size(); ++i) kernels::axpy(scale, other.node[i], node[i]);
}

void backward(const Circuit& circuit, const ForwardCache& cache, double upstream, CircuitGradients* params,
              EvidenceGradients* evidence) {
  if (cache.empty()) throw UsageError("backward called without a forward cache");
  if (cache.log_values.size() != circuit.size() || cache.clamped.size() != circuit.num_modalities())
    throw UsageError("forward cache does not belong to this circuit");
  if (params && params->node.size() != circuit.size()) throw ContractError("parameter gradient buffer has wrong shape");
  if (evidence) {
    evidence->resize(circuit.num_modalities());
    for (std::size_t j = 0; j < evidence->size(); ++j)
      if (cache.evidence.modalities[j] && (*evidence)[j].empty()) (*evidence)[j].assign(circuit.num_classes(), 0.0);
  }

  const auto& values = cache.log_values;
  std::vector<double> adjoint(circuit.size(), 0.0);
  adjoint[circuit.root()] = upstream;
  for (NodeId id = circuit.root() + 1; id-- > 0;) {
    const double a = adjoint[id];
    if (a == 0.0) continue;
    const Node& node = circuit.node(id);
    if (const auto* prod = std::get_if<ProductNode>(&node)) {
      for (NodeId c : prod->children) adjoint[c] += a;
    } else if (const auto* sum = std::get_if<SumNode>(&node)) {
      const double v = values[id];
      if (v == kNegInf) continue;
      const auto log_w = log_softmax(sum->weight_logits);
      for (std::size_t i = 0; i < sum->children.size(); ++i) {
        const double r = std::exp(log_w[i] + values[sum->children[i]] - v);
        adjoint[sum->children[i]] += a * r;
        if (params) params->node[id][i] += a * (r - std::exp(log_w[i]));
      }
    } else {
      const auto& leaf = std::get<LeafNode>(node);
      if (leaf.var.is_target()) {
        if (!cache.evidence.target || !params) continue;
        const auto lp = std::get<CategoricalLeaf>(leaf.dist).log_probs();
        auto& g = params->node[id];
        for (std::size_t k = 0; k < lp.size(); ++k) g[k] -= a * std::exp(lp[k]);
        g[*cache.evidence.target] += a;
      } else {
        const std::size_t j = leaf.var.index - 1;
        const auto& p = cache.clamped[j];
        if (p.empty()) continue;
        const auto& dir = std::get<DirichletLeaf>(leaf.dist);
        if (params) {
          auto& g = params->node[id];
          const auto norm_grad = dir.normalizer_gradient();
          for (std::size_t k = 0; k < p.size(); ++k) g[k] += a * (norm_grad[k] + std::log(p[k]));
        }
        if (evidence) {
          const auto raw = cache.evidence.modalities[j]->values();
          const auto am1 = dir.alpha_minus_one();
          auto& g = (*evidence)[j];
          for (std::size_t k = 0; k < p.size(); ++k)
            if (!clamp_active(raw[k])) g[k] += a * am1[k] / p[k];
        }
      }
    }
  }
}

EvidenceGradients grad_wrt_evidence(const Circuit& circuit, const Evidence& evidence) {
  check_evidence(circuit, evidence);
  for (NodeId id = 0; id < circuit.size(); ++id) {
    const auto* leaf = std::get_if<LeafNode>(&circuit.node(id));
    if (leaf == nullptr || leaf->var.is_target() || !evidence.has(leaf->var)) continue;
    const auto alpha = std::get<DirichletLeaf>(leaf->dist).alpha();
    const auto p = evidence.modalities[leaf->var.index - 1]->values();
    for (std::size_t k = 0; k < p.size(); ++k)
      if (p[k] <= 0.0 && alpha[k] < 1.0)
        throw NumericError("density gradient diverges: p_" + std::to_string(leaf->var.index) + "[" + std::to_string(k) +
                           "] is on the simplex boundary and leaf " + std::to_string(id) + " has alpha < 1");
  }
  EvidenceGradients grads;
  backward(circuit, forward(circuit, evidence), 1.0, nullptr, &grads);
  return grads;
}

// --- oracles ---------------------------------------------------------------

SimplexGrid simplex_grid(std::size_t num_classes, std::size_t resolution) {
  if (resolution == 0) throw ContractError("grid resolution must be positive");
  SimplexGrid grid;
  const double r = static_cast<double>(resolution);
  if (num_classes == 2) {
    for (std::size_t i = 0; i < resolution; ++i) {
      const double t = (static_cast<double>(i) + 0.5) / r;
      grid.points.push_back(ProbVector::unchecked({t, 1.0 - t}));
      grid.weights.push_back(1.0 / r);
    }
  } else if (num_classes == 3) {
    const double area = 1.0 / (2.0 * r * r);
    for (std::size_t i = 0; i < resolution; ++i) {
      for (std::size_t j = 0; i + j < resolution; ++j) {
        const double a = (static_cast<double>(i) + 1.0 / 3.0) / r;
        const double b = (static_cast<double>(j) + 1.0 / 3.0) / r;
        grid.points.push_back(ProbVector::unchecked({a, b, 1.0 - a - b}));
        grid.weights.push_back(area);
        if (i + j + 2 <= resolution) {
          const double c = (static_cast<double>(i) + 2.0 / 3.0) / r;
          const double d = (static_cast<double>(j) + 2.0 / 3.0) / r;
          grid.points.push_back(ProbVector::unchecked({c, d, 1.0 - c - d}));
          grid.weights.push_back(area);
        }
      }
    }
  } else {
    throw ContractError("simplex grids are available for K = 2 or 3 only");
  }
  return grid;
}

double brute_force_marginal_oracle(const Circuit& circuit, const Evidence& evidence, std::size_t grid_resolution) {
  check_evidence(circuit, evidence);
  if (circuit.num_classes() > 3 || circuit.num_modalities() > 3)
    throw ContractError("brute-force oracle supports K <= 3 and M <= 3 only");

  std::vector<std::size_t> absent;
  for (std::size_t j = 0; j < evidence.modalities.size(); ++j)
    if (!evidence.modalities[j]) absent.push_back(j);
  if (evidence.target && absent.empty()) return std::exp(log_joint(circuit, evidence));

  const SimplexGrid grid = absent.empty() ? SimplexGrid{} : simplex_grid(circuit.num_classes(), grid_resolution);
  const double classes = evidence.target ? 1.0 : static_cast<double>(circuit.num_classes());
  if (classes * std::pow(static_cast<double>(grid.points.size()), static_cast<double>(absent.size())) >
      kMaxOracleEvaluations)
    throw ContractError("brute-force integration grid too large");

  Evidence point = evidence;
  std::vector<std::size_t> odometer(absent.size(), 0);
  double total = 0.0;
  for (;;) {
    double weight = 1.0;
    for (std::size_t a = 0; a < absent.size(); ++a) {
      point.modalities[absent[a]] = grid.points[odometer[a]];
      weight *= grid.weights[odometer[a]];
    }
    if (evidence.target) {
      total += weight * std::exp(log_joint(circuit, point));
    } else {
      for (std::size_t y = 0; y < circuit.num_classes(); ++y) {
        point.target = y;
        total += weight * std::exp(log_joint(circuit, point));
      }
    }
    std::size_t a = 0;
    for (; a < absent.size(); ++a) {
      if (++odometer[a] < grid.points.size()) break;
      odometer[a] = 0;
    }
    if (a == absent.size()) break;
  }
  return total;
}

std::vector<DominanceViolation> check_marginal_dominance(const Circuit& circuit, std::size_t grid_resolution) {
  const std::size_t k = circuit.num_classes();
  const std::size_t m = circuit.num_modalities();
  if (k > 3 || m > 2) throw ContractError("marginal-dominance check supports K <= 3 and M <= 2 only");
  const SimplexGrid grid = simplex_grid(k, grid_resolution);
  const std::size_t nvars = m + 1;
  const std::size_t subsets = (std::size_t{1} << nvars) - 1;
  const double evaluations = static_cast<double>(k) *
                             std::pow(static_cast<double>(grid.points.size()), static_cast<double>(m)) *
                             static_cast<double>(subsets + 1);
  if (evaluations > kMaxDominanceEvaluations) throw ContractError("marginal-dominance grid too large");

  std::vector<DominanceViolation> violations;
  std::vector<std::size_t> odometer(m, 0);
  Evidence point = Evidence::none(m);
  for (;;) {
    for (std::size_t j = 0; j < m; ++j) point.modalities[j] = grid.points[odometer[j]];
    for (std::size_t y = 0; y < k; ++y) {
      point.target = y;
      const double joint = std::exp(log_joint(circuit, point));
      for (std::size_t mask = 1; mask <= subsets; ++mask) {
        Evidence reduced = point;
        std::vector<VarId> removed;
        for (std::size_t v = 0; v < nvars; ++v) {
          if ((mask >> v) & 1U) {
            reduced = reduced.without(VarId{v});
            removed.push_back(VarId{v});
          }
        }
        const double marginal = std::exp(log_marginal(circuit, reduced));
        if (marginal < joint - kDominanceTolerance)
          violations.push_back(DominanceViolation{std::move(removed), point, marginal, joint});
      }
    }
    std::size_t a = 0;
    for (; a < m; ++a) {
      if (++odometer[a] < grid.points.size()) break;
      odometer[a] = 0;
    }
    if (a == m) break;
  }
  return violations;
}

}  // namespace credfuse
