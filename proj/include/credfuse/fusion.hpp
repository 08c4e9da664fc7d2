#pragma once

// Credibility of each modality, the two circuit-based fusion functions, the
// baseline combiners, and the credibility/entropy bound estimator.

#include <cstddef>
#include <cstdint>
#include <json.hpp>
#include <span>
#include <vector>

#include "credfuse/circuit.hpp"
#include "credfuse/inference.hpp"
#include "credfuse/prob_vector.hpp"

namespace credfuse {

/// KL(p || q) in nats with 0 log 0 = 0; q is floored at 1e-12.
double kl_divergence(const ProbVector& p, const ProbVector& q);

struct CredibilityReport {
  std::vector<double> raw;       // C_j
  std::vector<double> relative;  // C_j / sum C
  ProbVector posterior_full;
  std::vector<ProbVector> posteriors_loo;  // modality j marginalized
};

/// raw[j] = KL(P(Y | all) || P(Y | all but j)). The leave-one-out
/// conditionals marginalize modality j through the circuit.
CredibilityReport credibility(const Circuit& circuit, std::span<const ProbVector> preds);

/// raw / sum(raw), or uniform when the sum is <= 1e-15. Throws
/// ContractError on negative or non-finite input.
std::vector<double> relative_credibility(std::span<const double> raw);

nlohmann::json to_json(const CredibilityReport& report);

ProbVector fuse_dpc(const Circuit& circuit, std::span<const ProbVector> preds);
/// Convex combination of preds weighted by relative credibility.
ProbVector fuse_cwm(const Circuit& circuit, std::span<const ProbVector> preds);

/// upstream = dL/d(fused). Adds dL/d(circuit parameters) and dL/d(p_j)
/// into whichever sinks are non-null.
void fuse_dpc_backward(const Circuit& circuit, std::span<const ProbVector> preds, std::span<const double> upstream,
                       CircuitGradients* params, EvidenceGradients* evidence);
void fuse_cwm_backward(const Circuit& circuit, std::span<const ProbVector> preds, std::span<const double> upstream,
                       CircuitGradients* params, EvidenceGradients* evidence);

// --- baselines ----------------------------------------------------------------

/// sum_j softmax(weight_logits)_j p_j
ProbVector baseline_weighted_mean(std::span<const double> weight_logits, std::span<const ProbVector> preds);
void baseline_weighted_mean_backward(std::span<const double> weight_logits, std::span<const ProbVector> preds,
                                     std::span<const double> upstream, std::span<double> d_logits,
                                     EvidenceGradients* evidence);

/// Per-class score 1 - prod_j (1 - p_j[y]), normalized over classes.
ProbVector baseline_noisy_or(std::span<const ProbVector> preds);
void baseline_noisy_or_backward(std::span<const ProbVector> preds, std::span<const double> upstream,
                                EvidenceGradients* evidence);

/// Two ReLU hidden layers over the concatenated predictions, softmax output.
/// Matrices are row-major with one row per output unit.
struct MlpParams {
  std::size_t input = 0;
  std::size_t hidden = 0;
  std::size_t output = 0;
  std::vector<double> w1, b1, w2, b2, w3, b3;

  static MlpParams zeros(std::size_t input, std::size_t output, std::size_t hidden = 64);
  /// He-uniform weights, zero biases.
  static MlpParams random(std::size_t input, std::size_t output, std::uint64_t seed, std::size_t hidden = 64);

  friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

ProbVector baseline_mlp(const MlpParams& params, std::span<const ProbVector> preds);
/// grads must have the same shape as params (e.g. MlpParams::zeros).
void baseline_mlp_backward(const MlpParams& params, std::span<const ProbVector> preds, std::span<const double> upstream,
                           MlpParams* grads, EvidenceGradients* evidence);

nlohmann::json to_json(const MlpParams& params);
MlpParams mlp_from_json(const nlohmann::json& doc);

// --- credibility / conditional-entropy bound ------------------------------------

struct BoundCheck {
  double lhs = 0.0;  // Monte-Carlo mean of C_j
  double standard_error = 0.0;
  double rhs = 0.0;  // -H(p_j | p_-j), discretized
  bool satisfied = false;
};

struct BoundCheckOptions {
  std::size_t num_samples = 10000;
  std::size_t grid_resolution = 100;
  std::uint64_t seed = 0;
  /// Refuse circuits with a leaf whose density can exceed one.
  bool enforce_precondition = true;
};

/// For K = 2, M = 2: samples (p_1, p_2) from the circuit's modality marginal
/// on a midpoint grid, averages the credibility of each modality, and
/// compares it with the negative discretized conditional differential
/// entropy on the same grid. satisfied iff lhs >= rhs - 3 stderr - 1e-9.
std::vector<BoundCheck> entropy_bound_check(const Circuit& circuit, const BoundCheckOptions& options);

}  // namespace credfuse
