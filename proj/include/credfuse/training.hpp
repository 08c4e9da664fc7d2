#pragma once

// Unimodal predictors, the fusion system they feed, reverse-mode gradients
// of the joint objective, and the mini-batch training loop.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "credfuse/circuit.hpp"
#include "credfuse/data.hpp"
#include "credfuse/fusion.hpp"
#include "credfuse/inference.hpp"
#include "credfuse/metrics.hpp"
#include "credfuse/prob_vector.hpp"

namespace credfuse {

/// softmax(W x + b) with W stored row-major, one row of `input` weights per class.
struct LinearSoftmax {
  std::size_t input = 0;
  std::size_t classes = 0;
  std::vector<double> weights;
  std::vector<double> bias;

  static LinearSoftmax zeros(std::size_t input, std::size_t classes);

  friend bool operator==(const LinearSoftmax&, const LinearSoftmax&) = default;
};

ProbVector predictor_forward(const LinearSoftmax& predictor, std::span<const double> x);
/// Adds dL/dW and dL/db given upstream = dL/d(output probabilities).
void predictor_backward(const LinearSoftmax& predictor, std::span<const double> x, std::span<const double> upstream,
                        LinearSoftmax& grads);

struct CrossEntropy {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d p
};

/// -log p[y] with p[y] floored at 1e-12; gradient -1/p[y] at y, 0 elsewhere.
CrossEntropy cross_entropy(const ProbVector& p, std::size_t y);

enum class FusionMethod { kDpc, kCwm, kWeightedMean, kNoisyOr, kMlp };

std::string_view method_name(FusionMethod method);
/// "dpc", "cwm", "wm", "noisyor", "mlp"; throws UsageError otherwise.
FusionMethod parse_method(std::string_view name);
bool uses_circuit(FusionMethod method);

/// Everything needed to map one multimodal example to a fused prediction.
struct FusionSystem {
  FusionMethod method = FusionMethod::kDpc;
  std::size_t num_classes = 0;
  std::size_t num_modalities = 0;
  std::optional<Circuit> circuit;  // DPC and CWM
  /// One per modality; nullopt where the data already holds probabilities.
  std::vector<std::optional<LinearSoftmax>> predictors;
  std::vector<double> wm_logits;  // weighted mean
  MlpParams mlp;                  // MLP head

  /// p_1..p_M for an example: predictor output for features, the stored
  /// vector for precomputed probabilities.
  std::vector<ProbVector> modality_predictions(const Example& example) const;
  ProbVector fuse(std::span<const ProbVector> preds) const;
  ProbVector predict(const Example& example) const;

  friend bool operator==(const FusionSystem&, const FusionSystem&) = default;
};

struct SystemConfig {
  FusionMethod method = FusionMethod::kDpc;
  std::size_t components = 8;
  InitConfig init;
  std::size_t mlp_hidden = 64;
  std::uint64_t seed = 0;
};

/// Zero-initialized predictors for every feature modality of the dataset,
/// plus the method's fusion parameters.
FusionSystem make_system(const MultimodalDataset& dataset, const SystemConfig& config);

nlohmann::json system_to_json(const FusionSystem& system);
FusionSystem system_from_json(const nlohmann::json& doc);
void save_system(const FusionSystem& system, const std::filesystem::path& path);
FusionSystem load_system(const std::filesystem::path& path);

/// Copy of the dataset with every modality replaced by the system's
/// predictive distribution.
MultimodalDataset precompute_predictions(const FusionSystem& system, const MultimodalDataset& dataset);

// --- gradients -------------------------------------------------------------------

/// Dirichlet concentrations are trained through alpha = softplus(raw) + 1e-4.
inline constexpr double kAlphaFloor = 1e-4;
double alpha_from_raw(double raw);
double raw_from_alpha(double alpha);

/// Gradients in the trainable coordinates. circuit.node[id] holds sum-logit,
/// categorical-logit or Dirichlet raw-alpha gradients; predictors mirror
/// FusionSystem::predictors (empty where absent).
struct ParamGradients {
  CircuitGradients circuit;
  std::vector<LinearSoftmax> predictors;
  std::vector<double> wm_logits;
  MlpParams mlp;

  static ParamGradients zeros_like(const FusionSystem& system);
};

/// Gradient of log_joint w.r.t. every circuit parameter and every supplied
/// evidence block, scaled by `upstream`. Runs its own forward pass.
void pc_backward(const Circuit& circuit, const Evidence& evidence, double upstream, CircuitGradients* params,
                 EvidenceGradients* evidence_grads);

struct LossOptions {
  double likelihood_weight = 1.0;
  /// Let the fused loss reach the predictors through the fusion function.
  bool evidence_gradients = true;
  /// Include the fused and unimodal cross-entropy terms.
  bool classification_terms = true;
};

struct LossResult {
  double loss = 0.0;  // mean fused CE + sum of mean unimodal CEs
  double joint_loss = 0.0;
  std::vector<double> unimodal_losses;
  double mean_log_likelihood = 0.0;  // DPC/CWM only
  /// Loss (when classification terms are on) minus likelihood_weight times
  /// the batch sum of log P(y, p). `grads` differentiates it for circuit and
  /// head parameters; predictor gradients cover the loss alone, so the
  /// likelihood term never reaches the predictors.
  double objective = 0.0;
  ParamGradients grads;
};

LossResult loss_and_grads(const FusionSystem& system, const MultimodalDataset& dataset,
                          std::span<const std::size_t> batch, const LossOptions& options);

/// Central differences of fn at point, compared with `analytic`; returns
/// max_i |fd_i - analytic_i| / max(1, |fd_i|).
double finite_difference_check(const std::function<double(std::span<const double>)>& fn,
                               std::span<const double> point, std::span<const double> analytic, double h = 1e-5);

// --- flat parameter view -----------------------------------------------------------

/// All trainable coordinates in a fixed order: circuit nodes by id, then
/// predictors, weighted-mean logits, MLP tensors.
std::vector<double> get_parameters(const FusionSystem& system);
std::vector<double> flatten(const ParamGradients& grads);
/// Writes back blocks whose values differ from `previous`.
void set_parameters(FusionSystem& system, std::span<const double> params, std::span<const double> previous);
/// Per coordinate: true for predictor parameters (learning rate eta1).
std::vector<bool> predictor_mask(const FusionSystem& system);

// --- loop ---------------------------------------------------------------------------

enum class Optimizer { kSgd, kAdam };
Optimizer parse_optimizer(std::string_view name);

struct TrainConfig {
  double eta1 = 0.01;  // predictors
  double eta2 = 0.01;  // circuit and fusion heads
  std::size_t batch_size = 32;
  std::size_t t_max = 1000;
  std::uint64_t seed = 0;
  double likelihood_weight = 1.0;
  Optimizer optimizer = Optimizer::kAdam;
  bool evidence_gradients = true;
  bool classification_terms = true;
  bool train_predictors = true;
  /// Examples sampled for updates. A dataset with no split tags at all is
  /// used whole.
  Split fit_split = Split::kTrain;
  /// Stop after this many epochs without validation-loss improvement and
  /// restore the best parameters; 0 disables.
  std::size_t patience = 0;
  /// Emit a record for the untrained system before the first update.
  bool record_initial = false;
  /// Validation accuracy and credibility in every record.
  bool track_validation = true;
};

struct HistoryRecord {
  std::size_t iter = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
  std::vector<double> unimodal_losses;
  std::vector<double> mean_credibility;  // validation split, DPC/CWM only
  std::vector<double> credibility_stderr;
  std::optional<double> val_accuracy;
  /// Last record only: metrics of the returned parameters.
  std::optional<MetricsReport> val_metrics;
};

nlohmann::json to_json(const HistoryRecord& record);

struct TrainResult {
  std::vector<HistoryRecord> history;
  std::size_t iterations = 0;
};

/// One epoch is ceil(N_train / B) iterations. Mini-batches are drawn
/// uniformly with replacement from the train split. Throws NumericError on a
/// non-finite loss.
TrainResult train(FusionSystem& system, const MultimodalDataset& dataset, const TrainConfig& config);

struct CredibilitySummary {
  std::vector<double> mean;
  std::vector<double> standard_error;  // of the mean, over examples
};

/// Per-modality mean relative credibility over a split (DPC/CWM systems).
CredibilitySummary mean_relative_credibility(const FusionSystem& system, const MultimodalDataset& dataset,
                                             Split split);
/// Metrics of the fused predictions on a split.
MetricsReport evaluate(const FusionSystem& system, const MultimodalDataset& dataset, Split split);

}  // namespace credfuse
