#pragma once

// Experiment protocols over late-fusion systems: the credibility-vs-noise
// sweep, credibility trajectories across epochs, and robustness of each
// fusion method to post-predictor noise. Results are CSV tables.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "credfuse/data.hpp"
#include "credfuse/metrics.hpp"
#include "credfuse/training.hpp"

namespace credfuse {

/// Trains linear-softmax predictors on the train split with their own
/// cross-entropy only, then replaces every feature modality by the
/// predictors' outputs. Probability modalities pass through unchanged.
MultimodalDataset predict_modalities(const MultimodalDataset& dataset, const TrainConfig& config);

/// Copy with noise overlays attached to modality `modality` (1-based) of the
/// listed splits. Empty alpha means all ones.
MultimodalDataset with_prediction_noise(const MultimodalDataset& dataset, std::size_t modality, double lambda,
                                        std::span<const double> alpha, std::uint64_t seed,
                                        std::span<const Split> splits);

/// make_system followed by train.
FusionSystem fit_fusion(const MultimodalDataset& dataset, const SystemConfig& system, const TrainConfig& config);

struct NoiseProtocol {
  std::vector<double> lambdas{0.0, 0.25, 0.5, 0.75, 1.0};
  std::size_t noised_modality = 2;
  std::size_t trials = 3;
  std::vector<double> alpha;  // empty: all ones
  std::uint64_t seed = 0;
};

struct MetricsRow {
  std::string method;
  double lambda = 0.0;
  std::size_t trial = 0;
  MetricsReport metrics;

  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

struct CredibilityRow {
  double lambda = 0.0;
  std::optional<std::size_t> epoch;
  std::size_t modality = 1;
  double mean = 0.0;
  double standard_error = 0.0;

  friend bool operator==(const CredibilityRow&, const CredibilityRow&) = default;
};

struct SweepResult {
  std::vector<double> lambdas;
  /// [lambda][modality], averaged over trials.
  std::vector<std::vector<double>> mean_credibility;
  /// Standard error of the trial average, pooling the per-trial errors.
  std::vector<std::vector<double>> credibility_stderr;
  std::vector<CredibilityRow> credibility_rows;
  std::vector<MetricsRow> metrics_rows;
};

struct SweepOptions {
  TrainConfig retrain;
  /// Start every point from a fresh circuit built with `fresh` instead of
  /// the trained one.
  bool retrain_all = false;
  SystemConfig fresh;
};

/// For each lambda and trial: noise the test-split predictions of the noised
/// modality, refit the circuit on them with predictors frozen, and record the
/// test-split mean relative credibility and metrics. Trial t uses the same
/// sub-seeds at every lambda.
SweepResult run_noise_sweep(const MultimodalDataset& dataset, const FusionSystem& trained,
                            const NoiseProtocol& protocol, const SweepOptions& options);

struct EpochTrajectory {
  double lambda = 0.0;
  std::vector<std::size_t> epochs;  // starts at 0, the untrained system
  std::vector<std::vector<double>> mean;
  std::vector<std::vector<double>> standard_error;
};

/// Per lambda: noise the noised modality in every split, train a fresh
/// system and record validation mean relative credibility after each epoch.
std::vector<EpochTrajectory> run_credibility_epochs(const MultimodalDataset& dataset, const SystemConfig& system,
                                                    const TrainConfig& config, const NoiseProtocol& protocol);
std::vector<CredibilityRow> trajectory_rows(std::span<const EpochTrajectory> trajectories);

struct DeclineRow {
  std::string method;
  double lambda = 0.0;
  double f1_decline = 0.0;
  double f1_stderr = 0.0;
  double auroc_decline = 0.0;
  double auroc_stderr = 0.0;
};

struct RobustnessResult {
  std::vector<MetricsRow> rows;
  /// Clean-minus-noisy test metrics, averaged over trials.
  std::vector<DeclineRow> declines;
};

/// Evaluates every system on test predictions with the noised modality
/// perturbed at each lambda. Systems must already be trained.
RobustnessResult run_robustness(const MultimodalDataset& dataset, std::span<const FusionSystem> systems,
                                const NoiseProtocol& protocol);

/// Columns method,lambda,trial,accuracy,precision,recall,f1,auroc.
void write_metrics_csv(std::span<const MetricsRow> rows, const std::filesystem::path& path);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);
/// Columns lambda,[epoch,]modality,mean_relative_credibility,stderr. The
/// epoch column is present when the rows carry epochs.
void write_credibility_csv(std::span<const CredibilityRow> rows, const std::filesystem::path& path);
std::vector<CredibilityRow> read_credibility_csv(const std::filesystem::path& path);
/// Columns method,lambda,f1_decline,f1_stderr,auroc_decline,auroc_stderr.
void write_declines_csv(std::span<const DeclineRow> rows, const std::filesystem::path& path);

}  // namespace credfuse
