#pragma once

// Multimodal datasets: synthetic generation, post-predictor noise injection,
// line-delimited JSON storage, stratified splitting and CSV export.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "credfuse/prob_vector.hpp"
#include "credfuse/random.hpp"

namespace credfuse {

inline constexpr int kDatasetSchemaVersion = 1;

using FeatureVector = std::vector<double>;
/// A modality observation: raw features, or a precomputed predictive distribution.
using ModalityValue = std::variant<FeatureVector, ProbVector>;

enum class Split { kUnassigned, kTrain, kVal, kTest };
enum class ModalityKind { kFeatures, kProbs };

std::string_view split_name(Split split);
/// Accepts "train", "val", "test"; throws UsageError otherwise.
Split parse_split(std::string_view name);

/// Post-predictor noise on one modality: its prediction p is replaced by
/// lambda * p + (1 - lambda) * draw.
struct NoiseOverlay {
  double lambda = 1.0;
  ProbVector draw;

  friend bool operator==(const NoiseOverlay&, const NoiseOverlay&) = default;
};

ProbVector apply_overlay(const ProbVector& p, const NoiseOverlay& overlay);

struct Example {
  std::vector<ModalityValue> modalities;
  std::size_t label = 0;
  Split split = Split::kUnassigned;
  /// Empty, or one optional overlay per modality.
  std::vector<std::optional<NoiseOverlay>> noise;

  friend bool operator==(const Example&, const Example&) = default;
};

struct MultimodalDataset {
  std::size_t num_classes = 0;
  std::size_t num_modalities = 0;
  /// Feature dimension per modality; K for probability modalities.
  std::vector<std::size_t> dims;
  std::vector<ModalityKind> kinds;
  std::vector<Example> examples;

  /// Throws ContractError on ragged dims, wrong kinds, or labels out of range.
  void validate() const;
  std::vector<std::size_t> indices(Split split) const;
  std::size_t count(Split split) const;

  friend bool operator==(const MultimodalDataset&, const MultimodalDataset&) = default;
};

struct SynthConfig {
  std::size_t num_classes = 2;
  std::size_t num_modalities = 2;
  std::size_t num_examples = 1000;
  double class_separation = 3.0;
  std::vector<double> modality_noise{1.0, 1.0};
  /// Feature dimension per modality; empty means 2 for every modality.
  std::vector<std::size_t> dims;
  std::uint64_t seed = 0;
};

/// Class means lie on a sphere of radius class_separation (one draw per
/// modality and class); features are mean + N(0, modality_noise[j]^2) per
/// coordinate. Labels cycle through the classes in a seeded order so class
/// counts differ by at most one. Throws ContractError on invalid sizes.
MultimodalDataset generate_synthetic(const SynthConfig& config);

/// Two informative modalities for the credibility and robustness protocols:
/// K = 4, N = 1200, modality 2 noisier (1.5 vs 1).
SynthConfig reference_synth_config(std::uint64_t seed = 0);
/// Modality 2 carries ten times the feature noise of modality 1 spread over
/// 40 dimensions, so its predictor overfits the train split.
SynthConfig high_noise_synth_config(std::uint64_t seed = 0);

/// lambda * p + (1 - lambda) * N with N ~ Dir(alpha).
ProbVector inject_noise(const ProbVector& p, double lambda, std::span<const double> alpha, Rng& rng);

/// Attaches a NoiseOverlay with a fresh Dir(alpha) draw to modality
/// `modality` (1-based) of every example in the listed splits, visiting
/// examples in order on one stream seeded by `seed`. Applying the overlay
/// gives the same value inject_noise would on that stream.
void attach_noise(MultimodalDataset& dataset, std::size_t modality, double lambda, std::span<const double> alpha,
                  std::uint64_t seed, std::span<const Split> splits);

/// Seeded shuffle then contiguous split into (train, val, test). Stratified
/// per class when every class has at least three examples; class shares are
/// apportioned by largest remainder so split sizes match the fractions.
void split(MultimodalDataset& dataset, std::array<double, 3> fractions, std::uint64_t seed);

/// First line {schema_version, K, M, dims, kinds}; then one record per
/// example {label, split?, modalities:[{features:[..]} | {probs:[..]}],
/// noise?:[null | {lambda, draw}]}.
void save_dataset(const MultimodalDataset& dataset, const std::filesystem::path& path);
/// Throws FormatError naming the line on any schema violation.
MultimodalDataset load_dataset(const std::filesystem::path& path);

/// Columns label,m1_p0,...,mM_p{K-1}. Every modality must hold probabilities.
void export_csv(const MultimodalDataset& dataset, const std::filesystem::path& path);

}  // namespace credfuse
