#pragma once

#include <cstddef>
#include <json.hpp>
#include <span>
#include <vector>

#include "credfuse/prob_vector.hpp"

namespace credfuse {

/// Macro averages over classes. AUROC is one-vs-rest; classes without both
/// positive and negative examples are left out of its average.
struct MetricsReport {
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double macro_auroc = 0.0;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

/// Argmax ties go to the lowest class; per-class 0/0 counts as 0.
MetricsReport compute_metrics(std::span<const ProbVector> predictions, std::span<const std::size_t> labels);

/// One-vs-rest area under the ROC curve of `scores` for examples whose label
/// is `positive_class`, by the trapezoidal rule over distinct thresholds
/// (ties count one half). NaN when either side is empty.
double binary_auroc(std::span<const double> scores, std::span<const std::size_t> labels, std::size_t positive_class);

nlohmann::json to_json(const MetricsReport& report);
MetricsReport metrics_from_json(const nlohmann::json& doc);

}  // namespace credfuse
