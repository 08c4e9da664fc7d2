#include "credfuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "credfuse/error.hpp"
#include "credfuse/numeric.hpp"

namespace credfuse {

double binary_auroc(std::span<const double> scores, std::span<const std::size_t> labels, std::size_t positive_class) {
  if (scores.size() != labels.size()) throw ContractError("scores and labels differ in length");
  auto positive = [&](std::size_t i) { return labels[i] == positive_class; };
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const double pos = static_cast<double>(std::count(labels.begin(), labels.end(), positive_class));
  const double neg = static_cast<double>(labels.size()) - pos;
  if (pos == 0.0 || neg == 0.0) return std::numeric_limits<double>::quiet_NaN();

  // Walk thresholds from high to low; each tie group adds one trapezoid.
  double tp = 0.0, fp = 0.0, area = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    double group_tp = 0.0, group_fp = 0.0;
    std::size_t j = i;
    for (; j < order.size() && scores[order[j]] == scores[order[i]]; ++j) (positive(order[j]) ? group_tp : group_fp) += 1.0;
    area += group_fp * (tp + 0.5 * group_tp);
    tp += group_tp;
    fp += group_fp;
    i = j;
  }
  return area / (pos * neg);
}

MetricsReport compute_metrics(std::span<const ProbVector> predictions, std::span<const std::size_t> labels) {
  if (predictions.empty()) throw ContractError("metrics need at least one prediction");
  if (predictions.size() != labels.size()) throw ContractError("predictions and labels differ in length");
  const std::size_t k = predictions[0].size();
  std::vector<double> tp(k, 0.0), predicted(k, 0.0), actual(k, 0.0);
  double correct = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i].size() != k) throw ContractError("predictions disagree on the class count");
    if (labels[i] >= k) throw ContractError("label out of range");
    const std::size_t hat = argmax(predictions[i].values());
    predicted[hat] += 1.0;
    actual[labels[i]] += 1.0;
    if (hat == labels[i]) {
      tp[hat] += 1.0;
      correct += 1.0;
    }
  }
  MetricsReport r;
  r.accuracy = correct / static_cast<double>(predictions.size());
  std::vector<double> scores(predictions.size());
  double auroc_sum = 0.0;
  std::size_t auroc_classes = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const double precision = predicted[c] > 0.0 ? tp[c] / predicted[c] : 0.0;
    const double recall = actual[c] > 0.0 ? tp[c] / actual[c] : 0.0;
    const double f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    r.macro_precision += precision / static_cast<double>(k);
    r.macro_recall += recall / static_cast<double>(k);
    r.macro_f1 += f1 / static_cast<double>(k);

    for (std::size_t i = 0; i < predictions.size(); ++i) scores[i] = predictions[i][c];
    const double auc = binary_auroc(scores, labels, c);
    if (!std::isnan(auc)) {
      auroc_sum += auc;
      ++auroc_classes;
    }
  }
  r.macro_auroc = auroc_classes > 0 ? auroc_sum / static_cast<double>(auroc_classes) : 0.0;
  return r;
}

nlohmann::json to_json(const MetricsReport& r) {
  return {{"accuracy", r.accuracy},
          {"precision", r.macro_precision},
          {"recall", r.macro_recall},
          {"f1", r.macro_f1},
          {"auroc", r.macro_auroc}};
}

MetricsReport metrics_from_json(const nlohmann::json& doc) {
  MetricsReport r;
  r.accuracy = doc.at("accuracy").get<double>();
  r.macro_precision = doc.at("precision").get<double>();
  r.macro_recall = doc.at("recall").get<double>();
  r.macro_f1 = doc.at("f1").get<double>();
  r.macro_auroc = doc.at("auroc").get<double>();
  return r;
}

}  // namespace credfuse
