#include <gtest/gtest.h>

#include <cmath>

#include "credfuse/error.hpp"
#include "credfuse/metrics.hpp"
#include "credfuse/random.hpp"

namespace credfuse {
namespace {

double pairwise_auroc(const std::vector<double>& scores, const std::vector<std::size_t>& labels) {
  double concordant = 0, pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[i] != 1 || labels[j] != 0) continue;
      pairs += 1;
      if (scores[i] > scores[j]) concordant += 1;
      else if (scores[i] == scores[j]) concordant += 0.5;
    }
  return concordant / pairs;
}

std::vector<ProbVector> binary_predictions(const std::vector<double>& scores) {
  std::vector<ProbVector> out;
  for (double s : scores) out.push_back(ProbVector::unchecked({1 - s, s}));
  return out;
}

TEST(Metrics, PerfectOneHot) {
  std::vector<ProbVector> preds;
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < 9; ++i) {
    preds.push_back(ProbVector::one_hot(3, i % 3));
    labels.push_back(i % 3);
  }
  const auto r = compute_metrics(preds, labels);
  EXPECT_EQ(r, (MetricsReport{1, 1, 1, 1, 1}));
}

TEST(Metrics, PerfectRankingAuroc) {
  EXPECT_DOUBLE_EQ(binary_auroc(std::vector<double>{0.9, 0.8, 0.3, 0.1}, std::vector<std::size_t>{1, 1, 0, 0}, 1), 1.0);
}

TEST(Metrics, InterleavedLabelsStillPerfect) {
  const std::vector<double> s{0.9, 0.4, 0.6, 0.1};
  const std::vector<std::size_t> y{1, 0, 1, 0};
  EXPECT_DOUBLE_EQ(binary_auroc(s, y, 1), 1.0);
  EXPECT_DOUBLE_EQ(compute_metrics(binary_predictions(s), y).macro_auroc, 1.0);
}

TEST(Metrics, TiesCountHalf) {
  EXPECT_DOUBLE_EQ(binary_auroc(std::vector<double>{0.5, 0.5}, std::vector<std::size_t>{1, 0}, 1), 0.5);
  EXPECT_DOUBLE_EQ(binary_auroc(std::vector<double>{0.5, 0.5, 0.2}, std::vector<std::size_t>{1, 0, 0}, 1), 0.75);
}

TEST(Metrics, OneSidedAurocIsNan) {
  EXPECT_TRUE(std::isnan(binary_auroc(std::vector<double>{0.2, 0.3}, std::vector<std::size_t>{1, 1}, 1)));
}

TEST(Metrics, PairwiseOracle) {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 5 + static_cast<std::size_t>(sample_uniform(rng) * 60);
    std::vector<double> s(n);
    std::vector<std::size_t> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = i < 2 ? i : static_cast<std::size_t>(sample_uniform(rng) < 0.4);
      const double raw = sample_uniform(rng) + 0.3 * static_cast<double>(y[i]);
      s[i] = trial % 2 ? std::round(raw * 5) / 5 : raw;  // odd trials get heavy ties
      s[i] = std::min(1.0, s[i]);
    }
    const double oracle = pairwise_auroc(s, y);
    EXPECT_NEAR(binary_auroc(s, y, 1), oracle, 1e-10) << trial;
    EXPECT_NEAR(compute_metrics(binary_predictions(s), y).macro_auroc, (oracle + pairwise_auroc([&] {
                  std::vector<double> c(s);
                  for (double& v : c) v = 1 - v;
                  return c;
                }(), [&] {
                  std::vector<std::size_t> c(y);
                  for (auto& v : c) v = 1 - v;
                  return c;
                }())) / 2,
                1e-10);
  }
}

TEST(Metrics, HandComputedMulticlass) {
  // Predicted classes: 0, 0, 1, 2, 2, 2 against labels 0, 1, 1, 2, 2, 0.
  const std::vector<ProbVector> preds{{0.8, 0.1, 0.1}, {0.5, 0.4, 0.1}, {0.2, 0.7, 0.1},
                                      {0.1, 0.2, 0.7}, {0.2, 0.2, 0.6}, {0.3, 0.3, 0.4}};
  const std::vector<std::size_t> labels{0, 1, 1, 2, 2, 0};
  const auto r = compute_metrics(preds, labels);
  EXPECT_DOUBLE_EQ(r.accuracy, 4.0 / 6.0);
  const double p[] = {0.5, 1.0, 2.0 / 3.0};
  const double q[] = {0.5, 0.5, 1.0};
  double mp = 0, mr = 0, mf = 0;
  for (int c = 0; c < 3; ++c) {
    mp += p[c] / 3;
    mr += q[c] / 3;
    mf += 2 * p[c] * q[c] / (p[c] + q[c]) / 3;
  }
  EXPECT_NEAR(r.macro_precision, mp, 1e-15);
  EXPECT_NEAR(r.macro_recall, mr, 1e-15);
  EXPECT_NEAR(r.macro_f1, mf, 1e-15);
}

TEST(Metrics, TiesGoToLowestClass) {
  const std::vector<ProbVector> preds{{0.5, 0.5}, {0.5, 0.5}};
  const std::vector<std::size_t> labels{0, 1};
  const auto r = compute_metrics(preds, labels);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.5);
  EXPECT_DOUBLE_EQ(r.macro_recall, 0.5);
  EXPECT_DOUBLE_EQ(r.macro_precision, 0.25);  // class 1 is never predicted: 0/0 -> 0
}

TEST(Metrics, BoundedOnRandomInputs) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ProbVector> preds;
    std::vector<std::size_t> labels;
    for (int i = 0; i < 30; ++i) {
      std::vector<double> a(4, 1.0);
      preds.push_back(ProbVector::unchecked(sample_dirichlet(a, rng)));
      labels.push_back(static_cast<std::size_t>(sample_uniform(rng) * 4) % 4);
    }
    const auto r = compute_metrics(preds, labels);
    for (double v : {r.accuracy, r.macro_precision, r.macro_recall, r.macro_f1, r.macro_auroc}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Metrics, Errors) {
  EXPECT_THROW(compute_metrics({}, {}), ContractError);
  const std::vector<ProbVector> preds{{0.5, 0.5}};
  EXPECT_THROW(compute_metrics(preds, std::vector<std::size_t>{0, 1}), ContractError);
  EXPECT_THROW(compute_metrics(preds, std::vector<std::size_t>{2}), ContractError);
}

TEST(Metrics, JsonRoundTrip) {
  const MetricsReport r{0.1, 0.2, 1.0 / 3.0, 0.4, 0.5};
  EXPECT_EQ(metrics_from_json(to_json(r)), r);
  EXPECT_EQ(to_json(r).at("f1").get<double>(), 0.4);
}

}  // namespace
}  // namespace credfuse
