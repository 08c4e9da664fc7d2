#include <gtest/gtest.h>

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <vector>

#include "credfuse/circuit.hpp"
#include "credfuse/circuit_io.hpp"
#include "credfuse/error.hpp"
#include "credfuse/inference.hpp"
#include "test_support.hpp"

namespace credfuse {
namespace {

using testing::dirichlet_density_oracle;

Scope scope_of(std::size_t nvars, std::initializer_list<std::size_t> vars) {
  Scope s(nvars);
  for (auto v : vars) s.set(v);
  return s;
}

std::size_t count_kind(const Circuit& c, std::size_t variant_index) {
  std::size_t n = 0;
  for (const Node& node : c.nodes()) n += node.index() == variant_index ? 1 : 0;
  return n;
}

TEST(BuildFusionCircuit, SingleComponentShape) {
  Circuit c = build_fusion_circuit(2, 3, 1, 0);
  EXPECT_EQ(count_kind(c, 0), 1u);
  EXPECT_EQ(count_kind(c, 1), 1u);
  EXPECT_EQ(count_kind(c, 2), 3u);
  EXPECT_EQ(compute_scopes(c)[c.root()], scope_of(3, {0, 1, 2}));
}

TEST(BuildFusionCircuit, NodeCountForTwoComponents) {
  Circuit c = build_fusion_circuit(1, 2, 2, 0);
  EXPECT_EQ(c.size(), 7u);
  EXPECT_EQ(count_kind(c, 0), 1u);
  EXPECT_EQ(count_kind(c, 1), 2u);
  EXPECT_EQ(count_kind(c, 2), 4u);
}

TEST(BuildFusionCircuit, LargeCircuitPassesValidators) {
  Circuit c = build_fusion_circuit(3, 10, 8, 42);
  EXPECT_TRUE(validate_smooth(c).ok());
  EXPECT_TRUE(validate_decomposable(c).ok());
  EXPECT_TRUE(validate_root_scope(c).ok());
}

TEST(BuildFusionCircuit, AlwaysStructurallyValid) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const std::size_t m = 1 + seed % 4;
    const std::size_t k = 2 + seed % 5;
    const std::size_t comps = 1 + seed % 6;
    for (auto scheme : {InitConfig::Scheme::kRandom, InitConfig::Scheme::kSymmetric}) {
      InitConfig init;
      init.scheme = scheme;
      init.logit_scale = 1.0;
      Circuit c = build_fusion_circuit(m, k, comps, seed, init);
      EXPECT_TRUE(validate_smooth(c).ok());
      EXPECT_TRUE(validate_decomposable(c).ok());
      EXPECT_TRUE(validate_root_scope(c).ok());
      EXPECT_EQ(c.size(), 1 + comps * (m + 2));
    }
  }
}

TEST(BuildFusionCircuit, DeterministicInSeed) {
  InitConfig init;
  init.logit_scale = 0.5;
  EXPECT_EQ(build_fusion_circuit(2, 3, 4, 9, init), build_fusion_circuit(2, 3, 4, 9, init));
  EXPECT_FALSE(build_fusion_circuit(2, 3, 4, 9, init) == build_fusion_circuit(2, 3, 4, 10, init));
}

TEST(BuildFusionCircuit, RejectsInvalidDimensions) {
  EXPECT_THROW(build_fusion_circuit(0, 2, 1, 0), ContractError);
  EXPECT_THROW(build_fusion_circuit(1, 1, 1, 0), ContractError);
  EXPECT_THROW(build_fusion_circuit(1, 2, 0, 0), ContractError);
}

TEST(CircuitModel, LeafRolesAreEnforced) {
  Circuit c(2, 1);
  EXPECT_THROW(c.add_leaf(VarId::target(), DirichletLeaf({1.0, 1.0})), ContractError);
  EXPECT_THROW(c.add_leaf(VarId::modality(1), CategoricalLeaf::from_probs(std::vector<double>{0.5, 0.5})),
               ContractError);
  EXPECT_THROW(c.add_leaf(VarId::modality(2), DirichletLeaf({1.0, 1.0})), ContractError);
  EXPECT_THROW(c.add_leaf(VarId::modality(1), DirichletLeaf({1.0, 1.0, 1.0})), ContractError);
  EXPECT_THROW(c.add_product({0}), ContractError);
  EXPECT_THROW(DirichletLeaf({1.0, 0.0}), ParameterError);
  EXPECT_THROW(CategoricalLeaf({std::log(0.3), std::log(0.6)}), ParameterError);
}

TEST(ComputeScopes, LeafProductAndSum) {
  Circuit c(2, 2);
  const NodeId y = c.add_leaf(VarId::target(), CategoricalLeaf::from_probs(std::vector<double>{0.5, 0.5}));
  const NodeId p1 = c.add_leaf(VarId::modality(1), DirichletLeaf({1.0, 1.0}));
  const NodeId p2 = c.add_leaf(VarId::modality(2), DirichletLeaf({1.0, 1.0}));
  const NodeId prod01 = c.add_product({y, p1});
  const NodeId a = c.add_product({prod01, p2});
  const NodeId b = c.add_product({y, p1, p2});
  const NodeId s = c.add_sum({a, b}, {0.0, 0.0});
  auto scopes = compute_scopes(c);
  EXPECT_EQ(scopes[y], scope_of(3, {0}));
  EXPECT_EQ(scopes[prod01], scope_of(3, {0, 1}));
  EXPECT_EQ(scopes[s], scope_of(3, {0, 1, 2}));
  EXPECT_EQ(compute_scopes(c), scopes);
  EXPECT_TRUE(validate_smooth(c).ok());
  EXPECT_TRUE(validate_decomposable(c).ok());
}

TEST(Validators, DetectHandBuiltViolations) {
  Circuit c(2, 1);
  const NodeId y = c.add_leaf(VarId::target(), CategoricalLeaf::from_probs(std::vector<double>{0.5, 0.5}));
  const NodeId p = c.add_leaf(VarId::modality(1), DirichletLeaf({1.0, 1.0}));
  const NodeId bad_sum = c.add_sum({y, p}, {0.0, 0.0});
  const NodeId y2 = c.add_leaf(VarId::target(), CategoricalLeaf::from_probs(std::vector<double>{0.2, 0.8}));
  const NodeId bad_prod = c.add_product({y, y2});
  const NodeId good = c.add_product({y, p});
  c.add_sum({good, c.add_product({y2, p})}, {0.0, 1.0});

  auto smooth = validate_smooth(c);
  ASSERT_EQ(smooth.offending.size(), 1u);
  EXPECT_EQ(smooth.offending[0], bad_sum);
  auto decomposable = validate_decomposable(c);
  ASSERT_EQ(decomposable.offending.size(), 1u);
  EXPECT_EQ(decomposable.offending[0], bad_prod);
}

TEST(Validators, RootScopeMustCoverAllVariables) {
  Circuit c(2, 2);
  const NodeId y = c.add_leaf(VarId::target(), CategoricalLeaf::from_probs(std::vector<double>{0.5, 0.5}));
  const NodeId p = c.add_leaf(VarId::modality(1), DirichletLeaf({1.0, 1.0}));
  c.add_product({y, p});
  EXPECT_FALSE(validate_root_scope(c).ok());
}

TEST(SumWeights, FuzzedLogitsStayOnSimplex) {
  std::mt19937_64 rng(3);
  Circuit c = testing::random_mixture(1, 2, 5, rng);
  std::normal_distribution<double> n(0.0, 30.0);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> logits(5);
    for (double& l : logits) l = n(rng);
    c.set_weight_logits(c.root(), logits);
    auto w = c.sum_weights(c.root());
    double total = 0.0;
    for (double v : w) {
      EXPECT_GE(v, 0.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(LeafDensityBound, ClosedFormExamples) {
  auto uniform = check_leaf_density_bound(DirichletLeaf({1.0, 1.0}));
  EXPECT_TRUE(uniform.bounded);
  EXPECT_NEAR(uniform.max_density, 1.0, 1e-15);

  auto peaked = check_leaf_density_bound(DirichletLeaf({2.0, 2.0}));
  EXPECT_FALSE(peaked.bounded);
  const double oracle = std::exp(std::lgamma(4.0) - 2.0 * std::lgamma(2.0) + 2.0 * std::log(0.5));
  EXPECT_NEAR(oracle, 1.5, 1e-14);
  EXPECT_NEAR(peaked.max_density, oracle, 1e-12);

  auto cat = check_leaf_density_bound(CategoricalLeaf::from_probs(std::vector<double>{0.3, 0.7}));
  EXPECT_TRUE(cat.bounded);
  EXPECT_NEAR(cat.max_density, 0.7, 1e-15);

  auto divergent = check_leaf_density_bound(DirichletLeaf({0.5, 3.0}));
  EXPECT_FALSE(divergent.bounded);
  EXPECT_TRUE(std::isinf(divergent.max_density));

  EXPECT_FALSE(check_leaf_density_bound(DirichletLeaf({1.0, 1.0, 1.0})).bounded);
}

// Grid search at spacing 1e-3 over (p_0, p_1), then repeated zooms with a
// tenfold finer grid around the best cell so peaked densities are resolved.
double grid_max_density(const std::vector<double>& alpha) {
  const bool two = alpha.size() == 2;
  auto density = [&](double a, double b) {
    if (a < 0.0 || b < 0.0 || a + b > 1.0 + 1e-15) return 0.0;
    const double p2[2] = {a, 1.0 - a};
    const double p3[3] = {a, b, std::max(0.0, 1.0 - a - b)};
    return two ? dirichlet_density_oracle(alpha, p2) : dirichlet_density_oracle(alpha, p3);
  };
  double best = 0.0;
  double best_a = 0.0;
  double best_b = 0.0;
  auto scan = [&](double a0, double b0, double step, int half_width) {
    for (int i = -half_width; i <= half_width; ++i) {
      for (int j = two ? 0 : -half_width; j <= (two ? 0 : half_width); ++j) {
        const double a = a0 + i * step;
        const double b = two ? 0.0 : b0 + j * step;
        const double d = density(a, b);
        if (d > best) {
          best = d;
          best_a = a;
          best_b = b;
        }
      }
    }
  };
  scan(0.5, 0.5, 1e-3, 500);
  for (double step = 1e-4; step >= 1e-9; step /= 10.0) scan(best_a, best_b, step, 20);
  return best;
}

TEST(LeafDensityBound, AgreesWithGridSearch) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(1.0, 6.0);
  for (int trial = 0; trial < 12; ++trial) {
    const std::size_t k = trial < 8 ? 2 : 3;
    std::vector<double> alpha(k);
    for (double& a : alpha) a = u(rng);
    if (trial % 4 == 0) alpha[0] = 1.0;  // mode on the boundary
    const auto bound = check_leaf_density_bound(DirichletLeaf(alpha));
    const double grid = grid_max_density(alpha);
    EXPECT_NEAR(bound.max_density, grid, 1e-6) << trial;
    EXPECT_GE(bound.max_density, grid - 1e-12);
  }
}

TEST(UnboundedLeaves, ListsOffendingIds) {
  Circuit c(2, 1);
  c.add_leaf(VarId::target(), CategoricalLeaf::from_probs(std::vector<double>{0.5, 0.5}));
  const NodeId bad = c.add_leaf(VarId::modality(1), DirichletLeaf({5.0, 5.0}));
  c.add_product({0, bad});
  EXPECT_EQ(unbounded_leaves(c), std::vector<NodeId>{bad});
}

class CircuitIoTest : public ::testing::Test {
 protected:
  std::filesystem::path path_ = std::filesystem::temp_directory_path() /
                                ("credfuse_io_" + std::to_string(::getpid()) + ".json");
  void TearDown() override { std::filesystem::remove(path_); }
};

TEST_F(CircuitIoTest, RoundTripIsBitExact) {
  std::mt19937_64 rng(8);
  InitConfig init;
  init.logit_scale = 1.3;
  init.alpha_low = 0.7;
  init.alpha_high = 9.0;
  Circuit c = build_fusion_circuit(2, 3, 4, 5, init);
  save_circuit(c, path_);
  Circuit loaded = load_circuit(path_);
  EXPECT_EQ(loaded, c);
  EXPECT_TRUE(validate_smooth(loaded).ok());
  EXPECT_TRUE(validate_decomposable(loaded).ok());
  for (int i = 0; i < 100; ++i) {
    std::vector<ProbVector> preds{testing::random_prob(3, rng), testing::random_prob(3, rng)};
    Evidence ev = Evidence::full(i % 3, preds);
    EXPECT_EQ(log_joint(loaded, ev), log_joint(c, ev));
  }
}

TEST_F(CircuitIoTest, DeepDagRoundTrip) {
  std::mt19937_64 rng(2);
  Circuit c = testing::random_deep(2, 3, rng);
  Circuit loaded = circuit_from_json(circuit_to_json(c));
  EXPECT_EQ(loaded, c);
}

TEST_F(CircuitIoTest, AcceptsShuffledNodeOrder) {
  Circuit c = build_fusion_circuit(1, 2, 2, 3);
  auto doc = circuit_to_json(c);
  std::reverse(doc["nodes"].begin(), doc["nodes"].end());
  Circuit loaded = circuit_from_json(doc);
  std::mt19937_64 rng(1);
  std::vector<ProbVector> preds{testing::random_prob(2, rng)};
  EXPECT_EQ(log_joint(loaded, Evidence::full(1, preds)), log_joint(c, Evidence::full(1, preds)));
}

TEST_F(CircuitIoTest, RejectsCycles) {
  auto doc = circuit_to_json(build_fusion_circuit(1, 2, 1, 0));
  // product (id 3) gains the root sum (id 4) as a child
  for (auto& n : doc["nodes"]) {
    if (n["kind"] == "product") n["children"].push_back(4);
  }
  EXPECT_THROW(circuit_from_json(doc), FormatError);
}

TEST_F(CircuitIoTest, RejectsUnknownSchemaVersion) {
  auto doc = circuit_to_json(build_fusion_circuit(1, 2, 1, 0));
  doc["schema_version"] = 99;
  EXPECT_THROW(circuit_from_json(doc), FormatError);
}

TEST_F(CircuitIoTest, RejectsStructuralViolations) {
  auto doc = circuit_to_json(build_fusion_circuit(1, 2, 1, 0));
  for (auto& n : doc["nodes"]) {
    if (n["kind"] == "product") n["children"] = {0, 0};
  }
  EXPECT_THROW(circuit_from_json(doc), FormatError);
  EXPECT_THROW(load_circuit("/nonexistent/model.json"), IoError);
}

}  // namespace
}  // namespace credfuse
