#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "credfuse/error.hpp"
#include "credfuse/kernels.hpp"

namespace credfuse::kernels {
namespace {

std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

// Lengths straddle the 4- and 8-lane boundaries of the vector loops.
const std::size_t kLengths[] = {0, 1, 2, 3, 4, 5, 7, 8, 9, 15, 16, 17, 31, 64, 100, 1001};

class KernelEquivalence : public ::testing::TestWithParam<Isa> {
 protected:
  void SetUp() override {
    if (!isa_supported(GetParam())) GTEST_SKIP() << isa_name(GetParam()) << " not available";
  }
  const KernelTable& table() const { return table_for(GetParam()); }
};

TEST_P(KernelEquivalence, DotMatchesScalar) {
  std::mt19937_64 rng(1);
  for (std::size_t n : kLengths) {
    auto a = random_vector(n, rng);
    auto b = random_vector(n, rng);
    const double ref = scalar::dot(a.data(), b.data(), n);
    EXPECT_NEAR(table().dot(a.data(), b.data(), n), ref, 1e-12 * (1.0 + std::abs(ref)) * (1.0 + n)) << n;
  }
}

TEST_P(KernelEquivalence, AxpyMatchesScalar) {
  std::mt19937_64 rng(2);
  for (std::size_t n : kLengths) {
    auto x = random_vector(n, rng);
    auto y = random_vector(n, rng);
    auto expected = y;
    scalar::axpy(0.37, x.data(), expected.data(), n);
    table().axpy(0.37, x.data(), y.data(), n);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(y[i], expected[i], 1e-14) << n << " " << i;
  }
}

TEST_P(KernelEquivalence, MaxIsExact) {
  std::mt19937_64 rng(3);
  for (std::size_t n : kLengths) {
    auto x = random_vector(n, rng);
    EXPECT_EQ(table().max(x.data(), n), scalar::max(x.data(), n)) << n;
  }
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> neg(6, -inf);
  EXPECT_EQ(table().max(neg.data(), neg.size()), -inf);
  neg[5] = -1.0;
  EXPECT_EQ(table().max(neg.data(), neg.size()), -1.0);
}

TEST_P(KernelEquivalence, SumMatchesScalar) {
  std::mt19937_64 rng(4);
  for (std::size_t n : kLengths) {
    auto x = random_vector(n, rng);
    EXPECT_NEAR(table().sum(x.data(), n), scalar::sum(x.data(), n), 1e-12 * (1.0 + n)) << n;
  }
}

INSTANTIATE_TEST_SUITE_P(AllIsas, KernelEquivalence, ::testing::Values(Isa::kScalar, Isa::kAvx2),
                         [](const auto& info) { return std::string(isa_name(info.param)); });

TEST(KernelDispatch, EmptyMaxIsNegativeInfinity) {
  std::vector<double> empty;
  EXPECT_EQ(max(empty), -std::numeric_limits<double>::infinity());
}

TEST(KernelDispatch, SelectSwitchesTable) {
  const Isa before = active_isa();
  select(Isa::kScalar);
  EXPECT_EQ(active_isa(), Isa::kScalar);
  EXPECT_EQ(active().dot, table_for(Isa::kScalar).dot);
  select(before);
  EXPECT_EQ(active_isa(), before);
}

TEST(KernelDispatch, UnsupportedIsaThrows) {
  if (isa_supported(Isa::kAvx2)) GTEST_SKIP() << "cpu has avx2";
  EXPECT_THROW(select(Isa::kAvx2), ContractError);
}

}  // namespace
}  // namespace credfuse::kernels
