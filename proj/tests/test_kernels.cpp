#include <cmath>
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "selfdistill/errors.hpp"
#include "selfdistill/kernels.hpp"
#include "selfdistill/rng.hpp"

namespace kernels = selfdistill::kernels;
using selfdistill::Rng;

namespace {

std::vector<double> random_vector(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-4.0, 4.0);
  return v;
}

void expect_close(double a, double b, double scale) {
  EXPECT_LE(std::abs(a - b), 1e-13 * std::max(1.0, scale)) << a << " vs " << b;
}

class KernelEquivalence : public ::testing::TestWithParam<kernels::Isa> {};

TEST_P(KernelEquivalence, MatchesScalarAcrossLengths) {
  if (!kernels::supported(GetParam())) GTEST_SKIP() << "not supported on this CPU";
  const auto& ref = kernels::detail::scalar_table();
  const auto& simd = kernels::table(GetParam());
  Rng rng(42);
  for (std::size_t n = 0; n <= 67; ++n) {
    const auto a = random_vector(rng, n);
    const auto b = random_vector(rng, n);
    double abs_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) abs_sum += std::abs(a[i]) * std::abs(b[i]) + std::abs(a[i]);

    expect_close(simd.dot(a.data(), b.data(), n), ref.dot(a.data(), b.data(), n), abs_sum);
    expect_close(simd.sum(a.data(), n), ref.sum(a.data(), n), abs_sum);
    expect_close(simd.squared_distance(a.data(), b.data(), n), ref.squared_distance(a.data(), b.data(), n),
                 4.0 * abs_sum + 64.0 * static_cast<double>(n));
    EXPECT_EQ(simd.max(a.data(), n), ref.max(a.data(), n));

    auto y1 = b;
    auto y2 = b;
    simd.axpy(0.37, a.data(), y1.data(), n);
    ref.axpy(0.37, a.data(), y2.data(), n);
    for (std::size_t i = 0; i < n; ++i) expect_close(y1[i], y2[i], 4.0);

    auto s1 = a;
    auto s2 = a;
    simd.scale(-1.5, s1.data(), n);
    ref.scale(-1.5, s2.data(), n);
    EXPECT_EQ(s1, s2);
  }
}

INSTANTIATE_TEST_SUITE_P(AllIsas, KernelEquivalence, ::testing::Values(kernels::Isa::scalar, kernels::Isa::avx2),
                         [](const auto& info) { return std::string(kernels::to_string(info.param)); });

TEST(Kernels, MaxOfEmptyIsNegativeInfinity) {
  for (auto isa : kernels::supported_isas()) {
    EXPECT_EQ(kernels::table(isa).max(nullptr, 0), -std::numeric_limits<double>::infinity());
  }
}

TEST(Kernels, ScalarAlwaysSupportedAndSelectable) {
  EXPECT_TRUE(kernels::supported(kernels::Isa::scalar));
  const auto before = kernels::active_isa();
  kernels::select(kernels::Isa::scalar);
  EXPECT_EQ(kernels::active_isa(), kernels::Isa::scalar);
  kernels::select(before);
  EXPECT_EQ(kernels::active_isa(), before);
}

TEST(Kernels, SelectingUnsupportedIsaThrows) {
  if (kernels::supported(kernels::Isa::avx2)) GTEST_SKIP() << "avx2 available";
  EXPECT_THROW(kernels::select(kernels::Isa::avx2), selfdistill::InvalidInput);
}

TEST(Kernels, SpanWrappersClampToShorterLength) {
  const std::vector<double> a{1, 2, 3};
  const std::vector<double> b{4, 5};
  EXPECT_EQ(kernels::dot(a, b), 14.0);
  EXPECT_EQ(kernels::squared_distance(a, b), 18.0);
}

}  // namespace
