#include "grad_suite.hpp"

#include "soar/errors.hpp"
#include "soar/tensor.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace soar;
using namespace soar::ad;

namespace {

std::vector<gradsuite::Case> const & ops()
{
  static auto const cases = gradsuite::op_cases();
  return cases;
}

class OpGradient : public ::testing::TestWithParam<std::size_t> {};

TEST_P(OpGradient, MatchesCentralDifferences)
{
  auto const & c = ops()[GetParam()];
  EXPECT_LT(c.run(), 1e-6) << c.name;
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient, ::testing::Range<std::size_t>(0, ops().size()),
                         [](auto const & info) { return ops()[info.param].name; });

}  // namespace

TEST(Tensor, MatmulValues)
{
  auto a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = Tensor::from({3, 2}, {7, 8, 9, 10, 11, 12});
  auto c = matmul(a, b);
  std::vector<double> const expect{58, 64, 139, 154};
  EXPECT_EQ(std::vector<double>(c.values().begin(), c.values().end()), expect);
  EXPECT_THROW(matmul(a, a), ConfigError);
}

TEST(Tensor, SoftmaxRowsSumToOneAndSurviveLargeInputs)
{
  auto x = Tensor::from({2, 3}, {1000, 1001, 1002, -5, 0, 5});
  auto s = softmax(x, 1);
  for (std::size_t r = 0; r < 2; ++r)
  {
    double sum = 0;
    for (std::size_t c = 0; c < 3; ++c)
      sum += s.values()[r * 3 + c];
    EXPECT_NEAR(sum, 1.0, 1e-15);
  }
  auto ls = log_softmax(x, 1);
  EXPECT_NEAR(ls.values()[2], std::log(s.values()[2]), 1e-12);
}

TEST(Tensor, Conv2dMatchesDirectSum)
{
  auto x = gradsuite::leaf({1, 4, 5, 2}, 1);
  auto k = gradsuite::leaf({3, 3, 2, 2}, 2);
  auto y = conv2d(x, k, 2);
  ASSERT_EQ(y.shape(), (Shape{1, 2, 3, 2}));
  auto xv = x.values();
  auto kv = k.values();
  for (std::size_t oy = 0; oy < 2; ++oy)
    for (std::size_t ox = 0; ox < 3; ++ox)
      for (std::size_t co = 0; co < 2; ++co)
      {
        double s = 0;
        for (std::size_t ky = 0; ky < 3; ++ky)
          for (std::size_t kx = 0; kx < 3; ++kx)
          {
            long iy = long(oy * 2 + ky) - 1, ix = long(ox * 2 + kx) - 1;
            if (iy < 0 || ix < 0 || iy >= 4 || ix >= 5)
              continue;
            for (std::size_t ci = 0; ci < 2; ++ci)
              s += xv[(std::size_t(iy) * 5 + std::size_t(ix)) * 2 + ci] * kv[((ky * 3 + kx) * 2 + ci) * 2 + co];
          }
        EXPECT_NEAR(y.values()[(oy * 3 + ox) * 2 + co], s, 1e-12);
      }
}

TEST(Tensor, BatchNormUpdatesRunningStatsOnlyInTrainMode)
{
  BatchNormStats stats(2);
  auto x = Tensor::from({2, 2}, {1, 10, 3, 30});
  auto g = Tensor::full({2}, 1.0);
  auto b = Tensor::zeros({2});
  batch_norm(x, g, b, stats, Mode::eval);
  EXPECT_EQ(stats.running_mean.values()[0], 0.0);
  auto y = batch_norm(x, g, b, stats, Mode::train);
  EXPECT_NEAR(stats.running_mean.values()[0], 0.1 * 2.0, 1e-12);
  EXPECT_NEAR(y.values()[0], -1.0 / std::sqrt(1.0 + 1e-5), 1e-12);
}

TEST(Tensor, HardswishPiecewise)
{
  auto x = Tensor::from({4}, {-4, -1, 1, 4});
  auto y = hardswish(x);
  EXPECT_EQ(y.values()[0], 0.0);
  EXPECT_NEAR(y.values()[1], -1.0 * 2.0 / 6.0, 1e-15);
  EXPECT_NEAR(y.values()[2], 4.0 / 6.0, 1e-15);
  EXPECT_EQ(y.values()[3], 4.0);
}

TEST(Tensor, DropPathIsIdentityInEval)
{
  std::mt19937_64 rng(0);
  auto x = gradsuite::leaf({4, 3}, 3);
  auto y = drop_path(x, 0.7, Mode::eval, rng);
  EXPECT_TRUE(std::equal(x.values().begin(), x.values().end(), y.values().begin()));
}

TEST(Tensor, DropPathZeroesWholeSamples)
{
  std::mt19937_64 rng(1);
  auto x = Tensor::full({50, 3}, 1.0);
  auto y = drop_path(x, 0.5, Mode::train, rng);
  for (std::size_t i = 0; i < 50; ++i)
  {
    double const v = y.values()[i * 3];
    EXPECT_TRUE(v == 0.0 || v == 2.0);
    EXPECT_EQ(y.values()[i * 3 + 1], v);
  }
}

TEST(Tensor, NoGradGuardStopsRecording)
{
  auto x = gradsuite::leaf({2}, 4);
  {
    NoGradGuard g;
    EXPECT_FALSE(add(x, x).requires_grad());
  }
  EXPECT_TRUE(add(x, x).requires_grad());
}

TEST(Tensor, GradientsAccumulateThroughSharedNodes)
{
  auto x = Tensor::from({1}, {3.0}, true);
  auto y = mul(x, x);
  backward(sum_all(add(y, y)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

TEST(Tensor, BackwardNeedsScalar)
{
  auto x = gradsuite::leaf({2}, 5);
  EXPECT_THROW(backward(add(x, x)), StateError);
}

TEST(Tensor, FiniteCheckCatchesNan)
{
  FiniteCheckGuard guard;
  auto x = Tensor::from({1}, {-1.0});
  EXPECT_THROW(ad::log(x), NumericError);
}

TEST(Tensor, ShapeMismatchThrows)
{
  EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), ConfigError);
  EXPECT_THROW(reshape(Tensor::zeros({2, 3}), {4}), ConfigError);
}
