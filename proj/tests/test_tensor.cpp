#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "stgan/errors.hpp"
#include "stgan/gradcheck.hpp"
#include "stgan/ops.hpp"
#include "stgan/rng.hpp"
#include "test_util.hpp"

namespace stgan {
namespace {

using test::random_tensor;
using test::values;

TEST(Elementwise, SigmoidAndRelu) {
  EXPECT_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5);
  EXPECT_EQ(relu(Tensor::scalar(-3.0)).item(), 0.0);
  EXPECT_EQ(relu(Tensor::scalar(3.0)).item(), 3.0);
  EXPECT_DOUBLE_EQ(leaky_relu(Tensor::scalar(-2.0), 0.2).item(), -0.4);
}

TEST(Elementwise, SigmoidIsStableForLargeInputs) {
  const Tensor y = sigmoid(Tensor::from({2}, {-800.0, 800.0}));
  EXPECT_EQ(y.data()[0], 0.0);
  EXPECT_EQ(y.data()[1], 1.0);
}

TEST(Elementwise, SquareGradientAtThree) {
  Tensor x = Tensor::scalar(3.0, true);
  (x * x).backward();
  EXPECT_EQ(x.grad()[0], 6.0);
  const auto report = finite_diff_check([](const Tensor& t) { return t * t; }, x);
  EXPECT_LT(report.max_rel_error, 1e-6);
}

TEST(Elementwise, LogIsClampedAtFloor) {
  const Tensor y = log(Tensor::from({2}, {0.0, 1.0}));
  EXPECT_EQ(y.data()[0], std::log(kLogFloor));
  EXPECT_EQ(y.data()[1], 0.0);
}

TEST(Elementwise, PowerAndExp) {
  const Tensor x = Tensor::from({3}, {1.0, 4.0, 9.0});
  EXPECT_EQ(values(power(x, 0.5)), (std::vector<double>{1.0, 2.0, 3.0}));
  EXPECT_DOUBLE_EQ(exp(Tensor::scalar(1.0)).item(), std::numbers::e);
}

TEST(Elementwise, ScalarOperandBroadcasts) {
  const Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  const Tensor s = Tensor::scalar(10.0);
  EXPECT_EQ(values(a + s), (std::vector<double>{11, 12, 13, 14}));
  EXPECT_EQ(values(s - a), (std::vector<double>{9, 8, 7, 6}));
}

TEST(Elementwise, ShapeMismatchNamesBothShapes) {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({3, 2});
  try {
    (void)(a + b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[3,2]"), std::string::npos) << msg;
  }
}

TEST(Backward, SumGivesOnes) {
  Rng rng(1);
  Tensor x = random_tensor({2, 3, 4}, rng, -1, 1, true);
  sum(x).backward();
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, HandDerivative) {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  sum(x * x + x).backward();
  EXPECT_EQ(values(Tensor::from({2}, {x.grad()[0], x.grad()[1]})), (std::vector<double>{3, 5}));
}

TEST(Backward, RepeatedBackwardAccumulatesExactly) {
  Rng rng(2);
  Tensor x = random_tensor({3, 3}, rng, -1, 1, true);
  const Tensor loss = sum(exp(x) * x);
  loss.backward();
  const std::vector<double> once(x.grad().begin(), x.grad().end());
  loss.backward();
  for (std::size_t i = 0; i < once.size(); ++i) EXPECT_EQ(x.grad()[i], 2.0 * once[i]);
}

TEST(Backward, ValueUsedTwiceReceivesBothContributions) {
  Tensor x = Tensor::scalar(2.0, true);
  const Tensor y = sigmoid(x);
  (y * 3.0 + y * 4.0).backward();
  const double s = 1.0 / (1.0 + std::exp(-2.0));
  EXPECT_NEAR(x.grad()[0], 7.0 * s * (1.0 - s), 1e-15);
}

TEST(Backward, NonScalarRejected) {
  Tensor x = Tensor::zeros({2}, true);
  EXPECT_THROW((x * 2.0).backward(), ShapeError);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  Tensor x = Tensor::scalar(1.0, true);
  NoGradGuard guard;
  const Tensor y = x * x;
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.is_leaf());
}

TEST(Backward, DetachCutsTheGraph) {
  Tensor x = Tensor::scalar(3.0, true);
  const Tensor y = x * x;
  (y.detach() * x).backward();
  EXPECT_EQ(x.grad()[0], 9.0);
}

TEST(Finite, CheckFiniteReportsLocation) {
  const Tensor t = Tensor::from({2}, {1.0, std::nan("")});
  try {
    check_finite(t, "encoder.conv1");
    FAIL();
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("encoder.conv1"), std::string::npos);
  }
}

TEST(Matmul, IdentityAndHandExample) {
  Rng rng(3);
  const Tensor a = random_tensor({3, 3}, rng);
  const Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  EXPECT_EQ(values(matmul(a, eye)), values(a));
  const Tensor c = matmul(Tensor::from({2, 2}, {1, 2, 3, 4}), Tensor::from({2, 1}, {1, 1}));
  EXPECT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(values(c), (std::vector<double>{3, 7}));
}

TEST(Matmul, MatchesTripleLoopOnAwkwardShapes) {
  Rng rng(4);
  for (auto [m, k, n] : {std::tuple{1, 1, 1}, std::tuple{5, 7, 3}, std::tuple{37, 53, 29},
                         std::tuple{130, 70, 65}, std::tuple{4, 512, 16}}) {
    const Tensor a = random_tensor({m, k}, rng);
    const Tensor b = random_tensor({k, n}, rng);
    const Tensor product = matmul(a, b);
    const auto c = product.data();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int p = 0; p < k; ++p) s += a.data()[i * k + p] * b.data()[p * n + j];
        ASSERT_NEAR(c[i * n + j], s, 1e-12 * k) << m << "x" << k << "x" << n;
      }
  }
}

TEST(Matmul, GradientOfSumMatchesFiniteDifferences) {
  Rng rng(5);
  Tensor a = random_tensor({4, 3}, rng, -1, 1, true);
  const Tensor b = random_tensor({3, 5}, rng);
  const auto report = finite_diff_check([&] { return sum(matmul(a, b)); }, {a});
  EXPECT_LT(report.max_rel_error, 1e-6);
}

TEST(Matmul, InnerMismatchNamesExtents) {
  try {
    (void)matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 5}));
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find('3'), std::string::npos);
    EXPECT_NE(msg.find('4'), std::string::npos);
  }
}

TEST(Softmax, HandExamples) {
  EXPECT_EQ(values(softmax(Tensor::from({2}, {0, 0}), 0)), (std::vector<double>{0.5, 0.5}));
  const Tensor probs = softmax(Tensor::from({2}, {0.0, std::log(3.0)}), 0);
  const auto p = probs.data();
  EXPECT_NEAR(p[0], 0.25, 1e-15);
  EXPECT_NEAR(p[1], 0.75, 1e-15);
}

TEST(Softmax, SlicesSumToOneAndShiftInvariance) {
  Rng rng(6);
  const Tensor x = random_tensor({4, 6, 5}, rng, -30, 30);
  for (int axis = 0; axis < 3; ++axis) {
    const Tensor p = softmax(x, axis);
    const Tensor totals = sum(p, axis);
    for (double t : totals.data()) EXPECT_NEAR(t, 1.0, 1e-9);
    const Tensor shifted = softmax(x + 123.25, axis);
    EXPECT_LE(test::max_abs_diff(p.data(), shifted.data()), 1e-12);
  }
}

TEST(Conv2d, OneByOneIdentity) {
  Rng rng(7);
  const Tensor x = random_tensor({2, 1, 5, 5}, rng);
  const Tensor y = conv2d(x, Tensor::full({1, 1, 1, 1}, 1.0), Tensor::zeros({1}));
  EXPECT_EQ(values(y), values(x));
}

TEST(Conv2d, AllOnesHandExample) {
  const Tensor y =
      conv2d(Tensor::full({1, 1, 3, 3}, 1.0), Tensor::full({1, 1, 2, 2}, 1.0), Tensor{});
  EXPECT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  EXPECT_EQ(values(y), (std::vector<double>{4, 4, 4, 4}));
}

TEST(Conv2d, MatchesDirectLoops) {
  Rng rng(8);
  struct Case {
    Shape x, w;
    int stride, pad;
  };
  for (const Case& c : {Case{{1, 1, 6, 6}, {2, 1, 3, 3}, 1, 0}, Case{{2, 3, 9, 7}, {5, 3, 3, 3}, 2, 1},
                        Case{{1, 16, 8, 8}, {1, 16, 7, 7}, 1, 3}, Case{{2, 2, 8, 8}, {3, 2, 1, 1}, 1, 0},
                        Case{{1, 4, 10, 10}, {8, 4, 3, 3}, 1, 1}, Case{{3, 2, 5, 6}, {2, 2, 2, 3}, 2, 0}}) {
    const Tensor x = random_tensor(c.x, rng);
    const Tensor w = random_tensor(c.w, rng);
    const Tensor b = random_tensor({c.w[0]}, rng);
    Shape expect_shape;
    const auto expect = test::naive_conv2d(x, w, b, c.stride, c.pad, expect_shape);
    const Tensor y = conv2d(x, w, b, {c.stride, c.pad, 0});
    ASSERT_EQ(y.shape(), expect_shape);
    EXPECT_LE(test::max_abs_diff(y.data(), expect), 1e-12);
  }
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  Rng rng(9);
  Tensor x = random_tensor({1, 1, 6, 6}, rng, -1, 1, true);
  Tensor w = random_tensor({2, 1, 3, 3}, rng, -1, 1, true);
  Tensor b = random_tensor({2}, rng, -1, 1, true);
  const Tensor r = random_tensor({1, 2, 4, 4}, rng);
  const auto report = finite_diff_check([&] { return sum(conv2d(x, w, b) * r); }, {x, w, b});
  EXPECT_LT(report.max_rel_error, 1e-5);
  EXPECT_EQ(report.checked, 36u + 18u + 2u);
}

TEST(Conv2d, KernelLargerThanPaddedInputRejected) {
  EXPECT_THROW((void)conv2d(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 5, 5}), Tensor{}),
               ShapeError);
}

TEST(Conv2dTranspose, OutputSizeFormula) {
  const Tensor x = Tensor::zeros({1, 1, 4, 4});
  const Tensor w = Tensor::zeros({1, 1, 3, 3});
  EXPECT_EQ(conv2d_transpose(x, w, Tensor{}, {2, 1, 0}).shape(), (Shape{1, 1, 7, 7}));
  EXPECT_EQ(conv2d_transpose(x, w, Tensor{}, {2, 1, 1}).shape(), (Shape{1, 1, 8, 8}));
}

TEST(Conv2dTranspose, MatchesScatterLoops) {
  Rng rng(10);
  struct Case {
    Shape x, w;
    int stride, pad, op;
  };
  for (const Case& c : {Case{{1, 1, 4, 4}, {1, 1, 3, 3}, 2, 1, 1}, Case{{2, 3, 5, 4}, {3, 2, 3, 3}, 2, 1, 1},
                        Case{{1, 2, 3, 3}, {2, 5, 2, 2}, 1, 0, 0}, Case{{2, 4, 4, 4}, {4, 6, 3, 3}, 3, 2, 0}}) {
    const Tensor x = random_tensor(c.x, rng);
    const Tensor w = random_tensor(c.w, rng);
    const Tensor b = random_tensor({c.w[1]}, rng);
    Shape expect_shape;
    const auto expect = test::naive_conv2d_transpose(x, w, b, c.stride, c.pad, c.op, expect_shape);
    const Tensor y = conv2d_transpose(x, w, b, {c.stride, c.pad, c.op});
    ASSERT_EQ(y.shape(), expect_shape);
    EXPECT_LE(test::max_abs_diff(y.data(), expect), 1e-12);
  }
}

TEST(Conv2dTranspose, AdjointOfConv2d) {
  Rng rng(11);
  const Tensor x = random_tensor({2, 3, 8, 8}, rng);
  const Tensor w = random_tensor({4, 3, 3, 3}, rng);
  const Tensor fx = conv2d(x, w, Tensor{}, {2, 1, 0});
  const Tensor y = random_tensor(fx.shape(), rng);
  const Tensor aty = conv2d_transpose(y, w, Tensor{}, {2, 1, 1});
  ASSERT_EQ(aty.shape(), x.shape());
  const double lhs = test::dot(fx.data(), y.data());
  const double rhs = test::dot(x.data(), aty.data());
  EXPECT_LT(std::abs(lhs - rhs) / std::max(std::abs(lhs), std::abs(rhs)), 1e-10);
}

TEST(Reductions, MeanHandExample) {
  EXPECT_EQ(mean(Tensor::from({4}, {1, 2, 3, 4})).item(), 2.5);
}

TEST(Reductions, AxisSumsAndKeepdim) {
  const Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(values(sum(x, 0)), (std::vector<double>{5, 7, 9}));
  EXPECT_EQ(values(sum(x, 1)), (std::vector<double>{6, 15}));
  EXPECT_EQ(sum(x, 1, true).shape(), (Shape{2, 1}));
  EXPECT_EQ(values(mean(x, -1)), (std::vector<double>{2, 5}));
}

TEST(Shapes, ReshapePreservesRowMajorOrder) {
  const Tensor x = Tensor::from({2, 6}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11});
  const Tensor y = reshape(x, {3, 4});
  EXPECT_EQ(y.shape(), (Shape{3, 4}));
  EXPECT_EQ(values(y), values(x));
  EXPECT_THROW((void)reshape(x, {5, 2}), ShapeError);
}

TEST(Shapes, ConcatAlongChannels) {
  Rng rng(12);
  const Tensor a = random_tensor({2, 1, 3, 3}, rng);
  const Tensor b = random_tensor({2, 1, 3, 3}, rng);
  const Tensor c = concat({a, b}, 1);
  EXPECT_EQ(c.shape(), (Shape{2, 2, 3, 3}));
  for (int n = 0; n < 2; ++n)
    for (int p = 0; p < 9; ++p) {
      EXPECT_EQ(c.data()[(n * 2 + 0) * 9 + p], a.data()[n * 9 + p]);
      EXPECT_EQ(c.data()[(n * 2 + 1) * 9 + p], b.data()[n * 9 + p]);
    }
}

TEST(Shapes, TransposeSliceTakeRows) {
  const Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(values(transpose(x)), (std::vector<double>{1, 4, 2, 5, 3, 6}));
  EXPECT_EQ(values(slice(x, 1, 1, 2)), (std::vector<double>{2, 3, 5, 6}));
  const std::int64_t rows[] = {1, 1, 0};
  EXPECT_EQ(values(take_rows(x, rows)), (std::vector<double>{4, 5, 6, 4, 5, 6, 1, 2, 3}));
  EXPECT_THROW((void)slice(x, 1, 2, 2), ShapeError);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const double x = a.normal();
    EXPECT_EQ(x, b.normal());
    differs |= x != c.normal();
  }
  EXPECT_TRUE(differs);
}

TEST(Rng, DerivedStreamsDiffer) {
  Rng a = Rng::derive(7, 0), b = Rng::derive(7, 1);
  EXPECT_NE(a.next_u64(), b.next_u64());
  Rng c = Rng::derive(7, 1);
  Rng d = Rng::derive(7, 1);
  EXPECT_EQ(c.next_u64(), d.next_u64());
}

TEST(Rng, MomentsOfDraws) {
  Rng rng(5);
  const int n = 200000;
  double s = 0.0, s2 = 0.0, umin = 1.0, umax = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    s += z;
    s2 += z * z;
    const double u = rng.uniform();
    umin = std::min(umin, u);
    umax = std::max(umax, u);
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.015);
  EXPECT_GE(umin, 0.0);
  EXPECT_LT(umax, 1.0);
}

}  // namespace
}  // namespace stgan
