#include "l1bn/batch_norm.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "l1bn/errors.hpp"
#include "l1bn/grad_check.hpp"
#include "l1bn/rng.hpp"

namespace l1bn {
namespace {

double max_rel_diff(const Tensor& a, const Tensor& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, relative_error(a[i], b[i]));
  return worst;
}

// Pooled population std of column c of a 2-D tensor.
double column_std(const Tensor& t, std::size_t c) {
  const std::size_t n = t.shape()[0], d = t.shape()[1];
  double m = 0;
  for (std::size_t i = 0; i < n; ++i) m += t[i * d + c];
  m /= n;
  double ss = 0;
  for (std::size_t i = 0; i < n; ++i) ss += (t[i * d + c] - m) * (t[i * d + c] - m);
  return std::sqrt(ss / n);
}

Tensor tie_free_batch(Rng& rng, const Shape& shape) {
  const Layout layout = layout_for_rank(shape.size());
  for (;;) {
    Tensor x = normal_sample(rng, shape, 0.3, 1.7);
    const auto stats = l2_batch_stats(x, layout);
    const Tensor centered = sub(x, expand(stats.mean, shape, batch_axes(layout)));
    if (std::all_of(centered.data().begin(), centered.data().end(), [](double v) { return std::fabs(v) > 1e-3; }))
      return x;
  }
}

BnParams random_params(Rng& rng, std::size_t features, BnMode mode, bool affine = true) {
  BnParams p = BnParams::make(features, mode, affine);
  p.gamma = uniform_sample(rng, {features}, 0.5, 1.5);
  p.beta = normal_sample(rng, {features}, 0, 1);
  return p;
}

Tensor numeric_input_grad(const Tensor& x, const BnParams& p, Layout layout, const ProbeLoss& loss) {
  return finite_diff([&](const Tensor& xp) { return loss(bn_forward_train(xp, p, layout).y); }, x, 1e-6);
}

TEST(BatchAxesTest, Layouts) {
  EXPECT_EQ(batch_axes(Layout::Features2d), (AxisSet{0}));
  EXPECT_EQ(batch_axes(Layout::Channels4d), (AxisSet{0, 1, 2}));
  EXPECT_EQ(feature_count(Tensor({5, 3}), Layout::Features2d), 3u);
  EXPECT_EQ(feature_count(Tensor({2, 4, 4, 6}), Layout::Channels4d), 6u);
  EXPECT_EQ(pooled_count(Tensor({2, 4, 4, 6}), Layout::Channels4d), 32u);
  EXPECT_THROW(layout_for_rank(3), LayoutError);
  EXPECT_THROW(feature_count(Tensor({5, 3}), Layout::Channels4d), LayoutError);
}

TEST(BatchAxesTest, UnitSpatialDimsMatchPerFeature) {
  Rng rng(1);
  const Tensor x2 = normal_sample(rng, {6, 3}, 0, 1);
  const Tensor x4(Shape{6, 1, 1, 3}, x2.values());
  for (BnMode mode : {BnMode::L2, BnMode::L1, BnMode::L1Compensated}) {
    const BnParams p = BnParams::make(3, mode);
    EXPECT_EQ(bn_forward_train(x2, p, Layout::Features2d).y.values(),
              bn_forward_train(x4, p, Layout::Channels4d).y.values());
  }
}

TEST(BatchStatsTest, L2Examples) {
  auto s = l2_batch_stats(Tensor({2, 1}, {1, 3}), Layout::Features2d);
  EXPECT_DOUBLE_EQ(s.mean[0], 2.0);
  EXPECT_DOUBLE_EQ(s.variance[0], 1.0);
  EXPECT_DOUBLE_EQ(l2_batch_stats(Tensor({4, 1}, 7.0), Layout::Features2d).variance[0], 0.0);
  s = l2_batch_stats(Tensor({4, 1}, {1, 2, 3, 6}), Layout::Features2d);
  EXPECT_DOUBLE_EQ(s.mean[0], 3.0);
  EXPECT_DOUBLE_EQ(s.variance[0], 3.5);
  EXPECT_THROW(l2_batch_stats(Tensor({1, 4}), Layout::Features2d), BatchSizeError);
}

TEST(BatchStatsTest, L1Examples) {
  auto s = l1_batch_stats(Tensor({2, 1}, {1, 3}), Layout::Features2d, false);
  EXPECT_DOUBLE_EQ(s.mean[0], 2.0);
  EXPECT_DOUBLE_EQ(s.deviation[0], 1.0);
  EXPECT_DOUBLE_EQ(l1_batch_stats(Tensor({4, 1}, {1, 2, 3, 6}), Layout::Features2d, false).deviation[0], 1.5);
  EXPECT_NEAR(l1_batch_stats(Tensor({2, 1}, {1, 3}), Layout::Features2d, true).deviation[0], 1.2533141373155,
              1e-12);
  EXPECT_THROW(l1_batch_stats(Tensor({1, 1, 1, 2}), Layout::Channels4d, false), BatchSizeError);
}

TEST(ForwardTest, TwoPointExamples) {
  const Tensor x({2, 1}, {1, 3});
  for (BnMode mode : {BnMode::L2, BnMode::L1}) {
    const auto out = bn_forward_train(x, BnParams::make(1, mode, true, 1.0, 1e-12), Layout::Features2d);
    EXPECT_NEAR(out.y[0], -1.0, 1e-9);
    EXPECT_NEAR(out.y[1], 1.0, 1e-9);
    EXPECT_EQ(out.cache.x_hat.shape(), x.shape());
  }
}

TEST(ForwardTest, FeatureCountMismatch) {
  EXPECT_THROW(bn_forward_train(Tensor({4, 3}), BnParams::make(2, BnMode::L2), Layout::Features2d), ShapeError);
  BnParams bad = BnParams::make(3, BnMode::L2);
  bad.epsilon = 0;
  EXPECT_THROW(bn_forward_train(Tensor({4, 3}), bad, Layout::Features2d), DomainError);
}

TEST(ForwardTest, ConstantBatchNormalizesToZero) {
  for (BnMode mode : {BnMode::L2, BnMode::L1, BnMode::L1Compensated}) {
    const auto out = bn_forward_train(Tensor({8, 2}, 4.0), BnParams::make(2, mode, false), Layout::Features2d);
    for (double v : out.cache.x_hat.data()) EXPECT_EQ(v, 0.0);
    EXPECT_TRUE(all_finite(out.y));
  }
}

TEST(ForwardTest, CompensatedMatchesL2OnGaussianData) {
  Rng rng(21);
  const Tensor x = normal_sample(rng, {10000, 4}, 0.7, 2.3);
  const auto l2 = bn_forward_train(x, BnParams::make(4, BnMode::L2, false), Layout::Features2d);
  const auto l1c = bn_forward_train(x, BnParams::make(4, BnMode::L1Compensated, false), Layout::Features2d);
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_NEAR(column_std(l1c.y, c) / column_std(l2.y, c), 1.0, 0.03);
  }
}

TEST(ForwardTest, GammaScaledByCompensationMatchesL2) {
  Rng rng(22);
  const Tensor x = normal_sample(rng, {10000, 3}, 0, 1);
  BnParams l2 = BnParams::make(3, BnMode::L2, true);
  l2.gamma = Tensor::from_vector({0.5, 1.0, 2.0});
  BnParams l1 = l2;
  l1.mode = BnMode::L1;
  l1.gamma = scale(l2.gamma, 1.0 / kGaussianDeviationRatio);
  const auto y2 = bn_forward_train(x, l2, Layout::Features2d).y;
  const auto y1 = bn_forward_train(x, l1, Layout::Features2d).y;
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(column_std(y1, c) / column_std(y2, c), 1.0, 0.03);
}

TEST(ForwardTest, NormalizationInvariants) {
  Rng rng(23);
  for (std::size_t m : {16u, 256u, 4096u}) {
    const Tensor x = normal_sample(rng, {m, 3}, 5.0, 3.0);
    for (BnMode mode : {BnMode::L2, BnMode::L1, BnMode::L1Compensated}) {
      const auto out = bn_forward_train(x, BnParams::make(3, mode, false, 1.0, 1e-10), Layout::Features2d);
      const auto& xh = out.cache.x_hat;
      const Tensor mu = reduce_mean(xh, {0});
      for (double v : mu.data()) EXPECT_LE(std::fabs(v), 1e-9);
      if (mode == BnMode::L2) {
        for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(column_std(xh, c), 1.0, 1e-6);
      } else {
        const double target = mode == BnMode::L1 ? 1.0 : 1.0 / kGaussianDeviationRatio;
        const Tensor mad = reduce_mean(abs(sub(xh, expand(mu, xh.shape(), {0}))), {0});
        for (double v : mad.data()) EXPECT_NEAR(v, target, 1e-6);
      }
    }
  }
}

TEST(ForwardTest, ScalingEquivariance) {
  Rng rng(24);
  const Tensor x = normal_sample(rng, {32, 4}, 1, 2);
  const double c = 3.7;
  for (BnMode mode : {BnMode::L2, BnMode::L1, BnMode::L1Compensated}) {
    BnParams p = random_params(rng, 4, mode);
    p.epsilon = 1e-12;
    BnParams q = p;
    q.gamma = scale(p.gamma, 1.0 / c);
    // y(c*x) = gamma' * x_hat + beta; x_hat is scale free, so match with gamma' = gamma.
    const Tensor y = bn_forward_train(x, p, Layout::Features2d).y;
    const Tensor y_scaled = bn_forward_train(scale(x, c), p, Layout::Features2d).y;
    EXPECT_LT(max_rel_diff(y, y_scaled), 1e-9);
    // Pre-scaled input with gamma/c equals post-scaled output of the centered part.
    const Tensor yq = bn_forward_train(scale(x, c), q, Layout::Features2d).y;
    const Tensor expected = add(scale(sub(y, expand(p.beta, y.shape(), {0})), 1.0 / c), expand(p.beta, y.shape(), {0}));
    EXPECT_LT(max_rel_diff(yq, expected), 1e-9);
  }
}

TEST(BackwardL2Test, ZeroUpstreamGivesZero) {
  Rng rng(31);
  const Tensor x = normal_sample(rng, {7, 3}, 0, 1);
  const BnParams p = random_params(rng, 3, BnMode::L2);
  const auto fwd = bn_forward_train(x, p, Layout::Features2d);
  const auto g = bn_backward_l2(Tensor(x.shape(), 0.0), fwd.cache, p, Layout::Features2d);
  for (const Tensor* t : {&g.d_input, &g.d_gamma, &g.d_beta})
    for (double v : t->data()) EXPECT_EQ(v, 0.0);
}

TEST(BackwardL2Test, BetaGradientIsPooledSum) {
  Rng rng(32);
  const Tensor x = normal_sample(rng, {3, 2, 2, 4}, 0, 1);
  const Tensor dy = normal_sample(rng, x.shape(), 0, 1);
  const BnParams p = random_params(rng, 4, BnMode::L2);
  const auto g = bn_backward_l2(dy, bn_forward_train(x, p, Layout::Channels4d).cache, p, Layout::Channels4d);
  const Tensor expected = reduce_sum(dy, {0, 1, 2});
  for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(g.d_beta[c], expected[c], 1e-12);
  EXPECT_EQ(g.d_input.shape(), x.shape());
}

TEST(BackwardL2Test, MatchesFiniteDifferences) {
  Rng rng(33);
  const Tensor x = normal_sample(rng, {7, 3}, 0.5, 1.5);
  const BnParams p = random_params(rng, 3, BnMode::L2);
  const ProbeLoss loss = ProbeLoss::random(rng, x.shape());
  const auto g = bn_backward_l2(loss.projection, bn_forward_train(x, p, Layout::Features2d).cache, p,
                                Layout::Features2d);
  EXPECT_LT(max_rel_diff(g.d_input, numeric_input_grad(x, p, Layout::Features2d, loss)), 1e-6);
}

TEST(BackwardL2Test, RejectsL1Cache) {
  const Tensor x({4, 1}, {1, 2, 3, 5});
  const BnParams p = BnParams::make(1, BnMode::L1);
  const auto fwd = bn_forward_train(x, p, Layout::Features2d);
  EXPECT_THROW(bn_backward_l2(x, fwd.cache, p, Layout::Features2d), ModeError);
  EXPECT_THROW(bn_backward_l2(Tensor({3, 1}), fwd.cache, p, Layout::Features2d), ModeError);
  const BnParams q = BnParams::make(1, BnMode::L2);
  const auto l2 = bn_forward_train(x, q, Layout::Features2d);
  EXPECT_THROW(bn_backward_l1_naive(x, l2.cache, q, Layout::Features2d), ModeError);
  EXPECT_THROW(bn_backward_l1_simplified(x, l2.cache, q, Layout::Features2d), ModeError);
  EXPECT_THROW(bn_backward_l2(Tensor({3, 1}), l2.cache, q, Layout::Features2d), ShapeError);
}

TEST(BackwardL1Test, ZeroUpstreamGivesZero) {
  Rng rng(41);
  const Tensor x = tie_free_batch(rng, {7, 3});
  const BnParams p = random_params(rng, 3, BnMode::L1);
  const auto fwd = bn_forward_train(x, p, Layout::Features2d);
  for (const auto& g : {bn_backward_l1_naive(Tensor(x.shape()), fwd.cache, p, Layout::Features2d),
                        bn_backward_l1_simplified(Tensor(x.shape()), fwd.cache, p, Layout::Features2d)}) {
    for (double v : g.d_input.data()) EXPECT_EQ(v, 0.0);
    for (double v : g.d_gamma.data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(BackwardL1Test, TwoPointBatchMatchesFiniteDifferences) {
  const Tensor x({2, 1}, {1, 3});
  const BnParams p = BnParams::make(1, BnMode::L1);
  const ProbeLoss loss{Tensor({2, 1}, {0.3, -1.1})};
  const auto fwd = bn_forward_train(x, p, Layout::Features2d);
  const Tensor numeric = numeric_input_grad(x, p, Layout::Features2d, loss);
  const auto naive = bn_backward_l1_naive(loss.projection, fwd.cache, p, Layout::Features2d);
  const auto simple = bn_backward_l1_simplified(loss.projection, fwd.cache, p, Layout::Features2d);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_NEAR(naive.d_input[i], numeric[i], 1e-8);
    EXPECT_NEAR(simple.d_input[i], numeric[i], 1e-8);
  }
}

TEST(BackwardL1Test, GammaGradientIsSumOfUpstreamTimesXHat) {
  Rng rng(42);
  const Tensor x = tie_free_batch(rng, {9, 2});
  const Tensor dy = normal_sample(rng, x.shape(), 0, 1);
  const BnParams p = random_params(rng, 2, BnMode::L1);
  const auto fwd = bn_forward_train(x, p, Layout::Features2d);
  const auto g = bn_backward_l1_naive(dy, fwd.cache, p, Layout::Features2d);
  const Tensor expected = reduce_sum(mul(dy, fwd.cache.x_hat), {0});
  for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(g.d_gamma[c], expected[c], 1e-12);
}

TEST(BackwardL1Test, SimplifiedAgreesWithNaive) {
  Rng rng(43);
  for (BnMode mode : {BnMode::L1, BnMode::L1Compensated}) {
    const Tensor x = tie_free_batch(rng, {16, 8});
    const Tensor dy = normal_sample(rng, x.shape(), 0, 1);
    const BnParams p = random_params(rng, 8, mode);
    const auto fwd = bn_forward_train(x, p, Layout::Features2d);
    EXPECT_LT(max_rel_diff(bn_backward_l1_naive(dy, fwd.cache, p, Layout::Features2d).d_input,
                           bn_backward_l1_simplified(dy, fwd.cache, p, Layout::Features2d).d_input),
              1e-10);
  }
}

TEST(BackwardL1Test, ConstantUpstreamIsAnnihilated) {
  Rng rng(44);
  const Tensor x = tie_free_batch(rng, {12, 3});
  BnParams p = random_params(rng, 3, BnMode::L1);
  const Tensor per_feature = Tensor::from_vector({0.7, -2.0, 1.3});
  const Tensor dy = expand(per_feature, x.shape(), {0});
  const auto g = bn_backward_l1_simplified(dy, bn_forward_train(x, p, Layout::Features2d).cache, p,
                                           Layout::Features2d);
  for (double v : g.d_input.data()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(BackwardL1Test, SignOfXHatMatchesCenteredSign) {
  Rng rng(45);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor x = normal_sample(rng, {10, 4}, 0, 1);
    const auto fwd = bn_forward_train(x, BnParams::make(4, BnMode::L1), Layout::Features2d);
    const Tensor centered = sub(x, expand(fwd.cache.mu_b, x.shape(), {0}));
    EXPECT_EQ(sign(fwd.cache.x_hat), sign(centered));
  }
}

TEST(BackwardL1Test, BothVariantsMatchFiniteDifferences) {
  Rng rng(46);
  for (BnMode mode : {BnMode::L1, BnMode::L1Compensated}) {
    for (bool affine : {true, false}) {
      const Tensor x = tie_free_batch(rng, {2, 3, 2, 2});
      const BnParams p = random_params(rng, 2, mode, affine);
      const ProbeLoss loss = ProbeLoss::random(rng, x.shape());
      const auto fwd = bn_forward_train(x, p, Layout::Channels4d);
      const Tensor numeric = numeric_input_grad(x, p, Layout::Channels4d, loss);
      EXPECT_LT(max_rel_diff(bn_backward_l1_naive(loss.projection, fwd.cache, p, Layout::Channels4d).d_input,
                             numeric),
                1e-5);
      const auto g = bn_backward_l1_simplified(loss.projection, fwd.cache, p, Layout::Channels4d);
      EXPECT_LT(max_rel_diff(g.d_input, numeric), 1e-5);
      if (!affine) {
        for (double v : g.d_gamma.data()) EXPECT_EQ(v, 0.0);
      }
    }
  }
}

// The published form of the x_i line subtracts the mean sign inside the
// sigma term while dl/dmu_B also carries it, counting the mu_B -> sigma_B path
// twice. Written verbatim here to show the finite-difference oracle rejects it
// whenever the signs do not cancel.
Tensor verbatim_published_l1_input_grad(const Tensor& dy, const BnCache& cache, const BnParams& p) {
  const std::size_t m = dy.shape()[0], d = dy.shape()[1];
  Tensor dx(dy.shape());
  for (std::size_t c = 0; c < d; ++c) {
    const double n = cache.normalizer[c];
    double d_sigma = 0, d_mu = 0, sgn_sum = 0;
    for (std::size_t i = 0; i < m; ++i) {
      const double g = dy[i * d + c] * p.gamma[c];
      const double centered = cache.x_hat[i * d + c] * n;
      d_sigma += g * centered * (-1.0 / (n * n));
      sgn_sum += sign(centered);
    }
    for (std::size_t i = 0; i < m; ++i) d_mu += dy[i * d + c] * p.gamma[c] * (-1.0 / n);
    d_mu += d_sigma * (-1.0 / m) * sgn_sum;
    for (std::size_t i = 0; i < m; ++i) {
      const double s = sign(cache.x_hat[i * d + c]);
      dx[i * d + c] = d_sigma / m * (s - sgn_sum / m) + dy[i * d + c] * p.gamma[c] / n + d_mu / m;
    }
  }
  return dx;
}

TEST(BackwardL1Test, VerbatimPublishedChainRuleDoubleCountsMeanPath) {
  Rng rng(47);
  const Tensor x = tie_free_batch(rng, {7, 2});  // odd batch: the signs cannot cancel
  const BnParams p = random_params(rng, 2, BnMode::L1);
  const ProbeLoss loss = ProbeLoss::random(rng, x.shape());
  const auto fwd = bn_forward_train(x, p, Layout::Features2d);
  const Tensor numeric = numeric_input_grad(x, p, Layout::Features2d, loss);
  EXPECT_GT(max_rel_diff(verbatim_published_l1_input_grad(loss.projection, fwd.cache, p), numeric), 1e-3);
  EXPECT_LT(max_rel_diff(bn_backward_l1_naive(loss.projection, fwd.cache, p, Layout::Features2d).d_input, numeric),
            1e-5);
}

TEST(RunningStatsTest, Examples) {
  BnState s = BnState::make(1, 0.9);
  s.running_mu[0] = 0.0;
  const BnState next = update_running_stats(s, Tensor::from_vector({1.0}), Tensor::from_vector({1.0}));
  EXPECT_NEAR(next.running_mu[0], 0.1, 1e-15);

  BnState frozen = BnState::make(2, 1.0);
  const BnState same = update_running_stats(frozen, Tensor::from_vector({5, 6}), Tensor::from_vector({7, 8}));
  EXPECT_EQ(same.running_mu, frozen.running_mu);
  EXPECT_EQ(same.running_sigma, frozen.running_sigma);

  EXPECT_THROW(update_running_stats(s, Tensor::from_vector({1, 2}), Tensor::from_vector({1})), ShapeError);
  EXPECT_THROW(update_running_stats(BnState{}, Tensor::from_vector({1}), Tensor::from_vector({1})), StateError);
}

TEST(RunningStatsTest, GeometricConvergence) {
  const double alpha = 0.8;
  BnState s = BnState::make(1, alpha);
  const double target_mu = 3.0, target_sigma = 0.25;
  double gap0 = std::fabs(s.running_mu[0] - target_mu);
  for (int k = 1; k <= 30; ++k) {
    s = update_running_stats(s, Tensor::from_vector({target_mu}), Tensor::from_vector({target_sigma}));
    EXPECT_NEAR(std::fabs(s.running_mu[0] - target_mu), gap0 * std::pow(alpha, k), 1e-12);
    EXPECT_GE(s.running_sigma[0], 0.0);
  }
}

TEST(InferenceTest, IdentityWithUnitStatistics) {
  Rng rng(51);
  const Tensor x = normal_sample(rng, {5, 3}, 0, 1);
  BnParams p = BnParams::make(3, BnMode::L1, true, 1.0, 1e-14);
  const BnState s = BnState::make(3);
  EXPECT_LT(max_rel_diff(bn_forward_infer(x, p, s, Layout::Features2d), x), 1e-12);
  p.mode = BnMode::L2;
  EXPECT_LT(max_rel_diff(bn_forward_infer(x, p, s, Layout::Features2d), x), 1e-12);
}

TEST(InferenceTest, FusedMatchesUnfused) {
  Rng rng(52);
  for (BnMode mode : {BnMode::L2, BnMode::L1, BnMode::L1Compensated}) {
    const Tensor x = normal_sample(rng, {20, 4}, 1, 2);
    const BnParams p = random_params(rng, 4, mode);
    BnState s = BnState::make(4);
    s.running_mu = normal_sample(rng, {4}, 0, 1);
    s.running_sigma = uniform_sample(rng, {4}, 0.5, 2);
    const Tensor fused = bn_forward_infer(x, p, s, Layout::Features2d);
    for (std::size_t i = 0; i < 20; ++i) {
      for (std::size_t c = 0; c < 4; ++c) {
        const double sigma = s.running_sigma[c];
        const double denom = mode == BnMode::L2 ? std::sqrt(sigma * sigma + p.epsilon) : sigma + p.epsilon;
        const double unfused = (x[i * 4 + c] - s.running_mu[c]) / denom * p.gamma[c] + p.beta[c];
        EXPECT_LE(relative_error(fused[i * 4 + c], unfused), 1e-12);
      }
    }
  }
}

TEST(InferenceTest, SingleSampleMatchesBatched) {
  Rng rng(53);
  const Tensor x = normal_sample(rng, {6, 3}, 0, 1);
  const BnParams p = random_params(rng, 3, BnMode::L1);
  BnState s = BnState::make(3);
  s.running_mu = normal_sample(rng, {3}, 0, 1);
  const Tensor batched = bn_forward_infer(x, p, s, Layout::Features2d);
  for (std::size_t i = 0; i < 6; ++i) {
    const Tensor row({1, 3}, {x[i * 3], x[i * 3 + 1], x[i * 3 + 2]});
    const Tensor single = bn_forward_infer(row, p, s, Layout::Features2d);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(single[c], batched[i * 3 + c]);
  }
}

TEST(InferenceTest, RequiresInitializedState) {
  EXPECT_THROW(bn_forward_infer(Tensor({2, 2}), BnParams::make(2, BnMode::L2), BnState{}, Layout::Features2d),
               StateError);
}

TEST(InferenceTest, RunningStatisticsTrackStationaryStream) {
  Rng rng(54);
  for (BnMode mode : {BnMode::L2, BnMode::L1, BnMode::L1Compensated}) {
    const BnParams p = BnParams::make(3, mode, false);
    BnState s = BnState::make(3, 0.9);
    const Tensor mu = Tensor::from_vector({-1.0, 0.0, 4.0});
    auto draw = [&](std::size_t m) {
      Tensor x = normal_sample(rng, {m, 3}, 0, 1);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t c = 0; c < 3; ++c) x[i * 3 + c] = mu[c] + (c + 1) * x[i * 3 + c];
      return x;
    };
    for (int step = 0; step < 200; ++step) {
      const auto fwd = bn_forward_train(draw(256), p, Layout::Features2d);
      s = update_running_stats(s, fwd.cache.mu_b, fwd.cache.sigma_b);
    }
    const Tensor fresh = draw(20000);
    const Tensor train_out = bn_forward_train(fresh, p, Layout::Features2d).y;
    const Tensor infer_out = bn_forward_infer(fresh, p, s, Layout::Features2d);
    for (std::size_t c = 0; c < 3; ++c) {
      double ss = 0;
      for (std::size_t i = 0; i < 20000; ++i) {
        const double diff = infer_out[i * 3 + c] - train_out[i * 3 + c];
        ss += diff * diff;
      }
      EXPECT_LT(std::sqrt(ss / 20000) / column_std(train_out, c), 0.05) << to_string(mode);
    }
  }
}

TEST(ModeTest, ParseAndPrint) {
  for (BnMode mode : {BnMode::L2, BnMode::L1, BnMode::L1Compensated}) EXPECT_EQ(parse_mode(to_string(mode)), mode);
  EXPECT_THROW(parse_mode("l3"), Error);
  EXPECT_EQ(default_l1_mode(true), BnMode::L1);
  EXPECT_EQ(default_l1_mode(false), BnMode::L1Compensated);
}

}  // namespace
}  // namespace l1bn
