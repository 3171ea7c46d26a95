#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "sheet/losses.hpp"

using namespace sheet;

TEST(L1, Values) {
  EXPECT_EQ(l1_loss(4.0, 4.0), 0.0);
  EXPECT_EQ(l1_loss(4.0, 3.5), 0.5);
}

TEST(L1, Symmetric) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> d(-10, 10);
  for (int i = 0; i < 100; ++i) {
    const double a = d(rng), b = d(rng);
    EXPECT_EQ(l1_loss(a, b), l1_loss(b, a));
  }
}

TEST(ClippedL1, Margin) {
  EXPECT_EQ(clipped_l1_loss(3.0, 3.2, 0.25), 0.0);
  EXPECT_EQ(clipped_l1_grad(3.0, 3.2, 0.25), 0.0);
  EXPECT_EQ(clipped_l1_grad(3.0, 2.8, 0.25), 0.0);
  EXPECT_DOUBLE_EQ(clipped_l1_loss(3.0, 3.5, 0.25), 0.5);
}

TEST(ClippedL1, ZeroTauIsL1) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> d(1, 5);
  for (int i = 0; i < 100; ++i) {
    const double y = d(rng), p = d(rng);
    EXPECT_EQ(clipped_l1_loss(y, p, 0.0), l1_loss(y, p));
    EXPECT_EQ(clipped_l1_grad(y, p, 0.0), l1_grad(y, p));
  }
}

TEST(ClippedL1, FiniteDifferenceOutsideMargin) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> d(1, 5);
  const double h = 1e-6;
  int checked = 0;
  for (int i = 0; i < 200; ++i) {
    const double y = d(rng), p = d(rng), tau = 0.25;
    if (std::abs(y - p) < tau + 1e-3) continue;
    const double fd = (clipped_l1_loss(y, p + h, tau) - clipped_l1_loss(y, p - h, tau)) / (2 * h);
    const double g = clipped_l1_grad(y, p, tau);
    EXPECT_LE(std::abs(fd - g) / std::abs(g), 1e-3);
    ++checked;
  }
  EXPECT_GT(checked, 100);
}

TEST(Contrastive, Values) {
  const std::vector<std::pair<ScorePair, ScorePair>> perfect = {{{3.0, 2.5}, {4.0, 3.5}}};
  EXPECT_EQ(contrastive_loss(perfect, 0.1), 0.0);
  const std::vector<std::pair<ScorePair, ScorePair>> off = {{{3.0, 3.3}, {4.0, 4.0}}};
  EXPECT_NEAR(contrastive_loss(off, 0.1), 0.2, 1e-12);
  EXPECT_EQ(contrastive_loss({}, 0.1), 0.0);
}

TEST(Contrastive, AllPairsBruteForce) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const auto pred = oracle::random_vector(rng, 8, 1, 5), y = oracle::random_vector(rng, 8, 1, 5);
    double sum = 0;
    int n = 0;
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j) {
        if (j <= i) continue;
        sum += std::max(0.0, std::abs((pred[i] - pred[j]) - (y[i] - y[j])) - 0.1);
        ++n;
      }
    const auto pairs = all_pairs(pred, y);
    ASSERT_EQ(pairs.size(), 28u);
    EXPECT_NEAR(contrastive_loss(pairs, 0.1), sum / n, 1e-9);
  }
}

TEST(Contrastive, SwapAndShiftInvariant) {
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> d(1, 5), c(-3, 3);
  for (int i = 0; i < 100; ++i) {
    ScorePair a{d(rng), d(rng)}, b{d(rng), d(rng)};
    const double k = c(rng);
    const std::vector<std::pair<ScorePair, ScorePair>> p1 = {{a, b}}, p2 = {{b, a}},
                                                       p3 = {{{a.y + k, a.y_hat + k}, {b.y + k, b.y_hat + k}}};
    EXPECT_NEAR(contrastive_loss(p1, 0.1), contrastive_loss(p2, 0.1), 1e-12);
    EXPECT_NEAR(contrastive_loss(p1, 0.1), contrastive_loss(p3, 0.1), 1e-12);
  }
}

TEST(TotalLoss, PerfectPredictionsZero) {
  LossConfig cfg;
  cfg.use_clipped = false;
  const std::vector<double> y = {1, 2, 3, 4};
  const auto out = total_loss(y, y, cfg);
  EXPECT_EQ(out.total, 0.0);
  cfg.use_contrastive = true;
  EXPECT_EQ(total_loss(y, y, cfg).total, 0.0);
}

TEST(TotalLoss, ZeroWeightIsPrimaryOnly) {
  LossConfig cfg;
  cfg.use_contrastive = true;
  cfg.contrastive_weight = 0.0;
  std::mt19937_64 rng(15);
  const auto p = oracle::random_vector(rng, 16, 1, 5), y = oracle::random_vector(rng, 16, 1, 5);
  const auto out = total_loss(p, y, cfg);
  EXPECT_EQ(out.total, out.primary);
}

TEST(TotalLoss, Composition) {
  std::mt19937_64 rng(16);
  for (int trial = 0; trial < 50; ++trial) {
    LossConfig cfg;
    cfg.use_clipped = trial % 2;
    cfg.use_contrastive = true;
    const auto p = oracle::random_vector(rng, 16, 1, 5), y = oracle::random_vector(rng, 16, 1, 5);
    double primary = 0;
    for (std::size_t i = 0; i < p.size(); ++i)
      primary += cfg.use_clipped ? clipped_l1_loss(y[i], p[i], cfg.tau) : l1_loss(y[i], p[i]);
    primary /= static_cast<double>(p.size());
    const double expected = primary + cfg.contrastive_weight * contrastive_loss(all_pairs(p, y), cfg.alpha);
    const auto out = total_loss(p, y, cfg);
    EXPECT_NEAR(out.total, expected, 1e-9);
    EXPECT_NEAR(out.primary, primary, 1e-12);
    EXPECT_GE(out.total, 0.0);
  }
}

TEST(TotalLoss, GradientFiniteDifference) {
  std::mt19937_64 rng(17);
  LossConfig cfg;
  cfg.use_contrastive = true;
  const double h = 1e-7;
  for (int trial = 0; trial < 20; ++trial) {
    auto p = oracle::random_vector(rng, 16, 1, 5);
    const auto y = oracle::random_vector(rng, 16, 1, 5);
    const auto out = total_loss(p, y, cfg);
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (std::abs(std::abs(y[i] - p[i]) - cfg.tau) < 1e-4) continue;
      const double keep = p[i];
      p[i] = keep + h;
      const double up = total_loss(p, y, cfg).total;
      p[i] = keep - h;
      const double down = total_loss(p, y, cfg).total;
      p[i] = keep;
      const double fd = (up - down) / (2 * h);
      EXPECT_NEAR(out.grad[i], fd, 1e-3 * std::max(1.0, std::abs(fd))) << "index " << i;
    }
  }
}

TEST(TotalLoss, LengthMismatch) {
  EXPECT_THROW(total_loss(std::vector<double>{1, 2}, std::vector<double>{1}, LossConfig{}), std::invalid_argument);
}
