#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "mkqr/linqr.hpp"
#include "mkqr/rng.hpp"

using namespace mkqr;

namespace {

// Minimum check loss over every fit interpolating d of the n observations.
// For a full-rank design one of these vertices is a global minimiser.
double vertex_oracle(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double tau)
{
  const Eigen::Index n = X.rows();
  const Eigen::Index d = X.cols();
  double best = std::numeric_limits<double>::infinity();
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(d));
  auto visit = [&](auto&& self, Eigen::Index start, Eigen::Index depth) -> void {
    if (depth == d) {
      Eigen::MatrixXd A(d, d);
      Eigen::VectorXd b(d);
      for (Eigen::Index j = 0; j < d; ++j) {
        A.row(j) = X.row(idx[static_cast<std::size_t>(j)]);
        b[j] = y[idx[static_cast<std::size_t>(j)]];
      }
      Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
      if (lu.rank() < d)
        return;
      const Eigen::VectorXd r = y - X * lu.solve(b);
      best = std::min(best, mean_check_loss(r, tau));
      return;
    }
    for (Eigen::Index i = start; i < n; ++i) {
      idx[static_cast<std::size_t>(depth)] = i;
      self(self, i + 1, depth + 1);
    }
  };
  visit(visit, 0, 0);
  return best;
}

void expect_subgradient_counts(const QrSolution& s, double tau, Eigen::Index d)
{
  const double n = static_cast<double>(s.residuals.size());
  const double neg = (s.residuals.array() < 0.0).count();
  const double nonpos = (s.residuals.array() <= 0.0).count();
  EXPECT_LE(neg, n * tau + d);
  EXPECT_GE(nonpos, n * tau - d);
}

Eigen::MatrixXd with_intercept(const Eigen::VectorXd& x)
{
  Eigen::MatrixXd X(x.size(), 2);
  X.col(0).setOnes();
  X.col(1) = x;
  return X;
}

} // namespace

TEST(CheckLoss, Examples)
{
  EXPECT_DOUBLE_EQ(check_loss(1.0, 0.5), 0.5);
  EXPECT_NEAR(check_loss(-2.0, 0.3), 1.4, 1e-15);
  EXPECT_DOUBLE_EQ(check_loss(0.0, 0.7), 0.0);
}

TEST(CheckLoss, ConvexMidpoint)
{
  Rng r(1);
  for (int i = 0; i < 5000; ++i) {
    const double a = r.uniform(-10, 10), b = r.uniform(-10, 10), t = r.uniform();
    EXPECT_LE(check_loss(0.5 * (a + b), t), 0.5 * (check_loss(a, t) + check_loss(b, t)) + 1e-12);
    EXPECT_GE(check_loss(a, t), 0.0);
  }
}

TEST(Psi, Examples)
{
  EXPECT_DOUBLE_EQ(psi(1.0, 0.5), 0.5);
  EXPECT_NEAR(psi(0.0, 0.3), -0.7, 1e-15);
  EXPECT_NEAR(psi(-3.0, 0.9), -0.1, 1e-15);
}

TEST(QuantileLevel, RejectsOutOfRange)
{
  EXPECT_THROW(QuantileLevel(0.0), UsageError);
  EXPECT_THROW(QuantileLevel(1.0), UsageError);
  EXPECT_THROW(QuantileLevel(-0.2), UsageError);
  EXPECT_THROW(QuantileLevel(std::nan("")), UsageError);
  EXPECT_DOUBLE_EQ(QuantileLevel(0.25).value(), 0.25);
}

TEST(LinearQr, MedianOfThree)
{
  const Eigen::MatrixXd X = Eigen::MatrixXd::Ones(3, 1);
  const Eigen::VectorXd y = (Eigen::VectorXd(3) << 1, 2, 9).finished();
  const auto s = fit_linear_qr(X, y, QuantileLevel(0.5));
  EXPECT_NEAR(s.coefficients[0], 2.0, 1e-8);
  EXPECT_TRUE(s.converged);
}

TEST(LinearQr, FlatOptimumQuarterQuantile)
{
  const Eigen::MatrixXd X = Eigen::MatrixXd::Ones(4, 1);
  const Eigen::VectorXd y = (Eigen::VectorXd(4) << 1, 2, 3, 4).finished();
  const auto s = fit_linear_qr(X, y, QuantileLevel(0.25));
  EXPECT_GE(s.coefficients[0], 1.0 - 1e-8);
  EXPECT_LE(s.coefficients[0], 2.0 + 1e-8);
  // every b in [1, 2] attains the same loss as b = 1
  const Eigen::VectorXd r1 = y.array() - 1.0;
  EXPECT_NEAR(s.objective, mean_check_loss(r1, 0.25), 1e-10);
}

TEST(LinearQr, InterpolatingFit)
{
  const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(20, -3, 4);
  for (double t : { 0.1, 0.5, 0.83 }) {
    const auto s = fit_linear_qr(with_intercept(x), 2.0 * x, QuantileLevel(t));
    EXPECT_NEAR(s.coefficients[0], 0.0, 1e-8);
    EXPECT_NEAR(s.coefficients[1], 2.0, 1e-8);
    EXPECT_NEAR(s.objective, 0.0, 1e-10);
  }
}

TEST(LinearQr, MatchesVertexEnumeration)
{
  Rng r(2024);
  for (int rep = 0; rep < 200; ++rep) {
    const int n = 5 + static_cast<int>(r.index(8)); // 5..12
    const int d = 1 + static_cast<int>(r.index(2)); // 1..2
    const double tau = 0.05 + 0.9 * r.uniform();
    Eigen::MatrixXd X(n, d);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
      X(i, 0) = 1.0;
      if (d == 2)
        X(i, 1) = r.uniform(-2, 2);
      y[i] = 0.5 + (d == 2 ? 1.5 * X(i, 1) : 0.0) + r.student_t(3);
    }
    const auto s = fit_linear_qr(X, y, QuantileLevel(tau));
    const double oracle = vertex_oracle(X, y, tau);
    EXPECT_LE(s.objective, oracle + 1e-8) << "rep " << rep;
    EXPECT_NEAR(s.objective, mean_check_loss(y - X * s.coefficients, tau), 1e-12);
    expect_subgradient_counts(s, tau, d);
  }
}

TEST(LinearQr, SubgradientCountsLarge)
{
  Rng r(3);
  const int n = 2000;
  Eigen::MatrixXd X(n, 3);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = r.uniform(-5, 5);
    X(i, 2) = r.normal();
    y[i] = 1.0 + X(i, 1) - 0.5 * X(i, 2) + (1.0 + 0.2 * X(i, 1)) * r.normal();
  }
  for (double t : { 0.1, 0.3, 0.5, 0.9 }) {
    const auto s = fit_linear_qr(X, y, QuantileLevel(t));
    ASSERT_TRUE(s.converged);
    expect_subgradient_counts(s, t, 3);
  }
}

TEST(LinearQr, Equivariance)
{
  Rng r(8);
  const int n = 300;
  Eigen::MatrixXd X(n, 2);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = r.uniform(0, 10);
    y[i] = 2.0 - 0.3 * X(i, 1) + r.normal();
  }
  const QuantileLevel tau(0.35);
  const auto base = fit_linear_qr(X, y, tau);

  const double c = 3.7;
  const auto scaled = fit_linear_qr(X, c * y, tau);
  EXPECT_NEAR((scaled.coefficients - c * base.coefficients).cwiseAbs().maxCoeff(), 0.0, 1e-6);
  EXPECT_NEAR(scaled.objective, c * base.objective, 1e-6);

  const double a = -1.25;
  const auto shifted = fit_linear_qr(X, y + a * X.col(1), tau);
  EXPECT_NEAR(shifted.coefficients[1], base.coefficients[1] + a, 1e-6);
  EXPECT_NEAR(shifted.coefficients[0], base.coefficients[0], 1e-6);
}

TEST(LinearQr, RankDeficientDesign)
{
  Eigen::MatrixXd X(10, 2);
  X.col(0).setOnes();
  X.col(1).setConstant(2.0);
  const Eigen::VectorXd y = Eigen::VectorXd::LinSpaced(10, 0, 1);
  EXPECT_THROW(fit_linear_qr(X, y, QuantileLevel(0.5)), RankError);
}

TEST(LinearQr, ConvergenceErrorCarriesIterate)
{
  Rng r(4);
  const int n = 200;
  Eigen::MatrixXd X(n, 2);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = r.normal();
    y[i] = r.normal();
  }
  QrSettings s;
  s.max_iterations = 1;
  s.polish = false;
  try {
    fit_linear_qr(X, y, QuantileLevel(0.5), s);
    FAIL() << "expected ConvergenceError";
  } catch (const ConvergenceError& e) {
    EXPECT_EQ(e.last_iterate().size(), 2);
  }
}

TEST(Bandwidth, PinnedClosedForms)
{
  // reference values evaluated independently from the published formulas
  EXPECT_NEAR(bandwidth(QuantileLevel(0.5), 500, BandwidthRule::bofinger), 0.18688590782791506, 1e-12);
  EXPECT_NEAR(bandwidth(QuantileLevel(0.1), 500, BandwidthRule::bofinger), 0.05413731949336715, 1e-12);
  EXPECT_NEAR(bandwidth(QuantileLevel(0.1), 500, BandwidthRule::hall_sheather), 0.04359259117851062, 1e-12);
  EXPECT_NEAR(bandwidth(QuantileLevel(0.5), 500, BandwidthRule::hall_sheather), 0.1224087668331269, 1e-12);
}

TEST(Bandwidth, DecreasingInN)
{
  for (auto rule : { BandwidthRule::hall_sheather, BandwidthRule::bofinger })
    EXPECT_GT(bandwidth(QuantileLevel(0.5), 100, rule), bandwidth(QuantileLevel(0.5), 10000, rule));
  EXPECT_THROW(parse_bandwidth_rule("silverman"), UsageError);
  EXPECT_EQ(parse_bandwidth_rule("bofinger"), BandwidthRule::bofinger);
}

TEST(DensityWeights, StandardNormalAtMedian)
{
  Rng r(99);
  const int n = 2000;
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i)
    y[i] = r.normal();
  const auto w = density_weights(Eigen::MatrixXd::Ones(n, 1), y, QuantileLevel(0.5));
  EXPECT_EQ(w.values.size(), n);
  EXPECT_TRUE((w.values.array() >= 0.0).all());
  EXPECT_NEAR(w.values.mean(), 0.3989422804014327, 0.25 * 0.3989422804014327);
}

TEST(DensityWeights, DegenerateExactFit)
{
  const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(50, 0, 1);
  const Eigen::MatrixXd X = with_intercept(x);
  const auto w = density_weights(X, (x.array() + 1.0).matrix(), QuantileLevel(0.5));
  EXPECT_EQ(w.clamped, 50u);
  EXPECT_TRUE((w.values.array() == 0.0).all());

  DensitySettings strict;
  strict.clamp_negative = false;
  EXPECT_THROW(density_weights(X, (x.array() + 1.0).matrix(), QuantileLevel(0.5), strict), BandwidthError);
}

TEST(DensityWeights, BandwidthOutsideUnitInterval)
{
  Rng r(5);
  const int n = 30;
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i)
    y[i] = r.normal();
  DensitySettings strict;
  strict.shrink_bandwidth = false;
  EXPECT_THROW(density_weights(Eigen::MatrixXd::Ones(n, 1), y, QuantileLevel(0.02), strict), BandwidthError);
  const auto w = density_weights(Eigen::MatrixXd::Ones(n, 1), y, QuantileLevel(0.02));
  EXPECT_NEAR(w.bandwidth, 0.01, 1e-15);
}
