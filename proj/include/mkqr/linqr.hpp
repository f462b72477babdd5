#pragma once

// Linear quantile regression: check-loss minimisation on a dense design and
// the difference-quotient density estimates used by the inference routines.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "stats.hpp"

namespace mkqr {

//! Quantile level tau, strictly inside (0, 1).
class QuantileLevel
{
public:
  explicit QuantileLevel(double tau)
    : tau_(tau)
  {
    if (!(tau > 0.0 && tau < 1.0))
      throw UsageError("quantile level must lie in (0, 1), got " + std::to_string(tau));
  }

  double value() const noexcept { return tau_; }
  operator double() const noexcept { return tau_; }

private:
  double tau_;
};

struct DesignMatrix
{
  Eigen::MatrixXd values;
  std::vector<std::string> labels;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }

  void validate() const
  {
    if (!labels.empty() && static_cast<Eigen::Index>(labels.size()) != values.cols())
      throw UsageError("design has " + std::to_string(values.cols()) + " columns but " +
                       std::to_string(labels.size()) + " labels");
    if (values.rows() < values.cols())
      throw UsageError("design has fewer rows than columns");
    if (!values.allFinite())
      throw UsageError("design contains non-finite entries");
  }
};

struct QrSettings
{
  double gap_tolerance = 1e-8; //!< relative duality gap
  int max_iterations = 200;
  double rank_threshold = 1e-10; //!< relative to the largest pivot
  double step_fraction = 0.99995;
  bool polish = true; //!< snap the interior solution to an optimal vertex
};

struct QrSolution
{
  Eigen::VectorXd coefficients;
  Eigen::VectorXd residuals;
  double objective = 0.0; //!< mean check loss of the residuals
  int iterations = 0;
  bool converged = false;
};

//! rho_tau(u) = u (tau - 1[u < 0])
inline double check_loss(double u, double tau)
{
  return u * (tau - (u < 0.0 ? 1.0 : 0.0));
}

//! psi_tau(u) = tau - 1[u <= 0]
inline double psi(double u, double tau)
{
  return tau - (u <= 0.0 ? 1.0 : 0.0);
}

inline double mean_check_loss(const Eigen::VectorXd& residuals, double tau)
{
  double total = 0.0;
  for (Eigen::Index i = 0; i < residuals.size(); ++i)
    total += check_loss(residuals[i], tau);
  return residuals.size() ? total / static_cast<double>(residuals.size()) : 0.0;
}

namespace detail {

inline void require_full_rank(const Eigen::MatrixXd& X, double threshold)
{
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  qr.setThreshold(threshold);
  if (qr.rank() < X.cols())
    throw RankError("design of " + std::to_string(X.cols()) + " columns has numerical rank " +
                    std::to_string(qr.rank()));
}

// Exact interpolation through the d observations with the smallest absolute
// residuals. Returns false when that basis is singular.
inline bool vertex_through_smallest(const Eigen::MatrixXd& X,
                                    const Eigen::VectorXd& y,
                                    const Eigen::VectorXd& residuals,
                                    std::vector<Eigen::Index>& basis,
                                    Eigen::VectorXd& beta)
{
  const Eigen::Index n = X.rows();
  const Eigen::Index d = X.cols();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + d, order.end(), [&](auto a, auto b) {
    const double ra = std::abs(residuals[a]);
    const double rb = std::abs(residuals[b]);
    return ra < rb || (ra == rb && a < b);
  });
  basis.assign(order.begin(), order.begin() + d);
  std::sort(basis.begin(), basis.end());

  Eigen::MatrixXd Xh(d, d);
  Eigen::VectorXd yh(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    Xh.row(i) = X.row(basis[static_cast<std::size_t>(i)]);
    yh[i] = y[basis[static_cast<std::size_t>(i)]];
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(Xh);
  lu.setThreshold(1e-12);
  if (!lu.isInvertible())
    return false;
  beta = lu.solve(yh);
  return beta.allFinite();
}

// Subgradient certificate for a vertex solution: the basic observations
// must carry dual weights in [tau - 1, tau].
inline bool vertex_is_optimal(const Eigen::MatrixXd& X,
                              const Eigen::VectorXd& residuals,
                              const std::vector<Eigen::Index>& basis,
                              double tau)
{
  const Eigen::Index d = X.cols();
  std::vector<char> in_basis(static_cast<std::size_t>(X.rows()), 0);
  for (auto i : basis)
    in_basis[static_cast<std::size_t>(i)] = 1;

  Eigen::VectorXd g = Eigen::VectorXd::Zero(d);
  for (Eigen::Index t = 0; t < X.rows(); ++t) {
    if (in_basis[static_cast<std::size_t>(t)])
      continue;
    g += (tau - (residuals[t] < 0.0 ? 1.0 : 0.0)) * X.row(t).transpose();
  }
  Eigen::MatrixXd Xh(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    Xh.row(i) = X.row(basis[static_cast<std::size_t>(i)]);
  const Eigen::VectorXd a = Xh.transpose().fullPivLu().solve(-g);
  constexpr double slack = 1e-9;
  return a.allFinite() && (a.array() >= tau - 1.0 - slack).all() && (a.array() <= tau + slack).all();
}

} // namespace detail

//! Minimise sum rho_tau(y - X b) by a Frisch-Newton interior point method
//! (Mehrotra predictor-corrector on the bounded dual), then snap to an
//! optimal vertex when one can be certified.
//!
//! Throws RankError for a rank-deficient design and ConvergenceError (with
//! the last primal iterate) when neither the duality gap nor the vertex
//! certificate is reached within `max_iterations`.
inline QrSolution fit_linear_qr(const Eigen::MatrixXd& X,
                                const Eigen::VectorXd& y,
                                QuantileLevel tau_level,
                                const QrSettings& settings = {})
{
  const double tau = tau_level.value();
  const Eigen::Index n = X.rows();
  const Eigen::Index d = X.cols();
  if (y.size() != n)
    throw UsageError("response length " + std::to_string(y.size()) + " does not match design rows " +
                     std::to_string(n));
  if (d == 0 || n < d)
    throw UsageError("design must have at least as many rows as columns");
  if (!X.allFinite() || !y.allFinite())
    throw UsageError("non-finite values in quantile regression input");
  detail::require_full_rank(X, settings.rank_threshold);

  // Dual problem: max y'a s.t. X'a = (1 - tau) X'1, 0 <= a <= 1, solved as
  // min c'a with c = -y. The coefficients are minus the equality multipliers.
  const Eigen::VectorXd c = -y;
  const Eigen::VectorXd b = (1.0 - tau) * X.colwise().sum().transpose();
  Eigen::VectorXd x = Eigen::VectorXd::Constant(n, 1.0 - tau);
  Eigen::VectorXd s = Eigen::VectorXd::Constant(n, tau);

  Eigen::MatrixXd ada = X.transpose() * X;
  Eigen::LLT<Eigen::MatrixXd> llt(ada);
  Eigen::VectorXd lambda = llt.solve(X.transpose() * c);

  const double scale = std::max(1.0, y.cwiseAbs().sum());
  const double eps_init = 1e-6 * std::max(1.0, scale / static_cast<double>(n));
  Eigen::VectorXd z(n), w(n);
  {
    const Eigen::VectorXd r = c - X * lambda;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double pos = std::max(r[i], 0.0);
      const double neg = std::max(-r[i], 0.0);
      if (std::abs(r[i]) < eps_init) {
        z[i] = pos + eps_init;
        w[i] = neg + eps_init;
      } else {
        z[i] = pos;
        w[i] = neg;
      }
    }
  }

  double gap = z.dot(x) + w.dot(s);
  const double target = settings.gap_tolerance * scale;
  int iter = 0;
  Eigen::VectorXd dinv(n), dx(n), ds(n), dz(n), dw(n), dr(n), dvec(n);
  Eigen::VectorXd dlambda(d), rhs(d);

  while (gap > target && iter < settings.max_iterations) {
    ++iter;
    dvec = ((z.array() / x.array()) + (w.array() / s.array())).inverse();
    Eigen::VectorXd zw = z - w;
    dz = dvec.cwiseProduct(zw);
    dlambda = b - X.transpose() * x + X.transpose() * dz;
    rhs = dlambda;
    ada.noalias() = X.transpose() * (dvec.asDiagonal() * X);
    llt.compute(ada);
    if (llt.info() != Eigen::Success)
      break;
    dlambda = llt.solve(dlambda);

    Eigen::VectorXd proj = X * dlambda - zw;
    dx = dvec.cwiseProduct(proj);
    ds = -dx;
    dz = -z.cwiseProduct(dx.cwiseQuotient(x) + Eigen::VectorXd::Ones(n));
    dw = -w.cwiseProduct(ds.cwiseQuotient(s) + Eigen::VectorXd::Ones(n));

    auto max_steps = [&](double& deltap, double& deltad) {
      deltap = std::numeric_limits<double>::max();
      deltad = std::numeric_limits<double>::max();
      for (Eigen::Index i = 0; i < n; ++i) {
        if (dx[i] < 0.0)
          deltap = std::min(deltap, -x[i] / dx[i]);
        if (ds[i] < 0.0)
          deltap = std::min(deltap, -s[i] / ds[i]);
        if (dz[i] < 0.0)
          deltad = std::min(deltad, -z[i] / dz[i]);
        if (dw[i] < 0.0)
          deltad = std::min(deltad, -w[i] / dw[i]);
      }
      deltap = std::min(settings.step_fraction * deltap, 1.0);
      deltad = std::min(settings.step_fraction * deltad, 1.0);
    };

    double deltap = 0.0, deltad = 0.0;
    max_steps(deltap, deltad);

    if (std::min(deltap, deltad) < 1.0) {
      // Mehrotra corrector
      double mu = x.dot(z) + s.dot(w);
      const double g = mu + deltap * dx.dot(z) + deltad * dz.dot(x) + deltap * deltad * dz.dot(dx) +
                       deltap * ds.dot(w) + deltad * dw.dot(s) + deltap * deltad * ds.dot(dw);
      mu = mu * std::pow(g / mu, 3) / (2.0 * static_cast<double>(n));
      dr = dvec.array() * (mu * (s.array().inverse() - x.array().inverse()) +
                           dx.array() * dz.array() / x.array() - ds.array() * dw.array() / s.array());
      dlambda = llt.solve(rhs + X.transpose() * dr);
      const Eigen::VectorXd u = X * dlambda;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double dxdz = dx[i] * dz[i];
        const double dsdw = ds[i] * dw[i];
        const double dxi = dvec[i] * (u[i] - z[i] + w[i]) - dr[i];
        const double dsi = -dxi;
        dz[i] = mu / x[i] - z[i] - z[i] * dxi / x[i] - dxdz / x[i];
        dw[i] = mu / s[i] - w[i] - w[i] * dsi / s[i] - dsdw / s[i];
        dx[i] = dxi;
        ds[i] = dsi;
      }
      max_steps(deltap, deltad);
    }

    x += deltap * dx;
    s += deltap * ds;
    lambda += deltad * dlambda;
    z += deltad * dz;
    w += deltad * dw;
    gap = z.dot(x) + w.dot(s);
    if (!std::isfinite(gap))
      break;
  }

  const bool gap_reached = gap <= target;
  QrSolution sol;
  sol.iterations = iter;
  sol.coefficients = -lambda;
  sol.residuals = y - X * sol.coefficients;
  sol.objective = mean_check_loss(sol.residuals, tau);
  sol.converged = gap_reached;

  if (settings.polish) {
    std::vector<Eigen::Index> basis;
    Eigen::VectorXd beta;
    if (detail::vertex_through_smallest(X, y, sol.residuals, basis, beta)) {
      Eigen::VectorXd r = y - X * beta;
      for (auto i : basis)
        r[i] = 0.0;
      const double obj = mean_check_loss(r, tau);
      const bool certified = detail::vertex_is_optimal(X, r, basis, tau);
      const bool no_worse = obj <= sol.objective + 1e-12 * std::max(1.0, sol.objective);
      if (certified || (gap_reached && no_worse)) {
        sol.coefficients = std::move(beta);
        sol.residuals = std::move(r);
        sol.objective = obj;
        sol.converged = true;
      }
    }
  }

  if (!sol.converged)
    throw ConvergenceError("interior point solver did not reach the duality gap tolerance in " +
                             std::to_string(iter) + " iterations",
                           sol.coefficients);
  return sol;
}

inline QrSolution fit_linear_qr(const DesignMatrix& X,
                                const Eigen::VectorXd& y,
                                QuantileLevel tau,
                                const QrSettings& settings = {})
{
  X.validate();
  return fit_linear_qr(X.values, y, tau, settings);
}

enum class BandwidthRule
{
  hall_sheather,
  bofinger
};

inline BandwidthRule parse_bandwidth_rule(const std::string& name)
{
  if (name == "hall-sheather" || name == "hs")
    return BandwidthRule::hall_sheather;
  if (name == "bofinger")
    return BandwidthRule::bofinger;
  throw UsageError("unknown bandwidth rule '" + name + "'");
}

inline std::string to_string(BandwidthRule rule)
{
  return rule == BandwidthRule::hall_sheather ? "hall-sheather" : "bofinger";
}

//! Bandwidth on the quantile scale for the difference-quotient density
//! estimator. Hall-Sheather uses a 95% confidence constant.
inline double bandwidth(QuantileLevel tau, std::size_t n, BandwidthRule rule)
{
  if (n < 2)
    throw UsageError("bandwidth needs n >= 2");
  const double x0 = stats::norm_quantile(tau.value());
  const double f0 = stats::norm_pdf(x0);
  const double nn = static_cast<double>(n);
  switch (rule) {
    case BandwidthRule::hall_sheather: {
      const double z = stats::norm_quantile(1.0 - 0.05 / 2.0);
      return std::pow(nn, -1.0 / 3.0) * std::pow(z, 2.0 / 3.0) *
             std::pow(1.5 * f0 * f0 / (2.0 * x0 * x0 + 1.0), 1.0 / 3.0);
    }
    case BandwidthRule::bofinger:
      return std::pow(nn, -0.2) *
             std::pow(4.5 * std::pow(f0, 4) / std::pow(2.0 * x0 * x0 + 1.0, 2), 0.2);
  }
  throw UsageError("unknown bandwidth rule");
}

struct DensitySettings
{
  BandwidthRule rule = BandwidthRule::hall_sheather;
  //! When tau +- h leaves (0, 1): shrink h to fit (true) or throw BandwidthError.
  bool shrink_bandwidth = true;
  //! Negative or non-finite quotients: clamp to 0 (true) or throw BandwidthError.
  bool clamp_negative = true;
  QrSettings solver{};
};

struct DensityWeights
{
  Eigen::VectorXd values;
  double bandwidth = 0.0;
  BandwidthRule rule = BandwidthRule::hall_sheather;
  std::size_t clamped = 0;
};

//! Conditional density at the fitted tau-quantile of every observation,
//! from the difference quotient 2h / x_t'(b(tau + h) - b(tau - h)).
inline DensityWeights density_weights(const Eigen::MatrixXd& X,
                                      const Eigen::VectorXd& y,
                                      QuantileLevel tau,
                                      const DensitySettings& settings = {})
{
  const auto n = static_cast<std::size_t>(X.rows());
  double h = bandwidth(tau, n, settings.rule);
  const double t = tau.value();
  if (t - h <= 0.0 || t + h >= 1.0) {
    if (!settings.shrink_bandwidth)
      throw BandwidthError("tau +- h leaves (0, 1): tau = " + std::to_string(t) +
                           ", h = " + std::to_string(h));
    h = 0.5 * std::min(t, 1.0 - t);
  }

  const QrSolution hi = fit_linear_qr(X, y, QuantileLevel(t + h), settings.solver);
  const QrSolution lo = fit_linear_qr(X, y, QuantileLevel(t - h), settings.solver);
  const Eigen::VectorXd dyhat = X * (hi.coefficients - lo.coefficients);

  static const double eps = std::sqrt(std::numeric_limits<double>::epsilon());
  DensityWeights out;
  out.bandwidth = h;
  out.rule = settings.rule;
  out.values.resize(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < dyhat.size(); ++i) {
    const double f = 2.0 * h / (dyhat[i] - eps);
    if (!std::isfinite(f) || f < 0.0) {
      if (!settings.clamp_negative)
        throw BandwidthError("non-positive difference quotient at observation " + std::to_string(i));
      out.values[i] = 0.0;
      ++out.clamped;
    } else {
      out.values[i] = f;
    }
  }
  return out;
}

inline DensityWeights density_weights(const DesignMatrix& X,
                                      const Eigen::VectorXd& y,
                                      QuantileLevel tau,
                                      const DensitySettings& settings = {})
{
  X.validate();
  return density_weights(X.values, y, tau, settings);
}

} // namespace mkqr
