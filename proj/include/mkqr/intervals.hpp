#pragma once

// Confidence intervals for kink locations: Wald (sandwich SE), percentile
// bootstrap, and inversion of the smoothed rank score (SRS) test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "brisq.hpp"
#include "covariance.hpp"
#include "errors.hpp"
#include "linqr.hpp"
#include "model.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace mkqr {

enum class CiMethod
{
  wald,
  boot,
  score
};

inline CiMethod parse_ci_method(const std::string& s)
{
  if (s == "wald")
    return CiMethod::wald;
  if (s == "boot" || s == "bootstrap")
    return CiMethod::boot;
  if (s == "score" || s == "srs")
    return CiMethod::score;
  throw UsageError("unknown interval method '" + s + "' (expected wald, boot or score)");
}

inline std::string to_string(CiMethod m)
{
  switch (m) {
    case CiMethod::wald:
      return "wald";
    case CiMethod::boot:
      return "boot";
    case CiMethod::score:
      return "score";
  }
  return "wald";
}

struct KinkInterval
{
  double estimate = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  bool truncated = false; //!< an endpoint was capped before a rejection was found

  double length() const { return upper - lower; }
  bool contains(double v) const { return lower <= v && v <= upper; }
};

struct IntervalSet
{
  CiMethod method = CiMethod::wald;
  double level = 0.95;
  std::vector<KinkInterval> kinks;
  int replicates = 0; //!< bootstrap draws requested
  int discarded = 0;  //!< bootstrap draws whose kink count differed
  double seconds = 0.0;
};

inline void check_level(double level)
{
  if (!(level > 0.0 && level < 1.0))
    throw UsageError("confidence level must lie in (0, 1)");
}

inline KinkInterval wald_interval(double estimate, double se, double level)
{
  check_level(level);
  const double z = stats::norm_quantile(0.5 + level / 2.0);
  return { estimate, estimate - z * se, estimate + z * se, false };
}

inline IntervalSet wald_ci(const ThetaEstimate& theta, const CovarianceEstimate& sigma, double level = 0.95)
{
  check_level(level);
  if (sigma.kinks != theta.kinks())
    throw UsageError("covariance does not match the number of kinks");
  IntervalSet out;
  out.method = CiMethod::wald;
  out.level = level;
  for (Eigen::Index k = 0; k < theta.kinks(); ++k)
    out.kinks.push_back(wald_interval(theta.params.deltas[k], sigma.delta_se(k), level));
  return out;
}

struct BootstrapCiSettings
{
  int replicates = 200;
  std::uint64_t seed = 20240607;
  unsigned jobs = 1;
  BrisqSettings brisq{}; //!< used for every replicate refit
};

//! Percentile intervals from paired-resample refits warm-started at theta.
inline IntervalSet bootstrap_ci(const Dataset& data,
                                QuantileLevel tau,
                                const ThetaEstimate& theta,
                                double level = 0.95,
                                const BootstrapCiSettings& settings = {})
{
  check_level(level);
  const Eigen::Index K = theta.kinks();
  if (K < 1)
    throw UsageError("bootstrap intervals need at least one kink");
  if (settings.replicates < 1)
    throw UsageError("bootstrap needs at least one replicate");

  const auto B = static_cast<std::size_t>(settings.replicates);
  const auto n = static_cast<std::size_t>(data.size());
  std::vector<std::optional<Eigen::VectorXd>> draws(B);
  const Rng master(settings.seed);
  parallel_for(B, settings.jobs, [&](std::size_t b) {
    Rng rng = master.substream(b);
    std::vector<Eigen::Index> rows(n);
    for (auto& r : rows)
      r = static_cast<Eigen::Index>(rng.index(n));
    const Dataset boot = data.subset(rows);
    BrisqSettings bs = settings.brisq;
    bs.seed = settings.brisq.seed + b;
    try {
      const ThetaEstimate fit = brisq_fit(boot, tau, static_cast<int>(K), bs, theta.params.deltas);
      if (fit.kinks() == K)
        draws[b] = fit.params.deltas;
    } catch (const Error&) {
    }
  });

  IntervalSet out;
  out.method = CiMethod::boot;
  out.level = level;
  out.replicates = settings.replicates;
  std::vector<std::vector<double>> per_kink(static_cast<std::size_t>(K));
  for (const auto& d : draws) {
    if (!d) {
      ++out.discarded;
      continue;
    }
    for (Eigen::Index k = 0; k < K; ++k)
      per_kink[static_cast<std::size_t>(k)].push_back((*d)[k]);
  }
  const int usable = settings.replicates - out.discarded;
  if (2 * usable < settings.replicates)
    throw DegenerateBootstrapError("only " + std::to_string(usable) + " of " +
                                   std::to_string(settings.replicates) +
                                   " bootstrap replicates kept the fitted number of kinks");
  const double a = (1.0 - level) / 2.0;
  for (Eigen::Index k = 0; k < K; ++k) {
    auto& v = per_kink[static_cast<std::size_t>(k)];
    std::sort(v.begin(), v.end());
    out.kinks.push_back({ theta.params.deltas[k], stats::quantile_sorted(v, a), stats::quantile_sorted(v, 1.0 - a), false });
  }
  return out;
}

struct SrsSettings
{
  DensitySettings density{};
  double rank_threshold = 1e-10;
};

//! Default smoothing bandwidth sd(x) n^{-1/5}.
inline double srs_default_bandwidth(const Eigen::VectorXd& x)
{
  return stats::sd(x) * std::pow(static_cast<double>(x.size()), -0.2);
}

namespace detail {

inline Eigen::MatrixXd checked_inverse(const Eigen::MatrixXd& A, double threshold, const char* what)
{
  Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
  lu.setThreshold(threshold);
  if (lu.rank() < A.rows())
    throw RankError(what);
  return lu.inverse();
}

} // namespace detail

//! SRS statistic at kink locations `deltas` using the smoothed partial
//! scores of the kinks listed in `coordinates` (all kinks when empty).
inline double srs_statistic(const Dataset& data,
                            QuantileLevel tau,
                            const Eigen::VectorXd& deltas,
                            const Eigen::VectorXd& h,
                            const std::vector<Eigen::Index>& coordinates = {},
                            const SrsSettings& settings = {})
{
  const Eigen::Index K = deltas.size();
  if (K < 1)
    throw UsageError("SRS statistic needs at least one kink");
  if (h.size() != K || (h.array() <= 0.0).any())
    throw UsageError("SRS bandwidths must be positive, one per kink");
  std::vector<Eigen::Index> cols = coordinates;
  if (cols.empty())
    for (Eigen::Index k = 0; k < K; ++k)
      cols.push_back(k);
  for (auto k : cols)
    if (k < 0 || k >= K)
      throw UsageError("SRS coordinate out of range");

  const double t = tau.value();
  const Eigen::Index n = data.size();
  const Eigen::MatrixXd M = build_design(data.x, data.z, deltas).values;
  const QrSolution fit = fit_linear_qr(M, data.y, tau, settings.density.solver);
  const Eigen::VectorXd beta = fit.coefficients.segment(2, K);

  const auto q = static_cast<Eigen::Index>(cols.size());
  Eigen::MatrixXd P(n, q);
  for (Eigen::Index j = 0; j < q; ++j) {
    const Eigen::Index k = cols[static_cast<std::size_t>(j)];
    const double d = deltas[k];
    const double hk = h[k];
    const double b = beta[k];
    for (Eigen::Index r = 0; r < n; ++r) {
      const double u = (data.x[r] - d) / hk;
      P(r, j) = -b * stats::norm_cdf(u) - b * (data.x[r] - d) * stats::norm_pdf(u) / hk;
    }
  }

  const DensityWeights f = density_weights(M, data.y, tau, settings.density);
  const Eigen::MatrixXd MtPsi = M.transpose() * f.values.asDiagonal();
  const Eigen::MatrixXd G = detail::checked_inverse(MtPsi * M, settings.rank_threshold,
                                                    "density-weighted design is singular at the tested kinks");
  const Eigen::MatrixXd P_star = P - M * (G * (MtPsi * P));

  const Eigen::VectorXd psis = fit.residuals.unaryExpr([t](double r) { return psi(r, t); });
  const double nn = static_cast<double>(n);
  const Eigen::VectorXd S = P_star.transpose() * psis / std::sqrt(nn);
  const Eigen::MatrixXd V = t * (1.0 - t) * (P_star.transpose() * P_star) / nn;
  const Eigen::MatrixXd V_inv =
    detail::checked_inverse(V, settings.rank_threshold, "SRS variance is singular");
  return std::max(0.0, S.dot(V_inv * S));
}

struct SrsCiSettings
{
  std::optional<double> rho_step;  //!< default range(x) / 200
  std::optional<double> bandwidth; //!< default sd(x) n^{-1/5}
  SrsSettings srs{};
};

//! Profile inversion of the single-kink SRS test: scan outward from each
//! estimate, holding the other kinks fixed, until the test rejects.
inline IntervalSet srs_invert_ci(const Dataset& data,
                                 QuantileLevel tau,
                                 const ThetaEstimate& theta,
                                 double level = 0.95,
                                 const SrsCiSettings& settings = {})
{
  check_level(level);
  const Eigen::Index K = theta.kinks();
  if (K < 1)
    throw UsageError("score intervals need at least one kink");
  const double x_min = data.x.minCoeff();
  const double x_max = data.x.maxCoeff();
  const double rho = settings.rho_step.value_or((x_max - x_min) / 200.0);
  if (!(rho > 0.0))
    throw UsageError("scan step must be positive");
  const double bw = settings.bandwidth.value_or(srs_default_bandwidth(data.x));
  const Eigen::VectorXd h = Eigen::VectorXd::Constant(K, bw);
  const double critical = stats::chisq_quantile(level, 1.0);

  IntervalSet out;
  out.method = CiMethod::score;
  out.level = level;
  const Eigen::VectorXd& est = theta.params.deltas;
  for (Eigen::Index k = 0; k < K; ++k) {
    const double lo_cap = k > 0 ? est[k - 1] : x_min;
    const double hi_cap = k + 1 < K ? est[k + 1] : x_max;
    KinkInterval iv{ est[k], est[k], est[k], false };
    for (const int side : { -1, 1 }) {
      const double cap = side < 0 ? lo_cap : hi_cap;
      double last_accepted = est[k];
      double bound = cap;
      bool found = false;
      for (long m = 1;; ++m) {
        const double cand = est[k] + side * static_cast<double>(m) * rho;
        if (side < 0 ? cand <= cap : cand >= cap)
          break;
        Eigen::VectorXd d = est;
        d[k] = cand;
        try {
          if (srs_statistic(data, tau, d, h, { k }, settings.srs) > critical) {
            bound = cand;
            found = true;
            break;
          }
        } catch (const RankError&) {
          bound = last_accepted;
          break;
        }
        last_accepted = cand;
      }
      if (!found)
        iv.truncated = true;
      (side < 0 ? iv.lower : iv.upper) = bound;
    }
    out.kinks.push_back(iv);
  }
  return out;
}

} // namespace mkqr
