#pragma once

// Kink-number selection: strengthened quantile BIC with backward
// elimination from a large starting number of kinks.

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "brisq.hpp"
#include "covariance.hpp"
#include "errors.hpp"
#include "model.hpp"

namespace mkqr {

enum class CnRule
{
  one,     //!< C_n = 1, the standard quantile BIC
  loglog,  //!< C_n = log(log n)
  log      //!< C_n = log n
};

inline CnRule parse_cn_rule(const std::string& s)
{
  if (s == "1" || s == "one")
    return CnRule::one;
  if (s == "loglog" || s == "log(log(n))")
    return CnRule::loglog;
  if (s == "log" || s == "log(n)")
    return CnRule::log;
  throw UsageError("unknown C_n rule '" + s + "' (expected one, loglog or log)");
}

inline std::string to_string(CnRule r)
{
  switch (r) {
    case CnRule::one:
      return "one";
    case CnRule::loglog:
      return "loglog";
    case CnRule::log:
      return "log";
  }
  return "log";
}

inline double cn_value(CnRule rule, std::size_t n)
{
  const double ln = std::log(static_cast<double>(n));
  switch (rule) {
    case CnRule::one:
      return 1.0;
    case CnRule::loglog:
      return std::log(ln);
    case CnRule::log:
      return ln;
  }
  return ln;
}

//! log S_n + (2 + p + 2K) log(n) / (2n) * C_n. A zero objective gives -inf.
inline double sbic(double objective_value, std::size_t n, std::size_t p, std::size_t K, CnRule rule)
{
  if (objective_value < 0.0 || !std::isfinite(objective_value))
    throw UsageError("sBIC needs a finite non-negative objective");
  if (n < 2)
    throw UsageError("sBIC needs n >= 2");
  const double nn = static_cast<double>(n);
  const double nk = 2.0 + static_cast<double>(p) + 2.0 * static_cast<double>(K);
  const double penalty = nk * std::log(nn) / (2.0 * nn) * cn_value(rule, n);
  if (objective_value == 0.0)
    return -std::numeric_limits<double>::infinity();
  return std::log(objective_value) + penalty;
}

struct SbicEntry
{
  int K = 0;
  double value = 0.0;
  ThetaEstimate estimate;
};

struct SbicTrace
{
  std::vector<SbicEntry> entries; //!< K strictly decreasing
  int selected = 0;               //!< index into entries
  int stage1_kinks = 0;           //!< K_* after the elimination sweep

  const SbicEntry& best() const { return entries.at(static_cast<std::size_t>(selected)); }
};

struct FitReport
{
  ThetaEstimate theta;
  int kinks = 0;
  std::optional<CovarianceEstimate> covariance;
  Eigen::VectorXd standard_errors; //!< empty when the covariance is unavailable
  std::string covariance_error;
  SbicTrace trace;
};

struct SelectSettings
{
  int k_max = 10;
  CnRule cn_rule = CnRule::log;
  BrisqSettings brisq{};
  bool compute_covariance = true;
  CovarianceSettings covariance{};
};

namespace detail {

inline ThetaEstimate fit_linear(const Dataset& data, QuantileLevel tau, const QrSettings& solver)
{
  return fit_fixed_kinks(data, tau, Eigen::VectorXd(0), solver);
}

inline Eigen::VectorXd without(const Eigen::VectorXd& v, Eigen::Index k)
{
  Eigen::VectorXd out(v.size() - 1);
  for (Eigen::Index i = 0, j = 0; i < v.size(); ++i)
    if (i != k)
      out[j++] = v[i];
  return out;
}

// Starting locations for K - 1 kinks: remove the kink whose removal raises
// the fixed-location objective least.
inline Eigen::VectorXd cheapest_drop(const Dataset& data, QuantileLevel tau, const Eigen::VectorXd& deltas,
                                     const QrSettings& solver)
{
  double best = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_deltas = without(deltas, 0);
  for (Eigen::Index k = 0; k < deltas.size(); ++k) {
    const Eigen::VectorXd cand = without(deltas, k);
    try {
      const double obj = fit_fixed_kinks(data, tau, cand, solver).objective;
      if (obj < best) {
        best = obj;
        best_deltas = cand;
      }
    } catch (const Error&) {
    }
  }
  return best_deltas;
}

} // namespace detail

//! Fit with `target` kinks from both the warm start and the evenly spread
//! start; keep the fit retaining the most kinks, then the lower objective.
inline ThetaEstimate fit_k_kinks(const Dataset& data,
                                 QuantileLevel tau,
                                 int target,
                                 const Eigen::VectorXd& warm,
                                 const BrisqSettings& settings)
{
  if (target == 0)
    return detail::fit_linear(data, tau, settings.solver);
  std::optional<ThetaEstimate> best;
  auto consider = [&](const std::optional<Eigen::VectorXd>& start) {
    try {
      ThetaEstimate fit = brisq_fit(data, tau, target, settings, start);
      if (!best || fit.kinks() > best->kinks() ||
          (fit.kinks() == best->kinks() && fit.objective < best->objective))
        best = std::move(fit);
    } catch (const Error&) {
    }
  };
  if (warm.size() == target)
    consider(warm);
  consider(std::nullopt);
  return best ? *best : detail::fit_linear(data, tau, settings.solver);
}

inline std::pair<FitReport, SbicTrace> backward_eliminate(const Dataset& data,
                                                          QuantileLevel tau,
                                                          const SelectSettings& settings = {})
{
  if (settings.k_max < 1)
    throw UsageError("K_max must be at least 1");
  data.validate();
  const auto n = static_cast<std::size_t>(data.size());
  const auto p = static_cast<std::size_t>(data.covariates());
  const ResolvedBrisqSettings rs = resolve(settings.brisq, data);

  // Largest K that leaves min_segment_obs points per segment.
  int k_start = settings.k_max;
  while (k_start > 1 && static_cast<double>(n) / (k_start + 1) < rs.min_segment_obs)
    --k_start;

  // Stage 1: iterate from K_max spread kinks, discarding inadmissible ones.
  ThetaEstimate stage1 = detail::fit_linear(data, tau, rs.solver);
  if (static_cast<double>(n) / (k_start + 1) >= rs.min_segment_obs) {
    try {
      stage1 = iterate_segmented(data, tau, init_kinks(data.x, k_start, rs.min_segment_obs), rs);
    } catch (const Error&) {
    }
  }

  SbicTrace trace;
  trace.stage1_kinks = static_cast<int>(stage1.kinks());
  ThetaEstimate current = stage1.kinks() > 0
                            ? fit_k_kinks(data, tau, static_cast<int>(stage1.kinks()), stage1.params.deltas,
                                          settings.brisq)
                            : stage1;
  auto score = [&](const ThetaEstimate& e) {
    return sbic(e.objective, n, p, static_cast<std::size_t>(e.kinks()), settings.cn_rule);
  };
  trace.entries.push_back({ static_cast<int>(current.kinks()), score(current), current });

  while (current.kinks() > 0) {
    const int target = static_cast<int>(current.kinks()) - 1;
    const Eigen::VectorXd warm =
      target > 0 ? detail::cheapest_drop(data, tau, current.params.deltas, rs.solver) : Eigen::VectorXd(0);
    ThetaEstimate smaller = fit_k_kinks(data, tau, target, warm, settings.brisq);
    const double value = score(smaller);
    trace.entries.push_back({ static_cast<int>(smaller.kinks()), value, smaller });
    if (value < trace.entries[static_cast<std::size_t>(trace.selected)].value) {
      trace.selected = static_cast<int>(trace.entries.size()) - 1;
      current = std::move(smaller);
    } else {
      break;
    }
  }

  FitReport report;
  report.theta = trace.best().estimate;
  report.kinks = trace.best().K;
  if (settings.compute_covariance) {
    try {
      report.covariance = covariance(data, report.theta, tau, settings.covariance);
      report.standard_errors = report.covariance->standard_errors;
    } catch (const Error& e) {
      report.covariance_error = e.what();
    }
  }
  report.trace = trace;
  return { std::move(report), std::move(trace) };
}

} // namespace mkqr
