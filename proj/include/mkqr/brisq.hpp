#pragma once

// Kink-location estimation for a fixed number of kinks.
//
// Each step linearises the hinge around the current locations d0,
//
//   b (x - d)_+  ~  b (x - d0)_+ + phi * (-1[x > d0]),   phi = b (d - d0),
//
// fits the resulting linear quantile model and moves every kink by
// phi / b. Stage I iterates this from evenly spread starting points. Stage II
// restarts the iteration from bootstrap-sample fits and keeps a restart only
// when it lowers the original-sample objective; the final estimate averages
// the near-optimal accepted estimates.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "linqr.hpp"
#include "model.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace mkqr {

struct BrisqSettings
{
  int max_inner_iterations = 50;
  std::optional<double> delta_tolerance; //!< default 1e-4 * range(x)
  int restart_count = 20;
  double epsilon = 0.02;
  std::optional<int> min_segment_obs;   //!< default max(10, p + 3)
  std::optional<double> beta_floor;     //!< default 1e-4 * sd(y) / sd(x)
  std::uint64_t seed = 20240607;
  QrSettings solver{};
};

//! BrisqSettings with every data-dependent default filled in.
struct ResolvedBrisqSettings
{
  int max_inner_iterations = 50;
  double delta_tolerance = 0.0;
  int restart_count = 20;
  double epsilon = 0.02;
  int min_segment_obs = 10;
  double beta_floor = 0.0;
  std::uint64_t seed = 0;
  QrSettings solver{};
};

inline ResolvedBrisqSettings resolve(const BrisqSettings& s, const Dataset& data)
{
  if (s.max_inner_iterations <= 0 || s.restart_count < 0)
    throw UsageError("iteration and restart counts must be non-negative");
  if (!(s.epsilon > 0.0 && s.epsilon < 1.0))
    throw UsageError("epsilon must lie in (0, 1)");
  ResolvedBrisqSettings r;
  r.max_inner_iterations = s.max_inner_iterations;
  r.restart_count = s.restart_count;
  r.epsilon = s.epsilon;
  r.seed = s.seed;
  r.solver = s.solver;
  const double range = data.x.maxCoeff() - data.x.minCoeff();
  r.delta_tolerance = s.delta_tolerance.value_or(1e-4 * range);
  r.min_segment_obs =
    s.min_segment_obs.value_or(std::max<int>(10, static_cast<int>(data.covariates()) + 3));
  const double sx = stats::sd(data.x);
  const double sy = stats::sd(data.y);
  r.beta_floor = s.beta_floor.value_or(sx > 0.0 ? 1e-4 * sy / sx : 0.0);
  if (r.delta_tolerance <= 0.0 || r.min_segment_obs <= 0 || r.beta_floor < 0.0)
    throw UsageError("BRISQ tolerances must be positive");
  return r;
}

enum class DropReason
{
  out_of_support,
  too_close,
  beta_degenerate
};

inline std::string to_string(DropReason r)
{
  switch (r) {
    case DropReason::out_of_support:
      return "out-of-support";
    case DropReason::too_close:
      return "too-close";
    case DropReason::beta_degenerate:
      return "beta-degenerate";
  }
  return "unknown";
}

struct DroppedKink
{
  Eigen::Index index; //!< position in the input kink vector
  double location;
  DropReason reason;
};

struct InadmissibleReport
{
  std::vector<DroppedKink> dropped;
  bool empty() const { return dropped.empty(); }
};

namespace detail {

// observations with a < x < b in a sorted sample
inline std::ptrdiff_t count_open(const std::vector<double>& xs, double a, double b)
{
  const auto lo = std::upper_bound(xs.begin(), xs.end(), a);
  const auto hi = std::lower_bound(xs.begin(), xs.end(), b);
  return hi > lo ? hi - lo : 0;
}

// Keep the admissible subset of `candidates` (sorted ascending on entry).
// `betas`, when given, triggers the beta-degenerate check first.
inline Eigen::VectorXd screen_kinks(const std::vector<double>& xs,
                                    const Eigen::VectorXd& candidates,
                                    const Eigen::VectorXd* betas,
                                    const ResolvedBrisqSettings& rs,
                                    InadmissibleReport& report)
{
  constexpr double inf = std::numeric_limits<double>::infinity();
  const double lo = xs.front();
  const double hi = xs.back();
  std::vector<Eigen::Index> kept;
  double prev = -inf;
  for (Eigen::Index k = 0; k < candidates.size(); ++k) {
    const double d = candidates[k];
    if (betas && !(std::abs((*betas)[k]) >= rs.beta_floor)) {
      report.dropped.push_back({ k, d, DropReason::beta_degenerate });
      continue;
    }
    if (!std::isfinite(d) || d <= lo || d >= hi) {
      report.dropped.push_back({ k, d, DropReason::out_of_support });
      continue;
    }
    if (count_open(xs, prev, d) < rs.min_segment_obs) {
      report.dropped.push_back({ k, d, DropReason::too_close });
      continue;
    }
    kept.push_back(k);
    prev = d;
  }
  while (!kept.empty() && count_open(xs, candidates[kept.back()], inf) < rs.min_segment_obs) {
    report.dropped.push_back({ kept.back(), candidates[kept.back()], DropReason::too_close });
    kept.pop_back();
  }
  Eigen::VectorXd out(static_cast<Eigen::Index>(kept.size()));
  for (std::size_t i = 0; i < kept.size(); ++i)
    out[static_cast<Eigen::Index>(i)] = candidates[kept[i]];
  return out;
}

inline Eigen::VectorXd sorted(Eigen::VectorXd v)
{
  std::sort(v.data(), v.data() + v.size());
  return v;
}

} // namespace detail

//! K starting locations at the k / (K + 1) sample quantiles of x.
inline Eigen::VectorXd init_kinks(const Eigen::VectorXd& x, int K, int min_segment_obs = 10)
{
  if (K < 1)
    throw UsageError("init_kinks needs K >= 1");
  if (x.maxCoeff() == x.minCoeff())
    throw UsageError("threshold covariate x is constant");
  const double n = static_cast<double>(x.size());
  if (n / (K + 1) < min_segment_obs)
    throw UsageError(std::to_string(K) + " kinks leave fewer than " + std::to_string(min_segment_obs) +
                     " observations per segment");
  const auto xs = stats::sorted_copy(x);
  const double jitter = 1e-9 * (xs.back() - xs.front());
  Eigen::VectorXd d(K);
  for (int k = 0; k < K; ++k) {
    d[k] = stats::quantile_sorted(xs, static_cast<double>(k + 1) / (K + 1));
    if (k > 0 && d[k] <= d[k - 1])
      d[k] = d[k - 1] + jitter;
  }
  return d;
}

struct LinearizedStep
{
  Eigen::VectorXd eta;  //!< (a0, a1, betas, gamma) of the working fit
  Eigen::VectorXd phi;
  Eigen::VectorXd deltas_next;
  InadmissibleReport report;
  double working_objective = 0.0;
};

//! Working design [1, x, U_1..U_K, V_1..V_K, z] with U = (x - d0)_+ and
//! V = -1[x > d0].
inline Eigen::MatrixXd working_design(const Dataset& data, const Eigen::VectorXd& d0)
{
  const Eigen::Index n = data.size();
  const Eigen::Index K = d0.size();
  const Eigen::Index p = data.covariates();
  Eigen::MatrixXd X(n, 2 + 2 * K + p);
  X.col(0).setOnes();
  X.col(1) = data.x;
  for (Eigen::Index k = 0; k < K; ++k) {
    const double d = d0[k];
    X.col(2 + k) = data.x.unaryExpr([d](double v) { return hinge(v - d); });
    X.col(2 + K + k) = data.x.unaryExpr([d](double v) { return v > d ? -1.0 : 0.0; });
  }
  if (p > 0)
    X.rightCols(p) = data.z;
  return X;
}

inline LinearizedStep linearized_step(const Dataset& data,
                                      QuantileLevel tau,
                                      const Eigen::VectorXd& deltas_current,
                                      const ResolvedBrisqSettings& rs)
{
  const Eigen::Index K = deltas_current.size();
  if (K == 0)
    throw UsageError("linearized_step needs at least one kink");
  const Eigen::Index p = data.covariates();
  const QrSolution fit = fit_linear_qr(working_design(data, deltas_current), data.y, tau, rs.solver);

  LinearizedStep step;
  step.working_objective = fit.objective;
  step.eta.resize(2 + K + p);
  step.eta << fit.coefficients.head(2 + K), fit.coefficients.tail(p);
  step.phi = fit.coefficients.segment(2 + K, K);
  const Eigen::VectorXd betas = fit.coefficients.segment(2, K);

  Eigen::VectorXd moved(K);
  for (Eigen::Index k = 0; k < K; ++k)
    moved[k] = deltas_current[k] + step.phi[k] / betas[k];

  // Screen in the order of the moved locations; kinks may cross.
  std::vector<Eigen::Index> order(static_cast<std::size_t>(K));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
    const double ma = std::isfinite(moved[a]) ? moved[a] : std::numeric_limits<double>::infinity();
    const double mb = std::isfinite(moved[b]) ? moved[b] : std::numeric_limits<double>::infinity();
    return ma < mb;
  });
  Eigen::VectorXd cand(K), cand_beta(K);
  for (Eigen::Index i = 0; i < K; ++i) {
    cand[i] = moved[order[static_cast<std::size_t>(i)]];
    cand_beta[i] = betas[order[static_cast<std::size_t>(i)]];
  }
  const auto xs = stats::sorted_copy(data.x);
  InadmissibleReport local;
  step.deltas_next = detail::screen_kinks(xs, cand, &cand_beta, rs, local);
  for (auto& dk : local.dropped)
    dk.index = order[static_cast<std::size_t>(dk.index)];
  step.report = std::move(local);
  return step;
}

//! Plain quantile fit of the model with all kink locations held fixed.
inline ThetaEstimate fit_fixed_kinks(const Dataset& data,
                                     QuantileLevel tau,
                                     const Eigen::VectorXd& deltas,
                                     const QrSettings& solver = {})
{
  const QrSolution fit = fit_linear_qr(build_design(data.x, data.z, deltas).values, data.y, tau, solver);
  ThetaEstimate est;
  est.params = MkqrParams::from_eta(fit.coefficients, deltas);
  est.objective = fit.objective;
  est.converged = true;
  return est;
}

inline ThetaEstimate iterate_segmented(const Dataset& data,
                                       QuantileLevel tau,
                                       const Eigen::VectorXd& deltas0,
                                       const ResolvedBrisqSettings& rs)
{
  const auto xs = stats::sorted_copy(data.x);
  InadmissibleReport initial;
  Eigen::VectorXd deltas = detail::screen_kinks(xs, detail::sorted(deltas0), nullptr, rs, initial);
  int dropped = static_cast<int>(initial.dropped.size());

  int iterations = 0;
  bool converged = false;
  std::optional<ThetaEstimate> cycle_best;
  std::vector<Eigen::VectorXd> history{ deltas };
  while (deltas.size() > 0 && iterations < rs.max_inner_iterations) {
    ++iterations;
    LinearizedStep step = linearized_step(data, tau, deltas, rs);
    if (!step.report.empty()) {
      dropped += static_cast<int>(step.report.dropped.size());
      deltas = std::move(step.deltas_next);
      history.assign(1, deltas);
      continue;
    }
    const double change = (step.deltas_next - deltas).cwiseAbs().maxCoeff();
    deltas = std::move(step.deltas_next);
    if (change < rs.delta_tolerance) {
      converged = true;
      break;
    }
    // The LP solutions can alternate between a few vertices; once an earlier
    // iterate recurs, keep the best member of the cycle.
    std::size_t j = 0;
    while (j + 1 < history.size() && (history[j] - deltas).cwiseAbs().maxCoeff() >= rs.delta_tolerance)
      ++j;
    if (j + 1 < history.size()) {
      for (std::size_t c = j; c < history.size(); ++c) {
        ThetaEstimate cand = fit_fixed_kinks(data, tau, history[c], rs.solver);
        if (!cycle_best || cand.objective < cycle_best->objective)
          cycle_best = std::move(cand);
      }
      converged = true;
      break;
    }
    history.push_back(deltas);
  }
  if (deltas.size() == 0)
    converged = true;

  ThetaEstimate est = cycle_best ? std::move(*cycle_best) : fit_fixed_kinks(data, tau, deltas, rs.solver);
  est.iterations = iterations;
  est.converged = converged;
  est.dropped_kinks = dropped;
  return est;
}

inline ThetaEstimate iterate_segmented(const Dataset& data,
                                       QuantileLevel tau,
                                       const Eigen::VectorXd& deltas0,
                                       const BrisqSettings& settings = {})
{
  return iterate_segmented(data, tau, deltas0, resolve(settings, data));
}

//! Bootstrap-restarted estimate with K kinks. `start` overrides the evenly
//! spread Stage I starting locations (warm start).
inline ThetaEstimate brisq_fit(const Dataset& data,
                               QuantileLevel tau,
                               int K,
                               const BrisqSettings& settings = {},
                               const std::optional<Eigen::VectorXd>& start = std::nullopt)
{
  if (K < 1)
    throw UsageError("brisq_fit needs K >= 1");
  data.validate();
  const ResolvedBrisqSettings rs = resolve(settings, data);
  const Eigen::VectorXd deltas0 = start ? detail::sorted(*start) : init_kinks(data.x, K, rs.min_segment_obs);
  constexpr double inf = std::numeric_limits<double>::infinity();

  std::optional<ThetaEstimate> current;
  try {
    current = iterate_segmented(data, tau, deltas0, rs);
  } catch (const Error&) {
  }

  std::vector<double> trajectory{ current ? current->objective : inf };
  std::vector<ThetaEstimate> history;
  history.reserve(static_cast<std::size_t>(rs.restart_count));
  int accepted = 0;
  const Rng master(rs.seed);
  const auto xs = stats::sorted_copy(data.x);
  const auto n = static_cast<std::size_t>(data.size());
  std::vector<Eigen::Index> rows(n);

  for (int b = 1; b <= rs.restart_count; ++b) {
    Rng rng = master.substream(static_cast<std::uint64_t>(b));
    for (auto& r : rows)
      r = static_cast<Eigen::Index>(rng.index(n));
    const Dataset boot = data.subset(rows);
    const Eigen::VectorXd& from = current ? current->params.deltas : deltas0;
    try {
      if (from.size() > 0 && boot.x.maxCoeff() > boot.x.minCoeff()) {
        const ThetaEstimate star = iterate_segmented(boot, tau, from, rs);
        if (star.kinks() > 0) {
          // score the bootstrap kinks themselves on the original sample as
          // well as the fit iterated from them
          ThetaEstimate cand = iterate_segmented(data, tau, star.params.deltas, rs);
          InadmissibleReport screened;
          detail::screen_kinks(xs, star.params.deltas, nullptr, rs, screened);
          if (screened.empty()) {
            ThetaEstimate direct = fit_fixed_kinks(data, tau, star.params.deltas, rs.solver);
            if (direct.kinks() == cand.kinks() && direct.objective < cand.objective) {
              direct.iterations = cand.iterations;
              cand = std::move(direct);
            }
          }
          if (!current || (cand.kinks() == current->kinks() && cand.objective < current->objective)) {
            current = std::move(cand);
            ++accepted;
          }
        }
      }
    } catch (const Error&) {
      // a failed restart leaves the current estimate in place
    }
    trajectory.push_back(current ? current->objective : inf);
    if (current)
      history.push_back(*current);
  }

  if (!current)
    throw ConvergenceError("BRISQ: Stage I and every restart failed", deltas0);

  ThetaEstimate result = *current;
  if (!history.empty()) {
    const auto best = std::min_element(history.begin(), history.end(), [](const auto& a, const auto& b) {
      return a.objective < b.objective;
    });
    const double s_min = best->objective;
    const Eigen::Index k_min = best->kinks();
    Eigen::VectorXd eta_sum = Eigen::VectorXd::Zero(best->params.eta().size());
    Eigen::VectorXd delta_sum = Eigen::VectorXd::Zero(k_min);
    int count = 0;
    for (const auto& h : history) {
      if (h.kinks() != k_min || std::abs(h.objective - s_min) > rs.epsilon * s_min)
        continue;
      eta_sum += h.params.eta();
      delta_sum += h.params.deltas;
      ++count;
    }
    result = *best;
    MkqrParams averaged = MkqrParams::from_eta(eta_sum / count, delta_sum / count);
    const double averaged_objective = objective(data, averaged, tau);
    // Averaging across distinct local optima can land far from all of them.
    if (averaged_objective <= (1.0 + rs.epsilon) * s_min) {
      result.params = std::move(averaged);
      result.objective = averaged_objective;
      result.averaged_count = count;
    } else {
      result.averaged_count = 1;
    }
  }
  result.trajectory = std::move(trajectory);
  result.accepted_restarts = accepted;
  return result;
}

} // namespace mkqr
