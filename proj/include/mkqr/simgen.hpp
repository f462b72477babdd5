#pragma once

// Data generators for the simulation designs:
//
//   Y = a0 + a1 X + sum_k b_k (X - d_k)_+ + g Z + s(X) e,
//   X ~ U(-5, 5), Z ~ N(1, 1), e ~ N(0, 1) or t_3,
//   s(X) = 1 (homoscedastic) or 1 + 0.2 X (heteroscedastic).

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>

#include "errors.hpp"
#include "model.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace mkqr {

enum class ErrorLaw
{
  normal,
  t3
};

inline ErrorLaw parse_error_law(const std::string& s)
{
  if (s == "normal" || s == "N")
    return ErrorLaw::normal;
  if (s == "t3")
    return ErrorLaw::t3;
  throw UsageError("unknown error distribution '" + s + "'");
}

inline std::string to_string(ErrorLaw e) { return e == ErrorLaw::normal ? "normal" : "t3"; }

struct ScenarioSpec
{
  int kink_case = 1; //!< 1, 2, 3, or 0 for custom
  int n = 500;
  ErrorLaw error = ErrorLaw::normal;
  bool heteroscedastic = false;
  //! Case 1 with beta_1 = c / sqrt(n) (power study); c = 0 is the null.
  std::optional<double> power_c;
  std::uint64_t seed = 1;
  //! Generating parameters for kink_case == 0; gamma must have length 1.
  std::optional<MkqrParams> custom;
};

//! Generating parameters of a scenario (the median-level truth).
inline MkqrParams scenario_params(const ScenarioSpec& spec)
{
  MkqrParams p;
  p.alpha0 = 1.0;
  p.alpha1 = 1.0;
  p.gamma = Eigen::VectorXd::Constant(1, 1.0);
  if (spec.power_c) {
    p.betas = Eigen::VectorXd::Constant(1, *spec.power_c / std::sqrt(static_cast<double>(spec.n)));
    p.deltas = Eigen::VectorXd::Constant(1, 0.5);
    return p;
  }
  switch (spec.kink_case) {
    case 0:
      if (!spec.custom)
        throw UsageError("custom scenario needs explicit parameters");
      if (spec.custom->gamma.size() != 1)
        throw UsageError("custom scenario parameters must have one covariate effect");
      spec.custom->validate();
      return *spec.custom;
    case 1:
      p.betas = (Eigen::VectorXd(1) << -3.0).finished();
      p.deltas = (Eigen::VectorXd(1) << 0.5).finished();
      return p;
    case 2:
      p.betas = (Eigen::VectorXd(2) << -3.0, 4.0).finished();
      p.deltas = (Eigen::VectorXd(2) << -1.0, 2.0).finished();
      return p;
    case 3:
      p.betas = (Eigen::VectorXd(3) << -3.0, 4.0, -4.0).finished();
      p.deltas = (Eigen::VectorXd(3) << -3.0, 0.0, 3.0).finished();
      return p;
    default:
      throw UsageError("unknown scenario case " + std::to_string(spec.kink_case));
  }
}

inline double error_quantile(ErrorLaw law, double tau)
{
  if (law == ErrorLaw::normal)
    return stats::norm_quantile(tau);
  return boost::math::quantile(boost::math::students_t_distribution<double>(3.0), tau);
}

//! True conditional-quantile parameters at level tau. The error scale
//! 1 + 0.2 x shifts both intercept and slope; the kinks never move.
inline MkqrParams true_theta_at(const ScenarioSpec& spec, QuantileLevel tau)
{
  MkqrParams p = scenario_params(spec);
  const double q = error_quantile(spec.error, tau.value());
  p.alpha0 += q;
  if (spec.heteroscedastic)
    p.alpha1 += 0.2 * q;
  return p;
}

struct GeneratedData
{
  Dataset data;
  MkqrParams truth; //!< generating (median-level) parameters
};

inline GeneratedData generate(const ScenarioSpec& spec)
{
  if (spec.n < 10)
    throw UsageError("scenario sample size must be at least 10");
  GeneratedData out;
  out.truth = scenario_params(spec);
  const Eigen::Index n = spec.n;
  out.data.y.resize(n);
  out.data.x.resize(n);
  out.data.z.resize(n, 1);

  Rng rng(spec.seed);
  for (Eigen::Index t = 0; t < n; ++t) {
    const double x = rng.uniform(-5.0, 5.0);
    const double z = 1.0 + rng.normal();
    const double e = spec.error == ErrorLaw::normal ? rng.normal() : rng.student_t(3);
    const double scale = spec.heteroscedastic ? 1.0 + 0.2 * x : 1.0;
    out.data.x[t] = x;
    out.data.z(t, 0) = z;
    out.data.y[t] = predict_quantile(out.truth, x, out.data.z.row(t).transpose()) + scale * e;
  }
  return out;
}

} // namespace mkqr
