#pragma once

// Multi-kink quantile model in slope-difference form
//
//   Q(tau | x, z) = a0 + a1 x + sum_k b_k (x - d_k)_+ + g'z
//
// together with the equivalent per-segment (intercept, slope) form.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "linqr.hpp"

namespace mkqr {

inline double hinge(double u) { return u > 0.0 ? u : 0.0; }

struct MkqrParams
{
  double alpha0 = 0.0;
  double alpha1 = 0.0;
  Eigen::VectorXd betas;  //!< slope changes at each kink
  Eigen::VectorXd gamma;  //!< covariate effects, length p
  Eigen::VectorXd deltas; //!< kink locations, strictly increasing

  Eigen::Index kinks() const { return deltas.size(); }

  void validate() const
  {
    if (betas.size() != deltas.size())
      throw UsageError("betas and deltas must have the same length");
    for (Eigen::Index k = 1; k < deltas.size(); ++k)
      if (!(deltas[k] > deltas[k - 1]))
        throw UsageError("kink locations must be strictly increasing");
  }

  //! eta = (a0, a1, betas, gamma)
  Eigen::VectorXd eta() const
  {
    Eigen::VectorXd e(2 + betas.size() + gamma.size());
    e << alpha0, alpha1, betas, gamma;
    return e;
  }

  //! theta = (eta, deltas)
  Eigen::VectorXd theta() const
  {
    Eigen::VectorXd t(2 + betas.size() + gamma.size() + deltas.size());
    t << eta(), deltas;
    return t;
  }

  static MkqrParams from_eta(const Eigen::VectorXd& eta, const Eigen::VectorXd& deltas)
  {
    const Eigen::Index K = deltas.size();
    if (eta.size() < 2 + K)
      throw UsageError("coefficient vector too short for the number of kinks");
    MkqrParams p;
    p.alpha0 = eta[0];
    p.alpha1 = eta[1];
    p.betas = eta.segment(2, K);
    p.gamma = eta.tail(eta.size() - 2 - K);
    p.deltas = deltas;
    return p;
  }
};

struct SegmentForm
{
  Eigen::VectorXd intercepts; //!< K + 1 entries
  Eigen::VectorXd slopes;     //!< K + 1 entries
  Eigen::VectorXd deltas;
  Eigen::VectorXd gamma;
};

struct Dataset
{
  Eigen::VectorXd y;
  Eigen::VectorXd x;
  Eigen::MatrixXd z; //!< n x p, p may be 0

  Eigen::Index size() const { return y.size(); }
  Eigen::Index covariates() const { return z.cols(); }

  void validate() const
  {
    const Eigen::Index n = y.size();
    if (x.size() != n || z.rows() != n)
      throw UsageError("y, x and z must have the same number of rows");
    const Eigen::Index p = z.cols();
    if (n < std::max<Eigen::Index>(10, p + 4))
      throw UsageError("need at least max(10, p + 4) observations, have " + std::to_string(n));
    if (!y.allFinite() || !x.allFinite() || !z.allFinite())
      throw UsageError("dataset contains non-finite values");
    if (x.maxCoeff() == x.minCoeff())
      throw UsageError("threshold covariate x is constant");
  }

  Dataset subset(const std::vector<Eigen::Index>& rows) const
  {
    Dataset out;
    const auto m = static_cast<Eigen::Index>(rows.size());
    out.y.resize(m);
    out.x.resize(m);
    out.z.resize(m, z.cols());
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto r = rows[static_cast<std::size_t>(i)];
      out.y[i] = y[r];
      out.x[i] = x[r];
      out.z.row(i) = z.row(r);
    }
    return out;
  }
};

//! Columns [1, x, (x - d_1)_+, ..., (x - d_K)_+, z].
inline DesignMatrix build_design(const Eigen::VectorXd& x, const Eigen::MatrixXd& z, const Eigen::VectorXd& deltas)
{
  for (Eigen::Index k = 1; k < deltas.size(); ++k)
    if (!(deltas[k] > deltas[k - 1]))
      throw UsageError("kink locations must be strictly increasing");
  if (z.rows() != x.size())
    throw UsageError("x and z row counts differ");

  const Eigen::Index n = x.size();
  const Eigen::Index K = deltas.size();
  const Eigen::Index p = z.cols();
  DesignMatrix X;
  X.values.resize(n, 2 + K + p);
  X.values.col(0).setOnes();
  X.values.col(1) = x;
  for (Eigen::Index k = 0; k < K; ++k)
    X.values.col(2 + k) = x.unaryExpr([d = deltas[k]](double v) { return hinge(v - d); });
  if (p > 0)
    X.values.rightCols(p) = z;

  X.labels.reserve(static_cast<std::size_t>(2 + K + p));
  X.labels.emplace_back("intercept");
  X.labels.emplace_back("x");
  for (Eigen::Index k = 0; k < K; ++k)
    X.labels.push_back("hinge" + std::to_string(k + 1));
  for (Eigen::Index j = 0; j < p; ++j)
    X.labels.push_back("z" + std::to_string(j + 1));
  return X;
}

inline void check_dimensions(const Dataset& data, const MkqrParams& params)
{
  params.validate();
  if (params.gamma.size() != data.covariates())
    throw UsageError("parameter gamma has length " + std::to_string(params.gamma.size()) +
                     " but the data have " + std::to_string(data.covariates()) + " covariates");
}

inline double predict_quantile(const MkqrParams& params, double x, const Eigen::VectorXd& z)
{
  double q = params.alpha0 + params.alpha1 * x;
  for (Eigen::Index k = 0; k < params.deltas.size(); ++k)
    q += params.betas[k] * hinge(x - params.deltas[k]);
  if (params.gamma.size() > 0)
    q += params.gamma.dot(z);
  return q;
}

inline Eigen::VectorXd fitted_quantiles(const Dataset& data, const MkqrParams& params)
{
  Eigen::VectorXd q(data.size());
  for (Eigen::Index t = 0; t < data.size(); ++t)
    q[t] = predict_quantile(params, data.x[t], data.z.row(t).transpose());
  return q;
}

//! S_n(theta): mean check loss of the model residuals.
inline double objective(const Dataset& data, const MkqrParams& params, QuantileLevel tau)
{
  check_dimensions(data, params);
  return mean_check_loss(data.y - fitted_quantiles(data, params), tau);
}

inline SegmentForm to_segment_form(const MkqrParams& params)
{
  params.validate();
  const Eigen::Index K = params.kinks();
  SegmentForm s;
  s.intercepts.resize(K + 1);
  s.slopes.resize(K + 1);
  s.intercepts[0] = params.alpha0;
  s.slopes[0] = params.alpha1;
  for (Eigen::Index k = 0; k < K; ++k) {
    s.slopes[k + 1] = s.slopes[k] + params.betas[k];
    s.intercepts[k + 1] = s.intercepts[k] - params.betas[k] * params.deltas[k];
  }
  s.deltas = params.deltas;
  s.gamma = params.gamma;
  return s;
}

inline MkqrParams from_segment_form(const SegmentForm& s)
{
  const Eigen::Index K = s.deltas.size();
  if (s.slopes.size() != K + 1 || s.intercepts.size() != K + 1)
    throw UsageError("segment form needs K + 1 intercepts and slopes");
  MkqrParams p;
  p.alpha0 = s.intercepts[0];
  p.alpha1 = s.slopes[0];
  p.betas.resize(K);
  for (Eigen::Index k = 0; k < K; ++k)
    p.betas[k] = s.slopes[k + 1] - s.slopes[k];
  p.deltas = s.deltas;
  p.gamma = s.gamma;
  p.validate();
  return p;
}

//! An MKQR fit: parameters, objective and estimator diagnostics.
struct ThetaEstimate
{
  MkqrParams params;
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
  //! Objective of the current best estimate after Stage I (index 0) and after
  //! each bootstrap restart (indices 1..B).
  std::vector<double> trajectory;
  int accepted_restarts = 0;
  int averaged_count = 0;
  int dropped_kinks = 0;

  Eigen::Index kinks() const { return params.kinks(); }
};

} // namespace mkqr
