#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "linqr.hpp"
#include "model.hpp"

namespace mkqr {

struct CovarianceSettings
{
  DensitySettings density{};
  double rank_threshold = 1e-10;
};

//! Sandwich covariance of sqrt(n)(theta_hat - theta) with theta ordered
//! (a0, a1, betas, gamma, deltas).
struct CovarianceEstimate
{
  Eigen::MatrixXd sigma;
  Eigen::MatrixXd c_hat;
  Eigen::MatrixXd d_hat;
  Eigen::VectorXd standard_errors; //!< sqrt(diag(sigma) / n)
  std::vector<std::string> labels;
  BandwidthRule rule = BandwidthRule::hall_sheather;
  double bandwidth = 0.0;
  std::size_t clamped = 0;

  Eigen::Index kinks = 0;

  //! Standard error of the k-th kink location.
  double delta_se(Eigen::Index k) const { return standard_errors[standard_errors.size() - kinks + k]; }
};

inline std::vector<std::string> theta_labels(Eigen::Index K, Eigen::Index p)
{
  std::vector<std::string> l{ "alpha0", "alpha1" };
  for (Eigen::Index k = 0; k < K; ++k)
    l.push_back("beta" + std::to_string(k + 1));
  for (Eigen::Index j = 0; j < p; ++j)
    l.push_back("gamma" + std::to_string(j + 1));
  for (Eigen::Index k = 0; k < K; ++k)
    l.push_back("delta" + std::to_string(k + 1));
  return l;
}

//! Rows h(W_t; theta)' = (1, x, (x - d_k)_+, z', -b_k 1[x > d_k]).
inline Eigen::MatrixXd gradient_rows(const Dataset& data, const MkqrParams& params)
{
  const Eigen::Index n = data.size();
  const Eigen::Index K = params.kinks();
  const Eigen::Index p = data.covariates();
  Eigen::MatrixXd H(n, 2 + 2 * K + p);
  H.leftCols(2 + K + p) = build_design(data.x, data.z, params.deltas).values;
  for (Eigen::Index k = 0; k < K; ++k) {
    const double d = params.deltas[k];
    const double b = params.betas[k];
    H.col(2 + K + p + k) = data.x.unaryExpr([d, b](double v) { return v > d ? -b : 0.0; });
  }
  return H;
}

inline CovarianceEstimate covariance(const Dataset& data,
                                     const ThetaEstimate& theta,
                                     QuantileLevel tau,
                                     const CovarianceSettings& settings = {})
{
  check_dimensions(data, theta.params);
  const auto& params = theta.params;
  const double n = static_cast<double>(data.size());
  const Eigen::MatrixXd H = gradient_rows(data, params);

  const DensityWeights f =
    density_weights(build_design(data.x, data.z, params.deltas).values, data.y, tau, settings.density);

  CovarianceEstimate out;
  const double t = tau.value();
  out.c_hat = t * (1.0 - t) * (H.transpose() * H) / n;
  out.d_hat = H.transpose() * (f.values.asDiagonal() * H) / n;

  Eigen::FullPivLU<Eigen::MatrixXd> lu(out.d_hat);
  lu.setThreshold(settings.rank_threshold);
  if (lu.rank() < out.d_hat.rows())
    throw RankError("density-weighted Hessian is singular: too little data near a kink "
                    "or degenerate density estimates");
  const Eigen::MatrixXd d_inv = lu.inverse();
  out.sigma = d_inv * out.c_hat * d_inv;
  out.standard_errors = (out.sigma.diagonal().array().max(0.0) / n).sqrt();
  out.labels = theta_labels(params.kinks(), data.covariates());
  out.rule = f.rule;
  out.bandwidth = f.bandwidth;
  out.clamped = f.clamped;
  out.kinks = params.kinks();
  return out;
}

} // namespace mkqr
