#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include "errors.hpp"

namespace mkqr::stats {

inline double norm_pdf(double x)
{
  static const boost::math::normal_distribution<double> std_normal;
  return boost::math::pdf(std_normal, x);
}

inline double norm_cdf(double x)
{
  static const boost::math::normal_distribution<double> std_normal;
  return boost::math::cdf(std_normal, x);
}

inline double norm_quantile(double p)
{
  static const boost::math::normal_distribution<double> std_normal;
  return boost::math::quantile(std_normal, p);
}

inline double chisq_quantile(double p, double dof)
{
  return boost::math::quantile(boost::math::chi_squared_distribution<double>(dof), p);
}

inline double mean(const Eigen::VectorXd& v)
{
  return v.size() ? v.mean() : 0.0;
}

//! Sample standard deviation (n - 1 denominator).
inline double sd(const Eigen::VectorXd& v)
{
  if (v.size() < 2)
    return 0.0;
  const double m = v.mean();
  return std::sqrt((v.array() - m).square().sum() / static_cast<double>(v.size() - 1));
}

//! Sample quantile with linear interpolation between order statistics
//! (the "type 7" rule). `sorted` must be ascending.
inline double quantile_sorted(const std::vector<double>& sorted, double p)
{
  if (sorted.empty())
    throw UsageError("quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline double quantile(const Eigen::VectorXd& v, double p)
{
  std::vector<double> s(v.data(), v.data() + v.size());
  std::sort(s.begin(), s.end());
  return quantile_sorted(s, p);
}

inline std::vector<double> sorted_copy(const Eigen::VectorXd& v)
{
  std::vector<double> s(v.data(), v.data() + v.size());
  std::sort(s.begin(), s.end());
  return s;
}

} // namespace mkqr::stats
