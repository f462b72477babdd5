#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace mkqr {

//! Base class for every error raised by the library.
class Error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

//! Invalid arguments or inconsistent dimensions.
class UsageError : public Error
{
public:
  using Error::Error;
};

//! Design (or plug-in matrix) is numerically rank deficient.
class RankError : public Error
{
public:
  using Error::Error;
};

//! Iterative solver stopped before reaching its tolerance.
class ConvergenceError : public Error
{
public:
  ConvergenceError(const std::string& what, Eigen::VectorXd last_iterate)
    : Error(what)
    , last_iterate_(std::move(last_iterate))
  {}

  const Eigen::VectorXd& last_iterate() const noexcept { return last_iterate_; }

private:
  Eigen::VectorXd last_iterate_;
};

//! Quantile level shifted by the bandwidth leaves (0, 1), or the difference
//! quotients are degenerate and the settings ask for a hard failure.
class BandwidthError : public Error
{
public:
  using Error::Error;
};

//! Too few bootstrap replicates survived to form an interval.
class DegenerateBootstrapError : public Error
{
public:
  using Error::Error;
};

} // namespace mkqr
