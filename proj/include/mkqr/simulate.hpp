#pragma once

// Monte Carlo studies over generated scenarios: kink-number selection rates,
// estimation accuracy, interval coverage and test rejection curves.
// Replicate r always uses the data seed replicate_seed(seed, r), so studies
// sharing a seed see the same datasets regardless of the number of jobs.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "brisq.hpp"
#include "covariance.hpp"
#include "errors.hpp"
#include "intervals.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "score_test.hpp"
#include "select.hpp"
#include "simgen.hpp"

namespace mkqr {

inline std::uint64_t replicate_seed(std::uint64_t master, std::uint64_t replicate)
{
  Rng rng = Rng(master).substream(replicate);
  const std::uint64_t hi = rng.next_u32();
  return (hi << 32) | rng.next_u32();
}

// ---------------------------------------------------------------------------
// Selection

struct SelectionStudy
{
  ScenarioSpec scenario{};
  double tau = 0.5;
  std::vector<CnRule> rules{ CnRule::log };
  int replicates = 200;
  int k_max = 10;
  BrisqSettings brisq{};
  unsigned jobs = 1;
};

struct SelectionRow
{
  CnRule rule = CnRule::log;
  int correct = 0;
  int replicates = 0;
  std::map<int, int> histogram; //!< selected K -> count

  double rate() const { return replicates ? static_cast<double>(correct) / replicates : 0.0; }
};

inline std::vector<SelectionRow> run_selection_study(const SelectionStudy& study)
{
  const int true_k = static_cast<int>(scenario_params(study.scenario).kinks());
  const auto reps = static_cast<std::size_t>(study.replicates);
  const std::size_t m = study.rules.size();
  std::vector<int> selected(reps * m, -1);
  parallel_for(reps, study.jobs, [&](std::size_t r) {
    ScenarioSpec s = study.scenario;
    s.seed = replicate_seed(study.scenario.seed, r);
    const GeneratedData g = generate(s);
    for (std::size_t j = 0; j < m; ++j) {
      SelectSettings ss;
      ss.k_max = study.k_max;
      ss.cn_rule = study.rules[j];
      ss.brisq = study.brisq;
      ss.brisq.seed = s.seed;
      ss.compute_covariance = false;
      try {
        selected[r * m + j] = backward_eliminate(g.data, QuantileLevel(study.tau), ss).first.kinks;
      } catch (const Error&) {
      }
    }
  });
  std::vector<SelectionRow> rows(m);
  for (std::size_t j = 0; j < m; ++j) {
    rows[j].rule = study.rules[j];
    rows[j].replicates = study.replicates;
    for (std::size_t r = 0; r < reps; ++r) {
      const int k = selected[r * m + j];
      ++rows[j].histogram[k];
      if (k == true_k)
        ++rows[j].correct;
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Estimation accuracy at the true number of kinks

struct EstimationStudy
{
  ScenarioSpec scenario{};
  double tau = 0.5;
  int replicates = 500;
  BrisqSettings brisq{};
  CovarianceSettings covariance{};
  unsigned jobs = 1;
};

struct ParameterSummary
{
  std::string label;
  double truth = 0.0;
  double bias = 0.0;
  double sd = 0.0;
  double mean_se = 0.0; //!< average over replicates with a covariance
  double mse = 0.0;
};

struct EstimationSummary
{
  std::vector<ParameterSummary> parameters;
  int replicates = 0;
  int usable = 0;      //!< fits that kept every kink
  int se_available = 0;
};

inline EstimationSummary run_estimation_study(const EstimationStudy& study)
{
  const QuantileLevel tau(study.tau);
  const MkqrParams truth = true_theta_at(study.scenario, tau);
  const Eigen::VectorXd theta0 = truth.theta();
  const auto K = static_cast<int>(truth.kinks());
  const auto reps = static_cast<std::size_t>(study.replicates);
  std::vector<std::optional<Eigen::VectorXd>> est(reps);
  std::vector<std::optional<Eigen::VectorXd>> se(reps);
  parallel_for(reps, study.jobs, [&](std::size_t r) {
    ScenarioSpec s = study.scenario;
    s.seed = replicate_seed(study.scenario.seed, r);
    const GeneratedData g = generate(s);
    BrisqSettings bs = study.brisq;
    bs.seed = s.seed;
    try {
      const ThetaEstimate fit = brisq_fit(g.data, tau, K, bs);
      if (fit.kinks() != K)
        return;
      est[r] = fit.params.theta();
      se[r] = covariance(g.data, fit, tau, study.covariance).standard_errors;
    } catch (const Error&) {
    }
  });

  EstimationSummary out;
  out.replicates = study.replicates;
  const auto labels = theta_labels(K, truth.gamma.size());
  const Eigen::Index d = theta0.size();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(d), sum2 = Eigen::VectorXd::Zero(d), se_sum = Eigen::VectorXd::Zero(d);
  for (std::size_t r = 0; r < reps; ++r) {
    if (!est[r])
      continue;
    ++out.usable;
    sum += *est[r] - theta0;
    sum2 += (*est[r] - theta0).array().square().matrix();
    if (se[r]) {
      ++out.se_available;
      se_sum += *se[r];
    }
  }
  for (Eigen::Index i = 0; i < d; ++i) {
    ParameterSummary p;
    p.label = labels[static_cast<std::size_t>(i)];
    p.truth = theta0[i];
    if (out.usable > 0) {
      const double u = out.usable;
      p.bias = sum[i] / u;
      p.mse = sum2[i] / u;
      p.sd = out.usable > 1 ? std::sqrt(std::max(0.0, (sum2[i] - u * p.bias * p.bias) / (u - 1.0))) : 0.0;
    }
    if (out.se_available > 0)
      p.mean_se = se_sum[i] / out.se_available;
    out.parameters.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Interval coverage at the true number of kinks

struct CoverageStudy
{
  ScenarioSpec scenario{};
  double tau = 0.5;
  int replicates = 200;
  double level = 0.95;
  std::vector<CiMethod> methods{ CiMethod::wald, CiMethod::score };
  int bootstrap_replicates = 200;
  BrisqSettings brisq{};
  SrsCiSettings srs{};
  unsigned jobs = 1;
};

struct CoverageRow
{
  CiMethod method = CiMethod::wald;
  std::vector<double> coverage;    //!< per kink
  std::vector<double> mean_length; //!< per kink
  int usable = 0;                  //!< replicates with an interval
  int truncated = 0;
  double mean_seconds = 0.0;
};

struct CoverageSummary
{
  std::vector<CoverageRow> rows;
  int replicates = 0;
  int fitted = 0; //!< replicates whose fit kept every kink
};

inline CoverageSummary run_coverage_study(const CoverageStudy& study)
{
  const QuantileLevel tau(study.tau);
  const MkqrParams truth = true_theta_at(study.scenario, tau);
  const auto K = static_cast<int>(truth.kinks());
  const auto reps = static_cast<std::size_t>(study.replicates);
  const std::size_t m = study.methods.size();
  std::vector<std::optional<IntervalSet>> sets(reps * m);
  std::vector<char> fitted(reps, 0);

  parallel_for(reps, study.jobs, [&](std::size_t r) {
    ScenarioSpec s = study.scenario;
    s.seed = replicate_seed(study.scenario.seed, r);
    const GeneratedData g = generate(s);
    BrisqSettings bs = study.brisq;
    bs.seed = s.seed;
    ThetaEstimate fit;
    try {
      fit = brisq_fit(g.data, tau, K, bs);
    } catch (const Error&) {
      return;
    }
    if (fit.kinks() != K)
      return;
    fitted[r] = 1;
    for (std::size_t j = 0; j < m; ++j) {
      const auto t0 = std::chrono::steady_clock::now();
      try {
        IntervalSet set;
        switch (study.methods[j]) {
          case CiMethod::wald:
            set = wald_ci(fit, covariance(g.data, fit, tau), study.level);
            break;
          case CiMethod::boot: {
            BootstrapCiSettings b;
            b.replicates = study.bootstrap_replicates;
            b.seed = s.seed;
            b.brisq = bs;
            set = bootstrap_ci(g.data, tau, fit, study.level, b);
            break;
          }
          case CiMethod::score:
            set = srs_invert_ci(g.data, tau, fit, study.level, study.srs);
            break;
        }
        set.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        sets[r * m + j] = std::move(set);
      } catch (const Error&) {
      }
    }
  });

  CoverageSummary out;
  out.replicates = study.replicates;
  for (char f : fitted)
    out.fitted += f;
  for (std::size_t j = 0; j < m; ++j) {
    CoverageRow row;
    row.method = study.methods[j];
    row.coverage.assign(static_cast<std::size_t>(K), 0.0);
    row.mean_length.assign(static_cast<std::size_t>(K), 0.0);
    for (std::size_t r = 0; r < reps; ++r) {
      const auto& set = sets[r * m + j];
      if (!set)
        continue;
      ++row.usable;
      row.mean_seconds += set->seconds;
      for (int k = 0; k < K; ++k) {
        const auto& iv = set->kinks[static_cast<std::size_t>(k)];
        row.coverage[static_cast<std::size_t>(k)] += iv.contains(truth.deltas[k]) ? 1.0 : 0.0;
        row.mean_length[static_cast<std::size_t>(k)] += iv.length();
        row.truncated += iv.truncated ? 1 : 0;
      }
    }
    if (row.usable > 0) {
      for (int k = 0; k < K; ++k) {
        row.coverage[static_cast<std::size_t>(k)] /= row.usable;
        row.mean_length[static_cast<std::size_t>(k)] /= row.usable;
      }
      row.mean_seconds /= row.usable;
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rejection rates of the kink-existence test along beta_1 = c / sqrt(n)

struct PowerStudy
{
  int n = 1000;
  ErrorLaw error = ErrorLaw::normal;
  bool heteroscedastic = false;
  std::vector<double> c_values{ 0.0, 2.0, 4.0, 6.0, 8.0, 10.0 };
  double tau = 0.5;
  int replicates = 200;
  int bootstrap_replicates = 300;
  double alpha = 0.05;
  std::uint64_t seed = 1;
  unsigned jobs = 1;
};

struct PowerPoint
{
  double c = 0.0;
  double rejection_rate = 0.0;
  int replicates = 0;
  int failed = 0;
};

inline std::vector<PowerPoint> run_power_study(const PowerStudy& study)
{
  const QuantileLevel tau(study.tau);
  const auto reps = static_cast<std::size_t>(study.replicates);
  std::vector<PowerPoint> out;
  for (double c : study.c_values) {
    std::vector<int> reject(reps, -1);
    parallel_for(reps, study.jobs, [&](std::size_t r) {
      ScenarioSpec s;
      s.n = study.n;
      s.error = study.error;
      s.heteroscedastic = study.heteroscedastic;
      s.power_c = c;
      s.seed = replicate_seed(study.seed, r);
      const GeneratedData g = generate(s);
      WildBootstrapSettings ws;
      ws.replicates = study.bootstrap_replicates;
      ws.seed = s.seed;
      try {
        const auto res = wild_bootstrap_pvalue(g.data, tau, make_score_grid(g.data.x), ws);
        reject[r] = res.p_value < study.alpha ? 1 : 0;
      } catch (const Error&) {
      }
    });
    PowerPoint p;
    p.c = c;
    p.replicates = study.replicates;
    int hits = 0;
    for (int v : reject) {
      if (v < 0)
        ++p.failed;
      else
        hits += v;
    }
    const int valid = study.replicates - p.failed;
    p.rejection_rate = valid > 0 ? static_cast<double>(hits) / valid : 0.0;
    out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scenario files: one `key = value` per line, `#` starts a comment.

struct ScenarioFile
{
  std::map<std::string, std::string> values;
  std::map<std::string, int> lines; //!< key -> line number

  bool has(const std::string& key) const { return values.count(key) > 0; }

  std::string get(const std::string& key, const std::string& fallback) const
  {
    const auto it = values.find(key);
    return it == values.end() ? fallback : it->second;
  }

  template<class T>
  T number(const std::string& key, T fallback) const
  {
    const auto it = values.find(key);
    if (it == values.end())
      return fallback;
    std::istringstream in(it->second);
    T v{};
    in >> v;
    if (in.fail() || !(in >> std::ws).eof())
      throw UsageError("scenario line " + std::to_string(lines.at(key)) + ": '" + key +
                       "' expects a number, got '" + it->second + "'");
    return v;
  }

  bool flag(const std::string& key, bool fallback) const
  {
    const auto it = values.find(key);
    if (it == values.end())
      return fallback;
    const std::string& v = it->second;
    if (v == "true" || v == "yes" || v == "1")
      return true;
    if (v == "false" || v == "no" || v == "0")
      return false;
    throw UsageError("scenario line " + std::to_string(lines.at(key)) + ": '" + key + "' expects true or false");
  }

  std::vector<std::string> list(const std::string& key, const std::string& fallback) const
  {
    std::vector<std::string> out;
    std::stringstream in(get(key, fallback));
    std::string item;
    while (std::getline(in, item, ',')) {
      const auto b = item.find_first_not_of(" \t");
      const auto e = item.find_last_not_of(" \t");
      if (b != std::string::npos)
        out.push_back(item.substr(b, e - b + 1));
    }
    return out;
  }
};

inline ScenarioFile parse_scenario(std::istream& in)
{
  static const std::vector<std::string> known{ "study", "case",  "n",     "error",   "heteroscedastic",
                                               "tau",   "reps",  "seed",  "cn",      "kmax",
                                               "methods", "level", "B",   "c",       "alpha",
                                               "restarts", "power_c" };
  ScenarioFile f;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos)
      line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos)
      continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError("scenario line " + std::to_string(number) + ": expected key = value");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw UsageError("scenario line " + std::to_string(number) + ": unknown key '" + key + "'");
    if (value.empty())
      throw UsageError("scenario line " + std::to_string(number) + ": empty value for '" + key + "'");
    f.values[key] = value;
    f.lines[key] = number;
  }
  return f;
}

inline ScenarioFile read_scenario_file(const std::string& path)
{
  std::ifstream in(path);
  if (!in)
    throw UsageError("cannot open scenario file '" + path + "'");
  return parse_scenario(in);
}

//! Data-generating part of a scenario file.
inline ScenarioSpec scenario_from_file(const ScenarioFile& f)
{
  ScenarioSpec s;
  s.kink_case = f.number<int>("case", 1);
  s.n = f.number<int>("n", 500);
  s.error = parse_error_law(f.get("error", "normal"));
  s.heteroscedastic = f.flag("heteroscedastic", false);
  s.seed = f.number<std::uint64_t>("seed", 1);
  if (f.has("power_c"))
    s.power_c = f.number<double>("power_c", 0.0);
  if (s.kink_case < 1 || s.kink_case > 3)
    throw UsageError("scenario case must be 1, 2 or 3");
  if (s.n < 10)
    throw UsageError("scenario n must be at least 10");
  return s;
}

} // namespace mkqr
