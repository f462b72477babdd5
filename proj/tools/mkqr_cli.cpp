// mkqr: fit, test and simulate multi-kink quantile regressions from the
// command line. Results are written as JSON; see schemas/ for the layout.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mkqr/mkqr.hpp"

namespace {

using json = nlohmann::json;
using namespace mkqr;

constexpr const char* kVersion = "1.0.0";
constexpr std::uint64_t kDefaultSeed = 20240607;

enum ExitCode : int
{
  exit_ok = 0,
  exit_input = 2,
  exit_numerical = 3,
  exit_usage = 4
};

const CLI::Validator open_unit =
  CLI::Validator([](std::string& s) -> std::string {
    try {
      const double v = std::stod(s);
      if (v > 0.0 && v < 1.0)
        return {};
    } catch (const std::exception&) {
    }
    return "value must lie strictly between 0 and 1";
  }, "(0,1)");

json vec(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

std::string tau_key(double tau) { return json(tau).dump(); }

void write_output(const json& doc, const std::string& path)
{
  const std::string text = doc.dump(2) + "\n";
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out)
    throw InputError("cannot write '" + path + "'");
  out << text;
}

struct Common
{
  std::string input;
  std::vector<double> taus{ 0.5 };
  std::uint64_t seed = kDefaultSeed;
  std::string output;
  unsigned jobs = 1;
};

void add_common(CLI::App* cmd, Common& c, bool with_input)
{
  if (with_input)
    cmd->add_option("input", c.input, "CSV file with header y,x[,z1,...]")->required();
  cmd->add_option("--tau", c.taus, "quantile level (repeat for several)")->check(open_unit)->capture_default_str();
  cmd->add_option("--seed", c.seed, "random seed")->envname("MKQR_SEED")->capture_default_str();
  cmd->add_option("-o,--output", c.output, "write JSON here instead of stdout");
  cmd->add_option("--jobs", c.jobs, "worker threads (0 = all cores)")->capture_default_str();
}

struct FitOptions
{
  int kmax = 10;
  std::string cn = "log";
  std::optional<int> kinks;
  int restarts = 20;
  std::string bandwidth = "hall-sheather";
  std::string curve;
};

void add_fit_options(CLI::App* cmd, FitOptions& f)
{
  cmd->add_option("--kmax", f.kmax, "largest number of kinks considered")->check(CLI::Range(1, 50))->capture_default_str();
  cmd->add_option("--cn", f.cn, "sBIC penalty multiplier: one, loglog or log")
    ->check(CLI::IsMember({ "1", "one", "loglog", "log" }))
    ->capture_default_str();
  cmd->add_option("--kinks", f.kinks, "fix the number of kinks instead of selecting it")->check(CLI::Range(0, 50));
  cmd->add_option("--restarts", f.restarts, "bootstrap restarts per fit")->check(CLI::Range(0, 100000))->capture_default_str();
  cmd->add_option("--bandwidth", f.bandwidth, "density bandwidth rule: hall-sheather or bofinger")
    ->check(CLI::IsMember({ "hall-sheather", "hs", "bofinger" }))
    ->capture_default_str();
}

CsvData load(const std::string& path)
{
  CsvData csv = read_csv_file(path);
  try {
    csv.data.validate();
  } catch (const UsageError& e) {
    throw InputError(path + ": " + e.what());
  }
  return csv;
}

SelectSettings select_settings(const FitOptions& f, const Common& c)
{
  SelectSettings s;
  s.k_max = f.kmax;
  s.cn_rule = parse_cn_rule(f.cn);
  s.brisq.restart_count = f.restarts;
  s.brisq.seed = c.seed;
  s.covariance.density.rule = parse_bandwidth_rule(f.bandwidth);
  return s;
}

//! Selected (or fixed-K) fit at one quantile level.
FitReport fit_at(const Dataset& data, QuantileLevel tau, const FitOptions& f, const Common& c)
{
  const SelectSettings s = select_settings(f, c);
  if (!f.kinks)
    return backward_eliminate(data, tau, s).first;

  FitReport r;
  r.theta = *f.kinks == 0 ? fit_fixed_kinks(data, tau, Eigen::VectorXd(0), resolve(s.brisq, data).solver)
                          : brisq_fit(data, tau, *f.kinks, s.brisq);
  r.kinks = static_cast<int>(r.theta.kinks());
  try {
    r.covariance = covariance(data, r.theta, tau, s.covariance);
    r.standard_errors = r.covariance->standard_errors;
  } catch (const Error& e) {
    r.covariance_error = e.what();
  }
  return r;
}

json fit_block(const FitReport& r, double tau, const std::vector<std::string>& columns)
{
  const auto& p = r.theta.params;
  json coef{ { "alpha0", p.alpha0 },
             { "alpha1", p.alpha1 },
             { "beta", vec(p.betas) },
             { "gamma", vec(p.gamma) },
             { "delta", vec(p.deltas) } };
  const SegmentForm seg = to_segment_form(p);
  json b{ { "tau", tau },
          { "kinks", r.kinks },
          { "objective", r.theta.objective },
          { "coefficients", coef },
          { "covariate_names", std::vector<std::string>(columns.begin() + 2, columns.end()) },
          { "segments", { { "intercepts", vec(seg.intercepts) }, { "slopes", vec(seg.slopes) } } } };
  if (r.covariance) {
    json se = json::object();
    for (std::size_t i = 0; i < r.covariance->labels.size(); ++i)
      se[r.covariance->labels[i]] = r.covariance->standard_errors[static_cast<Eigen::Index>(i)];
    b["standard_errors"] = se;
    b["bandwidth"] = { { "rule", to_string(r.covariance->rule) }, { "value", r.covariance->bandwidth } };
    b["covariance_error"] = nullptr;
  } else {
    b["standard_errors"] = nullptr;
    b["bandwidth"] = nullptr;
    b["covariance_error"] = r.covariance_error.empty() ? json(nullptr) : json(r.covariance_error);
  }
  json trace = json::array();
  for (const auto& e : r.trace.entries)
    trace.push_back({ { "kinks", e.K }, { "sbic", e.value }, { "objective", e.estimate.objective } });
  b["sbic_trace"] = trace;
  b["stage1_kinks"] = r.trace.entries.empty() ? json(nullptr) : json(r.trace.stage1_kinks);
  b["diagnostics"] = { { "iterations", r.theta.iterations },
                       { "converged", r.theta.converged },
                       { "accepted_restarts", r.theta.accepted_restarts },
                       { "averaged_estimates", r.theta.averaged_count },
                       { "dropped_kinks", r.theta.dropped_kinks },
                       { "objective_trajectory", r.theta.trajectory } };
  return b;
}

void write_curve(const std::string& path, const Dataset& data, const std::vector<std::pair<double, MkqrParams>>& fits)
{
  std::ofstream out(path);
  if (!out)
    throw InputError("cannot write '" + path + "'");
  const Eigen::VectorXd zbar = data.z.cols() ? Eigen::VectorXd(data.z.colwise().mean().transpose()) : Eigen::VectorXd(0);
  out << "x";
  for (const auto& f : fits)
    out << ",q_" << tau_key(f.first);
  out << '\n';
  const double lo = data.x.minCoeff();
  const double hi = data.x.maxCoeff();
  constexpr int points = 201;
  char buf[32];
  for (int i = 0; i < points; ++i) {
    const double x = lo + (hi - lo) * i / (points - 1);
    std::snprintf(buf, sizeof buf, "%.17g", x);
    out << buf;
    for (const auto& f : fits) {
      std::snprintf(buf, sizeof buf, "%.17g", predict_quantile(f.second, x, zbar));
      out << ',' << buf;
    }
    out << '\n';
  }
}

json header(const std::string& command, const Common& c)
{
  return { { "command", command }, { "version", kVersion }, { "seed", c.seed } };
}

int run_fit(const Common& c, const FitOptions& f)
{
  const CsvData csv = load(c.input);
  json doc = header("fit", c);
  doc["input"] = c.input;
  doc["n"] = csv.data.size();
  doc["p"] = csv.data.covariates();
  doc["settings"] = { { "kmax", f.kmax },
                      { "cn", to_string(parse_cn_rule(f.cn)) },
                      { "kinks", f.kinks ? json(*f.kinks) : json(nullptr) },
                      { "restarts", f.restarts } };
  json results = json::object();
  std::vector<std::pair<double, MkqrParams>> curves;
  for (double tau : c.taus) {
    const FitReport r = fit_at(csv.data, QuantileLevel(tau), f, c);
    results[tau_key(tau)] = fit_block(r, tau, csv.columns);
    curves.emplace_back(tau, r.theta.params);
  }
  doc["results"] = results;
  if (!f.curve.empty())
    write_curve(f.curve, csv.data, curves);
  write_output(doc, c.output);
  return exit_ok;
}

struct TestOptions
{
  int replicates = 300;
  double trim_lower = 0.1;
  double trim_upper = 0.9;
};

int run_test(const Common& c, const TestOptions& t)
{
  const CsvData csv = load(c.input);
  json doc = header("test", c);
  doc["input"] = c.input;
  doc["n"] = csv.data.size();
  json results = json::object();
  const ScoreGrid grid = make_score_grid(csv.data.x, t.trim_lower, t.trim_upper);
  for (double tau : c.taus) {
    WildBootstrapSettings ws;
    ws.replicates = t.replicates;
    ws.seed = c.seed;
    const KinkTestResult r = wild_bootstrap_pvalue(csv.data, QuantileLevel(tau), grid, ws);
    results[tau_key(tau)] = { { "tau", tau },
                              { "statistic", r.statistic },
                              { "argmax", r.argmax },
                              { "p_value", r.p_value },
                              { "B", r.replicates },
                              { "seed", r.seed },
                              { "grid", { { "lower", grid.lower_fraction },
                                          { "upper", grid.upper_fraction },
                                          { "points", grid.points.size() } } } };
  }
  doc["results"] = results;
  write_output(doc, c.output);
  return exit_ok;
}

struct CiOptions
{
  std::vector<std::string> methods;
  double level = 0.95;
  int replicates = 200;
  std::optional<double> rho;
  std::optional<double> h;
};

json interval_block(const IntervalSet& s)
{
  json kinks = json::array();
  for (const auto& k : s.kinks)
    kinks.push_back({ { "estimate", k.estimate }, { "lower", k.lower }, { "upper", k.upper }, { "truncated", k.truncated } });
  json b{ { "level", s.level }, { "seconds", s.seconds }, { "kinks", kinks } };
  if (s.method == CiMethod::boot) {
    b["replicates"] = s.replicates;
    b["discarded"] = s.discarded;
  }
  return b;
}

int run_ci(const Common& c, const FitOptions& f, CiOptions o)
{
  const CsvData csv = load(c.input);
  if (o.methods.empty())
    o.methods = { "wald", "boot", "score" };
  json doc = header("ci", c);
  doc["input"] = c.input;
  doc["n"] = csv.data.size();
  json results = json::object();
  bool failed = false;
  for (double tau_value : c.taus) {
    const QuantileLevel tau(tau_value);
    const FitReport r = fit_at(csv.data, tau, f, c);
    json block{ { "tau", tau_value }, { "kinks", r.kinks }, { "estimate", vec(r.theta.params.deltas) } };
    json intervals = json::object();
    json errors = json::object();
    for (const auto& name : o.methods) {
      const CiMethod m = parse_ci_method(name);
      if (r.kinks == 0)
        continue;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        IntervalSet s;
        switch (m) {
          case CiMethod::wald:
            if (!r.covariance)
              throw RankError(r.covariance_error.empty() ? "covariance unavailable" : r.covariance_error);
            s = wald_ci(r.theta, *r.covariance, o.level);
            break;
          case CiMethod::boot: {
            BootstrapCiSettings b;
            b.replicates = o.replicates;
            b.seed = c.seed;
            b.jobs = c.jobs;
            b.brisq = select_settings(f, c).brisq;
            s = bootstrap_ci(csv.data, tau, r.theta, o.level, b);
            break;
          }
          case CiMethod::score: {
            SrsCiSettings ss;
            ss.rho_step = o.rho;
            ss.bandwidth = o.h;
            s = srs_invert_ci(csv.data, tau, r.theta, o.level, ss);
            break;
          }
        }
        s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        intervals[to_string(m)] = interval_block(s);
      } catch (const Error& e) {
        errors[to_string(m)] = e.what();
        failed = true;
      }
    }
    block["intervals"] = intervals;
    block["errors"] = errors;
    results[tau_key(tau_value)] = block;
  }
  doc["results"] = results;
  write_output(doc, c.output);
  return failed ? exit_numerical : exit_ok;
}

// ---------------------------------------------------------------------------
// simulate

struct SimOptions
{
  std::string config;
  std::string study;
  int kink_case = 1;
  int n = 500;
  std::string error = "normal";
  bool heteroscedastic = false;
  int reps = 200;
  std::vector<std::string> cn{ "log" };
  int kmax = 10;
  std::vector<std::string> methods{ "wald", "score" };
  double level = 0.95;
  int B = 300;
  std::vector<double> c_values{ 0, 2, 4, 6, 8, 10 };
  double alpha = 0.05;
  int restarts = 20;
  bool full = false;
  std::string csv;
  std::string emit_data;
};

struct Scenario
{
  int kink_case;
  std::string error;
  bool heteroscedastic;
  double tau;
};

json scenario_json(const Scenario& s, int n)
{
  return { { "case", s.kink_case }, { "n", n }, { "error", s.error }, { "heteroscedastic", s.heteroscedastic }, { "tau", s.tau } };
}

std::string csv_prefix(const Scenario& s, int n)
{
  std::ostringstream o;
  o << s.kink_case << ',' << s.error << ',' << (s.heteroscedastic ? "true" : "false") << ',' << n << ','
    << tau_key(s.tau);
  return o.str();
}

std::string num(double v)
{
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<double> number_list(const ScenarioFile& f, const std::string& key)
{
  std::vector<double> out;
  for (const auto& item : f.list(key, "")) {
    char* end = nullptr;
    const double v = std::strtod(item.c_str(), &end);
    if (end == item.c_str() || *end != '\0')
      throw InputError("scenario line " + std::to_string(f.lines.at(key)) + ": '" + item + "' is not a number");
    out.push_back(v);
  }
  return out;
}

int run_simulate(CLI::App* cmd, Common c, SimOptions o)
{
  // defaults < scenario file < explicit flags
  if (!o.config.empty()) {
    const ScenarioFile f = read_scenario_file(o.config);
    auto from_file = [&](const char* flag, const char* key, auto apply) {
      if (cmd->count(flag) == 0 && f.has(key))
        apply();
    };
    from_file("--study", "study", [&] { o.study = f.get("study", o.study); });
    from_file("--case", "case", [&] { o.kink_case = f.number<int>("case", o.kink_case); });
    from_file("--n", "n", [&] { o.n = f.number<int>("n", o.n); });
    from_file("--error", "error", [&] { o.error = f.get("error", o.error); });
    from_file("--heteroscedastic", "heteroscedastic", [&] { o.heteroscedastic = f.flag("heteroscedastic", false); });
    from_file("--reps", "reps", [&] { o.reps = f.number<int>("reps", o.reps); });
    from_file("--seed", "seed", [&] { c.seed = f.number<std::uint64_t>("seed", c.seed); });
    from_file("--cn", "cn", [&] { o.cn = f.list("cn", ""); });
    from_file("--kmax", "kmax", [&] { o.kmax = f.number<int>("kmax", o.kmax); });
    from_file("--method", "methods", [&] { o.methods = f.list("methods", ""); });
    from_file("--level", "level", [&] { o.level = f.number<double>("level", o.level); });
    from_file("-B", "B", [&] { o.B = f.number<int>("B", o.B); });
    from_file("--alpha", "alpha", [&] { o.alpha = f.number<double>("alpha", o.alpha); });
    from_file("--restarts", "restarts", [&] { o.restarts = f.number<int>("restarts", o.restarts); });
    from_file("--tau", "tau", [&] {
      c.taus = number_list(f, "tau");
    });
    from_file("--c", "c", [&] {
      o.c_values = number_list(f, "c");
    });
    // the file is input data: reject bad values with an input error
    for (double t : c.taus)
      if (!(t > 0.0 && t < 1.0))
        throw InputError("scenario file: tau values must lie in (0, 1)");
    if (o.reps < 1 || o.B < 1 || !(o.level > 0.0 && o.level < 1.0) || !(o.alpha > 0.0 && o.alpha < 1.0))
      throw InputError("scenario file: reps and B must be positive, level and alpha in (0, 1)");
    if (o.kink_case < 1 || o.kink_case > 3 || o.n < 10)
      throw InputError("scenario file: case must be 1, 2 or 3 and n at least 10");
    try {
      parse_error_law(o.error);
      for (const auto& r : o.cn)
        parse_cn_rule(r);
      for (const auto& m : o.methods)
        parse_ci_method(m);
    } catch (const UsageError& e) {
      throw InputError(std::string("scenario file: ") + e.what());
    }
  }

  if (!o.emit_data.empty()) {
    ScenarioSpec s;
    s.kink_case = o.kink_case;
    s.n = o.n;
    s.error = parse_error_law(o.error);
    s.heteroscedastic = o.heteroscedastic;
    s.seed = c.seed;
    std::ofstream out(o.emit_data);
    if (!out)
      throw InputError("cannot write '" + o.emit_data + "'");
    write_csv(out, generate(s).data);
    if (o.study.empty())
      return exit_ok;
  }
  if (o.study.empty()) {
    if (!o.config.empty())
      throw InputError("scenario file sets no study");
    std::cerr << "simulate needs --study (or a scenario file with a study line)\n";
    return exit_usage;
  }

  std::vector<Scenario> scenarios;
  std::vector<int> cases{ o.kink_case };
  std::vector<std::string> errors{ o.error };
  std::vector<bool> hets{ o.heteroscedastic };
  std::vector<double> taus = c.taus;
  if (o.full) {
    o.reps = 1000;
    cases = { 1, 2, 3 };
    errors = { "normal", "t3" };
    hets = { false, true };
    if (o.study == "selection") {
      taus = { 0.3, 0.5, 0.7 };
      o.cn = { "one", "loglog", "log" };
    } else if (o.study == "estimation") {
      taus = { 0.2, 0.5, 0.8 };
    } else if (o.study == "coverage") {
      errors = { "t3" };
      hets = { true };
      taus = { 0.3, 0.5, 0.8 };
      o.methods = { "wald", "boot", "score" };
    } else if (o.study == "power") {
      o.n = 1000;
      o.B = 300;
      taus = { 0.5 };
      o.c_values = { 0, 2, 4, 6, 8, 10 };
    }
  }
  for (int k : cases)
    for (const auto& e : errors)
      for (bool h : hets)
        for (double t : taus)
          scenarios.push_back({ k, e, h, t });

  json doc = header("simulate", c);
  doc["study"] = o.study;
  doc["full"] = o.full;
  doc["replicates"] = o.reps;
  json blocks = json::array();
  std::ostringstream table;

  auto spec_of = [&](const Scenario& s) {
    ScenarioSpec spec;
    spec.kink_case = s.kink_case;
    spec.n = o.n;
    spec.error = parse_error_law(s.error);
    spec.heteroscedastic = s.heteroscedastic;
    spec.seed = c.seed;
    return spec;
  };
  BrisqSettings brisq;
  brisq.restart_count = o.restarts;

  if (o.study == "selection") {
    table << "case,error,heteroscedastic,n,tau,cn,replicates,correct,rate\n";
    for (const auto& s : scenarios) {
      SelectionStudy st;
      st.scenario = spec_of(s);
      st.tau = s.tau;
      st.rules.clear();
      for (const auto& r : o.cn)
        st.rules.push_back(parse_cn_rule(r));
      st.replicates = o.reps;
      st.k_max = o.kmax;
      st.brisq = brisq;
      st.jobs = c.jobs;
      json block = scenario_json(s, o.n);
      json rows = json::array();
      for (const auto& r : run_selection_study(st)) {
        json hist = json::object();
        for (const auto& [k, count] : r.histogram)
          hist[std::to_string(k)] = count;
        rows.push_back({ { "cn", to_string(r.rule) }, { "correct", r.correct }, { "rate", r.rate() }, { "selected_kinks", hist } });
        table << csv_prefix(s, o.n) << ',' << to_string(r.rule) << ',' << r.replicates << ',' << r.correct << ','
              << num(r.rate()) << '\n';
      }
      block["rows"] = rows;
      blocks.push_back(block);
    }
  } else if (o.study == "estimation") {
    table << "case,error,heteroscedastic,n,tau,parameter,truth,bias,sd,se,mse,usable\n";
    for (const auto& s : scenarios) {
      EstimationStudy st;
      st.scenario = spec_of(s);
      st.tau = s.tau;
      st.replicates = o.reps;
      st.brisq = brisq;
      st.jobs = c.jobs;
      const EstimationSummary sum = run_estimation_study(st);
      json block = scenario_json(s, o.n);
      json rows = json::array();
      for (const auto& p : sum.parameters) {
        rows.push_back({ { "parameter", p.label }, { "truth", p.truth }, { "bias", p.bias }, { "sd", p.sd }, { "se", p.mean_se }, { "mse", p.mse } });
        table << csv_prefix(s, o.n) << ',' << p.label << ',' << num(p.truth) << ',' << num(p.bias) << ',' << num(p.sd)
              << ',' << num(p.mean_se) << ',' << num(p.mse) << ',' << sum.usable << '\n';
      }
      block["rows"] = rows;
      block["usable"] = sum.usable;
      block["se_available"] = sum.se_available;
      blocks.push_back(block);
    }
  } else if (o.study == "coverage") {
    table << "case,error,heteroscedastic,n,tau,method,kink,coverage,mean_length,mean_seconds,usable,truncated\n";
    for (const auto& s : scenarios) {
      CoverageStudy st;
      st.scenario = spec_of(s);
      st.tau = s.tau;
      st.replicates = o.reps;
      st.level = o.level;
      st.methods.clear();
      for (const auto& m : o.methods)
        st.methods.push_back(parse_ci_method(m));
      st.bootstrap_replicates = o.B;
      st.brisq = brisq;
      st.jobs = c.jobs;
      const CoverageSummary sum = run_coverage_study(st);
      json block = scenario_json(s, o.n);
      json rows = json::array();
      for (const auto& r : sum.rows) {
        rows.push_back({ { "method", to_string(r.method) }, { "coverage", r.coverage }, { "mean_length", r.mean_length },
                         { "mean_seconds", r.mean_seconds }, { "usable", r.usable }, { "truncated", r.truncated } });
        for (std::size_t k = 0; k < r.coverage.size(); ++k)
          table << csv_prefix(s, o.n) << ',' << to_string(r.method) << ',' << (k + 1) << ',' << num(r.coverage[k]) << ','
                << num(r.mean_length[k]) << ',' << num(r.mean_seconds) << ',' << r.usable << ',' << r.truncated << '\n';
      }
      block["rows"] = rows;
      block["fitted"] = sum.fitted;
      blocks.push_back(block);
    }
  } else if (o.study == "power") {
    table << "n,error,heteroscedastic,tau,c,replicates,rejection_rate,failed\n";
    std::vector<Scenario> power_scenarios;
    for (const auto& e : errors)
      for (bool h : hets)
        for (double t : taus)
          power_scenarios.push_back({ 0, e, h, t });
    for (const auto& s : power_scenarios) {
      PowerStudy st;
      st.n = o.n;
      st.error = parse_error_law(s.error);
      st.heteroscedastic = s.heteroscedastic;
      st.c_values = o.c_values;
      st.tau = s.tau;
      st.replicates = o.reps;
      st.bootstrap_replicates = o.B;
      st.alpha = o.alpha;
      st.seed = c.seed;
      st.jobs = c.jobs;
      json block{ { "n", o.n }, { "error", s.error }, { "heteroscedastic", s.heteroscedastic }, { "tau", s.tau },
                  { "B", o.B }, { "alpha", o.alpha } };
      json rows = json::array();
      for (const auto& p : run_power_study(st)) {
        rows.push_back({ { "c", p.c }, { "rejection_rate", p.rejection_rate }, { "failed", p.failed } });
        table << o.n << ',' << s.error << ',' << (s.heteroscedastic ? "true" : "false") << ',' << tau_key(s.tau) << ','
              << num(p.c) << ',' << p.replicates << ',' << num(p.rejection_rate) << ',' << p.failed << '\n';
      }
      block["rows"] = rows;
      blocks.push_back(block);
    }
  } else {
    throw UsageError("unknown study '" + o.study + "' (expected selection, estimation, coverage or power)");
  }
  doc["scenarios"] = blocks;
  if (!o.csv.empty()) {
    std::ofstream out(o.csv);
    if (!out)
      throw InputError("cannot write '" + o.csv + "'");
    out << table.str();
  }
  write_output(doc, c.output);
  return exit_ok;
}

} // namespace

int main(int argc, char** argv)
{
  CLI::App app{ "Multi-kink quantile regression: fit, test, interval estimation and simulation" };
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  Common fit_c, test_c, ci_c, sim_c;
  FitOptions fit_f, ci_f;
  TestOptions test_o;
  CiOptions ci_o;
  SimOptions sim_o;

  auto* fit = app.add_subcommand("fit", "select the number of kinks and estimate the model");
  add_common(fit, fit_c, true);
  add_fit_options(fit, fit_f);
  fit->add_option("--curve", fit_f.curve, "write fitted quantile curves (CSV) here");

  auto* test = app.add_subcommand("test", "score test for the existence of a kink");
  add_common(test, test_c, true);
  test->add_option("-B,--bootstrap", test_o.replicates, "wild bootstrap replicates")->check(CLI::PositiveNumber)->capture_default_str();
  test->add_option("--trim-lower", test_o.trim_lower, "lower quantile of x bounding the search grid")->check(CLI::Range(0.0, 1.0))->capture_default_str();
  test->add_option("--trim-upper", test_o.trim_upper, "upper quantile of x bounding the search grid")->check(CLI::Range(0.0, 1.0))->capture_default_str();

  auto* ci = app.add_subcommand("ci", "confidence intervals for the kink locations");
  add_common(ci, ci_c, true);
  add_fit_options(ci, ci_f);
  ci->add_option("--method", ci_o.methods, "wald, boot or score (repeat for several; default all)")
    ->check(CLI::IsMember({ "wald", "boot", "score" }));
  ci->add_option("--level", ci_o.level, "confidence level")->check(open_unit)->capture_default_str();
  ci->add_option("-B,--bootstrap", ci_o.replicates, "bootstrap replicates")->check(CLI::PositiveNumber)->capture_default_str();
  ci->add_option("--rho", ci_o.rho, "scan step of the score inversion (default range(x)/200)")->check(CLI::PositiveNumber);
  ci->add_option("--bandwidth-h", ci_o.h, "smoothing bandwidth of the score statistic (default sd(x) n^-1/5)")->check(CLI::PositiveNumber);

  auto* sim = app.add_subcommand("simulate", "Monte Carlo studies on generated data");
  add_common(sim, sim_c, false);
  sim->add_option("--config", sim_o.config, "scenario file with key = value lines");
  sim->add_option("--study", sim_o.study, "selection, estimation, coverage or power")
    ->check(CLI::IsMember({ "selection", "estimation", "coverage", "power" }));
  sim->add_option("--case", sim_o.kink_case, "kink design 1, 2 or 3")->check(CLI::Range(1, 3))->capture_default_str();
  sim->add_option("--n", sim_o.n, "sample size")->check(CLI::Range(10, 10000000))->capture_default_str();
  sim->add_option("--error", sim_o.error, "normal or t3")->check(CLI::IsMember({ "normal", "t3" }))->capture_default_str();
  sim->add_flag("--heteroscedastic", sim_o.heteroscedastic, "error scale 1 + 0.2 x");
  sim->add_option("--reps", sim_o.reps, "Monte Carlo replicates")->check(CLI::PositiveNumber)->capture_default_str();
  sim->add_option("--cn", sim_o.cn, "sBIC rules to compare (repeat)")->check(CLI::IsMember({ "1", "one", "loglog", "log" }));
  sim->add_option("--kmax", sim_o.kmax, "largest number of kinks considered")->check(CLI::Range(1, 50))->capture_default_str();
  sim->add_option("--method", sim_o.methods, "interval methods (repeat)")->check(CLI::IsMember({ "wald", "boot", "score" }));
  sim->add_option("--level", sim_o.level, "confidence level")->check(open_unit)->capture_default_str();
  sim->add_option("-B,--bootstrap", sim_o.B, "bootstrap replicates per dataset")->check(CLI::PositiveNumber)->capture_default_str();
  sim->add_option("--c", sim_o.c_values, "signal strengths of the power design (repeat)");
  sim->add_option("--alpha", sim_o.alpha, "test level of the power study")->check(open_unit)->capture_default_str();
  sim->add_option("--restarts", sim_o.restarts, "bootstrap restarts per fit")->check(CLI::Range(0, 100000))->capture_default_str();
  sim->add_flag("--full", sim_o.full, "run the complete simulation grid with 1000 replicates");
  sim->add_option("--csv", sim_o.csv, "write the summary table (CSV) here");
  sim->add_option("--emit-data", sim_o.emit_data, "write the dataset generated with --seed (CSV) here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return exit_usage;
  }

  try {
    if (fit->parsed())
      return run_fit(fit_c, fit_f);
    if (test->parsed())
      return run_test(test_c, test_o);
    if (ci->parsed())
      return run_ci(ci_c, ci_f, ci_o);
    if (sim->parsed())
      return run_simulate(sim, sim_c, sim_o);
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return exit_input;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_input;
  } catch (const Error& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return exit_numerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_numerical;
  }
  return exit_usage;
}
