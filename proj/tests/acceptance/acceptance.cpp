// Acceptance suite. Each criterion prints one PASS/FAIL line; the exit status
// is non-zero when any selected criterion fails.
//
//   mkqr_acceptance [--criterion N] [--jobs J]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "../support/oracle.hpp"
#include "mkqr/mkqr.hpp"

using namespace mkqr;
using json = nlohmann::json;

namespace {

// pinned tolerances
constexpr double kSelectionRate = 0.95;
constexpr double kBiasLimit = 0.03;
constexpr double kRatioLow = 0.8;
constexpr double kRatioHigh = 1.25;
constexpr double kOracleSlack = 1e-3;
constexpr double kSizeLow = 0.02;
constexpr double kSizeHigh = 0.09;
constexpr double kPowerFloor = 0.9;
constexpr double kCoverageLow = 0.89;
constexpr double kCoverageHigh = 0.99;
constexpr double kSbicTolerance = 1e-12;

unsigned g_jobs = 0;

struct Outcome
{
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args)
{
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Outcome selection_consistency()
{
  SelectionStudy st;
  st.scenario.kink_case = 2;
  st.scenario.n = 500;
  st.scenario.seed = 101;
  st.tau = 0.5;
  st.rules = { CnRule::log };
  st.replicates = 200;
  st.jobs = g_jobs;
  const auto row = run_selection_study(st).front();
  return { row.rate() >= kSelectionRate,
           fmt("Case 2 K=2 selection rate %.3f over %d reps (need >= %.2f)", row.rate(), row.replicates,
               kSelectionRate) };
}

Outcome cn_ordering()
{
  SelectionStudy st;
  st.scenario.kink_case = 1;
  st.scenario.heteroscedastic = true;
  st.scenario.seed = 202;
  st.tau = 0.5;
  st.rules = { CnRule::one, CnRule::log };
  st.replicates = 200;
  st.jobs = g_jobs;
  const auto rows = run_selection_study(st);
  return { rows[1].rate() > rows[0].rate(),
           fmt("Case 1 heteroscedastic: rate with log n %.3f, with 1 %.3f (need log n > 1)", rows[1].rate(),
               rows[0].rate()) };
}

Outcome estimation_accuracy()
{
  EstimationStudy st;
  st.scenario.kink_case = 1;
  st.scenario.seed = 303;
  st.tau = 0.5;
  st.replicates = 500;
  st.jobs = g_jobs;
  const auto sum = run_estimation_study(st);
  const auto* delta = &sum.parameters.back();
  for (const auto& p : sum.parameters)
    if (p.label == "delta1")
      delta = &p;
  const double ratio = delta->sd / delta->mean_se;
  const bool pass = std::abs(delta->bias) <= kBiasLimit && ratio >= kRatioLow && ratio <= kRatioHigh &&
                    sum.usable == sum.replicates;
  return { pass, fmt("delta bias %.4f (|.| <= %.2f), SD %.4f, mean SE %.4f, SD/SE %.3f (in [%.2f, %.2f]), usable %d/%d",
                     delta->bias, kBiasLimit, delta->sd, delta->mean_se, ratio, kRatioLow, kRatioHigh, sum.usable,
                     sum.replicates) };
}

Outcome oracle_equivalence()
{
  int ok = 0;
  double worst = -std::numeric_limits<double>::infinity();
  const int datasets = 50;
  for (int r = 0; r < datasets; ++r) {
    ScenarioSpec s;
    s.kink_case = 1;
    s.n = 200;
    s.seed = replicate_seed(404, static_cast<std::uint64_t>(r));
    const auto g = generate(s);
    const QuantileLevel tau(0.5);
    BrisqSettings bs;
    bs.seed = s.seed;
    const auto est = brisq_fit(g.data, tau, 1, bs);
    const auto orc = oracle::grid_oracle(g.data, tau);
    const double rel = est.objective / orc.objective - 1.0;
    worst = std::max(worst, rel);
    ok += est.kinks() == 1 && est.objective <= orc.objective * (1.0 + kOracleSlack);
  }
  return { ok == datasets,
           fmt("%d/%d datasets within the grid oracle objective x (1 + %.0e); worst relative excess %.2e", ok, datasets,
               kOracleSlack, worst) };
}

Outcome size_and_power()
{
  PowerStudy st;
  st.n = 1000;
  st.bootstrap_replicates = 300;
  st.replicates = 200;
  st.c_values = { 0.0, 10.0 };
  st.seed = 505;
  st.jobs = g_jobs;
  const auto pts = run_power_study(st);
  const double size = pts[0].rejection_rate;
  const double power = pts[1].rejection_rate;
  const bool pass = size >= kSizeLow && size <= kSizeHigh && power >= kPowerFloor && pts[0].failed == 0 &&
                    pts[1].failed == 0;
  return { pass, fmt("rejection at c=0 %.3f (in [%.2f, %.2f]), at c=10 %.3f (>= %.2f), failures %d/%d", size, kSizeLow,
                     kSizeHigh, power, kPowerFloor, pts[0].failed, pts[1].failed) };
}

Outcome score_coverage()
{
  CoverageStudy st;
  st.scenario.kink_case = 2;
  st.scenario.error = ErrorLaw::t3;
  st.scenario.heteroscedastic = true;
  st.scenario.seed = 606;
  st.tau = 0.5;
  st.replicates = 200;
  st.level = 0.95;
  st.methods = { CiMethod::wald, CiMethod::score };
  st.jobs = g_jobs;
  const auto sum = run_coverage_study(st);
  const CoverageRow* wald = nullptr;
  const CoverageRow* score = nullptr;
  for (const auto& r : sum.rows)
    (r.method == CiMethod::wald ? wald : score) = &r;
  bool pass = wald && score && score->coverage.size() == 2;
  if (pass) {
    for (double c : score->coverage)
      pass = pass && c >= kCoverageLow && c <= kCoverageHigh;
    pass = pass && score->mean_length[1] > wald->mean_length[1];
  }
  if (!wald || !score || score->coverage.size() < 2)
    return { false, "coverage study produced no intervals" };
  return { pass, fmt("score coverage %.3f, %.3f (in [%.2f, %.2f]); delta2 length score %.3f vs Wald %.3f; "
                     "Wald coverage %.3f, %.3f; usable %d/%d",
                     score->coverage[0], score->coverage[1], kCoverageLow, kCoverageHigh, score->mean_length[1],
                     wald->mean_length[1], wald->coverage[0], wald->coverage[1], score->usable, sum.replicates) };
}

Outcome wald_arithmetic()
{
  const auto iv = wald_interval(3.468, 0.227, 0.95);
  const double lo = std::round(iv.lower * 1000.0) / 1000.0;
  const double hi = std::round(iv.upper * 1000.0) / 1000.0;
  return { lo == 3.023 && hi == 3.913, fmt("3.468 +/- z(0.975) x 0.227 = [%.3f, %.3f] (need [3.023, 3.913])", lo, hi) };
}

bool subgradient_ok(const QrSolution& s, double tau, Eigen::Index d)
{
  const double n = static_cast<double>(s.residuals.size());
  const double neg = static_cast<double>((s.residuals.array() < 0.0).count());
  const double nonpos = static_cast<double>((s.residuals.array() <= 0.0).count());
  return neg <= n * tau + static_cast<double>(d) && nonpos >= n * tau - static_cast<double>(d);
}

json fit_document(const Dataset& data, std::uint64_t seed)
{
  SelectSettings ss;
  ss.k_max = 4;
  ss.brisq.seed = seed;
  const auto [report, trace] = backward_eliminate(data, QuantileLevel(0.5), ss);
  WildBootstrapSettings ws;
  ws.replicates = 100;
  ws.seed = seed;
  const auto test = wild_bootstrap_pvalue(data, QuantileLevel(0.5), make_score_grid(data.x), ws);
  const auto& p = report.theta.params;
  json doc{ { "kinks", report.kinks },
            { "delta", std::vector<double>(p.deltas.data(), p.deltas.data() + p.deltas.size()) },
            { "beta", std::vector<double>(p.betas.data(), p.betas.data() + p.betas.size()) },
            { "objective", report.theta.objective },
            { "trajectory", report.theta.trajectory },
            { "statistic", test.statistic },
            { "p_value", test.p_value } };
  if (report.covariance)
    doc["se"] = std::vector<double>(report.standard_errors.data(),
                                    report.standard_errors.data() + report.standard_errors.size());
  return doc;
}

Outcome property_suite()
{
  int fits = 0, bad_subgradient = 0, bad_continuity = 0, bad_monotone = 0;
  for (int kink_case : { 1, 2, 3 }) {
    for (double tau : { 0.25, 0.5, 0.75 }) {
      for (std::uint64_t r = 0; r < 4; ++r) {
        ScenarioSpec s;
        s.kink_case = kink_case;
        s.error = r % 2 ? ErrorLaw::t3 : ErrorLaw::normal;
        s.heteroscedastic = r >= 2;
        s.seed = replicate_seed(808, r + 10 * static_cast<std::uint64_t>(kink_case));
        const auto g = generate(s);
        BrisqSettings bs;
        bs.seed = s.seed;
        bs.restart_count = 10;
        const auto est = brisq_fit(g.data, QuantileLevel(tau), kink_case, bs);
        ++fits;
        const Eigen::MatrixXd M = build_design(g.data.x, g.data.z, est.params.deltas).values;
        const auto sol = fit_linear_qr(M, g.data.y, QuantileLevel(tau));
        if (!subgradient_ok(sol, tau, M.cols()))
          ++bad_subgradient;
        const Eigen::VectorXd z = Eigen::VectorXd::Constant(1, 1.0);
        for (Eigen::Index k = 0; k < est.kinks(); ++k) {
          const double d = est.params.deltas[k];
          const double left = predict_quantile(est.params, std::nextafter(d, -1e300), z);
          const double right = predict_quantile(est.params, std::nextafter(d, 1e300), z);
          if (std::abs(left - right) > 1e-9 * (1.0 + std::abs(left)))
            ++bad_continuity;
        }
        int strict = 0;
        for (std::size_t b = 1; b < est.trajectory.size(); ++b) {
          if (est.trajectory[b] > est.trajectory[b - 1])
            ++bad_monotone;
          strict += est.trajectory[b] < est.trajectory[b - 1];
        }
        if (strict != est.accepted_restarts)
          ++bad_monotone;
      }
    }
  }

  const double ln = std::log(500.0);
  const double expected = std::log(0.75) + (2.0 + 1.0 + 2.0 * 2.0) * ln / 1000.0 * ln;
  const double sbic_err = std::abs(sbic(0.75, 500, 1, 2, CnRule::log) - expected);
  const bool sbic_fixed = std::abs(sbic(1.0, 100, 0, 1, CnRule::log) - 0.42415184883827195) <= kSbicTolerance;

  ScenarioSpec s;
  s.kink_case = 2;
  s.seed = 8080;
  const auto g = generate(s);
  const std::string a = fit_document(g.data, 17).dump();
  const std::string b = fit_document(g.data, 17).dump();

  const bool pass = bad_subgradient == 0 && bad_continuity == 0 && bad_monotone == 0 && sbic_err <= kSbicTolerance &&
                    sbic_fixed && a == b;
  return { pass, fmt("%d fits: subgradient violations %d, discontinuities %d, trajectory violations %d; "
                     "sBIC error %.1e; JSON %s",
                     fits, bad_subgradient, bad_continuity, bad_monotone, sbic_err,
                     a == b ? "bit-identical" : "differs") };
}

const std::vector<std::pair<const char*, std::function<Outcome()>>> kCriteria{
  { "selection consistency", selection_consistency },
  { "C_n ordering", cn_ordering },
  { "estimation accuracy", estimation_accuracy },
  { "oracle equivalence", oracle_equivalence },
  { "test size and power", size_and_power },
  { "score interval coverage", score_coverage },
  { "Wald arithmetic", wald_arithmetic },
  { "property suite", property_suite },
};

} // namespace

int main(int argc, char** argv)
{
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) {
    if (!std::strcmp(argv[i], "--criterion") && i + 1 < argc)
      selected.push_back(std::atoi(argv[++i]));
    else if (!std::strcmp(argv[i], "--jobs") && i + 1 < argc)
      g_jobs = static_cast<unsigned>(std::atoi(argv[++i]));
    else {
      std::fprintf(stderr, "usage: %s [--criterion N]... [--jobs J]\n", argv[0]);
      return 4;
    }
  }
  if (selected.empty())
    for (int c = 1; c <= static_cast<int>(kCriteria.size()); ++c)
      selected.push_back(c);

  int failures = 0;
  for (int c : selected) {
    if (c < 1 || c > static_cast<int>(kCriteria.size())) {
      std::fprintf(stderr, "no criterion %d\n", c);
      return 4;
    }
    const auto& [name, fn] = kCriteria[static_cast<std::size_t>(c - 1)];
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = { false, std::string("exception: ") + e.what() };
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %d (%s): %s  %s  [%.1fs]\n", c, name, o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures ? 1 : 0;
}
