// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// fails. Run all criteria with no arguments or a subset by number.

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "breakdown/divergence.hpp"
#include "breakdown/dual.hpp"
#include "breakdown/inference.hpp"
#include "breakdown/moments.hpp"
#include "breakdown/oracle.hpp"
#include "breakdown/oracle_battery.hpp"
#include "breakdown/report.hpp"
#include "breakdown/rng.hpp"
#include "breakdown/sample.hpp"
#include "breakdown/simulation.hpp"

namespace {

using namespace breakdown;

constexpr std::uint64_t kBigSeed = 20240601;
constexpr int kBigN = 1000000;

// Frozen value of the 400-atom discretized projection oracle for the
// uniform-mean design at b = 0.4, p_d = 0.7, squared Hellinger (see
// tools: `breakdown oracle-check` and the oracle unit tests).
constexpr double kUniformOracle400 = 0.20417124628394926;

struct Criterion {
  int id;
  const char* label;
  bool (*fn)(std::ostringstream&);
};

bool crit1_hellinger_identity(std::ostringstream& os) {
  Rng rng(515);
  double worst_gap = 0.0;
  double worst_margin = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int ny = 2 + static_cast<int>(rng.uniform01() * 4.0);
    const int nx = 2 + static_cast<int>(rng.uniform01() * 4.0);
    Eigen::VectorXd m1(ny * nx), m0(ny * nx);
    double total = 0.0;
    for (int z = 0; z < ny * nx; ++z) {
      m1[z] = 0.01 + rng.uniform01();
      m0[z] = 0.01 + rng.uniform01();
      total += m1[z] + m0[z];
    }
    m1 /= total;
    m0 /= total;
    const auto [direct, via_var] = hellinger_from_joint(m1, m0);
    worst_gap = std::max(worst_gap, std::fabs(direct - via_var));
    Eigen::VectorXd m1x = Eigen::VectorXd::Zero(nx), m0x = Eigen::VectorXd::Zero(nx);
    for (int y = 0; y < ny; ++y) {
      for (int x = 0; x < nx; ++x) {
        m1x[x] += m1[y * nx + x];
        m0x[x] += m0[y * nx + x];
      }
    }
    const auto marg = hellinger_from_joint(m1x, m0x);
    worst_margin = std::max(worst_margin, marg.first - direct);
  }
  os << "max |direct - variance-form| = " << worst_gap
     << ", max H2_X - H2 = " << worst_margin;
  return worst_gap <= 1e-12 && worst_margin <= 1e-12;
}

bool crit2_conjugate_calculus(std::ostringstream& os) {
  const DivergenceSpec kinds[4] = {DivergenceSpec::squared_hellinger(), DivergenceSpec::kl(),
                                   DivergenceSpec::reverse_kl(), DivergenceSpec::cressie_read(0.5)};
  double worst = 0.0;
  for (const auto& spec : kinds) {
    const double lo = std::isfinite(spec.conj_lo()) ? spec.conj_lo() : -3.0;
    const double hi = std::isfinite(spec.conj_hi()) ? spec.conj_hi() : 3.0;
    for (int i = 0; i < 100; ++i) {
      const double t = 0.04 + 0.05 * i;  // primal grid
      const double r = spec.f_d1(t);
      const double fenchel =
          std::fabs(spec.f_value(t).value() + spec.conj_value(r).value() - t * r);
      worst = std::max(worst, fenchel);
      const double u = lo + (hi - lo) * (i + 1.0) / 102.0 * 0.98;  // conjugate grid
      const double step = 1e-5;
      const double fd =
          (spec.conj_value(u + step).value() - spec.conj_value(u - step).value()) / (2 * step);
      worst = std::max(worst, std::fabs(spec.conj_d1(u) - fd) / std::max(1.0, std::fabs(fd)));
      const double fd2 = (spec.conj_d1(u + step) - spec.conj_d1(u - step)) / (2 * step);
      worst = std::max(worst, std::fabs(spec.conj_d2(u) - fd2) / std::max(1.0, std::fabs(fd2)));
    }
  }
  os << "max deviation " << worst;
  return worst <= 1e-6;
}

bool crit3_dual_solver(std::ostringstream& os) {
  // Derivative checks on a moderate logit problem.
  const auto sample = dgp_logit(800, 5);
  const auto setup = design_setup(Design::Logit, sample);
  const auto cs = build_constraints(setup.model, sample, setup.mode);
  Rng rng(99);
  double worst_fd = 0.0;
  for (const auto& spec : {DivergenceSpec::squared_hellinger(), DivergenceSpec::kl()}) {
    const DualProblem problem(sample, cs, spec, setup.mcar);
    const int m = problem.dim();
    Eigen::VectorXd lambda(m);
    for (int j = 0; j < m; ++j) lambda[j] = 0.04 * rng.uniform(-1.0, 1.0);
    Eigen::VectorXd grad(m);
    Eigen::MatrixXd hess(m, m);
    if (!problem.gradient_hessian(lambda, sample.p_hat, grad, hess)) return false;
    const double step = 1e-6;
    for (int j = 0; j < m; ++j) {
      Eigen::VectorXd lp = lambda, lm = lambda;
      lp[j] += step;
      lm[j] -= step;
      const double fd =
          (*problem.objective(lp, sample.p_hat) - *problem.objective(lm, sample.p_hat)) / (2 * step);
      worst_fd = std::max(worst_fd, std::fabs(grad[j] - fd) / std::max(1.0, std::fabs(fd)));
      Eigen::VectorXd gp(m), gm(m);
      problem.gradient(lp, sample.p_hat, gp);
      problem.gradient(lm, sample.p_hat, gm);
      const Eigen::VectorXd hcol = (gp - gm) / (2 * step);
      worst_fd = std::max(
          worst_fd, (hess.col(j) - hcol).lpNorm<Eigen::Infinity>() /
                        std::max(1.0, hcol.lpNorm<Eigen::Infinity>()));
    }
  }

  // Weak and strong duality against the brute-force oracle.
  Rng irng(2025);
  const DivergenceSpec specs[4] = {DivergenceSpec::squared_hellinger(), DivergenceSpec::kl(),
                                   DivergenceSpec::reverse_kl(), DivergenceSpec::cressie_read(0.5)};
  int checked = 0, weak_fail = 0, strong_checked = 0;
  double worst_strong = 0.0;
  PrimalOptions popts;
  popts.restarts = 5;
  for (int k = 0; checked < 200 && k < 1200; ++k) {
    auto si = random_small_instance(irng);
    const auto& spec = specs[k % 4];
    const DualState dual = DualProblem(si.sample, si.cs, spec, si.b).maximize({});
    if (!dual.converged()) continue;
    popts.seed = 1000 + static_cast<std::uint64_t>(k);
    const auto primal = discrete_primal(make_instance(si.sample, si.cs, si.b), spec, popts);
    if (!primal.converged) continue;
    ++checked;
    if (dual.value.value() > primal.value.as_double() + 1e-8) ++weak_fail;
    if (primal.q.minCoeff() > 1e-6) {
      ++strong_checked;
      worst_strong = std::max(worst_strong,
                              std::fabs(primal.value.as_double() - dual.value.value()));
    }
  }
  os << "max FD dev " << worst_fd << "; " << checked << " oracle instances, " << weak_fail
     << " weak-duality violations, strong-duality worst gap " << worst_strong << " on "
     << strong_checked;
  return worst_fd <= 1e-6 && checked >= 200 && weak_fail == 0 && strong_checked > 50 &&
         worst_strong <= 1e-6;
}

bool crit4_example_one(std::ostringstream& os) {
  const auto sample = dgp_uniform_mean(kBigN, kBigSeed);
  const auto setup = design_setup(Design::UniformMean, sample);
  const auto cs = build_constraints(setup.model, sample, setup.mode);
  EstimateOptions opts;
  opts.seed = kBigSeed;
  const auto result =
      estimate_breakdown(sample, cs, DivergenceSpec::squared_hellinger(), setup.hypothesis, opts);
  if (!result.delta_hat.is_finite()) return false;
  const double delta = result.delta_hat.value();
  os << "delta_hat = " << delta << " (window [0.195, 0.215], stored oracle "
     << kUniformOracle400 << "), b* = " << result.b_star[0];
  return delta >= 0.195 && delta <= 0.215 && std::fabs(delta - kUniformOracle400) <= 0.01 &&
         std::fabs(result.b_star[0] - 0.4) <= 1e-6;
}

bool crit5_kl_closed_form(std::ostringstream& os) {
  const auto sample = dgp_uniform_mean(kBigN, kBigSeed);
  const auto cs = build_constraints(builtin_mean(), sample, SupportMode::XEmpty);
  double worst_gap = 0.0, worst_foc = 0.0;
  for (const double b : {0.40, 0.45, 0.55}) {
    const auto closed = kl_uniform_dual(b, 0.7);
    worst_foc = std::max(worst_foc, closed.foc_residual);
    Eigen::VectorXd bv(1);
    bv << b;
    const auto state = nu_hat(sample, cs, DivergenceSpec::kl(), bv);
    if (!state.converged()) return false;
    worst_gap = std::max(worst_gap, std::fabs(state.value.value() - closed.value));
  }
  os << "max |nu_hat - closed form| = " << worst_gap << ", max FOC residual = " << worst_foc;
  return worst_gap <= 2e-3 && worst_foc < 1e-11;
}

bool crit6_linear_design(std::ostringstream& os) {
  const auto sample = dgp_linear(kBigN, kBigSeed);
  const auto setup = design_setup(Design::Linear, sample);
  const double targets[4] = {1.08, 1.34, 1.02, 0.39};
  for (int j = 0; j < 4; ++j) {
    if (std::fabs(setup.mcar[j] - targets[j]) > 0.02) {
      os << "MCAR[" << j << "] = " << setup.mcar[j] << " misses " << targets[j];
      return false;
    }
  }
  const double h2 = hellinger_lower_bound(sample).value;
  const auto cs = build_constraints(setup.model, sample, setup.mode);
  EstimateOptions opts;
  opts.seed = kBigSeed;
  opts.n_starts = 2;
  auto result =
      estimate_breakdown(sample, cs, DivergenceSpec::squared_hellinger(), setup.hypothesis, opts);
  if (!result.delta_hat.is_finite()) return false;
  const double delta = result.delta_hat.value();
  os << "MCAR = (" << setup.mcar.transpose() << "), H2_X = " << h2 << ", delta_hat = " << delta;
  return h2 >= 0.075 && h2 <= 0.085 && delta >= 0.153 && delta <= 0.173;
}

bool crit7_logit_design(std::ostringstream& os) {
  const auto sample = dgp_logit(kBigN, kBigSeed);
  if (std::fabs(sample.p_hat - 0.65) > 0.01) {
    os << "p_hat = " << sample.p_hat;
    return false;
  }
  const auto setup = design_setup(Design::Logit, sample);
  Eigen::VectorXd ybar(3);
  ybar << -0.35, -0.25, 0.5;
  const double fitted = logistic(ybar.dot(setup.mcar));
  const auto cs = build_constraints(setup.model, sample, setup.mode);
  EstimateOptions opts;
  opts.seed = kBigSeed;
  opts.n_starts = 2;
  auto result =
      estimate_breakdown(sample, cs, DivergenceSpec::squared_hellinger(), setup.hypothesis, opts);
  if (!result.delta_hat.is_finite()) return false;
  const double delta = result.delta_hat.value();
  os << "p_hat = " << sample.p_hat << ", Lambda(ybar'b) = " << fitted
     << ", delta_hat = " << delta;
  return std::fabs(fitted - 0.573) <= 0.01 && delta >= 0.098 && delta <= 0.118;
}

bool crit8_coverage(std::ostringstream& os) {
  bool ok = true;
  for (const Design design : {Design::UniformMean, Design::Logit}) {
    StudyConfig cfg;
    cfg.design = design;
    cfg.n = 4000;
    cfg.replications = 200;
    cfg.seed = 7777;
    cfg.threads = static_cast<int>(std::thread::hardware_concurrency());
    cfg.estimate.n_starts = 1;
    const StudySummary summary = run_study(cfg);
    os << to_string(design) << ": bias " << summary.mean_bias << ", coverage "
       << summary.coverage << ", failures " << summary.failures << "; ";
    ok = ok && summary.failures == 0 && std::fabs(summary.mean_bias) <= 0.01 &&
         summary.coverage >= 0.91 && summary.coverage <= 0.99;
  }
  return ok;
}

bool crit9_convexity(std::ostringstream& os) {
  bool ok = true;
  for (const Design design : {Design::Linear, Design::Logit}) {
    const auto sample = make_design_sample(design, 20000, kBigSeed + 9);
    const auto setup = design_setup(design, sample);
    const auto cs = build_constraints(setup.model, sample, setup.mode);
    Eigen::MatrixXd box = setup.hypothesis.box;
    for (int j = 0; j < box.rows(); ++j) {
      // Scan a neighborhood where the dual stays comfortably feasible.
      box(j, 0) = setup.mcar[j] - 0.5;
      box(j, 1) = setup.mcar[j] + 0.5;
    }
    const auto report =
        convexity_scan(sample, cs, DivergenceSpec::squared_hellinger(), box, 10, 50, 33);
    os << to_string(design) << ": max violation " << report.max_violation << " (skipped "
       << report.skipped << "); ";
    ok = ok && report.max_violation <= 1e-6;
  }
  return ok;
}

bool crit10_determinism(std::ostringstream& os) {
  StudyConfig cfg;
  cfg.design = Design::UniformMean;
  cfg.n = 500;
  cfg.replications = 8;
  cfg.seed = 31;
  cfg.threads = 1;
  const std::string run1 = to_json(run_study(cfg), true).dump();
  cfg.threads = 8;
  const std::string run8 = to_json(run_study(cfg), true).dump();
  cfg.threads = 1;
  const std::string run1b = to_json(run_study(cfg), true).dump();
  if (run1 != run8 || run1 != run1b) {
    os << "run_study reports differ across runs/threads";
    return false;
  }

  const auto sample = dgp_uniform_mean(4000, 12);
  const auto setup = design_setup(Design::UniformMean, sample);
  const auto cs = build_constraints(setup.model, sample, setup.mode);
  EstimateOptions opts;
  opts.seed = 5;
  auto once = estimate_breakdown(sample, cs, DivergenceSpec::squared_hellinger(), setup.hypothesis, opts);
  attach_inference(once, sample, cs, DivergenceSpec::squared_hellinger(), 0.05);
  opts.threads = 8;
  auto twice = estimate_breakdown(sample, cs, DivergenceSpec::squared_hellinger(), setup.hypothesis, opts);
  attach_inference(twice, sample, cs, DivergenceSpec::squared_hellinger(), 0.05);
  if (to_json(once).dump() != to_json(twice).dump()) {
    os << "estimate reports differ across thread counts";
    return false;
  }

  // End-to-end through the CLI when its location is known.
  const char* cli = std::getenv("BREAKDOWN_CLI");
  if (cli && *cli) {
    const std::string base = std::string(cli) +
                             " simulate --design uniform-mean --n 400 --reps 4 --seed 3 ";
    if (std::system((base + "--threads 1 --out /tmp/bdp_acc_a.json >/dev/null 2>&1").c_str()) != 0 ||
        std::system((base + "--threads 8 --out /tmp/bdp_acc_b.json >/dev/null 2>&1").c_str()) != 0) {
      os << "CLI invocation failed";
      return false;
    }
    std::ifstream fa("/tmp/bdp_acc_a.json"), fb("/tmp/bdp_acc_b.json");
    std::stringstream sa, sb;
    sa << fa.rdbuf();
    sb << fb.rdbuf();
    auto ja = Json::parse(sa.str());
    auto jb = Json::parse(sb.str());
    ja["config"].erase("threads");
    jb["config"].erase("threads");
    if (ja.dump() != jb.dump()) {
      os << "CLI reports differ across thread counts";
      return false;
    }
    os << "library and CLI reports byte-identical";
  } else {
    os << "library reports byte-identical (CLI not on path)";
  }
  return true;
}

const Criterion kCriteria[] = {
    {1, "hellinger identity and marginalization", crit1_hellinger_identity},
    {2, "conjugate calculus", crit2_conjugate_calculus},
    {3, "dual solver correctness and duality", crit3_dual_solver},
    {4, "uniform-mean reproduction", crit4_example_one},
    {5, "KL/uniform closed form", crit5_kl_closed_form},
    {6, "linear design targets", crit6_linear_design},
    {7, "logit design targets", crit7_logit_design},
    {8, "coverage at desk scale", crit8_coverage},
    {9, "convexity scans", crit9_convexity},
    {10, "determinism", crit10_determinism},
};

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.push_back(std::atoi(argv[i]));
  int failures = 0;
  for (const auto& criterion : kCriteria) {
    if (!wanted.empty() &&
        std::find(wanted.begin(), wanted.end(), criterion.id) == wanted.end()) {
      continue;
    }
    std::ostringstream os;
    bool pass = false;
    try {
      pass = criterion.fn(os);
    } catch (const std::exception& e) {
      os << "exception: " << e.what();
    }
    std::cout << (pass ? "PASS" : "FAIL") << " criterion " << criterion.id << " ("
              << criterion.label << "): " << os.str() << "\n";
    if (!pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
