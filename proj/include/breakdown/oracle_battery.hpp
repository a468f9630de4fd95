#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "breakdown/divergence.hpp"
#include "breakdown/dual.hpp"
#include "breakdown/moments.hpp"
#include "breakdown/oracle.hpp"
#include "breakdown/rng.hpp"
#include "breakdown/sample.hpp"

namespace breakdown {

// A random small estimation problem with a discrete complete-case
// distribution, used to cross-validate the dual solver against the
// brute-force primal oracle.
struct SmallInstance {
  Sample sample;
  ConstraintSystem cs;
  Eigen::VectorXd b;
};

// Draws a sample with y on a coarse grid (so the oracle instance stays
// small) and either no x or a categorical x with full two-group support.
inline SmallInstance random_small_instance(Rng& rng) {
  SmallInstance out;
  const int n = 40 + static_cast<int>(rng.uniform01() * 80);
  const bool with_x = rng.bernoulli(0.5);
  const int levels = 2 + static_cast<int>(rng.uniform01() * 2.0);  // x in {0..levels-1}
  Sample s;
  s.n = n;
  s.d_y = 1;
  s.d_x = with_x ? 1 : 0;
  s.d.resize(static_cast<std::size_t>(n));
  s.y.resize(n, 1);
  if (with_x) s.x.resize(n, 1);
  const double grid[5] = {0.0, 0.25, 0.5, 0.75, 1.0};
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (;;) {
    int filled1[3] = {0, 0, 0};
    int filled0[3] = {0, 0, 0};
    for (int i = 0; i < n; ++i) {
      const bool complete = rng.bernoulli(0.65);
      s.d[static_cast<std::size_t>(i)] = complete ? 1 : 0;
      s.y(i, 0) = complete ? grid[static_cast<int>(rng.uniform01() * 5.0)] : nan;
      if (with_x) {
        const int level = static_cast<int>(rng.uniform01() * levels);
        s.x(i, 0) = level;
        (complete ? filled1 : filled0)[level] += 1;
      }
    }
    bool ok = true;
    if (with_x) {
      for (int l = 0; l < levels; ++l) ok = ok && filled1[l] > 0 && filled0[l] > 0;
    }
    int n1 = 0;
    for (auto d : s.d) n1 += d;
    if (ok && n1 > 0 && n1 < n) break;
  }
  s.x_cells.clear();
  finalize_sample(s);
  out.sample = std::move(s);
  out.cs = build_constraints(builtin_mean(), out.sample,
                             with_x ? SupportMode::FullSupport : SupportMode::XEmpty);
  // Target close to the complete-case mean keeps the instance comfortably
  // feasible and the primal solution interior.
  const Eigen::VectorXd mcar = mcar_estimate(out.sample, out.cs.model);
  out.b = mcar;
  out.b[0] += rng.uniform(-0.08, 0.08);
  return out;
}

struct BatteryRow {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct BatteryReport {
  std::vector<BatteryRow> rows;
  bool all_pass() const {
    for (const auto& r : rows) {
      if (!r.pass) return false;
    }
    return true;
  }
};

// Cross-validation battery: closed forms, weak/strong duality on random
// instances, and primal recovery from the dual multiplier.
inline BatteryReport run_oracle_battery(std::uint64_t seed = 11, int n_instances = 50) {
  BatteryReport report;
  auto add = [&](const std::string& name, bool pass, const std::string& detail) {
    report.rows.push_back({name, pass, detail});
  };
  std::ostringstream os;

  {  // KL/uniform first-order condition residuals across the solvable range
    double worst = 0.0;
    for (double b = 0.355; b < 0.645; b += 0.01) {
      worst = std::max(worst, kl_uniform_dual(b, 0.7).foc_residual);
    }
    os.str("");
    os << "max FOC residual " << worst;
    add("kl-uniform-foc", worst < 1e-11, os.str());
  }

  {  // closed-form dual value against the discretized primal
    const auto closed = kl_uniform_dual(0.45, 0.7);
    PrimalOptions popts;
    popts.restarts = 3;
    const auto primal =
        discrete_primal(uniform_mean_instance(400, 0.7, 0.45), DivergenceSpec::kl(), popts);
    const double gap = std::fabs(primal.value.as_double() - closed.value);
    os.str("");
    os << "gap " << gap;
    add("kl-uniform-vs-discrete", primal.converged && gap < 2e-3, os.str());
  }

  {  // two-atom squared Hellinger instance with a hand closed form
    DiscreteInstance inst;
    inst.h.resize(2, 2);
    inst.h << 0.0, 1.0, 1.0, 1.0;  // h rows: (y, 1) at y in {0,1}
    inst.p1.resize(2);
    inst.p1 << 0.5, 0.5;
    inst.c.resize(2);
    inst.c << 0.8, 1.0;  // target mean 0.8, unit mass
    const double expect = 0.25 * (std::pow(std::sqrt(0.4) - 1.0, 2) + std::pow(std::sqrt(1.6) - 1.0, 2));
    const auto al = discrete_primal(inst, DivergenceSpec::squared_hellinger());
    const auto grid = grid_primal(inst, DivergenceSpec::squared_hellinger());
    const bool pass = al.converged && grid.converged &&
                      std::fabs(al.value.as_double() - expect) < 1e-8 &&
                      std::fabs(grid.value.as_double() - expect) < 2e-4 &&
                      std::fabs(al.q[0] - 0.4) < 1e-6 && std::fabs(al.q[1] - 1.6) < 1e-6;
    os.str("");
    os << "al " << al.value.as_double() << " grid " << grid.value.as_double() << " expect " << expect;
    add("tiny-closed-form", pass, os.str());
  }

  {  // weak and strong duality plus primal recovery on random instances
    Rng rng(seed);
    const DivergenceSpec specs[4] = {DivergenceSpec::squared_hellinger(), DivergenceSpec::kl(),
                                     DivergenceSpec::reverse_kl(), DivergenceSpec::cressie_read(0.5)};
    int checked = 0, weak_fail = 0, strong_checked = 0, strong_fail = 0, recover_fail = 0;
    double worst_gap = 0.0;
    PrimalOptions popts;
    popts.restarts = 6;
    for (int k = 0; checked < n_instances && k < n_instances * 6; ++k) {
      SmallInstance si = random_small_instance(rng);
      const DivergenceSpec& spec = specs[k % 4];
      DualProblem problem(si.sample, si.cs, spec, si.b);
      const DualState dual = problem.maximize({});
      if (!dual.converged()) continue;
      const DiscreteInstance inst = make_instance(si.sample, si.cs, si.b);
      popts.seed = seed + static_cast<std::uint64_t>(k);
      const auto primal = discrete_primal(inst, spec, popts);
      if (!primal.converged) continue;
      ++checked;
      if (dual.value.value() > primal.value.as_double() + 1e-8) ++weak_fail;
      if (primal.q.minCoeff() > 1e-6) {
        ++strong_checked;
        const double gap = std::fabs(primal.value.as_double() - dual.value.value());
        worst_gap = std::max(worst_gap, gap);
        if (gap > 1e-6) ++strong_fail;
        Eigen::VectorXd q_dual(inst.atoms());
        for (int j = 0; j < inst.atoms(); ++j) {
          q_dual[j] = spec.conj_d1(inst.h.row(j).dot(dual.lambda));
        }
        if ((q_dual - primal.q).lpNorm<Eigen::Infinity>() > 1e-5) ++recover_fail;
      }
    }
    os.str("");
    os << checked << " instances, " << strong_checked << " nondegenerate, worst gap " << worst_gap;
    add("weak-duality", checked >= n_instances && weak_fail == 0, os.str());
    os.str("");
    os << strong_checked << " checked, " << strong_fail << " gaps > 1e-6";
    add("strong-duality", strong_checked > 0 && strong_fail == 0, os.str());
    os.str("");
    os << recover_fail << " mismatches";
    add("primal-recovery", strong_checked > 0 && recover_fail == 0, os.str());
  }

  {  // pointwise-dominated divergences give ordered projection values
    Rng rng(seed + 99);
    bool ok = true;
    double worst = 0.0;
    for (int k = 0; k < 10; ++k) {
      SmallInstance si = random_small_instance(rng);
      const DiscreteInstance inst = make_instance(si.sample, si.cs, si.b);
      const auto h2 = discrete_primal(inst, DivergenceSpec::squared_hellinger());
      const auto kl = discrete_primal(inst, DivergenceSpec::kl());
      if (!h2.converged || !kl.converged) continue;
      const double slack = kl.value.as_double() - h2.value.as_double();
      worst = std::min(worst, slack);
      if (slack < -1e-9) ok = false;
    }
    os.str("");
    os << "min KL - H2 slack " << worst;
    add("divergence-order", ok, os.str());
  }

  return report;
}

}  // namespace breakdown
