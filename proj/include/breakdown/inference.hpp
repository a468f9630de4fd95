#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "breakdown/dual.hpp"
#include "breakdown/errors.hpp"
#include "breakdown/ext_real.hpp"
#include "breakdown/moments.hpp"
#include "breakdown/oracle.hpp"
#include "breakdown/parallel.hpp"
#include "breakdown/rng.hpp"
#include "breakdown/stats.hpp"

namespace breakdown {

// Projection onto box intersect halfspaces by cyclic Dykstra iteration.
// Throws when the iteration cannot reach the constraint set, which signals
// an empty region.
inline Eigen::VectorXd project_region(const Hypothesis& hyp, Eigen::VectorXd v,
                                      double tol = 1e-12, int max_cycles = 5000) {
  const int d = hyp.dim();
  const std::size_t sets = 1 + hyp.null_constraints.size();
  std::vector<Eigen::VectorXd> corrections(sets, Eigen::VectorXd::Zero(d));
  auto project_box = [&](Eigen::VectorXd& u) {
    for (int j = 0; j < d; ++j) u[j] = std::clamp(u[j], hyp.box(j, 0), hyp.box(j, 1));
  };
  auto feasible = [&](const Eigen::VectorXd& u, double eps) {
    for (int j = 0; j < d; ++j) {
      if (u[j] < hyp.box(j, 0) - eps || u[j] > hyp.box(j, 1) + eps) return false;
    }
    for (const auto& ineq : hyp.null_constraints) {
      if (ineq.a.dot(u) > ineq.c + eps) return false;
    }
    return true;
  };
  if (hyp.null_constraints.empty()) {
    project_box(v);
    return v;
  }
  for (int cycle = 0; cycle < max_cycles; ++cycle) {
    const Eigen::VectorXd before = v;
    for (std::size_t k = 0; k < sets; ++k) {
      Eigen::VectorXd u = v + corrections[k];
      Eigen::VectorXd proj = u;
      if (k == 0) {
        project_box(proj);
      } else {
        const auto& ineq = hyp.null_constraints[k - 1];
        const double excess = ineq.a.dot(proj) - ineq.c;
        if (excess > 0.0) proj -= (excess / ineq.a.squaredNorm()) * ineq.a;
      }
      corrections[k] = u - proj;
      v = proj;
    }
    if ((v - before).norm() <= tol && feasible(v, 1e-9)) return v;
  }
  if (feasible(v, 1e-7)) return v;
  throw_input("empty-null-region", "B intersect B0 appears to be empty");
}

struct EstimateOptions {
  DualOptions dual;
  int n_starts = 3;          // random starts in addition to the MCAR projection
  std::uint64_t seed = 1;
  int max_outer_iter = 500;
  double pg_tol = 1e-7;      // projected-gradient norm at convergence
  double min_step = 1e-12;
  int threads = 1;
};

struct BreakdownDiagnostics {
  int outer_iterations = 0;
  int starts_attempted = 0;
  int starts_converged = 0;
  int starts_infeasible = 0;
  bool minimizer_on_box_boundary = false;
  bool multiple_minimizers = false;
  double min_singular_value = std::numeric_limits<double>::quiet_NaN();
  std::string convexity_verdict = "not-run";
};

struct BreakdownResult {
  ExtReal delta_hat = ExtReal::infinity();
  Eigen::VectorXd b_star;
  DualState state;  // lambda(b*), value, solver diagnostics
  double p_hat = 0.0;
  int n = 0;
  double sigma_hat = std::numeric_limits<double>::quiet_NaN();
  double ci_lower = std::numeric_limits<double>::quiet_NaN();
  double alpha = std::numeric_limits<double>::quiet_NaN();
  bool inference_ok = false;
  BreakdownDiagnostics diag;
};

namespace detail {

struct PgdOutcome {
  bool feasible_path = false;  // found at least one finite value
  bool converged = false;
  double value = std::numeric_limits<double>::infinity();
  Eigen::VectorXd b;
  DualState state;
  int iterations = 0;
};

// Projected gradient descent on nu_hat over B intersect B0, warm-starting
// the inner dual along the path.
inline PgdOutcome projected_gradient_descent(const Sample& s, const ConstraintSystem& cs,
                                             const DivergenceSpec& spec, const Hypothesis& hyp,
                                             Eigen::VectorXd b, const EstimateOptions& opts) {
  PgdOutcome out;
  Eigen::VectorXd warm;
  auto solve_at = [&](const Eigen::VectorXd& point) {
    DualProblem problem(s, cs, spec, point);
    return problem.maximize(opts.dual, warm.size() ? &warm : nullptr);
  };
  DualState cur = solve_at(b);
  if (!cur.converged()) {
    if (cur.status == DualState::Status::Unbounded) return out;  // infeasible start
    throw_numerical("dual-" + cur.status_name(), "inner dual failed at a start point");
  }
  warm = cur.lambda;
  out.feasible_path = true;
  double step = 1.0;
  for (int iter = 0; iter < opts.max_outer_iter; ++iter) {
    out.iterations = iter;
    const Eigen::VectorXd grad = DualProblem(s, cs, spec, b).envelope_gradient(cur);
    const Eigen::VectorXd pg = b - project_region(hyp, b - grad);
    if (pg.norm() <= opts.pg_tol) {
      out.converged = true;
      break;
    }
    bool moved = false;
    for (int ls = 0; ls < 60; ++ls) {
      const Eigen::VectorXd cand = project_region(hyp, b - step * grad);
      const Eigen::VectorXd dir = cand - b;
      if (dir.norm() <= opts.min_step) break;
      const DualState trial = solve_at(cand);
      if (trial.converged() &&
          trial.value.value() <= cur.value.value() + 1e-4 * grad.dot(dir)) {
        b = cand;
        cur = trial;
        warm = cur.lambda;
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (!moved) {
      out.converged = true;  // no admissible step remains at this resolution
      break;
    }
    step = std::min(step * 2.0, 1e3);
  }
  out.value = cur.value.value();
  out.b = b;
  out.state = cur;
  return out;
}

inline bool lexicographic_less(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  for (Eigen::Index j = 0; j < a.size(); ++j) {
    if (a[j] != b[j]) return a[j] < b[j];
  }
  return false;
}

}  // namespace detail

// Plug-in breakdown estimate: minimize nu_hat over B intersect B0 by
// multi-start projected gradient descent. Starts are the projection of the
// MCAR estimate plus opts.n_starts random points; ties are broken by value,
// then lexicographically smallest b, so output is deterministic for a seed.
inline BreakdownResult estimate_breakdown(const Sample& s, const ConstraintSystem& cs,
                                          const DivergenceSpec& spec, const Hypothesis& hyp,
                                          const EstimateOptions& opts = {}) {
  hyp.validate();
  if (hyp.dim() != cs.model.d_b) {
    throw_input("hypothesis-dim", "hypothesis dimension must match the model parameter");
  }
  const Eigen::VectorXd b_mcar = mcar_estimate(s, cs.model);

  std::vector<Eigen::VectorXd> starts;
  starts.push_back(project_region(hyp, b_mcar));
  Rng rng(opts.seed, 0x5741u);
  for (int k = 0; k < opts.n_starts; ++k) {
    Eigen::VectorXd v(hyp.dim());
    for (int j = 0; j < hyp.dim(); ++j) v[j] = rng.uniform(hyp.box(j, 0), hyp.box(j, 1));
    starts.push_back(project_region(hyp, v));
  }

  std::vector<detail::PgdOutcome> outcomes(starts.size());
  std::vector<std::string> failures(starts.size());
  parallel_for(starts.size(), opts.threads, [&](std::size_t k) {
    try {
      outcomes[k] = detail::projected_gradient_descent(s, cs, spec, hyp, starts[k], opts);
    } catch (const Error& e) {
      failures[k] = e.code();
    }
  });

  BreakdownResult result;
  result.n = s.n;
  result.p_hat = s.p_hat;
  result.diag.starts_attempted = static_cast<int>(starts.size());
  int best = -1;
  for (std::size_t k = 0; k < outcomes.size(); ++k) {
    const auto& o = outcomes[k];
    if (!failures[k].empty()) continue;
    if (!o.feasible_path) {
      ++result.diag.starts_infeasible;
      continue;
    }
    if (!o.converged) continue;
    ++result.diag.starts_converged;
    result.diag.outer_iterations += o.iterations;
    if (best < 0 || o.value < outcomes[static_cast<std::size_t>(best)].value - 1e-12 ||
        (std::fabs(o.value - outcomes[static_cast<std::size_t>(best)].value) <= 1e-12 &&
         detail::lexicographic_less(o.b, outcomes[static_cast<std::size_t>(best)].b))) {
      best = static_cast<int>(k);
    }
  }
  if (best < 0) {
    if (result.diag.starts_infeasible == result.diag.starts_attempted) {
      // No parameter in the region can be rationalized: infinite breakdown.
      result.delta_hat = ExtReal::infinity();
      return result;
    }
    throw_numerical("no-start-converged", "all optimization starts failed");
  }
  const auto& winner = outcomes[static_cast<std::size_t>(best)];
  result.delta_hat = ExtReal::finite(winner.value);
  result.b_star = winner.b;
  result.state = winner.state;
  for (const auto& o : outcomes) {
    if (!o.converged || &o == &winner) continue;
    if (std::fabs(o.value - winner.value) <= 1e-6 && (o.b - winner.b).lpNorm<Eigen::Infinity>() > 1e-3) {
      result.diag.multiple_minimizers = true;  // inference is unreliable in this case
    }
  }
  for (int j = 0; j < hyp.dim(); ++j) {
    const double span = 1.0 + std::fabs(hyp.box(j, 0)) + std::fabs(hyp.box(j, 1));
    if (std::fabs(winner.b[j] - hyp.box(j, 0)) < 1e-9 * span ||
        std::fabs(winner.b[j] - hyp.box(j, 1)) < 1e-9 * span) {
      result.diag.minimizer_on_box_boundary = true;  // B may be too small for Assumption 2
    }
  }
  return result;
}

// Sample Jacobian of the stacked Z-estimator moments phi in theta = (v,
// lambda, p): first row (-1, mean grad_lambda phi, mean grad_p phi), middle
// block the dual Hessian and its p-derivative, last row (0, ..., 0, -1).
inline Eigen::MatrixXd jacobian_phi_hat(const DualProblem& problem, const Eigen::VectorXd& lambda,
                                        double p) {
  const int m = problem.dim();
  Eigen::VectorXd grad(m);
  Eigen::MatrixXd hess(m, m);
  if (!problem.gradient_hessian(lambda, p, grad, hess)) {
    throw_numerical("conjugate-domain", "jacobian requested at an out-of-domain multiplier");
  }
  const Eigen::MatrixXd& h1 = problem.h_complete();
  const int n = problem.sample().n;
  const Eigen::ArrayXd s = (h1 * lambda).array();
  Eigen::ArrayXd fstar(s.size()), w(s.size());
  problem.conj_batch(s, &fstar, &w, nullptr);
  const double q = 1.0 - p;
  // mean grad_p phi = lambda'J h/(1-p)^2 + (d/p^2) f*
  const double mean_p = lambda.dot(problem.mean_j_h()) / (q * q) + fstar.sum() / (n * p * p);
  // mean grad_p grad_lambda phi = J h/(1-p)^2 + (d/p^2) (f*)' h
  const Eigen::VectorXd mean_p_lambda =
      problem.mean_j_h() / (q * q) + h1.transpose() * w.matrix() / (n * p * p);

  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(m + 2, m + 2);
  out(0, 0) = -1.0;
  out.block(0, 1, 1, m) = grad.transpose();
  out(0, m + 1) = mean_p;
  out.block(1, 1, m, m) = hess;
  out.block(1, m + 1, m, 1) = mean_p_lambda;
  out(m + 1, m + 1) = -1.0;
  return out;
}

// Sandwich variance and the one-sided lower confidence interval
// ci = delta_hat - sigma_hat/sqrt(n) * z_{1-alpha}.
inline void attach_inference(BreakdownResult& result, const Sample& s,
                             const ConstraintSystem& cs, const DivergenceSpec& spec,
                             double alpha = 0.05) {
  result.alpha = alpha;
  result.inference_ok = false;
  if (result.delta_hat.is_infinite()) return;
  const DualProblem problem(s, cs, spec, result.b_star);
  const Eigen::VectorXd& lambda = result.state.lambda;
  const double p = s.p_hat;
  const double nu = result.delta_hat.value();

  const Eigen::MatrixXd jac = jacobian_phi_hat(problem, lambda, p);
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(jac);
  result.diag.min_singular_value = svd.singularValues().minCoeff();
  if (result.diag.min_singular_value < 1e-10) {
    // Refuse inference on a near-singular Jacobian instead of regularizing.
    return;
  }
  // First row of the Jacobian inverse.
  const Eigen::VectorXd r =
      jac.transpose().fullPivLu().solve(Eigen::VectorXd::Unit(jac.rows(), 0));

  const int m = problem.dim();
  const int d_g = cs.model.d_g;
  const double r_v = r[0];
  const Eigen::VectorXd r_lam = r.segment(1, m);
  const double r_p = r[m + 1];
  const double q = 1.0 - p;

  const Eigen::MatrixXd& h1 = problem.h_complete();
  const Eigen::MatrixXd& t0 = problem.tail_incomplete();
  const Eigen::ArrayXd sarg = (h1 * lambda).array();
  Eigen::ArrayXd fstar(sarg.size()), w(sarg.size());
  problem.conj_batch(sarg, &fstar, &w, nullptr);

  // Complete rows: lambda'J(1)h = -lambda_g'g, r'J(1)h = -r_g'g.
  const Eigen::ArrayXd lam_jh = -(h1.leftCols(d_g) * lambda.head(d_g)).array();
  const Eigen::ArrayXd r_jh = -(h1.leftCols(d_g) * r_lam.head(d_g)).array();
  const Eigen::ArrayXd r_h = (h1 * r_lam).array();
  const Eigen::ArrayXd phi1 = lam_jh / q - fstar / p;
  const Eigen::ArrayXd score1 = r_v * (phi1 - nu) + (r_jh / q - w * r_h / p) + r_p * (1.0 - p);

  // Incomplete rows: only the h tail enters.
  const Eigen::ArrayXd lam_jh0 = (t0 * lambda.tail(cs.tail_dim)).array();
  const Eigen::ArrayXd r_jh0 = (t0 * r_lam.tail(cs.tail_dim)).array();
  const Eigen::ArrayXd score0 = r_v * (lam_jh0 / q - nu) + r_jh0 / q + r_p * (0.0 - p);

  const double sigma2 = (score1.square().sum() + score0.square().sum()) / s.n;
  result.sigma_hat = std::sqrt(std::max(sigma2, 0.0));
  result.ci_lower = nu - result.sigma_hat / std::sqrt(static_cast<double>(s.n)) *
                             normal_quantile(1.0 - alpha);
  result.inference_ok = true;
}

// Midpoint-convexity scan of nu_hat along random segments of a box. Points
// where the dual is unbounded are reported as skipped, not failures.
struct ConvexityReport {
  double max_violation = -std::numeric_limits<double>::infinity();
  int segments = 0;
  int evaluated = 0;
  int skipped = 0;
  std::vector<double> per_segment_max;
};

inline ConvexityReport convexity_scan(const Sample& s, const ConstraintSystem& cs,
                                      const DivergenceSpec& spec, const Eigen::MatrixXd& box,
                                      int n_pairs, int n_grid, std::uint64_t seed,
                                      const DualOptions& dual = {}, int threads = 1) {
  if (n_grid < 3) throw_input("convexity-grid", "need at least 3 grid points");
  ConvexityReport report;
  report.segments = n_pairs;
  report.per_segment_max.assign(static_cast<std::size_t>(n_pairs),
                                -std::numeric_limits<double>::infinity());
  std::vector<int> evaluated(static_cast<std::size_t>(n_pairs), 0);
  std::vector<int> skipped(static_cast<std::size_t>(n_pairs), 0);
  const int d = static_cast<int>(box.rows());

  parallel_for(static_cast<std::size_t>(n_pairs), threads, [&](std::size_t pair) {
    Rng rng(seed, pair);
    Eigen::VectorXd b0(d), b1(d);
    for (int j = 0; j < d; ++j) {
      b0[j] = rng.uniform(box(j, 0), box(j, 1));
      b1[j] = rng.uniform(box(j, 0), box(j, 1));
    }
    std::vector<ExtReal> values(static_cast<std::size_t>(n_grid), ExtReal::infinity());
    Eigen::VectorXd warm;
    for (int k = 0; k < n_grid; ++k) {
      const double t = static_cast<double>(k) / (n_grid - 1);
      const Eigen::VectorXd b = (1.0 - t) * b0 + t * b1;
      const DualState state =
          DualProblem(s, cs, spec, b).maximize(dual, warm.size() ? &warm : nullptr);
      if (state.converged()) {
        values[static_cast<std::size_t>(k)] = state.value;
        warm = state.lambda;
        ++evaluated[pair];
      } else {
        ++skipped[pair];
      }
    }
    for (int k = 1; k + 1 < n_grid; ++k) {
      const ExtReal& left = values[static_cast<std::size_t>(k - 1)];
      const ExtReal& mid = values[static_cast<std::size_t>(k)];
      const ExtReal& right = values[static_cast<std::size_t>(k + 1)];
      if (!left.is_finite() || !mid.is_finite() || !right.is_finite()) continue;
      const double violation = mid.value() - 0.5 * left.value() - 0.5 * right.value();
      report.per_segment_max[pair] = std::max(report.per_segment_max[pair], violation);
    }
  });
  for (std::size_t pair = 0; pair < report.per_segment_max.size(); ++pair) {
    report.max_violation = std::max(report.max_violation, report.per_segment_max[pair]);
    report.evaluated += evaluated[pair];
    report.skipped += skipped[pair];
  }
  return report;
}

}  // namespace breakdown
