#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "breakdown/divergence.hpp"
#include "breakdown/errors.hpp"
#include "breakdown/ext_real.hpp"
#include "breakdown/moments.hpp"
#include "breakdown/rng.hpp"
#include "breakdown/sample.hpp"

namespace breakdown {

// A finite-support f-divergence projection problem:
//   min over q of sum_j p1_j f(q_j)  s.t.  sum_j p1_j q_j h_j = c.
// Serves as ground truth for the dual solver. Deliberately parameterized and
// solved differently from the dual path so that agreement is evidence.
struct DiscreteInstance {
  Eigen::MatrixXd h;   // J x m, one constraint row per atom
  Eigen::VectorXd p1;  // atom probabilities, sum to 1
  Eigen::VectorXd c;   // m targets

  int atoms() const { return static_cast<int>(h.rows()); }
  int constraints() const { return static_cast<int>(h.cols()); }

  void validate() const {
    if (p1.size() != h.rows()) throw_input("instance-shape", "p1 length must match atom count");
    if (c.size() != h.cols()) throw_input("instance-shape", "c length must match constraint count");
    if (std::fabs(p1.sum() - 1.0) > 1e-9 || (p1.array() < 0).any()) {
      throw_input("instance-shape", "p1 must be a probability vector");
    }
  }

  // Constraint matrix A with A q = c, A_{kj} = p1_j h_{jk}.
  Eigen::MatrixXd constraint_matrix() const {
    return h.transpose() * p1.asDiagonal();
  }
};

struct PrimalSolution {
  ExtReal value = ExtReal::infinity();
  Eigen::VectorXd q;
  bool converged = false;
  double constraint_residual = std::numeric_limits<double>::infinity();
};

struct PrimalOptions {
  int restarts = 20;
  int max_outer = 60;
  int max_inner = 80;
  double feas_tol = 1e-11;
  double grad_tol = 1e-10;
  std::uint64_t seed = 7;
};

namespace detail {

// Primal-dual Newton polish on the KKT system of the equality-constrained
// problem; tightens an augmented-Lagrangian iterate to machine-precision
// feasibility regardless of the penalty conditioning.
inline bool primal_kkt_polish(const DiscreteInstance& inst, const DivergenceSpec& spec,
                              Eigen::VectorXd& q, Eigen::VectorXd& mu, double feas_tol,
                              double stat_tol) {
  const int J = inst.atoms();
  const int m = inst.constraints();
  const Eigen::MatrixXd A = inst.constraint_matrix();
  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(J + m, J + m);
  kkt.block(0, J, J, m) = A.transpose();
  kkt.block(J, 0, m, J) = A;
  Eigen::VectorXd rhs(J + m), step(J + m);
  for (int iter = 0; iter < 60; ++iter) {
    for (int j = 0; j < J; ++j) rhs[j] = -(inst.p1[j] * spec.f_d1(q[j]) + A.col(j).dot(mu));
    rhs.tail(m) = -(A * q - inst.c);
    if (rhs.head(J).norm() <= stat_tol && rhs.tail(m).norm() <= feas_tol) return true;
    for (int j = 0; j < J; ++j) kkt(j, j) = inst.p1[j] * spec.f_d2(q[j]);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
    if (!lu.isInvertible()) return false;
    step = lu.solve(rhs);
    double alpha = 1.0;
    for (int j = 0; j < J; ++j) {
      if (step[j] < 0.0) alpha = std::min(alpha, 0.9995 * q[j] / (-step[j]));
    }
    q += alpha * step.head(J);
    mu += alpha * step.tail(m);
  }
  for (int j = 0; j < J; ++j) rhs[j] = -(inst.p1[j] * spec.f_d1(q[j]) + A.col(j).dot(mu));
  rhs.tail(m) = -(A * q - inst.c);
  return rhs.head(J).norm() <= stat_tol && rhs.tail(m).norm() <= feas_tol;
}

// One augmented-Lagrangian run from a given interior starting point.
inline bool primal_al_run(const DiscreteInstance& inst, const DivergenceSpec& spec,
                          const PrimalOptions& opts, Eigen::VectorXd q, PrimalSolution& best) {
  const int J = inst.atoms();
  const int m = inst.constraints();
  const Eigen::MatrixXd A = inst.constraint_matrix();
  const Eigen::MatrixXd AtA = A.transpose() * A;
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(m);
  double rho = 10.0;

  auto penalized = [&](const Eigen::VectorXd& qq) -> std::optional<double> {
    double fsum = 0.0;
    for (int j = 0; j < J; ++j) {
      const ExtReal fj = spec.f_value(qq[j]);
      if (fj.is_infinite()) return std::nullopt;
      fsum += inst.p1[j] * fj.value();
    }
    const Eigen::VectorXd r = A * qq - inst.c;
    return fsum + mu.dot(r) + 0.5 * rho * r.squaredNorm();
  };

  Eigen::VectorXd grad(J), step(J), r(m);
  Eigen::MatrixXd hess(J, J);
  double prev_feas = std::numeric_limits<double>::infinity();
  for (int outer = 0; outer < opts.max_outer; ++outer) {
    // Interior Newton on the augmented Lagrangian.
    for (int inner = 0; inner < opts.max_inner; ++inner) {
      r = A * q - inst.c;
      for (int j = 0; j < J; ++j) grad[j] = inst.p1[j] * spec.f_d1(q[j]);
      grad.noalias() += A.transpose() * (mu + rho * r);
      if (grad.norm() <= opts.grad_tol * (1.0 + rho)) break;
      hess = rho * AtA;
      for (int j = 0; j < J; ++j) hess(j, j) += inst.p1[j] * spec.f_d2(q[j]);
      Eigen::LLT<Eigen::MatrixXd> llt(hess);
      if (llt.info() != Eigen::Success) {
        hess.diagonal().array() += 1e-10;
        llt.compute(hess);
        if (llt.info() != Eigen::Success) return false;
      }
      step = -llt.solve(grad);
      // Keep strictly inside dom(f): cap the step at 99.95% of the distance
      // to the lower boundary.
      double alpha = 1.0;
      for (int j = 0; j < J; ++j) {
        if (step[j] < 0.0) alpha = std::min(alpha, 0.9995 * q[j] / (-step[j]));
      }
      const auto base = penalized(q);
      if (!base) return false;
      const double slope = grad.dot(step);
      bool moved = false;
      for (int ls = 0; ls < 60; ++ls) {
        const Eigen::VectorXd trial = q + alpha * step;
        const auto val = penalized(trial);
        if (val && *val <= *base + 1e-4 * alpha * slope) {
          q = trial;
          moved = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!moved) break;
    }
    r = A * q - inst.c;
    const double feas = r.norm();
    if (feas <= 1e-6) {
      // Close enough for the KKT polish to take over.
      Eigen::VectorXd mu_eq = mu + rho * r;
      Eigen::VectorXd q_polish = q;
      if (primal_kkt_polish(inst, spec, q_polish, mu_eq, opts.feas_tol, opts.grad_tol) &&
          (q_polish.array() > 0.0).all()) {
        double fsum = 0.0;
        for (int j = 0; j < J; ++j) fsum += inst.p1[j] * spec.f_value(q_polish[j]).value();
        const double residual = (A * q_polish - inst.c).norm();
        if (!best.converged || fsum < best.value.as_double()) {
          best.value = ExtReal::finite(fsum);
          best.q = q_polish;
          best.converged = true;
          best.constraint_residual = residual;
        }
        return true;
      }
    }
    if (feas <= opts.feas_tol) {
      double fsum = 0.0;
      for (int j = 0; j < J; ++j) fsum += inst.p1[j] * spec.f_value(q[j]).value();
      if (!best.converged || fsum < best.value.as_double()) {
        best.value = ExtReal::finite(fsum);
        best.q = q;
        best.converged = true;
        best.constraint_residual = feas;
      }
      return true;
    }
    mu += rho * r;
    if (feas > 0.25 * prev_feas) rho = std::min(rho * 10.0, 1e12);
    prev_feas = feas;
    best.constraint_residual = std::min(best.constraint_residual, feas);
  }
  return false;
}

}  // namespace detail

// Brute-force solution of the discrete projection problem by augmented
// Lagrangian with interior Newton inner steps and random restarts. An
// instance whose constraints cannot be met reports value +infinity.
inline PrimalSolution discrete_primal(const DiscreteInstance& inst, const DivergenceSpec& spec,
                                      const PrimalOptions& opts = {}) {
  inst.validate();
  Eigen::FullPivLU<Eigen::MatrixXd> lu(inst.constraint_matrix());
  if (lu.rank() < inst.constraints()) {
    throw_input("rank-deficient", "constraint matrix must have full row rank");
  }
  PrimalSolution best;
  Rng rng(opts.seed);
  const int J = inst.atoms();
  for (int restart = 0; restart < std::max(1, opts.restarts); ++restart) {
    Eigen::VectorXd q0(J);
    if (restart == 0) {
      q0.setOnes();
    } else {
      for (int j = 0; j < J; ++j) q0[j] = std::exp(0.7 * rng.normal());
    }
    detail::primal_al_run(inst, spec, opts, q0, best);
  }
  return best;
}

// Exhaustive check for tiny instances: with at most one degree of freedom
// after the equality constraints, scan the free variable on a fixed grid.
// Returns the best value found, or +infinity when no grid point is feasible.
inline PrimalSolution grid_primal(const DiscreteInstance& inst, const DivergenceSpec& spec,
                                  double resolution = 1e-4) {
  inst.validate();
  const Eigen::MatrixXd A = inst.constraint_matrix();
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(A);
  PrimalSolution out;
  const Eigen::VectorXd q0 = cod.solve(inst.c);
  if ((A * q0 - inst.c).norm() > 1e-8) return out;  // inconsistent constraints
  const Eigen::MatrixXd kernel = Eigen::FullPivLU<Eigen::MatrixXd>(A).kernel();
  const int freedom = (A * kernel).norm() < 1e-10 ? static_cast<int>(kernel.cols()) : 0;
  auto eval = [&](const Eigen::VectorXd& q) -> ExtReal {
    double fsum = 0.0;
    for (int j = 0; j < inst.atoms(); ++j) {
      const ExtReal fj = spec.f_value(q[j]);
      if (fj.is_infinite()) return ExtReal::infinity();
      fsum += inst.p1[j] * fj.value();
    }
    return ExtReal::finite(fsum);
  };
  if (freedom == 0 || kernel.norm() < 1e-12) {
    const ExtReal v = eval(q0);
    if (v.is_finite()) {
      out.value = v;
      out.q = q0;
      out.converged = true;
      out.constraint_residual = (A * q0 - inst.c).norm();
    }
    return out;
  }
  if (freedom > 1) throw_input("grid-freedom", "grid oracle handles at most one free variable");
  const Eigen::VectorXd w = kernel.col(0) / kernel.col(0).norm();
  // Feasible t-range where every q_j stays in [0, inf); refined by the scan.
  double t_lo = -1e6, t_hi = 1e6;
  for (int j = 0; j < inst.atoms(); ++j) {
    if (w[j] > 1e-14) t_lo = std::max(t_lo, -q0[j] / w[j]);
    if (w[j] < -1e-14) t_hi = std::min(t_hi, -q0[j] / w[j]);
  }
  if (t_lo > t_hi) return out;
  ExtReal best = ExtReal::infinity();
  double best_t = 0.0;
  const long steps = static_cast<long>((t_hi - t_lo) / resolution) + 1;
  for (long k = 0; k <= steps; ++k) {
    const double t = std::min(t_lo + static_cast<double>(k) * resolution, t_hi);
    const ExtReal v = eval(q0 + t * w);
    if (v < best) {
      best = v;
      best_t = t;
    }
  }
  if (best.is_finite()) {
    out.value = best;
    out.q = q0 + best_t * w;
    out.converged = true;
    out.constraint_residual = (A * out.q - inst.c).norm();
  }
  return out;
}

// Discretizes a sample's complete-case distribution into an instance that
// shares the dual problem's targets: atoms are the distinct complete rows,
// h rows come from the constraint system, c is the sample target at b.
inline DiscreteInstance make_instance(const Sample& s, const ConstraintSystem& cs, VecCRef b) {
  std::map<std::string, std::pair<int, int>> atoms;  // key -> (first row, count)
  for (int i = 0; i < s.n; ++i) {
    if (!s.d[static_cast<std::size_t>(i)]) continue;
    std::string key;
    key.reserve(static_cast<std::size_t>(s.d_y) * sizeof(double) + 8);
    for (int j = 0; j < s.d_y; ++j) {
      const double v = s.y(i, j);
      key.append(reinterpret_cast<const char*>(&v), sizeof(double));
    }
    key.push_back('\x1f');
    key += s.x_key(i);
    auto [it, inserted] = atoms.emplace(key, std::make_pair(i, 0));
    ++it->second.second;
  }
  DiscreteInstance inst;
  const int J = static_cast<int>(atoms.size());
  inst.h.resize(J, cs.dim());
  inst.p1.resize(J);
  Eigen::VectorXd hrow(cs.dim());
  int j = 0;
  for (const auto& [key, entry] : atoms) {
    (void)key;
    cs.h_row(s, entry.first, b, hrow);
    inst.h.row(j) = hrow;
    inst.p1[j] = static_cast<double>(entry.second) / s.n1;
    ++j;
  }
  inst.c = cs.c_hat(s, b);
  return inst;
}

// Population instance for the uniform-mean design: P1 = U[0,1] discretized
// into equal-probability atoms at quantile-bin midpoints, constraints
// (mean, mass) for the target implied by (b, p_d).
inline DiscreteInstance uniform_mean_instance(int n_atoms, double p_d, double b) {
  DiscreteInstance inst;
  inst.h.resize(n_atoms, 2);
  inst.p1 = Eigen::VectorXd::Constant(n_atoms, 1.0 / n_atoms);
  for (int j = 0; j < n_atoms; ++j) {
    const double y = (j + 0.5) / n_atoms;
    inst.h(j, 0) = y - b;
    inst.h(j, 1) = 1.0;
  }
  inst.c.resize(2);
  inst.c[0] = (-p_d / (1.0 - p_d)) * (0.5 - b);
  inst.c[1] = 1.0;
  return inst;
}

// Closed-form dual for the KL/uniform mean problem. The first multiplier
// solves exp(l)/(exp(l)-1) - 1/l = (2b - p_d)/(2(1-p_d)) by bisection; the
// problem is solvable exactly for b strictly inside (p_d/2, 1 - p_d/2).
struct KlUniformDual {
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double value = 0.0;
  double foc_residual = 0.0;
};

inline KlUniformDual kl_uniform_dual(double b, double p_d) {
  if (!(p_d > 0.0 && p_d < 1.0)) throw_input("p-domain", "p_d must lie in (0,1)");
  if (!(b > p_d / 2.0 && b < 1.0 - p_d / 2.0)) {
    throw_input("kl-uniform-domain",
                "the KL/uniform dual has a solution only for b strictly inside "
                "(p_d/2, 1 - p_d/2)");
  }
  const double target = (2.0 * b - p_d) / (2.0 * (1.0 - p_d));
  auto psi = [](double l) {
    if (std::fabs(l) < 1e-5) return 0.5 + l / 12.0 - l * l * l / 720.0;
    return std::exp(l) / (std::exp(l) - 1.0) - 1.0 / l;
  };
  KlUniformDual out;
  if (b == 0.5) return out;  // lambda = 0 rationalizes the complete-case mean

  // psi is increasing from 0 to 1 with psi(0) = 1/2; bracket then bisect.
  double lo, hi;
  if (target > 0.5) {
    lo = 0.0;
    hi = 1.0;
    while (psi(hi) < target) hi *= 2.0;
  } else {
    hi = 0.0;
    lo = -1.0;
    while (psi(lo) > target) lo *= 2.0;
  }
  for (int iter = 0; iter < 400 && hi - lo > 1e-15 * std::max(1.0, std::fabs(lo)); ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (psi(mid) < target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double l1 = 0.5 * (lo + hi);
  const double l2 = std::log(l1 / (std::exp(l1 * (1.0 - b)) - std::exp(-l1 * b)));
  out.lambda1 = l1;
  out.lambda2 = l2;
  out.foc_residual = std::fabs(psi(l1) - target);
  const double c1 = (-p_d / (1.0 - p_d)) * (0.5 - b);
  const double e1 = std::exp(l1 * (1.0 - b) + l2);
  const double e0 = std::exp(-l1 * b + l2);
  out.value = l1 * c1 + l2 - (e1 - e0) / l1 + 1.0;
  return out;
}

}  // namespace breakdown
