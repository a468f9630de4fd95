#pragma once

#include <cmath>
#include <functional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "breakdown/errors.hpp"
#include "breakdown/sample.hpp"
#include "breakdown/stats.hpp"

namespace breakdown {

using VecCRef = Eigen::Ref<const Eigen::VectorXd>;
using VecRef = Eigen::Ref<Eigen::VectorXd>;
using MatRef = Eigen::Ref<Eigen::MatrixXd>;

// A GMM specification: moment function g(y, x, b) in R^{d_g} and its
// Jacobian in b. Models are immutable after construction and reentrant.
struct MomentModel {
  std::string name;
  int d_b = 0;
  int d_g = 0;
  std::function<void(VecCRef y, VecCRef x, VecCRef b, VecRef out)> g;
  std::function<void(VecCRef y, VecCRef x, VecCRef b, MatRef out)> grad_b;  // d_g x d_b
};

// Scalar mean: g(y, b) = y - b.
inline MomentModel builtin_mean() {
  MomentModel m;
  m.name = "mean";
  m.d_b = 1;
  m.d_g = 1;
  m.g = [](VecCRef y, VecCRef, VecCRef b, VecRef out) { out[0] = y[0] - b[0]; };
  m.grad_b = [](VecCRef, VecCRef, VecCRef, MatRef out) { out(0, 0) = -1.0; };
  return m;
}

// Index into the combined row z = (y_1..y_{d_y}, x_1..x_{d_x}); -1 denotes a
// constant 1 (intercept).
inline double z_entry(VecCRef y, VecCRef x, int idx) {
  if (idx < 0) return 1.0;
  if (idx < y.size()) return y[idx];
  return x[idx - static_cast<int>(y.size())];
}

// Linear IV moments g = (dep - reg'b) * inst over entries of the combined
// row; OLS is the special case inst == reg. Exact identification
// (|inst| == |reg|) is assumed by the downstream estimators.
inline MomentModel builtin_linear_iv(int dep, std::vector<int> reg, std::vector<int> inst = {}) {
  if (inst.empty()) inst = reg;
  if (inst.size() < reg.size()) {
    throw_input("model-dims", "linear model needs at least as many instruments as regressors");
  }
  MomentModel m;
  m.name = "linear";
  m.d_b = static_cast<int>(reg.size());
  m.d_g = static_cast<int>(inst.size());
  m.g = [dep, reg, inst](VecCRef y, VecCRef x, VecCRef b, VecRef out) {
    double r = z_entry(y, x, dep);
    for (std::size_t j = 0; j < reg.size(); ++j) r -= b[static_cast<Eigen::Index>(j)] * z_entry(y, x, reg[j]);
    for (std::size_t k = 0; k < inst.size(); ++k) out[static_cast<Eigen::Index>(k)] = r * z_entry(y, x, inst[k]);
  };
  m.grad_b = [reg, inst](VecCRef y, VecCRef x, VecCRef, MatRef out) {
    for (std::size_t k = 0; k < inst.size(); ++k) {
      const double w = z_entry(y, x, inst[k]);
      for (std::size_t j = 0; j < reg.size(); ++j) {
        out(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = -w * z_entry(y, x, reg[j]);
      }
    }
  };
  return m;
}

// Logit score moments g = (outcome - logistic(reg'b)) * reg over entries of
// the combined row.
inline MomentModel builtin_logit(int outcome, std::vector<int> reg) {
  MomentModel m;
  m.name = "logit";
  m.d_b = static_cast<int>(reg.size());
  m.d_g = static_cast<int>(reg.size());
  m.g = [outcome, reg](VecCRef y, VecCRef x, VecCRef b, VecRef out) {
    double t = 0.0;
    for (std::size_t j = 0; j < reg.size(); ++j) t += b[static_cast<Eigen::Index>(j)] * z_entry(y, x, reg[j]);
    const double resid = z_entry(y, x, outcome) - logistic(t);
    for (std::size_t j = 0; j < reg.size(); ++j) out[static_cast<Eigen::Index>(j)] = resid * z_entry(y, x, reg[j]);
  };
  m.grad_b = [reg](VecCRef y, VecCRef x, VecCRef b, MatRef out) {
    double t = 0.0;
    for (std::size_t j = 0; j < reg.size(); ++j) t += b[static_cast<Eigen::Index>(j)] * z_entry(y, x, reg[j]);
    const double lam = logistic(t);
    const double w = -lam * (1.0 - lam);
    for (std::size_t j = 0; j < reg.size(); ++j) {
      const double zj = z_entry(y, x, reg[j]);
      for (std::size_t l = 0; l < reg.size(); ++l) {
        out(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(l)) = w * zj * z_entry(y, x, reg[l]);
      }
    }
  };
  return m;
}

// Search region and null region: an axis-aligned box B plus linear
// inequalities a'b <= c whose intersection with B is B0. Nonlinear nulls
// must be linearized by the caller.
struct LinearInequality {
  Eigen::VectorXd a;
  double c = 0.0;
};

struct Hypothesis {
  Eigen::MatrixXd box;  // d_b x 2, finite bounds
  std::vector<LinearInequality> null_constraints;

  int dim() const { return static_cast<int>(box.rows()); }
  void validate() const {
    if (box.cols() != 2) throw_input("hypothesis-box", "box must be d_b x 2");
    for (Eigen::Index j = 0; j < box.rows(); ++j) {
      if (!(box(j, 0) <= box(j, 1)) || !std::isfinite(box(j, 0)) || !std::isfinite(box(j, 1))) {
        throw_input("hypothesis-box", "box bounds must be finite with lo <= hi");
      }
    }
    for (const auto& ineq : null_constraints) {
      if (ineq.a.size() != box.rows()) {
        throw_input("hypothesis-null", "null constraint dimension mismatch");
      }
    }
  }
};

inline bool null_boundary_check(const Hypothesis& hyp, VecCRef b, double tol = 1e-12) {
  for (Eigen::Index j = 0; j < hyp.box.rows(); ++j) {
    if (b[j] < hyp.box(j, 0) - tol || b[j] > hyp.box(j, 1) + tol) return false;
  }
  for (const auto& ineq : hyp.null_constraints) {
    if (ineq.a.dot(b) > ineq.c + tol) return false;
  }
  return true;
}

enum class SupportMode { FullSupport, ConservativeFirstMoment, XEmpty };

inline std::string to_string(SupportMode m) {
  switch (m) {
    case SupportMode::FullSupport: return "full-support";
    case SupportMode::ConservativeFirstMoment: return "conservative-first-moment";
    case SupportMode::XEmpty: return "x-empty";
  }
  return "";
}

// The stacked constraint system h(z,b), c(b) the dual problem consumes. The
// first d_g coordinates of h are the model moments; the tail depends on the
// mode: support indicators (full), standardized first moments of x plus a
// constant (conservative), or the constant 1 alone (x-empty).
struct ConstraintSystem {
  SupportMode mode = SupportMode::XEmpty;
  MomentModel model;
  int K = 0;        // support points; 0 unless full-support
  int tail_dim = 1; // h coordinates past the moment block
  SupportInfo support;            // full-support mode
  Eigen::VectorXd x_center, x_scale;  // conservative standardization

  int dim() const { return model.d_g + tail_dim; }

  // h coordinates past the moment block for sample row i.
  void tail(const Sample& s, int i, VecRef out) const {
    switch (mode) {
      case SupportMode::FullSupport:
        out.setZero();
        out[support.row_code[static_cast<std::size_t>(i)]] = 1.0;
        break;
      case SupportMode::ConservativeFirstMoment:
        out.head(s.d_x) =
            (s.x.row(i).transpose() - x_center).cwiseProduct(x_scale.cwiseInverse());
        out[s.d_x] = 1.0;
        break;
      case SupportMode::XEmpty:
        out[0] = 1.0;
        break;
    }
  }

  // Full constraint vector h(d_i*y_i, x_i, b) for a complete row.
  void h_row(const Sample& s, int i, VecCRef b, VecRef out) const {
    model.g(s.y.row(i).transpose(), s.x.row(i).transpose(), b, out.head(model.d_g));
    tail(s, i, out.tail(tail_dim));
  }

  // c(b): the moment block is -p/(1-p) times the complete-case mean of g;
  // the tail block matches the h tail means over the incomplete rows.
  Eigen::VectorXd c_hat(const Sample& s, VecCRef b) const {
    Eigen::VectorXd c(dim());
    Eigen::VectorXd gi(model.d_g);
    Eigen::VectorXd gsum = Eigen::VectorXd::Zero(model.d_g);
    for (int i = 0; i < s.n; ++i) {
      if (!s.d[static_cast<std::size_t>(i)]) continue;
      model.g(s.y.row(i).transpose(), s.x.row(i).transpose(), b, gi);
      gsum += gi;
    }
    c.head(model.d_g) = (-s.p_hat / (1.0 - s.p_hat)) * (gsum / s.n1);
    switch (mode) {
      case SupportMode::FullSupport:
        for (int k = 0; k < K; ++k) {
          c[model.d_g + k] =
              static_cast<double>(support.count0[static_cast<std::size_t>(k)]) / s.n0;
        }
        break;
      case SupportMode::ConservativeFirstMoment: {
        Eigen::VectorXd xsum = Eigen::VectorXd::Zero(s.d_x);
        for (int i = 0; i < s.n; ++i) {
          if (s.d[static_cast<std::size_t>(i)]) continue;
          xsum += (s.x.row(i).transpose() - x_center).cwiseProduct(x_scale.cwiseInverse());
        }
        c.segment(model.d_g, s.d_x) = xsum / s.n0;
        c[model.d_g + s.d_x] = 1.0;
        break;
      }
      case SupportMode::XEmpty:
        c[model.d_g] = 1.0;
        break;
    }
    return c;
  }
};

inline ConstraintSystem build_constraints(const MomentModel& model, const Sample& s,
                                          SupportMode mode) {
  ConstraintSystem cs;
  cs.mode = mode;
  cs.model = model;
  switch (mode) {
    case SupportMode::FullSupport: {
      cs.support = enumerate_support(s, true);
      if (!cs.support.equal_across_groups()) {
        throw_input("support-mismatch",
                    "full-support mode requires every x cell to appear in both the complete "
                    "and incomplete groups; use conservative-first-moment otherwise");
      }
      cs.K = cs.support.K();
      cs.tail_dim = cs.K;
      break;
    }
    case SupportMode::ConservativeFirstMoment: {
      if (s.d_x == 0) throw_input("x-empty", "conservative mode needs x columns");
      if (!s.x.allFinite()) {
        throw_input("x-not-numeric", "conservative mode requires numeric x columns");
      }
      // Standardize by complete-case mean and sd to condition the dual
      // Hessian; the constraint set is unchanged.
      cs.x_center = Eigen::VectorXd::Zero(s.d_x);
      cs.x_scale = Eigen::VectorXd::Ones(s.d_x);
      Eigen::VectorXd sum = Eigen::VectorXd::Zero(s.d_x);
      Eigen::VectorXd sq = Eigen::VectorXd::Zero(s.d_x);
      for (int i = 0; i < s.n; ++i) {
        if (!s.d[static_cast<std::size_t>(i)]) continue;
        sum += s.x.row(i).transpose();
        sq += s.x.row(i).transpose().cwiseAbs2();
      }
      cs.x_center = sum / s.n1;
      for (int j = 0; j < s.d_x; ++j) {
        const double var = sq[j] / s.n1 - cs.x_center[j] * cs.x_center[j];
        cs.x_scale[j] = var > 1e-24 ? std::sqrt(var) : 1.0;
      }
      cs.K = 0;
      cs.tail_dim = s.d_x + 1;
      break;
    }
    case SupportMode::XEmpty:
      cs.K = 0;
      cs.tail_dim = 1;
      break;
  }
  return cs;
}

// Overload taking an explicit support list (full-support mode): rejects
// duplicate entries, then delegates.
inline ConstraintSystem build_constraints(const MomentModel& model, const Sample& s,
                                          const std::vector<std::string>& support_keys,
                                          SupportMode mode) {
  std::set<std::string> seen;
  for (const auto& key : support_keys) {
    if (!seen.insert(key).second) {
      throw_input("support-duplicate", "support list contains duplicate entry: " + key);
    }
  }
  ConstraintSystem cs = build_constraints(model, s, mode);
  if (mode == SupportMode::FullSupport &&
      seen != std::set<std::string>(cs.support.keys.begin(), cs.support.keys.end())) {
    throw_input("support-mismatch", "given support list does not match the sample support");
  }
  return cs;
}

// Complete-case GMM solution (valid under MCAR): damped Gauss-Newton on the
// complete-case moment means, converging at gradient norm 1e-10.
inline Eigen::VectorXd mcar_estimate(const Sample& s, const MomentModel& model,
                                     int max_iter = 200, double tol = 1e-10) {
  Eigen::VectorXd b = Eigen::VectorXd::Zero(model.d_b);
  Eigen::VectorXd gi(model.d_g), fsum(model.d_g);
  Eigen::MatrixXd ji(model.d_g, model.d_b), jsum(model.d_g, model.d_b);
  auto moments = [&](const Eigen::VectorXd& bb, Eigen::VectorXd& f) {
    f.setZero();
    for (int i = 0; i < s.n; ++i) {
      if (!s.d[static_cast<std::size_t>(i)]) continue;
      model.g(s.y.row(i).transpose(), s.x.row(i).transpose(), bb, gi);
      f += gi;
    }
    f /= s.n1;
  };
  Eigen::VectorXd f(model.d_g), f_new(model.d_g);
  moments(b, f);
  for (int iter = 0; iter < max_iter; ++iter) {
    if (f.norm() <= tol) return b;
    jsum.setZero();
    for (int i = 0; i < s.n; ++i) {
      if (!s.d[static_cast<std::size_t>(i)]) continue;
      model.grad_b(s.y.row(i).transpose(), s.x.row(i).transpose(), b, ji);
      jsum += ji;
    }
    jsum /= s.n1;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(jsum.transpose() * jsum);
    if (!lu.isInvertible()) {
      throw_numerical("singular-jacobian", "MCAR moment Jacobian is singular");
    }
    const Eigen::VectorXd step = lu.solve(-jsum.transpose() * f);
    double alpha = 1.0;
    for (;;) {
      moments(b + alpha * step, f_new);
      if (f_new.norm() < f.norm() || alpha < 1e-10) break;
      alpha *= 0.5;
    }
    b += alpha * step;
    f.swap(f_new);
  }
  if (f.norm() <= tol) return b;
  throw_numerical("mcar-no-convergence", "MCAR estimate did not converge");
}

}  // namespace breakdown
