#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "breakdown/divergence.hpp"
#include "breakdown/errors.hpp"
#include "breakdown/ext_real.hpp"
#include "breakdown/moments.hpp"
#include "breakdown/sample.hpp"

namespace breakdown {

struct DualOptions {
  double tol = 1e-9;               // gradient norm at convergence
  int max_iter = 200;
  double boundary_fraction = 0.995;  // fraction-to-boundary step cap
  double value_ceiling = 1e6;        // objective above this declares the primal infeasible
};

struct DualState {
  enum class Status { Converged, MaxIterations, SingularHessian, Unbounded };

  Eigen::VectorXd b;
  Eigen::VectorXd lambda;
  ExtReal value = ExtReal::finite(0.0);
  double grad_norm = std::numeric_limits<double>::quiet_NaN();
  int iters = 0;
  int boundary_hits = 0;
  double boundary_distance = std::numeric_limits<double>::infinity();  // min distance of lambda'h to the conjugate boundary
  Status status = Status::MaxIterations;

  bool converged() const { return status == Status::Converged; }

  std::string status_name() const {
    switch (status) {
      case Status::Converged: return "converged";
      case Status::MaxIterations: return "max-iterations";
      case Status::SingularHessian: return "singular-hessian";
      case Status::Unbounded: return "unbounded";
    }
    return "";
  }
};

// The sample dual problem at a fixed parameter point b:
//   max over lambda of (1/n) sum_i lambda'J(d_i)h_i/(1-p) - (d_i/p) f*(lambda'h_i).
// Complete rows carry the full constraint vector h_i; incomplete rows enter
// only through their h tail. Instances are immutable after construction, so
// concurrent solves at different b are safe.
class DualProblem {
 public:
  DualProblem(const Sample& s, const ConstraintSystem& cs, const DivergenceSpec& spec, VecCRef b)
      : sample_(&s), cs_(&cs), spec_(spec), b_(b), n_(s.n), n1_(s.n1), p_hat_(s.p_hat) {
    const int m = cs.dim();
    h1_.resize(n1_, m);
    tail0_.resize(s.n0, cs.tail_dim);
    rows1_.reserve(static_cast<std::size_t>(n1_));
    Eigen::VectorXd hrow(m);
    Eigen::VectorXd trow(cs.tail_dim);
    int i1 = 0, i0 = 0;
    for (int i = 0; i < s.n; ++i) {
      if (s.d[static_cast<std::size_t>(i)]) {
        cs.h_row(s, i, b_, hrow);
        h1_.row(i1++) = hrow;
        rows1_.push_back(i);
      } else {
        cs.tail(s, i, trow);
        tail0_.row(i0++) = trow;
      }
    }
    // (1/n) sum_i J(d_i) h_i: the moment block collects -g over complete
    // rows, the tail block collects the h tail over incomplete rows.
    mean_j_h_ = Eigen::VectorXd::Zero(m);
    mean_j_h_.head(cs.model.d_g) = -h1_.leftCols(cs.model.d_g).colwise().sum().transpose() / n_;
    mean_j_h_.tail(cs.tail_dim) = tail0_.colwise().sum().transpose() / n_;
    c_hat_ = cs.c_hat(s, b_);
  }

  int dim() const { return static_cast<int>(h1_.cols()); }
  double p_hat() const { return p_hat_; }
  const Eigen::VectorXd& c_hat() const { return c_hat_; }
  const Eigen::VectorXd& mean_j_h() const { return mean_j_h_; }
  const Eigen::VectorXd& b() const { return b_; }

  // f*, (f*)', (f*)'' over a vector of dual arguments; false when any entry
  // leaves the conjugate domain.
  bool conj_batch(const Eigen::ArrayXd& s, Eigen::ArrayXd* fstar, Eigen::ArrayXd* d1,
                  Eigen::ArrayXd* d2) const {
    switch (spec_.kind()) {
      case DivergenceKind::SquaredHellinger: {
        const Eigen::ArrayXd m = 1.0 - 2.0 * s;
        if (!(m > 0.0).all()) return false;
        if (fstar) *fstar = 0.5 * (m.inverse() - 1.0);
        if (d1) *d1 = m.square().inverse();
        if (d2) *d2 = 4.0 * m.cube().inverse();
        return true;
      }
      case DivergenceKind::KL: {
        if (fstar) *fstar = s.exp() - 1.0;
        if (d1) *d1 = s.exp();
        if (d2) *d2 = s.exp();
        return true;
      }
      case DivergenceKind::ReverseKL: {
        const Eigen::ArrayXd m = 1.0 - s;
        if (!(m > 0.0).all()) return false;
        if (fstar) *fstar = -m.log();
        if (d1) *d1 = m.inverse();
        if (d2) *d2 = m.square().inverse();
        return true;
      }
      case DivergenceKind::CressieRead: {
        const double g = spec_.gamma();
        const Eigen::ArrayXd m = 1.0 + (g - 1.0) * s;
        if (!(m > 0.0).all()) return false;
        if (fstar) *fstar = (m.pow(g / (g - 1.0)) - 1.0) / g;
        if (d1) *d1 = m.pow(1.0 / (g - 1.0));
        if (d2) *d2 = m.pow((2.0 - g) / (g - 1.0));
        return true;
      }
    }
    return false;
  }

  // Objective at (lambda, p); empty when some complete-row dual argument has
  // left the conjugate domain (the maximization value is -infinity there).
  std::optional<double> objective(VecCRef lambda, double p) const {
    const Eigen::ArrayXd s = (h1_ * lambda).array();
    return objective_from_args(lambda, s, p);
  }

  bool gradient(VecCRef lambda, double p, Eigen::VectorXd& grad) const {
    const Eigen::ArrayXd s = (h1_ * lambda).array();
    Eigen::ArrayXd w(s.size());
    if (!conj_batch(s, nullptr, &w, nullptr)) return false;
    grad = mean_j_h_ / (1.0 - p) - h1_.transpose() * w.matrix() / (n_ * p);
    return true;
  }

  bool gradient_hessian(VecCRef lambda, double p, Eigen::VectorXd& grad,
                        Eigen::MatrixXd& hess) const {
    const Eigen::ArrayXd s = (h1_ * lambda).array();
    Eigen::ArrayXd w(s.size()), f2(s.size());
    if (!conj_batch(s, nullptr, &w, &f2)) return false;
    grad = mean_j_h_ / (1.0 - p) - h1_.transpose() * w.matrix() / (n_ * p);
    hess = -(h1_.transpose() * f2.matrix().asDiagonal() * h1_) / (n_ * p);
    return true;
  }

  // Damped Newton ascent with a fraction-to-boundary step cap and Armijo
  // backtracking; monotone in the objective. Initialization at lambda = 0 is
  // always interior with objective exactly 0.
  DualState maximize(const DualOptions& opts, const Eigen::VectorXd* warm = nullptr) const {
    const int m = dim();
    DualState out;
    out.b = b_;
    out.lambda = Eigen::VectorXd::Zero(m);
    if (warm && warm->size() == m) {
      const Eigen::ArrayXd s = (h1_ * (*warm)).array();
      Eigen::ArrayXd probe(s.size());
      if (conj_batch(s, &probe, nullptr, nullptr)) out.lambda = *warm;
    }

    Eigen::ArrayXd s = (h1_ * out.lambda).array();
    std::optional<double> obj = objective_from_args(out.lambda, s, p_hat_);
    if (!obj) {  // cannot happen from lambda = 0; warm start was validated above
      out.lambda.setZero();
      s = (h1_ * out.lambda).array();
      obj = objective_from_args(out.lambda, s, p_hat_);
    }

    Eigen::VectorXd grad(m), delta(m);
    Eigen::MatrixXd hess(m, m), damped(m, m);
    Eigen::ArrayXd w(s.size()), f2(s.size()), ds(s.size()), s_next(s.size());
    const double lo = spec_.conj_lo();
    const double hi = spec_.conj_hi();

    for (int iter = 0; iter <= opts.max_iter; ++iter) {
      out.iters = iter;
      if (!conj_batch(s, nullptr, &w, &f2)) {
        out.status = DualState::Status::SingularHessian;  // interior iterate escaped; should not happen
        return out;
      }
      grad = mean_j_h_ / (1.0 - p_hat_) - h1_.transpose() * w.matrix() / (n_ * p_hat_);
      out.grad_norm = grad.norm();
      out.value = ExtReal::finite(*obj);
      if (out.grad_norm <= opts.tol) {
        out.status = DualState::Status::Converged;
        record_boundary_distance(out, s, lo, hi);
        return out;
      }
      if (*obj > opts.value_ceiling) {
        out.status = DualState::Status::Unbounded;
        out.value = ExtReal::infinity();
        return out;
      }
      if (iter == opts.max_iter) break;

      hess = -(h1_.transpose() * f2.matrix().asDiagonal() * h1_) / (n_ * p_hat_);
      // Newton direction from the negated Hessian; Levenberg damping covers
      // the finite-sample semidefinite case.
      double tau = 0.0;
      bool solved = false;
      for (int attempt = 0; attempt < 30; ++attempt) {
        damped = -hess;
        if (tau > 0.0) damped.diagonal().array() += tau;
        Eigen::LLT<Eigen::MatrixXd> llt(damped);
        if (llt.info() == Eigen::Success) {
          delta = llt.solve(grad);
          if (delta.allFinite() && grad.dot(delta) > 0.0) {
            solved = true;
            break;
          }
        }
        tau = tau == 0.0 ? 1e-10 : tau * 10.0;
      }
      if (!solved) {
        out.status = DualState::Status::SingularHessian;
        return out;
      }

      ds = (h1_ * delta).array();
      double alpha_max = 1.0;
      if (std::isfinite(hi)) {
        for (Eigen::Index i = 0; i < s.size(); ++i) {
          if (ds[i] > 0.0) alpha_max = std::min(alpha_max, opts.boundary_fraction * (hi - s[i]) / ds[i]);
        }
      }
      if (std::isfinite(lo)) {
        for (Eigen::Index i = 0; i < s.size(); ++i) {
          if (ds[i] < 0.0) alpha_max = std::min(alpha_max, opts.boundary_fraction * (s[i] - lo) / (-ds[i]));
        }
      }
      if (alpha_max < 1.0) ++out.boundary_hits;

      const double slope = grad.dot(delta);
      double alpha = alpha_max;
      bool advanced = false;
      for (int ls = 0; ls < 60; ++ls) {
        s_next = s + alpha * ds;
        const auto trial = objective_from_args(out.lambda + alpha * delta, s_next, p_hat_);
        if (trial && *trial >= *obj + 1e-4 * alpha * slope) {
          out.lambda += alpha * delta;
          s = s_next;
          obj = trial;
          advanced = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!advanced) break;  // step underflow; report best iterate under MaxIterations
    }
    out.status = DualState::Status::MaxIterations;
    record_boundary_distance(out, s, lo, hi);
    return out;
  }

  // Danskin derivative of the maximized dual in b, holding (lambda, p) fixed.
  // Only complete rows contribute: the moment block of J(D)h and the f* term.
  Eigen::VectorXd envelope_gradient(const DualState& state) const {
    const int d_g = cs_->model.d_g;
    const int d_b = cs_->model.d_b;
    const Eigen::VectorXd lam_g = state.lambda.head(d_g);
    const Eigen::ArrayXd s = (h1_ * state.lambda).array();
    Eigen::ArrayXd w(s.size());
    if (!conj_batch(s, nullptr, &w, nullptr)) {
      throw_numerical("conjugate-domain", "envelope gradient at an out-of-domain multiplier");
    }
    Eigen::VectorXd env = Eigen::VectorXd::Zero(d_b);
    Eigen::MatrixXd gb(d_g, d_b);
    const Sample& s_ref = *sample_;
    for (int r = 0; r < n1_; ++r) {
      const int i = rows1_[static_cast<std::size_t>(r)];
      cs_->model.grad_b(s_ref.y.row(i).transpose(), s_ref.x.row(i).transpose(), b_, gb);
      const double coef = -(1.0 / (1.0 - p_hat_) + w[r] / p_hat_);
      env.noalias() += coef * (gb.transpose() * lam_g);
    }
    return env / n_;
  }

  // Recovered primal density at the complete rows, q_i = (f*)'(lambda'h_i).
  Eigen::ArrayXd primal_density(const Eigen::VectorXd& lambda) const {
    const Eigen::ArrayXd s = (h1_ * lambda).array();
    Eigen::ArrayXd w(s.size());
    if (!conj_batch(s, nullptr, &w, nullptr)) {
      throw_numerical("conjugate-domain", "density requested at an out-of-domain multiplier");
    }
    return w;
  }

  const Eigen::MatrixXd& h_complete() const { return h1_; }
  const Eigen::MatrixXd& tail_incomplete() const { return tail0_; }
  const ConstraintSystem& constraints() const { return *cs_; }
  const Sample& sample() const { return *sample_; }
  const DivergenceSpec& divergence() const { return spec_; }

 private:
  std::optional<double> objective_from_args(VecCRef lambda, const Eigen::ArrayXd& s,
                                            double p) const {
    Eigen::ArrayXd fstar(s.size());
    if (!conj_batch(s, &fstar, nullptr, nullptr)) return std::nullopt;
    return lambda.dot(mean_j_h_) / (1.0 - p) - fstar.sum() / (n_ * p);
  }

  void record_boundary_distance(DualState& out, const Eigen::ArrayXd& s, double lo,
                                double hi) const {
    double dist = std::numeric_limits<double>::infinity();
    if (std::isfinite(hi) && s.size() > 0) dist = std::min(dist, (hi - s.maxCoeff()));
    if (std::isfinite(lo) && s.size() > 0) dist = std::min(dist, (s.minCoeff() - lo));
    out.boundary_distance = dist;
  }

  const Sample* sample_;
  const ConstraintSystem* cs_;
  DivergenceSpec spec_;
  Eigen::VectorXd b_;
  int n_, n1_;
  double p_hat_;
  Eigen::MatrixXd h1_;     // n1 x dim, complete rows
  Eigen::MatrixXd tail0_;  // n0 x tail_dim, incomplete rows
  std::vector<int> rows1_;
  Eigen::VectorXd mean_j_h_;
  Eigen::VectorXd c_hat_;
};

// Value-function estimate at b: the maximized sample dual.
inline DualState nu_hat(const Sample& s, const ConstraintSystem& cs, const DivergenceSpec& spec,
                        VecCRef b, const DualOptions& opts = {},
                        const Eigen::VectorXd* warm = nullptr) {
  return DualProblem(s, cs, spec, b).maximize(opts, warm);
}

// One-shot evaluation of the dual objective with analytic derivatives.
struct DualEval {
  bool in_domain = false;  // false means the objective is -infinity under maximization
  double value = 0.0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
};

inline DualEval dual_objective(const Sample& s, const ConstraintSystem& cs,
                               const DivergenceSpec& spec, VecCRef b, VecCRef lambda, double p) {
  if (!(p > 0.0 && p < 1.0)) throw_input("p-domain", "p must lie in (0,1)");
  DualProblem problem(s, cs, spec, b);
  DualEval out;
  const auto value = problem.objective(lambda, p);
  if (!value) return out;
  out.in_domain = true;
  out.value = *value;
  out.grad.resize(problem.dim());
  out.hess.resize(problem.dim(), problem.dim());
  problem.gradient_hessian(lambda, p, out.grad, out.hess);
  return out;
}

inline Eigen::VectorXd envelope_gradient(const Sample& s, const ConstraintSystem& cs,
                                         const DivergenceSpec& spec, const DualState& state) {
  return DualProblem(s, cs, spec, state.b).envelope_gradient(state);
}

}  // namespace breakdown
