#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <string_view>

#include <Eigen/Core>

#include "breakdown/errors.hpp"
#include "breakdown/ext_real.hpp"

namespace breakdown {

enum class DivergenceKind { SquaredHellinger, KL, ReverseKL, CressieRead };

// An f-divergence together with the convex-conjugate calculus the dual
// problem consumes: f, f*, (f*)', (f*)'', and the effective domains
// (lo, hi) of f and (conj_lo, conj_hi) of f*. All four families satisfy
// f(1) = 0, f*(0) = 0, (f*)'(0) = 1, and (f*)'' > 0 on the conjugate
// domain interior.
class DivergenceSpec {
 public:
  static DivergenceSpec squared_hellinger() { return DivergenceSpec(DivergenceKind::SquaredHellinger, 0.0); }
  static DivergenceSpec kl() { return DivergenceSpec(DivergenceKind::KL, 0.0); }
  static DivergenceSpec reverse_kl() { return DivergenceSpec(DivergenceKind::ReverseKL, 0.0); }

  // Cressie-Read with user-supplied exponent. gamma in {0,1} is a removable
  // singularity of the formula; those cases are the reverse-KL and KL limits
  // and must be requested as such.
  static DivergenceSpec cressie_read(double gamma) {
    if (gamma == 0.0 || gamma == 1.0) {
      throw_input("cressie-read-gamma",
                  "cressie-read gamma must differ from 0 and 1; use reverse-kl (gamma->0) "
                  "or kl (gamma->1) instead");
    }
    if (!std::isfinite(gamma)) throw_input("cressie-read-gamma", "gamma must be finite");
    return DivergenceSpec(DivergenceKind::CressieRead, gamma);
  }

  // Accepts "sq-hellinger" | "kl" | "reverse-kl" | "cressie-read:<gamma>".
  static DivergenceSpec parse(std::string_view name) {
    if (name == "sq-hellinger") return squared_hellinger();
    if (name == "kl") return kl();
    if (name == "reverse-kl") return reverse_kl();
    constexpr std::string_view prefix = "cressie-read:";
    if (name.substr(0, prefix.size()) == prefix) {
      const std::string tail(name.substr(prefix.size()));
      std::size_t used = 0;
      double gamma = 0.0;
      try {
        gamma = std::stod(tail, &used);
      } catch (const std::exception&) {
        throw_input("divergence-name", "cannot parse cressie-read gamma: " + tail);
      }
      if (used != tail.size()) throw_input("divergence-name", "cannot parse cressie-read gamma: " + tail);
      return cressie_read(gamma);
    }
    throw_input("divergence-name", "unknown divergence: " + std::string(name));
  }

  DivergenceKind kind() const { return kind_; }
  double gamma() const { return gamma_; }

  std::string name() const {
    switch (kind_) {
      case DivergenceKind::SquaredHellinger: return "sq-hellinger";
      case DivergenceKind::KL: return "kl";
      case DivergenceKind::ReverseKL: return "reverse-kl";
      case DivergenceKind::CressieRead: return "cressie-read:" + std::to_string(gamma_);
    }
    return "";
  }

  // Interior (lo, hi) of dom(f). The lower end 0 belongs to dom(f) itself
  // for squared Hellinger, KL, and Cressie-Read with gamma > 0.
  double primal_lo() const { return 0.0; }
  double primal_hi() const { return std::numeric_limits<double>::infinity(); }

  // Effective domain (conj_lo, conj_hi) of the conjugate formula. For
  // Cressie-Read these follow from requiring 1 + (gamma-1) r > 0: the finite
  // end sits at 1/(1-gamma), below for gamma > 1 and above for gamma < 1.
  double conj_lo() const {
    if (kind_ == DivergenceKind::CressieRead && gamma_ > 1.0) return 1.0 / (1.0 - gamma_);
    return -std::numeric_limits<double>::infinity();
  }
  double conj_hi() const {
    switch (kind_) {
      case DivergenceKind::SquaredHellinger: return 0.5;
      case DivergenceKind::KL: return std::numeric_limits<double>::infinity();
      case DivergenceKind::ReverseKL: return 1.0;
      case DivergenceKind::CressieRead:
        return gamma_ < 1.0 ? 1.0 / (1.0 - gamma_) : std::numeric_limits<double>::infinity();
    }
    return 0.0;
  }

  bool conj_in_domain(double r) const { return r > conj_lo() && r < conj_hi(); }

  // f(t), extended to +infinity outside dom(f); the value at t = 0 is the
  // right limit.
  ExtReal f_value(double t) const {
    if (t < 0.0 || std::isnan(t)) return ExtReal::infinity();
    switch (kind_) {
      case DivergenceKind::SquaredHellinger: {
        const double s = std::sqrt(t) - 1.0;
        return ExtReal::finite(0.5 * s * s);
      }
      case DivergenceKind::KL:
        if (t == 0.0) return ExtReal::finite(1.0);
        return ExtReal::finite(t * std::log(t) - t + 1.0);
      case DivergenceKind::ReverseKL:
        if (t == 0.0) return ExtReal::infinity();
        return ExtReal::finite(-std::log(t) + t - 1.0);
      case DivergenceKind::CressieRead: {
        if (t == 0.0) {
          if (gamma_ < 0.0) return ExtReal::infinity();
          return ExtReal::finite(1.0 / gamma_);
        }
        const double num = std::pow(t, gamma_) - gamma_ * t + gamma_ - 1.0;
        return ExtReal::finite(num / (gamma_ * (gamma_ - 1.0)));
      }
    }
    return ExtReal::infinity();
  }

  // f'(t) on the interior (0, inf).
  double f_d1(double t) const {
    require_primal_interior(t);
    switch (kind_) {
      case DivergenceKind::SquaredHellinger: return 0.5 - 0.5 / std::sqrt(t);
      case DivergenceKind::KL: return std::log(t);
      case DivergenceKind::ReverseKL: return 1.0 - 1.0 / t;
      case DivergenceKind::CressieRead: return (std::pow(t, gamma_ - 1.0) - 1.0) / (gamma_ - 1.0);
    }
    return 0.0;
  }

  // f''(t) on the interior (0, inf); strictly positive.
  double f_d2(double t) const {
    require_primal_interior(t);
    switch (kind_) {
      case DivergenceKind::SquaredHellinger: return 0.25 * std::pow(t, -1.5);
      case DivergenceKind::KL: return 1.0 / t;
      case DivergenceKind::ReverseKL: return 1.0 / (t * t);
      case DivergenceKind::CressieRead: return std::pow(t, gamma_ - 2.0);
    }
    return 0.0;
  }

  // f*(r); +infinity at and beyond the domain boundary, so line searches
  // treat the boundary itself as infeasible.
  ExtReal conj_value(double r) const {
    if (!conj_in_domain(r)) return ExtReal::infinity();
    switch (kind_) {
      case DivergenceKind::SquaredHellinger:
        return ExtReal::finite(0.5 * (1.0 / (1.0 - 2.0 * r) - 1.0));
      case DivergenceKind::KL: return ExtReal::finite(std::expm1(r));
      case DivergenceKind::ReverseKL: return ExtReal::finite(-std::log1p(-r));
      case DivergenceKind::CressieRead: {
        const double s = 1.0 + (gamma_ - 1.0) * r;
        return ExtReal::finite((std::pow(s, gamma_ / (gamma_ - 1.0)) - 1.0) / gamma_);
      }
    }
    return ExtReal::infinity();
  }

  // (f*)'(r) for r strictly inside the conjugate domain; throws on a domain
  // violation, which signals an out-of-domain dual iterate.
  double conj_d1(double r) const {
    require_conj_interior(r);
    switch (kind_) {
      case DivergenceKind::SquaredHellinger: {
        const double d = 1.0 - 2.0 * r;
        return 1.0 / (d * d);
      }
      case DivergenceKind::KL: return std::exp(r);
      case DivergenceKind::ReverseKL: return 1.0 / (1.0 - r);
      case DivergenceKind::CressieRead:
        return std::pow(1.0 + (gamma_ - 1.0) * r, 1.0 / (gamma_ - 1.0));
    }
    return 0.0;
  }

  // (f*)''(r), strictly positive on the conjugate domain interior.
  double conj_d2(double r) const {
    require_conj_interior(r);
    switch (kind_) {
      case DivergenceKind::SquaredHellinger: {
        const double d = 1.0 - 2.0 * r;
        return 4.0 / (d * d * d);
      }
      case DivergenceKind::KL: return std::exp(r);
      case DivergenceKind::ReverseKL: {
        const double d = 1.0 - r;
        return 1.0 / (d * d);
      }
      case DivergenceKind::CressieRead:
        return std::pow(1.0 + (gamma_ - 1.0) * r, (2.0 - gamma_) / (gamma_ - 1.0));
    }
    return 0.0;
  }

 private:
  DivergenceSpec(DivergenceKind kind, double gamma) : kind_(kind), gamma_(gamma) {}

  void require_primal_interior(double t) const {
    if (!(t > 0.0) || std::isinf(t)) {
      throw_numerical("primal-domain", "density ratio outside the interior of dom(f)");
    }
  }
  void require_conj_interior(double r) const {
    if (!conj_in_domain(r)) {
      throw_numerical("conjugate-domain", "dual argument outside the conjugate domain");
    }
  }

  DivergenceKind kind_;
  double gamma_;
};

// Sum_j p_j f(q_j) for a density vector q with respect to the probability
// vector p. q must integrate to one under p; divergence values escape to
// +infinity when some q_j leaves dom(f).
inline ExtReal divergence_between(const DivergenceSpec& spec, const Eigen::VectorXd& q,
                                  const Eigen::VectorXd& p) {
  if (q.size() != p.size()) throw_input("weights-shape", "q and p must have equal length");
  const double mass = (q.array() * p.array()).sum();
  if (std::fabs(mass - 1.0) > 1e-10) {
    throw_input("unit-mass", "q must integrate to 1 under p");
  }
  double total = 0.0;
  for (Eigen::Index j = 0; j < q.size(); ++j) {
    if (p[j] == 0.0) continue;
    const ExtReal fj = spec.f_value(q[j]);
    if (fj.is_infinite()) return ExtReal::infinity();
    total += p[j] * fj.value();
  }
  return ExtReal::finite(total);
}

}  // namespace breakdown
