#pragma once

#include <cassert>
#include <limits>

namespace breakdown {

// Finite value or +infinity. Objective values that legitimately escape to
// infinity (divergences outside their domain, infeasible projection
// problems) carry an explicit tag instead of a sentinel double, so ordinary
// arithmetic can never manufacture or swallow an infinity unnoticed.
class ExtReal {
 public:
  ExtReal() = default;
  static ExtReal finite(double v) { return ExtReal(v, true); }
  static ExtReal infinity() { return ExtReal(0.0, false); }

  bool is_finite() const { return finite_; }
  bool is_infinite() const { return !finite_; }

  // Only valid on finite values.
  double value() const {
    assert(finite_);
    return value_;
  }

  // Lossy view for printing and ordering against plain doubles.
  double as_double() const {
    return finite_ ? value_ : std::numeric_limits<double>::infinity();
  }

  friend bool operator==(const ExtReal& a, const ExtReal& b) {
    if (a.finite_ != b.finite_) return false;
    return !a.finite_ || a.value_ == b.value_;
  }
  friend bool operator!=(const ExtReal& a, const ExtReal& b) { return !(a == b); }
  friend bool operator<(const ExtReal& a, const ExtReal& b) {
    if (!a.finite_) return false;
    if (!b.finite_) return true;
    return a.value_ < b.value_;
  }
  friend bool operator<=(const ExtReal& a, const ExtReal& b) { return a < b || a == b; }

 private:
  ExtReal(double v, bool finite) : value_(v), finite_(finite) {}

  double value_ = 0.0;
  bool finite_ = true;
};

}  // namespace breakdown
