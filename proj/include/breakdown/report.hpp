#pragma once

#include <sstream>
#include <string>

#include <json.hpp>

#include "breakdown/inference.hpp"
#include "breakdown/sample.hpp"
#include "breakdown/simulation.hpp"

namespace breakdown {

using Json = nlohmann::ordered_json;

inline Json to_json(const BreakdownResult& r) {
  Json j;
  if (r.delta_hat.is_finite()) {
    j["delta_hat"] = r.delta_hat.value();
    j["rationalizable"] = true;
  } else {
    j["delta_hat"] = nullptr;
    j["rationalizable"] = false;
  }
  Json b = Json::array();
  for (Eigen::Index k = 0; k < r.b_star.size(); ++k) b.push_back(r.b_star[k]);
  j["b_star"] = b;
  j["sigma_hat"] = r.inference_ok ? Json(r.sigma_hat) : Json(nullptr);
  j["ci_lower"] = r.inference_ok ? Json(r.ci_lower) : Json(nullptr);
  j["alpha"] = r.alpha;
  j["n"] = r.n;
  j["p_hat"] = r.p_hat;
  Json d;
  d["outer_iterations"] = r.diag.outer_iterations;
  d["starts_attempted"] = r.diag.starts_attempted;
  d["starts_converged"] = r.diag.starts_converged;
  d["starts_infeasible"] = r.diag.starts_infeasible;
  d["minimizer_on_box_boundary"] = r.diag.minimizer_on_box_boundary;
  d["multiple_minimizers"] = r.diag.multiple_minimizers;
  d["inner_iterations"] = r.state.iters;
  d["inner_grad_norm"] = r.state.grad_norm;
  d["inner_boundary_hits"] = r.state.boundary_hits;
  d["inner_boundary_distance"] = r.state.boundary_distance;
  d["min_singular_value"] = std::isnan(r.diag.min_singular_value)
                                ? Json(nullptr)
                                : Json(r.diag.min_singular_value);
  d["convexity_verdict"] = r.diag.convexity_verdict;
  j["diagnostics"] = d;
  return j;
}

inline Json to_json(const HellingerBound& b) {
  Json j;
  j["h2_lower_bound"] = b.value;
  j["one_sided_cells"] = b.one_sided_cells;
  return j;
}

inline Json to_json(const ConvexityReport& r) {
  Json j;
  j["max_violation"] = r.max_violation;
  j["segments"] = r.segments;
  j["evaluated"] = r.evaluated;
  j["skipped"] = r.skipped;
  j["per_segment_max"] = r.per_segment_max;
  return j;
}

inline Json to_json(const StudySummary& s, bool include_rows = false) {
  Json j;
  j["design"] = s.design;
  j["n"] = s.n;
  j["replications"] = s.replications;
  j["failures"] = s.failures;
  j["alpha"] = s.alpha;
  j["truth"] = s.truth;
  j["mean_bias"] = s.mean_bias;
  j["sd"] = s.sd;
  j["mean_ci_length"] = s.mean_ci_length;
  j["coverage"] = s.coverage;
  if (include_rows) {
    Json rows = Json::array();
    for (const auto& row : s.rows) {
      Json r;
      r["replication"] = row.replication;
      r["ok"] = row.ok;
      if (row.ok) {
        r["delta_hat"] = row.delta_hat;
        r["sigma_hat"] = row.sigma_hat;
        r["ci_lower"] = row.ci_lower;
      } else {
        r["failure"] = row.failure;
      }
      rows.push_back(r);
    }
    j["rows"] = rows;
  }
  return j;
}

// One-page text table in the reporting style of the applications: the point
// estimate, the lower confidence interval, and the identified selection
// lower bound when X is present.
inline std::string render_estimate_table(const BreakdownResult& r, const HellingerBound* bound) {
  std::ostringstream os;
  os << "breakdown point analysis (n = " << r.n << ", p_hat = " << r.p_hat << ")\n";
  os << "----------------------------------------------------------\n";
  if (r.delta_hat.is_finite()) {
    os << "  delta_hat            " << r.delta_hat.value() << "\n";
    if (r.inference_ok) {
      os << "  ci_lower (alpha=" << r.alpha << ")  " << r.ci_lower << "\n";
      os << "  sigma_hat            " << r.sigma_hat << "\n";
    } else {
      os << "  ci_lower             (inference unavailable)\n";
    }
    os << "  b_star              ";
    for (Eigen::Index k = 0; k < r.b_star.size(); ++k) os << " " << r.b_star[k];
    os << "\n";
  } else {
    os << "  delta_hat            +inf (the null cannot be rationalized in this sample)\n";
  }
  if (bound) {
    os << "  H2(P0X, P1X) bound   " << bound->value << "\n";
  }
  if (r.diag.multiple_minimizers) {
    os << "  warning: multiple near-minimizers detected; inference may be unreliable\n";
  }
  if (r.diag.minimizer_on_box_boundary) {
    os << "  warning: minimizer lies on the search box boundary; enlarge the box\n";
  }
  return os.str();
}

}  // namespace breakdown
