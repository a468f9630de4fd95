#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "breakdown/errors.hpp"
#include "breakdown/inference.hpp"
#include "breakdown/moments.hpp"
#include "breakdown/parallel.hpp"
#include "breakdown/rng.hpp"
#include "breakdown/sample.hpp"
#include "breakdown/stats.hpp"

namespace breakdown {

enum class Design { UniformMean, Linear, Logit };

inline Design parse_design(const std::string& name) {
  if (name == "uniform-mean") return Design::UniformMean;
  if (name == "linear") return Design::Linear;
  if (name == "logit") return Design::Logit;
  throw_input("design-name", "unknown design: " + name);
}

inline std::string to_string(Design d) {
  switch (d) {
    case Design::UniformMean: return "uniform-mean";
    case Design::Linear: return "linear";
    case Design::Logit: return "logit";
  }
  return "";
}

// Scalar mean with data missing independently of the value: Y ~ U[0,1],
// D ~ Bernoulli(0.7), Y blanked where D = 0.
inline Sample dgp_uniform_mean(int n, std::uint64_t seed, std::uint64_t stream = 0) {
  Rng rng(seed, stream);
  Sample s;
  s.n = n;
  s.d_y = 1;
  s.d_x = 0;
  s.d.resize(static_cast<std::size_t>(n));
  s.y.resize(n, 1);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (int i = 0; i < n; ++i) {
    const double y = rng.uniform01();
    const bool complete = rng.bernoulli(0.7);
    s.d[static_cast<std::size_t>(i)] = complete ? 1 : 0;
    s.y(i, 0) = complete ? y : nan;
  }
  finalize_sample(s);
  return s;
}

// Wage-equation style linear design: X2 multinomial on {0,1,2} with
// probabilities (0.4, 0.25, 0.35), X1 ~ Bernoulli((X2+1)/4),
// Y2 ~ Beta(3-X1, 3), eps = (X1+1) U[-1,1],
// Y1 = 1 + X1 + Y2 + 0.5 X2 + eps, and selection
// D = 1{eps X1 + 10 X1 + 5(X2-1) > eta}, eta ~ N(-5, 15^2).
inline Sample dgp_linear(int n, std::uint64_t seed, std::uint64_t stream = 0) {
  Rng rng(seed, stream);
  Sample s;
  s.n = n;
  s.d_y = 2;
  s.d_x = 2;
  s.d.resize(static_cast<std::size_t>(n));
  s.y.resize(n, 2);
  s.x.resize(n, 2);
  const double probs[3] = {0.4, 0.25, 0.35};
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (int i = 0; i < n; ++i) {
    const int x2 = rng.categorical(probs);
    const int x1 = rng.bernoulli((x2 + 1) / 4.0) ? 1 : 0;
    const double y2 = rng.beta_int(3 - x1, 3);
    const double eps = (x1 + 1) * rng.uniform(-1.0, 1.0);
    const double y1 = 1.0 + 1.0 * x1 + 1.0 * y2 + 0.5 * x2 + eps;
    const double eta = -5.0 + 15.0 * rng.normal();
    const bool complete = eps * x1 + 10.0 * x1 + 5.0 * (x2 - 1) > eta;
    s.d[static_cast<std::size_t>(i)] = complete ? 1 : 0;
    s.y(i, 0) = complete ? y1 : nan;
    s.y(i, 1) = complete ? y2 : nan;
    s.x(i, 0) = x1;
    s.x(i, 1) = x2;
  }
  finalize_sample(s);
  return s;
}

// Logit design: regressors are a Gaussian copula pushed to uniform marginals
// on [-1,1], the binary outcome is always observed, and the regressors are
// missing with probability depending on the outcome and the third regressor:
// P(D=1 | X, Y) = max(0.8 - X, Y3/2 + 0.5).
inline Sample dgp_logit(int n, std::uint64_t seed, std::uint64_t stream = 0) {
  Rng rng(seed, stream);
  Eigen::Matrix3d omega;
  omega << 1.0, 0.5, -0.1,
           0.5, 1.0, 0.3,
          -0.1, 0.3, 1.0;
  const Eigen::Matrix3d chol = omega.llt().matrixL();
  const Eigen::Vector3d beta(1.0, -1.0, 0.1);
  Sample s;
  s.n = n;
  s.d_y = 3;
  s.d_x = 1;
  s.d.resize(static_cast<std::size_t>(n));
  s.y.resize(n, 3);
  s.x.resize(n, 1);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  Eigen::Vector3d z, y;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < 3; ++j) z[j] = rng.normal();
    const Eigen::Vector3d g = chol * z;
    for (int j = 0; j < 3; ++j) y[j] = 2.0 * (normal_cdf(g[j]) - 0.5);
    const int x = rng.bernoulli(logistic(beta.dot(y))) ? 1 : 0;
    const double p_complete = std::max(0.8 - x, y[2] / 2.0 + 0.5);
    const bool complete = rng.bernoulli(p_complete);
    s.d[static_cast<std::size_t>(i)] = complete ? 1 : 0;
    for (int j = 0; j < 3; ++j) s.y(i, j) = complete ? y[j] : nan;
    s.x(i, 0) = x;
  }
  finalize_sample(s);
  return s;
}

inline Sample make_design_sample(Design design, int n, std::uint64_t seed,
                                 std::uint64_t stream = 0) {
  switch (design) {
    case Design::UniformMean: return dgp_uniform_mean(n, seed, stream);
    case Design::Linear: return dgp_linear(n, seed, stream);
    case Design::Logit: return dgp_logit(n, seed, stream);
  }
  throw_input("design-name", "unknown design");
}

// Model, support mode, and hypothesis matching each design's conclusion
// under study. The search box is centered at the sample MCAR estimate, per
// the default construction of B.
struct DesignSetup {
  MomentModel model;
  SupportMode mode = SupportMode::XEmpty;
  Hypothesis hypothesis;
  Eigen::VectorXd mcar;
};

inline DesignSetup design_setup(Design design, const Sample& s) {
  DesignSetup setup;
  switch (design) {
    case Design::UniformMean: {
      setup.model = builtin_mean();
      setup.mode = SupportMode::XEmpty;
      setup.mcar = mcar_estimate(s, setup.model);
      setup.hypothesis.box.resize(1, 2);
      // Stay inside the interior of the sample Manski range; the conclusion
      // under study is beta > 0.4.
      setup.hypothesis.box << setup.mcar[0] - 0.12, setup.mcar[0] + 0.12;
      LinearInequality ineq;
      ineq.a = Eigen::VectorXd::Ones(1);
      ineq.c = 0.4;
      setup.hypothesis.null_constraints.push_back(ineq);
      break;
    }
    case Design::Linear: {
      // Regression of y1 on (1, x1, y2, x2); the conclusion is beta_1 > 0.
      setup.model = builtin_linear_iv(0, {-1, 2, 1, 3});
      setup.mode = SupportMode::FullSupport;
      setup.mcar = mcar_estimate(s, setup.model);
      setup.hypothesis.box.resize(4, 2);
      for (int j = 0; j < 4; ++j) {
        setup.hypothesis.box(j, 0) = setup.mcar[j] - 2.0;
        setup.hypothesis.box(j, 1) = setup.mcar[j] + 2.0;
      }
      LinearInequality ineq;
      ineq.a = Eigen::VectorXd::Zero(4);
      ineq.a[1] = 1.0;
      ineq.c = 0.0;
      setup.hypothesis.null_constraints.push_back(ineq);
      break;
    }
    case Design::Logit: {
      // Logit of the outcome on the three regressors; the conclusion is
      // P(outcome | ybar) > 1/2, linearized as ybar'b <= 0 for the null.
      setup.model = builtin_logit(3, {0, 1, 2});
      setup.mode = SupportMode::FullSupport;
      setup.mcar = mcar_estimate(s, setup.model);
      setup.hypothesis.box.resize(3, 2);
      for (int j = 0; j < 3; ++j) {
        setup.hypothesis.box(j, 0) = setup.mcar[j] - 2.0;
        setup.hypothesis.box(j, 1) = setup.mcar[j] + 2.0;
      }
      LinearInequality ineq;
      ineq.a = Eigen::VectorXd(3);
      ineq.a << -0.35, -0.25, 0.5;
      ineq.c = 0.0;
      setup.hypothesis.null_constraints.push_back(ineq);
      break;
    }
  }
  return setup;
}

// Reference breakdown points per design, each the point estimate from a
// seeded run with one million observations of this implementation
// (seed 20240601, stream 0). Regenerate with `breakdown truth`.
inline double reference_truth(Design design) {
  switch (design) {
    case Design::UniformMean: return 0.20440604534243741;
    case Design::Linear: return 0.16344592162722926;
    case Design::Logit: return 0.10661229659034828;
  }
  throw_input("design-name", "unknown design");
}

struct StudyConfig {
  Design design = Design::UniformMean;
  int n = 4000;
  int replications = 200;
  double alpha = 0.05;
  std::uint64_t seed = 1;
  double truth = std::numeric_limits<double>::quiet_NaN();  // reference_truth(design) when NaN
  int threads = 1;
  EstimateOptions estimate;

  void validate() const {
    if (replications < 1) throw_input("study-config", "replications must be >= 1");
    if (n < 50) throw_input("study-config", "n must be >= 50");
    if (!(alpha > 0.0 && alpha < 1.0)) throw_input("study-config", "alpha must be in (0,1)");
  }
};

struct ReplicationRow {
  int replication = 0;
  bool ok = false;
  std::string failure;
  double delta_hat = std::numeric_limits<double>::quiet_NaN();
  double sigma_hat = std::numeric_limits<double>::quiet_NaN();
  double ci_lower = std::numeric_limits<double>::quiet_NaN();
};

struct StudySummary {
  std::string design;
  int n = 0;
  int replications = 0;
  int failures = 0;
  double alpha = 0.0;
  double truth = 0.0;
  double mean_bias = 0.0;
  double sd = 0.0;
  double mean_ci_length = 0.0;  // mean of delta_hat - ci_lower
  double coverage = 0.0;        // fraction with ci_lower <= truth
  std::vector<ReplicationRow> rows;
};

// Monte Carlo study over independent replications. Replication r draws its
// sample from substream r of the study seed, so the summary is bit-identical
// across runs and thread counts.
inline StudySummary run_study(const StudyConfig& cfg) {
  cfg.validate();
  const double truth = std::isnan(cfg.truth) ? reference_truth(cfg.design) : cfg.truth;
  std::vector<ReplicationRow> rows(static_cast<std::size_t>(cfg.replications));
  parallel_for(static_cast<std::size_t>(cfg.replications), cfg.threads, [&](std::size_t r) {
    ReplicationRow row;
    row.replication = static_cast<int>(r);
    try {
      const Sample s = make_design_sample(cfg.design, cfg.n, cfg.seed, r);
      const DesignSetup setup = design_setup(cfg.design, s);
      const ConstraintSystem cs = build_constraints(setup.model, s, setup.mode);
      EstimateOptions opts = cfg.estimate;
      opts.threads = 1;
      opts.seed = cfg.seed ^ (0x9e3779b97f4a7c15ull + r);
      BreakdownResult res =
          estimate_breakdown(s, cs, DivergenceSpec::squared_hellinger(), setup.hypothesis, opts);
      attach_inference(res, s, cs, DivergenceSpec::squared_hellinger(), cfg.alpha);
      if (res.delta_hat.is_finite() && res.inference_ok) {
        row.ok = true;
        row.delta_hat = res.delta_hat.value();
        row.sigma_hat = res.sigma_hat;
        row.ci_lower = res.ci_lower;
      } else {
        row.failure = res.delta_hat.is_finite() ? "inference-refused" : "region-infeasible";
      }
    } catch (const Error& e) {
      row.failure = e.code();
    }
    rows[r] = row;
  });

  StudySummary out;
  out.design = to_string(cfg.design);
  out.n = cfg.n;
  out.replications = cfg.replications;
  out.alpha = cfg.alpha;
  out.truth = truth;
  double sum = 0.0, sum_sq = 0.0, sum_len = 0.0;
  int ok = 0, covered = 0;
  for (const auto& row : rows) {
    if (!row.ok) {
      ++out.failures;
      continue;
    }
    ++ok;
    sum += row.delta_hat;
    sum_sq += row.delta_hat * row.delta_hat;
    sum_len += row.delta_hat - row.ci_lower;
    if (row.ci_lower <= truth) ++covered;
  }
  if (ok > 0) {
    const double mean = sum / ok;
    out.mean_bias = mean - truth;
    out.sd = ok > 1 ? std::sqrt(std::max(0.0, (sum_sq - ok * mean * mean) / (ok - 1))) : 0.0;
    out.mean_ci_length = sum_len / ok;
    out.coverage = static_cast<double>(covered) / ok;
  }
  out.rows = std::move(rows);
  return out;
}

}  // namespace breakdown
