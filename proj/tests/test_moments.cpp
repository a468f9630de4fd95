#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "breakdown/dual.hpp"
#include "breakdown/moments.hpp"
#include "breakdown/rng.hpp"
#include "breakdown/simulation.hpp"

using breakdown::Rng;
using Catch::Approx;

namespace {

// Central finite differences of g in b.
Eigen::MatrixXd fd_grad(const breakdown::MomentModel& m, const Eigen::VectorXd& y,
                        const Eigen::VectorXd& x, const Eigen::VectorXd& b, double step = 1e-6) {
  Eigen::MatrixXd out(m.d_g, m.d_b);
  Eigen::VectorXd lo(m.d_g), hi(m.d_g);
  for (int j = 0; j < m.d_b; ++j) {
    Eigen::VectorXd bp = b, bm = b;
    bp[j] += step;
    bm[j] -= step;
    m.g(y, x, bp, hi);
    m.g(y, x, bm, lo);
    out.col(j) = (hi - lo) / (2.0 * step);
  }
  return out;
}

void check_grad(const breakdown::MomentModel& m, const Eigen::VectorXd& y, const Eigen::VectorXd& x,
                const Eigen::VectorXd& b) {
  Eigen::MatrixXd analytic(m.d_g, m.d_b);
  m.grad_b(y, x, b, analytic);
  const Eigen::MatrixXd fd = fd_grad(m, y, x, b);
  const double scale = std::max(1.0, fd.norm());
  CHECK((analytic - fd).norm() / scale < 1e-6);
}

}  // namespace

TEST_CASE("builtin mean", "[moments]") {
  const auto m = breakdown::builtin_mean();
  Eigen::VectorXd y(1), x(0), b(1), out(1);
  y << 0.4;
  b << 0.4;
  m.g(y, x, b, out);
  CHECK(out[0] == 0.0);
  y << 1.0;
  b << 0.25;
  m.g(y, x, b, out);
  CHECK(out[0] == Approx(0.75));
  Eigen::MatrixXd grad(1, 1);
  m.grad_b(y, x, b, grad);
  CHECK(grad(0, 0) == -1.0);
}

TEST_CASE("builtin linear", "[moments]") {
  // Scalar OLS through the origin: z = (y, x1), dep=0, regressor x1.
  const auto scalar = breakdown::builtin_linear_iv(0, {1});
  Eigen::VectorXd y(1), x(1), b(1), out(1);
  y << 2.0;
  x << 1.0;
  b << 0.5;
  scalar.g(y, x, b, out);
  CHECK(out[0] == Approx(1.5));

  // Exact fit zeroes the moments.
  const auto model = breakdown::builtin_linear_iv(0, {-1, 2, 1});
  Eigen::VectorXd y2(2), x2(1), b3(3), out3(3);
  b3 << 0.3, -0.8, 1.7;
  x2 << 1.4;
  y2 << 0.0, 0.6;
  y2[0] = b3[0] + b3[1] * x2[0] + b3[2] * y2[1];
  model.g(y2, x2, b3, out3);
  CHECK(out3.norm() == Approx(0.0).margin(1e-14));

  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd yy(2), xx(1), bb(3);
    yy << rng.normal(), rng.normal();
    xx << rng.normal();
    bb << rng.normal(), rng.normal(), rng.normal();
    check_grad(model, yy, xx, bb);
  }

  CHECK_THROWS_AS(breakdown::builtin_linear_iv(0, {1, 2}, {1}), breakdown::Error);
}

TEST_CASE("builtin logit", "[moments]") {
  const auto model = breakdown::builtin_logit(3, {0, 1, 2});
  Eigen::VectorXd y(3), x(1), b(3), out(3);
  y << 0.3, -0.4, 0.9;
  x << 1.0;
  b.setZero();
  model.g(y, x, b, out);
  CHECK(out.isApprox(0.5 * y));  // z1 = 1, Lambda(0) = 1/2

  // Saturated index: z1 = 1 and Lambda -> 1 sends g to 0.
  b << 40.0, 40.0, 40.0;
  y << 1.0, 1.0, 1.0;
  model.g(y, x, b, out);
  CHECK(out.norm() < 1e-12);

  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd yy(3), xx(1), bb(3);
    yy << rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1);
    xx << (rng.bernoulli(0.5) ? 1.0 : 0.0);
    bb << rng.normal(), rng.normal(), rng.normal();
    check_grad(model, yy, xx, bb);
  }
}

TEST_CASE("constraint systems per mode", "[moments]") {
  // x-empty worked example: complete Y = {0.2, 0.6}, one incomplete row.
  breakdown::Sample s;
  s.n = 3;
  s.d_y = 1;
  s.d_x = 0;
  s.d = {1, 1, 0};
  s.y.resize(3, 1);
  s.y << 0.2, 0.6, std::numeric_limits<double>::quiet_NaN();
  breakdown::finalize_sample(s);
  const auto cs = breakdown::build_constraints(breakdown::builtin_mean(), s,
                                               breakdown::SupportMode::XEmpty);
  Eigen::VectorXd b(1);
  b << 0.4;
  const Eigen::VectorXd c = cs.c_hat(s, b);
  REQUIRE(c.size() == 2);
  CHECK(c[0] == Approx(0.0).margin(1e-15));
  CHECK(c[1] == 1.0);

  // Full mode on the linear design has d_g + 6 coordinates.
  const auto linear = breakdown::dgp_linear(4000, 42);
  const auto setup = breakdown::design_setup(breakdown::Design::Linear, linear);
  const auto cs_full =
      breakdown::build_constraints(setup.model, linear, breakdown::SupportMode::FullSupport);
  CHECK(cs_full.K == 6);
  CHECK(cs_full.dim() == setup.model.d_g + 6);

  // Conservative mode on scalar x: tail is ((x - mu)/sd, 1).
  breakdown::Sample sc;
  sc.n = 4;
  sc.d_y = 1;
  sc.d_x = 1;
  sc.d = {1, 1, 0, 0};
  sc.y.resize(4, 1);
  sc.y << 0.5, 1.5, std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN();
  sc.x.resize(4, 1);
  sc.x << 2.0, 4.0, 1.0, 7.0;
  breakdown::finalize_sample(sc);
  const auto cs_cons = breakdown::build_constraints(breakdown::builtin_mean(), sc,
                                                    breakdown::SupportMode::ConservativeFirstMoment);
  CHECK(cs_cons.dim() == 1 + 1 + 1);
  Eigen::VectorXd tail(2);
  cs_cons.tail(sc, 0, tail);
  CHECK(tail[0] == Approx((2.0 - 3.0) / 1.0));  // complete-case mean 3, sd 1
  CHECK(tail[1] == 1.0);

  // Duplicate entries in an explicit support list are rejected.
  CHECK_THROWS_AS(breakdown::build_constraints(breakdown::builtin_mean(), sc, {"2", "2"},
                                               breakdown::SupportMode::FullSupport),
                  breakdown::Error);
}

TEST_CASE("J(D)h bookkeeping matches c_hat in every mode", "[moments]") {
  Rng rng(31);
  const auto sample = breakdown::dgp_linear(1500, 7);
  const auto setup = breakdown::design_setup(breakdown::Design::Linear, sample);
  for (const auto mode : {breakdown::SupportMode::FullSupport,
                          breakdown::SupportMode::ConservativeFirstMoment,
                          breakdown::SupportMode::XEmpty}) {
    const auto cs = breakdown::build_constraints(setup.model, sample, mode);
    for (int trial = 0; trial < 5; ++trial) {
      Eigen::VectorXd b(4);
      for (int j = 0; j < 4; ++j) b[j] = setup.mcar[j] + rng.uniform(-0.5, 0.5);
      const breakdown::DualProblem problem(sample, cs, breakdown::DivergenceSpec::kl(), b);
      const Eigen::VectorXd via_j = problem.mean_j_h() / (1.0 - sample.p_hat);
      const Eigen::VectorXd direct = cs.c_hat(sample, b);
      CHECK((via_j - direct).lpNorm<Eigen::Infinity>() < 1e-12);
    }
  }
}

TEST_CASE("null boundary check", "[moments]") {
  breakdown::Hypothesis hyp;
  hyp.box.resize(1, 2);
  hyp.box << 0.0, 1.0;
  breakdown::LinearInequality ineq;
  ineq.a = Eigen::VectorXd::Ones(1);
  ineq.c = 0.4;
  hyp.null_constraints.push_back(ineq);
  Eigen::VectorXd b(1);
  b << 0.4;
  CHECK(breakdown::null_boundary_check(hyp, b));
  b << 0.401;
  CHECK_FALSE(breakdown::null_boundary_check(hyp, b));
  b << 1.5;  // outside the box
  CHECK_FALSE(breakdown::null_boundary_check(hyp, b));

  breakdown::Hypothesis wide;
  wide.box = Eigen::MatrixXd(4, 2);
  wide.box << -5, 5, -5, 5, -5, 5, -5, 5;
  breakdown::LinearInequality sign;
  sign.a = Eigen::VectorXd::Zero(4);
  sign.a[1] = 1.0;
  sign.c = 0.0;
  wide.null_constraints.push_back(sign);
  Eigen::VectorXd b4(4);
  b4 << 1.0, -0.01, 0.0, 0.0;
  CHECK(breakdown::null_boundary_check(wide, b4));
}

TEST_CASE("rescaling the moments leaves the feasible set unchanged", "[moments]") {
  const auto sample = breakdown::dgp_uniform_mean(4000, 3);
  const double kappa = 3.7;
  breakdown::MomentModel scaled = breakdown::builtin_mean();
  auto base_g = scaled.g;
  auto base_grad = scaled.grad_b;
  scaled.g = [kappa, base_g](breakdown::VecCRef y, breakdown::VecCRef x, breakdown::VecCRef b,
                             breakdown::VecRef out) {
    base_g(y, x, b, out);
    out *= kappa;
  };
  scaled.grad_b = [kappa, base_grad](breakdown::VecCRef y, breakdown::VecCRef x,
                                     breakdown::VecCRef b, breakdown::MatRef out) {
    base_grad(y, x, b, out);
    out *= kappa;
  };
  const auto cs1 = breakdown::build_constraints(breakdown::builtin_mean(), sample,
                                                breakdown::SupportMode::XEmpty);
  const auto cs2 = breakdown::build_constraints(scaled, sample, breakdown::SupportMode::XEmpty);
  Eigen::VectorXd b(1);
  b << 0.45;
  const auto spec = breakdown::DivergenceSpec::squared_hellinger();
  const auto s1 = breakdown::nu_hat(sample, cs1, spec, b);
  const auto s2 = breakdown::nu_hat(sample, cs2, spec, b);
  REQUIRE(s1.converged());
  REQUIRE(s2.converged());
  CHECK(s1.value.value() == Approx(s2.value.value()).margin(1e-8));
  // The moment-block multipliers scale by 1/kappa.
  CHECK(s1.lambda[0] == Approx(kappa * s2.lambda[0]).margin(1e-6));
}
