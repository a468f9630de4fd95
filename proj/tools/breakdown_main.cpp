// Command line entry point: breakdown point estimation, selection bounds,
// convexity diagnostics, Monte Carlo studies, and oracle cross-checks.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "breakdown/divergence.hpp"
#include "breakdown/errors.hpp"
#include "breakdown/inference.hpp"
#include "breakdown/moments.hpp"
#include "breakdown/oracle_battery.hpp"
#include "breakdown/report.hpp"
#include "breakdown/sample.hpp"
#include "breakdown/simulation.hpp"

namespace {

using breakdown::Json;

struct CommonArgs {
  std::string config_path;
  std::string data_path;
  std::string design;
  int n = 20000;
  std::string model = "";
  std::string model_json;
  std::string divergence = "sq-hellinger";
  std::string hypothesis;
  std::string mode;
  double alpha = 0.05;
  std::uint64_t seed = 1;
  int threads = 1;
  std::string out;
  double box_halfwidth = 2.0;
  int starts = 3;
  double tol = 1e-9;
  int max_iter = 200;
  double boundary_fraction = 0.995;
  double value_ceiling = 1e6;
};

void add_common(CLI::App* cmd, CommonArgs& a, bool with_data) {
  cmd->add_option("--config", a.config_path, "JSON config file; explicit flags win");
  if (with_data) {
    cmd->add_option("--data", a.data_path, "CSV input (columns d, y1.., x1..)");
    cmd->add_option("--design", a.design, "built-in design: uniform-mean | linear | logit");
    cmd->add_option("--n", a.n, "sample size when --design is used");
    cmd->add_option("--model", a.model, "model name: mean | linear | logit");
    cmd->add_option("--model-json", a.model_json, "inline JSON model spec");
    cmd->add_option("--divergence", a.divergence,
                    "sq-hellinger | kl | reverse-kl | cressie-read:<gamma>");
    cmd->add_option("--hypothesis", a.hypothesis, "hypothesis JSON (file path or inline)");
    cmd->add_option("--mode", a.mode,
                    "constraint mode: full-support | conservative-first-moment | x-empty");
    cmd->add_option("--box-halfwidth", a.box_halfwidth,
                    "half-width of the default MCAR-centered search box");
  }
  cmd->add_option("--alpha", a.alpha, "one-sided confidence level is 1-alpha");
  cmd->add_option("--seed", a.seed, "RNG seed");
  cmd->add_option("--threads", a.threads, "thread budget");
  cmd->add_option("--out", a.out, "write the JSON report here (otherwise stdout)");
  cmd->add_option("--starts", a.starts, "random multi-starts for the outer search");
  cmd->add_option("--tol", a.tol, "inner solver gradient tolerance");
  cmd->add_option("--max-iter", a.max_iter, "inner solver iteration cap");
  cmd->add_option("--boundary-fraction", a.boundary_fraction, "fraction-to-boundary step cap");
  cmd->add_option("--value-ceiling", a.value_ceiling, "dual value treated as +infinity");
}

// Merge config-file values under flags the user did not set explicitly.
void merge_config(const CLI::App* cmd, CommonArgs& a) {
  if (a.config_path.empty()) return;
  std::ifstream in(a.config_path);
  if (!in) breakdown::throw_input("config-open", "cannot open config " + a.config_path);
  Json cfg;
  try {
    in >> cfg;
  } catch (const std::exception& e) {
    breakdown::throw_input("config-parse", std::string("config parse error: ") + e.what());
  }
  auto unset = [&](const std::string& flag) {
    const CLI::Option* opt = cmd->get_option_no_throw(flag);
    return opt != nullptr && opt->count() == 0;
  };
  auto take = [&](const char* key, auto& slot) {
    if (cfg.contains(key)) slot = cfg[key].get<std::decay_t<decltype(slot)>>();
  };
  if (unset("--data")) take("data", a.data_path);
  if (unset("--design")) take("design", a.design);
  if (unset("--n")) take("n", a.n);
  if (unset("--model")) take("model", a.model);
  if (unset("--model-json") && cfg.contains("model_spec")) a.model_json = cfg["model_spec"].dump();
  if (unset("--divergence")) take("divergence", a.divergence);
  if (unset("--hypothesis") && cfg.contains("hypothesis")) a.hypothesis = cfg["hypothesis"].dump();
  if (unset("--mode")) take("mode", a.mode);
  if (unset("--alpha")) take("alpha", a.alpha);
  if (unset("--seed")) take("seed", a.seed);
  if (unset("--threads")) take("threads", a.threads);
  if (unset("--box-halfwidth")) take("box_halfwidth", a.box_halfwidth);
  if (unset("--starts")) take("starts", a.starts);
  if (unset("--tol")) take("tol", a.tol);
  if (unset("--max-iter")) take("max_iter", a.max_iter);
  if (unset("--boundary-fraction")) take("boundary_fraction", a.boundary_fraction);
  if (unset("--value-ceiling")) take("value_ceiling", a.value_ceiling);
}

Json effective_config(const CommonArgs& a, const std::string& command) {
  Json j;
  j["command"] = command;
  if (!a.data_path.empty()) j["data"] = a.data_path;
  if (!a.design.empty()) {
    j["design"] = a.design;
    j["n"] = a.n;
  }
  if (!a.model.empty()) j["model"] = a.model;
  j["divergence"] = a.divergence;
  if (!a.hypothesis.empty()) j["hypothesis"] = Json::parse(a.hypothesis, nullptr, false).is_discarded()
                                                   ? Json(a.hypothesis)
                                                   : Json::parse(a.hypothesis);
  if (!a.mode.empty()) j["mode"] = a.mode;
  j["alpha"] = a.alpha;
  j["seed"] = a.seed;
  j["threads"] = a.threads;
  j["starts"] = a.starts;
  j["solver"] = Json{{"tol", a.tol},
                     {"max_iter", a.max_iter},
                     {"boundary_fraction", a.boundary_fraction},
                     {"value_ceiling", a.value_ceiling}};
  return j;
}

breakdown::Sample resolve_sample(const CommonArgs& a) {
  const bool has_data = !a.data_path.empty();
  const bool has_design = !a.design.empty();
  if (has_data == has_design) {
    breakdown::throw_input("input-choice", "exactly one of --data and --design must be given");
  }
  if (has_data) return breakdown::load_csv(a.data_path);
  return breakdown::make_design_sample(breakdown::parse_design(a.design), a.n, a.seed);
}

Json parse_json_arg(const std::string& arg, const char* what) {
  // Accepts inline JSON or a path to a JSON file.
  Json parsed = Json::parse(arg, nullptr, false);
  if (!parsed.is_discarded()) return parsed;
  std::ifstream in(arg);
  if (!in) breakdown::throw_input("json-arg", std::string("cannot parse or open ") + what + ": " + arg);
  try {
    Json j;
    in >> j;
    return j;
  } catch (const std::exception& e) {
    breakdown::throw_input("json-arg", std::string(what) + " parse error: " + e.what());
  }
}

breakdown::MomentModel resolve_model(const CommonArgs& a, const breakdown::Sample& s) {
  std::string name = a.model;
  Json spec;
  if (!a.model_json.empty()) {
    spec = parse_json_arg(a.model_json, "model spec");
    if (spec.contains("name")) name = spec["name"].get<std::string>();
  }
  if (name.empty()) name = "mean";
  auto indices = [&](const char* key, std::vector<int> fallback) {
    if (!spec.contains(key)) return fallback;
    return spec[key].get<std::vector<int>>();
  };
  if (name == "mean") return breakdown::builtin_mean();
  if (name == "linear") {
    std::vector<int> reg;
    reg.push_back(-1);
    for (int j = 0; j < s.d_x; ++j) reg.push_back(s.d_y + j);
    for (int j = 1; j < s.d_y; ++j) reg.push_back(j);
    const int dep = spec.contains("dep") ? spec["dep"].get<int>() : 0;
    return breakdown::builtin_linear_iv(dep, indices("regressors", reg),
                                        indices("instruments", {}));
  }
  if (name == "logit") {
    std::vector<int> reg;
    for (int j = 0; j < s.d_y; ++j) reg.push_back(j);
    const int outcome = spec.contains("outcome") ? spec["outcome"].get<int>() : s.d_y;
    return breakdown::builtin_logit(outcome, indices("regressors", reg));
  }
  breakdown::throw_input("model-name", "unknown model: " + name);
}

breakdown::SupportMode resolve_mode(const CommonArgs& a, const breakdown::Sample& s) {
  if (a.mode.empty()) {
    return s.d_x > 0 ? breakdown::SupportMode::FullSupport : breakdown::SupportMode::XEmpty;
  }
  if (a.mode == "full-support") return breakdown::SupportMode::FullSupport;
  if (a.mode == "conservative-first-moment") return breakdown::SupportMode::ConservativeFirstMoment;
  if (a.mode == "x-empty") return breakdown::SupportMode::XEmpty;
  breakdown::throw_input("mode-name", "unknown mode: " + a.mode);
}

breakdown::Hypothesis resolve_hypothesis(const CommonArgs& a, const breakdown::Sample& s,
                                         const breakdown::MomentModel& model) {
  breakdown::Hypothesis hyp;
  Json j;
  if (!a.hypothesis.empty()) j = parse_json_arg(a.hypothesis, "hypothesis");
  if (j.contains("box")) {
    const auto rows = j["box"].get<std::vector<std::vector<double>>>();
    hyp.box.resize(static_cast<Eigen::Index>(rows.size()), 2);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != 2) breakdown::throw_input("hypothesis-box", "box rows must be [lo, hi]");
      hyp.box(static_cast<Eigen::Index>(r), 0) = rows[r][0];
      hyp.box(static_cast<Eigen::Index>(r), 1) = rows[r][1];
    }
  } else {
    const double w = j.contains("box_halfwidth") ? j["box_halfwidth"].get<double>() : a.box_halfwidth;
    const Eigen::VectorXd mcar = breakdown::mcar_estimate(s, model);
    hyp.box.resize(model.d_b, 2);
    for (int r = 0; r < model.d_b; ++r) {
      hyp.box(r, 0) = mcar[r] - w;
      hyp.box(r, 1) = mcar[r] + w;
    }
  }
  if (j.contains("null")) {
    for (const auto& entry : j["null"]) {
      breakdown::LinearInequality ineq;
      const auto coeffs = entry.at("a").get<std::vector<double>>();
      ineq.a = Eigen::Map<const Eigen::VectorXd>(coeffs.data(), static_cast<Eigen::Index>(coeffs.size()));
      ineq.c = entry.at("c").get<double>();
      hyp.null_constraints.push_back(ineq);
    }
  }
  hyp.validate();
  return hyp;
}

void write_output(const Json& report, const std::string& out) {
  if (out.empty()) {
    std::cout << report.dump(2) << "\n";
    return;
  }
  std::ofstream f(out);
  if (!f) breakdown::throw_input("file-open", "cannot open " + out + " for writing");
  f << report.dump(2) << "\n";
}

breakdown::EstimateOptions estimate_options(const CommonArgs& a) {
  breakdown::EstimateOptions opts;
  opts.n_starts = a.starts;
  opts.seed = a.seed;
  opts.threads = a.threads;
  opts.dual.tol = a.tol;
  opts.dual.max_iter = a.max_iter;
  opts.dual.boundary_fraction = a.boundary_fraction;
  opts.dual.value_ceiling = a.value_ceiling;
  return opts;
}

int cmd_estimate(const CommonArgs& a) {
  const breakdown::Sample s = resolve_sample(a);
  const breakdown::MomentModel model = resolve_model(a, s);
  const breakdown::SupportMode mode = resolve_mode(a, s);
  const breakdown::DivergenceSpec spec = breakdown::DivergenceSpec::parse(a.divergence);
  const breakdown::Hypothesis hyp = resolve_hypothesis(a, s, model);
  const breakdown::ConstraintSystem cs = breakdown::build_constraints(model, s, mode);

  breakdown::BreakdownResult result = breakdown::estimate_breakdown(s, cs, spec, hyp, estimate_options(a));
  breakdown::attach_inference(result, s, cs, spec, a.alpha);

  std::optional<breakdown::HellingerBound> bound;
  if (s.d_x > 0) bound = breakdown::hellinger_lower_bound(s);

  Json report;
  report["config"] = effective_config(a, "estimate");
  report["result"] = breakdown::to_json(result);
  if (bound) report["selection_bound"] = breakdown::to_json(*bound);
  write_output(report, a.out);
  std::cout << breakdown::render_estimate_table(result, bound ? &*bound : nullptr);
  return 0;
}

int cmd_bound(const CommonArgs& a) {
  const breakdown::Sample s = resolve_sample(a);
  const breakdown::HellingerBound bound = breakdown::hellinger_lower_bound(s);
  Json report;
  report["config"] = effective_config(a, "bound");
  report["selection_bound"] = breakdown::to_json(bound);
  report["n"] = s.n;
  report["p_hat"] = s.p_hat;
  write_output(report, a.out);
  return 0;
}

int cmd_convexity(const CommonArgs& a, int pairs, int grid) {
  const breakdown::Sample s = resolve_sample(a);
  const breakdown::MomentModel model = resolve_model(a, s);
  const breakdown::SupportMode mode = resolve_mode(a, s);
  const breakdown::DivergenceSpec spec = breakdown::DivergenceSpec::parse(a.divergence);
  const breakdown::Hypothesis hyp = resolve_hypothesis(a, s, model);
  const breakdown::ConstraintSystem cs = breakdown::build_constraints(model, s, mode);
  breakdown::DualOptions dual;
  dual.tol = a.tol;
  dual.max_iter = a.max_iter;
  dual.boundary_fraction = a.boundary_fraction;
  dual.value_ceiling = a.value_ceiling;
  const breakdown::ConvexityReport report =
      breakdown::convexity_scan(s, cs, spec, hyp.box, pairs, grid, a.seed, dual, a.threads);
  Json j;
  j["config"] = effective_config(a, "convexity");
  j["convexity"] = breakdown::to_json(report);
  write_output(j, a.out);
  return 0;
}

int cmd_simulate(const CommonArgs& a, int reps, double truth, const std::string& rows_csv) {
  if (a.design.empty()) breakdown::throw_input("input-choice", "simulate requires --design");
  breakdown::StudyConfig cfg;
  cfg.design = breakdown::parse_design(a.design);
  cfg.n = a.n;
  cfg.replications = reps;
  cfg.alpha = a.alpha;
  cfg.seed = a.seed;
  cfg.threads = a.threads;
  cfg.truth = truth;
  cfg.estimate = estimate_options(a);
  const breakdown::StudySummary summary = breakdown::run_study(cfg);
  if (!rows_csv.empty()) {
    std::ofstream f(rows_csv);
    if (!f) breakdown::throw_input("file-open", "cannot open " + rows_csv);
    f << "replication,ok,delta_hat,sigma_hat,ci_lower,failure\n";
    char buf[64];
    for (const auto& row : summary.rows) {
      f << row.replication << ',' << (row.ok ? 1 : 0) << ',';
      auto put = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        f << buf;
      };
      if (row.ok) {
        put(row.delta_hat);
        f << ',';
        put(row.sigma_hat);
        f << ',';
        put(row.ci_lower);
        f << ',';
      } else {
        f << ",,," << row.failure;
      }
      f << "\n";
    }
  }
  Json j;
  j["config"] = effective_config(a, "simulate");
  j["config"]["replications"] = reps;
  j["summary"] = breakdown::to_json(summary);
  write_output(j, a.out);
  return 0;
}

int cmd_oracle_check(const CommonArgs& a) {
  const breakdown::BatteryReport report = breakdown::run_oracle_battery(a.seed);
  Json rows = Json::array();
  std::cout << "oracle cross-validation battery\n";
  for (const auto& row : report.rows) {
    std::cout << "  " << (row.pass ? "PASS" : "FAIL") << "  " << row.name << "  (" << row.detail
              << ")\n";
    rows.push_back(Json{{"name", row.name}, {"pass", row.pass}, {"detail", row.detail}});
  }
  Json j;
  j["config"] = effective_config(a, "oracle-check");
  j["battery"] = rows;
  j["all_pass"] = report.all_pass();
  write_output(j, a.out);
  if (!report.all_pass()) {
    breakdown::throw_numerical("oracle-battery-failed", "oracle battery reported failures");
  }
  return 0;
}

int cmd_truth(const CommonArgs& a) {
  // Regenerates the stored reference breakdown points from large-sample runs.
  Json j;
  for (const auto design :
       {breakdown::Design::UniformMean, breakdown::Design::Linear, breakdown::Design::Logit}) {
    const breakdown::Sample s = breakdown::make_design_sample(design, a.n, a.seed);
    const breakdown::DesignSetup setup = breakdown::design_setup(design, s);
    const breakdown::ConstraintSystem cs = breakdown::build_constraints(setup.model, s, setup.mode);
    breakdown::EstimateOptions opts = estimate_options(a);
    const breakdown::BreakdownResult res = breakdown::estimate_breakdown(
        s, cs, breakdown::DivergenceSpec::squared_hellinger(), setup.hypothesis, opts);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", res.delta_hat.as_double());
    j[breakdown::to_string(design)] = res.delta_hat.as_double();
    std::cout << breakdown::to_string(design) << " " << buf << "\n";
  }
  write_output(j, a.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"breakdown point analysis for GMM conclusions under missing data"};
  app.require_subcommand(1);

  CommonArgs a;
  int pairs = 10, grid = 50, reps = 200;
  double truth = std::numeric_limits<double>::quiet_NaN();
  std::string rows_csv;

  CLI::App* estimate = app.add_subcommand("estimate", "estimate the breakdown point with inference");
  add_common(estimate, a, true);
  CLI::App* bound = app.add_subcommand("bound", "identified squared-Hellinger selection lower bound");
  add_common(bound, a, true);
  CLI::App* convexity = app.add_subcommand("convexity", "scan nu_hat for convexity along segments");
  add_common(convexity, a, true);
  convexity->add_option("--pairs", pairs, "number of random segments");
  convexity->add_option("--grid", grid, "grid points per segment");
  CLI::App* simulate = app.add_subcommand("simulate", "Monte Carlo study of a built-in design");
  add_common(simulate, a, true);
  simulate->add_option("--reps", reps, "replications");
  simulate->add_option("--truth", truth, "override the stored reference breakdown point");
  simulate->add_option("--rows-csv", rows_csv, "stream per-replication rows to CSV");
  CLI::App* oracle = app.add_subcommand("oracle-check", "run the oracle cross-validation battery");
  add_common(oracle, a, false);
  CLI::App* truth_cmd = app.add_subcommand("truth", "recompute stored reference breakdown points");
  add_common(truth_cmd, a, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  CLI::App* active = app.get_subcommands().front();
  try {
    merge_config(active, a);
    if (active == estimate) return cmd_estimate(a);
    if (active == bound) return cmd_bound(a);
    if (active == convexity) return cmd_convexity(a, pairs, grid);
    if (active == simulate) return cmd_simulate(a, reps, truth, rows_csv);
    if (active == oracle) return cmd_oracle_check(a);
    if (active == truth_cmd) return cmd_truth(a);
  } catch (const breakdown::Error& e) {
    Json err;
    err["error"] = Json{{"code", e.code()}, {"message", e.what()}};
    std::cerr << err.dump(2) << "\n";
    return e.kind() == breakdown::Error::Kind::Input ? 1 : 2;
  } catch (const std::exception& e) {
    Json err;
    err["error"] = Json{{"code", "internal"}, {"message", e.what()}};
    std::cerr << err.dump(2) << "\n";
    return 2;
  }
  return 0;
}
