#pragma once

// Command-line front end: argument parsing into a RunConfig and dispatch.
//
// Exit status: 0 success, 2 usage error, 3 input parse error, 4 computation
// failure (including failed verification checks).

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lcm/asymptotics.hpp"
#include "lcm/divergence.hpp"
#include "lcm/estimation.hpp"
#include "lcm/inference.hpp"
#include "lcm/io.hpp"
#include "lcm/model.hpp"
#include "lcm/montecarlo.hpp"

namespace lcm::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitParse = 3;
inline constexpr int kExitCompute = 4;

inline constexpr const char* kVersion = "1.0.0";
inline constexpr const char* kThreadsEnv = "LCM_THREADS";

class UsageError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Raised inside run() when a computation completes but must be reported as a
// failure (e.g. a verification identity does not hold).
class ComputeFailure : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string subcommand;
  std::string design_path;
  std::string counts_path;
  std::string chain_path;
  std::string plan_path;
  std::string out_path;
  std::string format = "text";
  std::string out_dir;

  PhiSpec phi1 = PhiSpec::power(0.0);
  PhiSpec phi2 = PhiSpec::power(2.0 / 3.0);
  HSpec h;
  DofPolicy dof;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  int starts = 20;
  double grad_tol = 1e-8;
  int max_iters = 500;
  int threads = 1;
  std::string statistic = "S";  // S | T | both (nested)
  int pair = 0;                  // nested: 1-based pair index, 0 = all

  // simulate overrides (empty = keep the plan's values)
  std::vector<std::int64_t> sim_sizes;
  std::vector<double> sim_a;
  std::vector<double> sim_lambda8;
  int sim_replications = 0;
  std::optional<std::uint64_t> sim_seed;

  // verify
  std::vector<double> theta;
  std::vector<int> fix_lambda;  // 1-based
  bool pseudo_inverse = false;
};

inline int default_threads() {
  if (const char* env = std::getenv(kThreadsEnv)) {
    try {
      const int v = std::stoi(env);
      if (v >= 1) {
        return v;
      }
    } catch (const std::exception&) {
    }
  }
  return 1;
}

// Throws UsageError naming the offending flag. Returns std::nullopt when
// help was requested (already printed).
inline std::optional<RunConfig> parse_args(int argc, const char* const* argv,
                                           std::ostream& out = std::cout) {
  RunConfig cfg;
  cfg.threads = default_threads();
  std::string phi1 = "power:a=0";
  std::string phi2 = "power:a=0.6666666666666666";
  std::string phi = "power:a=0.6666666666666666";
  std::string h = "identity";
  std::string dof = "rank";

  CLI::App app{"Latent class models for binary items: minimum phi-divergence "
               "estimation and phi-divergence tests"};
  app.set_help_flag("--help", "Print this help message and exit");
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--out", cfg.out_path, "Write the report to this file");
    sub->add_option("--format", cfg.format, "Report format")
        ->check(CLI::IsMember({"text", "json"}));
    sub->add_option("--seed", cfg.seed, "Master seed");
    sub->add_option("--threads", cfg.threads, "Worker threads")
        ->check(CLI::PositiveNumber);
  };
  auto add_fit = [&](CLI::App* sub) {
    sub->add_option("--starts", cfg.starts, "Multi-start points")->check(CLI::PositiveNumber);
    sub->add_option("--grad-tol", cfg.grad_tol, "Gradient-norm tolerance")
        ->check(CLI::PositiveNumber);
    sub->add_option("--max-iters", cfg.max_iters, "Iterations per start")
        ->check(CLI::PositiveNumber);
  };
  auto add_tests = [&](CLI::App* sub) {
    sub->add_option("--phi1", phi1, "Test divergence, power:a=<real>");
    sub->add_option("--phi2", phi2, "Estimator divergence, power:a=<real>");
    sub->add_option("--h", h,
                    "identity | renyi:a=<real> | sharma-mittal:a=<real>,b=<real> | "
                    "bhattacharyya");
    sub->add_option("--alpha", cfg.alpha, "Significance level")
        ->check(CLI::Range(0.0, 1.0));
  };

  auto* fit = app.add_subcommand("fit", "Minimum phi-divergence fit");
  fit->add_option("--design", cfg.design_path)->required()->check(CLI::ExistingFile);
  fit->add_option("--counts", cfg.counts_path)->required()->check(CLI::ExistingFile);
  fit->add_option("--phi", phi, "Estimator divergence, power:a=<real>");
  add_common(fit);
  add_fit(fit);

  auto* gof = app.add_subcommand("gof", "Goodness-of-fit test");
  gof->add_option("--design", cfg.design_path)->required()->check(CLI::ExistingFile);
  gof->add_option("--counts", cfg.counts_path)->required()->check(CLI::ExistingFile);
  gof->add_option("--dof", dof, "rank | nominal | <positive integer>");
  add_common(gof);
  add_fit(gof);
  add_tests(gof);

  auto* nested = app.add_subcommand("nested", "Nested-model tests along a chain");
  nested->add_option("--chain", cfg.chain_path)->required()->check(CLI::ExistingFile);
  nested->add_option("--counts", cfg.counts_path)->required()->check(CLI::ExistingFile);
  nested->add_option("--stat", cfg.statistic, "S | T | both")
      ->check(CLI::IsMember({"S", "T", "both"}));
  nested->add_option("--pair", cfg.pair, "1-based pair (M_l, M_l+1); 0 = all")
      ->check(CLI::NonNegativeNumber);
  add_common(nested);
  add_fit(nested);
  add_tests(nested);

  auto* select = app.add_subcommand("select", "Sequential nested model selection");
  select->add_option("--chain", cfg.chain_path)->required()->check(CLI::ExistingFile);
  select->add_option("--counts", cfg.counts_path)->required()->check(CLI::ExistingFile);
  select->add_option("--stat", cfg.statistic, "S | T")->check(CLI::IsMember({"S", "T"}));
  add_common(select);
  add_fit(select);
  add_tests(select);

  auto* simulate = app.add_subcommand("simulate", "Monte Carlo size and power study");
  simulate->add_option("--plan", cfg.plan_path)->required()->check(CLI::ExistingFile);
  simulate->add_option("--N", cfg.sim_sizes, "Sample sizes (override)")->delimiter(',');
  simulate->add_option("--a", cfg.sim_a, "Power indices of the statistics (override)")
      ->delimiter(',');
  simulate->add_option("--lambda8", cfg.sim_lambda8, "Alternative values (override)")
      ->delimiter(',');
  simulate->add_option("--replications", cfg.sim_replications, "Replications (override)")
      ->check(CLI::PositiveNumber);
  simulate->add_option("--plot-dir", cfg.out_dir, "Directory for per-N power curves");
  simulate->add_option("--dof", dof, "rank | nominal | <positive integer>");
  simulate->add_option("--out", cfg.out_path, "Write the report to this file");
  simulate->add_option("--format", cfg.format)->check(CLI::IsMember({"text", "json"}));
  std::uint64_t sim_seed = 0;
  auto* seed_opt = simulate->add_option("--seed", sim_seed, "Master seed (override)");
  simulate->add_option("--threads", cfg.threads)->check(CLI::PositiveNumber);

  auto* verify = app.add_subcommand("verify", "Check the asymptotic projection identities");
  verify->add_option("--design", cfg.design_path)->required()->check(CLI::ExistingFile);
  verify->add_option("--theta", cfg.theta, "Parameter point (default: seeded draw)")
      ->delimiter(',');
  verify->add_option("--fix-lambda", cfg.fix_lambda,
                     "1-based lambdas fixed at zero in the nested model "
                     "(default: the last one)")
      ->delimiter(',');
  verify->add_flag("--pinv", cfg.pseudo_inverse, "Allow singular Gram matrices");
  add_common(verify);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return std::nullopt;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return std::nullopt;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << '\n';
    return std::nullopt;
  } catch (const CLI::ParseError& e) {
    throw UsageError(e.what());
  }

  for (auto* sub : app.get_subcommands()) {
    cfg.subcommand = sub->get_name();
  }
  auto spec = [](const std::string& flag, auto&& parse, const std::string& text) {
    try {
      return parse(text);
    } catch (const std::invalid_argument& e) {
      throw UsageError(flag + ": " + e.what());
    }
  };
  cfg.phi1 = spec("--phi1", parse_phi, phi1);
  cfg.phi2 = spec(cfg.subcommand == "fit" ? "--phi" : "--phi2", parse_phi,
                  cfg.subcommand == "fit" ? phi : phi2);
  cfg.h = spec("--h", parse_h, h);
  cfg.dof = spec("--dof", parse_dof_policy, dof);
  if (seed_opt->count() > 0) {
    cfg.sim_seed = sim_seed;
  }
  return cfg;
}

namespace detail {

inline json test_to_json(const TestResult& r) {
  return {{"statistic", std::isinf(r.statistic) ? json("inf") : json(r.statistic)},
          {"dof", r.dof},
          {"p_value", r.p_value},
          {"alpha", r.alpha},
          {"critical_value", r.critical},
          {"reject", r.reject},
          {"phi1", r.phi1.describe()},
          {"phi2", r.phi2.describe()},
          {"h", r.h.describe()},
          {"dof_policy", r.dof_policy},
          {"warnings", r.warnings}};
}

inline json fit_to_json(const FitResult& f) {
  json trace = json::array();
  for (const auto& s : f.trace) {
    trace.push_back({{"start", s.start},
                     {"objective", std::isfinite(s.objective) ? json(s.objective) : json("inf")},
                     {"grad_norm", std::isfinite(s.grad_norm) ? json(s.grad_norm) : json("inf")},
                     {"iterations", s.iterations},
                     {"converged", s.converged},
                     {"message", s.message}});
  }
  json out = {{"phi", f.spec.describe()},
              {"converged", f.converged},
              {"objective", std::isfinite(f.objective) ? json(f.objective) : json("inf")},
              {"grad_norm", std::isfinite(f.grad_norm) ? json(f.grad_norm) : json("inf")},
              {"best_start", f.best_start},
              {"jacobian_rank", f.rank},
              {"dropped_infinite_terms", f.dropped_infinite_terms},
              {"starts", trace}};
  if (f.best_start >= 0) {
    out["lambda"] = lcm::detail::vector_to_json(f.theta_hat.lambda);
    out["eta"] = lcm::detail::vector_to_json(f.theta_hat.eta);
    out["w"] = lcm::detail::vector_to_json(f.latent.w);
    out["P"] = lcm::detail::matrix_to_json(f.latent.P);
    out["manifest"] = lcm::detail::vector_to_json(f.manifest.p);
  }
  return out;
}

inline void flatten(const json& j, const std::string& prefix, std::ostream& os) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      flatten(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), os);
    }
  } else if (j.is_array() && !j.empty() && (j.front().is_object() || j.front().is_array())) {
    for (std::size_t i = 0; i < j.size(); ++i) {
      flatten(j[i], prefix + "[" + std::to_string(i) + "]", os);
    }
  } else {
    os << prefix << " = " << j.dump() << '\n';
  }
}

inline FitOptions fit_options(const RunConfig& cfg) {
  FitOptions o;
  o.starts = cfg.starts;
  o.grad_tol = cfg.grad_tol;
  o.max_iters = cfg.max_iters;
  o.seed = cfg.seed;
  o.threads = cfg.threads;
  return o;
}

inline json provenance(const RunConfig& cfg) {
  json inputs = json::object();
  for (const auto* p : {&cfg.design_path, &cfg.counts_path, &cfg.chain_path, &cfg.plan_path}) {
    if (!p->empty()) {
      inputs[*p] = sha256_file(*p);
    }
  }
  return {{"tool", "lcm"},
          {"version", kVersion},
          {"subcommand", cfg.subcommand},
          {"inputs_sha256", inputs},
          {"seed", cfg.seed},
          {"options",
           {{"phi1", cfg.phi1.describe()},
            {"phi2", cfg.phi2.describe()},
            {"h", cfg.h.describe()},
            {"alpha", cfg.alpha},
            {"starts", cfg.starts},
            {"grad_tol", cfg.grad_tol},
            {"max_iters", cfg.max_iters}}},
          {"conventions",
           {{"divergence", "D(p_hat, p) = sum_nu p_nu phi(p_hat_nu / p_nu)"},
            {"pattern_index", "nu = 1 + sum_i y_i 2^(k-i)"},
            {"nested_S_sign", "B-minus-A"},
            {"dof_policy", cfg.dof.describe()},
            {"rank_tolerance", 1e-8}}}};
}

inline json run_fit(const RunConfig& cfg) {
  const ModelDesign design = read_design(cfg.design_path);
  const ObservedCounts counts = read_counts(cfg.counts_path, design.k);
  const FitResult f = fit(design, counts, cfg.phi2, fit_options(cfg));
  json out = {{"N", counts.N},
              {"n_params", design.n_params()},
              {"fit", fit_to_json(f)}};
  if (f.best_start >= 0) {
    out["log_likelihood"] = log_likelihood(counts, f.manifest);
  }
  if (!f.converged) {
    out["error"] = "no start converged";
  }
  return out;
}

inline json run_gof(const RunConfig& cfg) {
  const ModelDesign design = read_design(cfg.design_path);
  const ObservedCounts counts = read_counts(cfg.counts_path, design.k);
  const FitResult f = fit(design, counts, cfg.phi2, fit_options(cfg));
  if (!f.converged) {
    throw ComputeFailure("estimation did not converge from any start");
  }
  const TestResult r = gof_statistic_h(design, counts, cfg.phi1, cfg.h, f, cfg.alpha, cfg.dof);
  return {{"N", counts.N},
          {"n_params", design.n_params()},
          {"jacobian_rank", f.rank},
          {"test", test_to_json(r)},
          {"fit", fit_to_json(f)}};
}

inline json run_nested(const RunConfig& cfg) {
  const ModelChain chain = read_chain(cfg.chain_path);
  const ObservedCounts counts = read_counts(cfg.counts_path, chain.base.k);
  const std::size_t pairs = chain.models.size() - 1;
  if (cfg.pair > static_cast<int>(pairs)) {
    throw UsageError("--pair: chain has only " + std::to_string(pairs) + " pairs");
  }
  json out = {{"N", counts.N}, {"chain_note", chain.note}, {"pairs", json::array()}};
  for (std::size_t l = 0; l < pairs; ++l) {
    if (cfg.pair != 0 && static_cast<int>(l) + 1 != cfg.pair) {
      continue;
    }
    const NestedPair pair = chain.pair(l);
    const NestedFits fits = fit_nested(pair, counts, cfg.phi2, fit_options(cfg));
    json pj = {{"A", chain.models[l].name},
               {"B", chain.models[l + 1].name},
               {"h1", pair.h1()},
               {"h2", pair.h2()},
               {"objective_A", fits.A.objective},
               {"objective_B", fits.B.objective}};
    if (cfg.statistic != "T") {
      pj["S"] = test_to_json(nested_S_h(pair, fits, counts, cfg.phi1, cfg.h, cfg.alpha));
    }
    if (cfg.statistic != "S") {
      pj["T"] = test_to_json(nested_T_h(pair, fits, counts, cfg.phi1, cfg.h, cfg.alpha));
    }
    out["pairs"].push_back(pj);
  }
  return out;
}

inline json run_select(const RunConfig& cfg) {
  const ModelChain chain = read_chain(cfg.chain_path);
  const ObservedCounts counts = read_counts(cfg.counts_path, chain.base.k);
  const SelectionResult s = sequential_selection(
      chain, counts, cfg.phi1, cfg.phi2, cfg.alpha,
      cfg.statistic == "T" ? NestedStatistic::T : NestedStatistic::S, fit_options(cfg), cfg.h);
  json trail = json::array();
  for (std::size_t l = 0; l < s.trail.size(); ++l) {
    json tj = test_to_json(s.trail[l]);
    tj["A"] = chain.models[l].name;
    tj["B"] = chain.models[l + 1].name;
    trail.push_back(tj);
  }
  return {{"N", counts.N},
          {"chain_note", chain.note},
          {"statistic", cfg.statistic},
          {"selected", chain.models[s.selected].name},
          {"selected_index", s.selected + 1},
          {"trail", trail}};
}

inline json run_simulate(const RunConfig& cfg) {
  SimulationPlan plan = read_plan(cfg.plan_path);
  if (!cfg.sim_sizes.empty()) {
    plan.sample_sizes = cfg.sim_sizes;
  }
  if (!cfg.sim_a.empty()) {
    plan.a_values = cfg.sim_a;
  }
  if (!cfg.sim_lambda8.empty()) {
    plan.lambda8 = cfg.sim_lambda8;
  }
  if (cfg.sim_replications > 0) {
    plan.replications = cfg.sim_replications;
  }
  if (cfg.sim_seed) {
    plan.seed = *cfg.sim_seed;
  }
  if (cfg.dof.kind != DofPolicy::Kind::rank) {
    plan.dof = cfg.dof;
  }
  plan.threads = cfg.threads;
  const SizePowerTable table = run_simulation(plan);
  const auto band = dale_band(plan.alpha);
  json cells = json::array();
  for (const auto& c : table.cells) {
    cells.push_back({{"N", c.N},
                     {"a", c.a},
                     {"lambda8", c.lambda8},
                     {"rate", c.rate},
                     {"rejections", c.rejections},
                     {"replications", c.replications},
                     {"failures", c.failures},
                     {"infinite_statistics", c.infinite},
                     {"ci95", {c.ci_lo, c.ci_hi}},
                     {"in_dale_band", c.in_dale_band}});
  }
  json out = {{"plan_seed", plan.seed},
              {"replications", plan.replications},
              {"phi2", plan.phi2.describe()},
              {"dof", table.dof},
              {"dof_policy", table.dof_policy},
              {"critical_value", table.critical},
              {"dale_band", {band.first, band.second}},
              {"cells", cells}};
  if (!cfg.out_dir.empty()) {
    json files = json::array();
    for (const auto& p : emit_power_curves(table, cfg.out_dir)) {
      files.push_back(p.string());
    }
    out["plot_files"] = files;
  }
  return out;
}

inline json checks_to_json(const std::vector<IdentityCheck>& checks, bool& all_pass) {
  json out = json::array();
  for (const auto& c : checks) {
    all_pass = all_pass && c.pass;
    out.push_back({{"identity", c.name},
                   {"error", c.error},
                   {"tolerance", c.tolerance},
                   {"pass", c.pass}});
  }
  return out;
}

inline json run_verify(const RunConfig& cfg) {
  ModelDesign design = read_design(cfg.design_path);
  Theta theta0;
  if (!cfg.theta.empty()) {
    if (static_cast<int>(cfg.theta.size()) != design.n_params()) {
      throw UsageError("--theta: expected " + std::to_string(design.n_params()) + " values");
    }
    Vector v(static_cast<Eigen::Index>(cfg.theta.size()));
    for (std::size_t i = 0; i < cfg.theta.size(); ++i) {
      v[static_cast<Eigen::Index>(i)] = cfg.theta[i];
    }
    theta0 = Theta::from_flat(design, v);
  } else {
    Philox4x32 gen(cfg.seed);
    Vector v(design.n_params());
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      v[i] = 0.5 * standard_normal(gen);
    }
    theta0 = Theta::from_flat(design, v);
  }
  json out = {{"n_params", design.n_params()}, {"theta0", lcm::detail::vector_to_json(theta0.flat())}};
  const int rank = jacobian_rank(design, theta0);
  out["jacobian_rank"] = rank;
  if (rank < design.n_params() && !cfg.pseudo_inverse) {
    Theta reduced;
    design = identifiable_reduction(design, theta0, &reduced);
    theta0 = reduced;
    out["reduced_to"] = design.n_params();
    out["note"] = "rank-deficient design verified on an identifiable reduction";
  }
  bool all_pass = true;
  const AsymptoticBundle b = build_bundle(design, theta0, cfg.pseudo_inverse);
  out["gram_condition"] = b.gram_condition;
  out["bundle_checks"] = checks_to_json(verify_bundle(b, design.n_params()), all_pass);

  NestedPair pair{design, {}, {}};
  if (cfg.fix_lambda.empty()) {
    if (design.t() > 1) {
      pair.drop_lambda.push_back(design.t() - 1);
    } else {
      pair.drop_eta.push_back(design.u() - 1);
    }
  } else {
    for (int i : cfg.fix_lambda) {
      if (i < 1 || i > design.t()) {
        throw UsageError("--fix-lambda: index " + std::to_string(i) + " out of range");
      }
      pair.drop_lambda.push_back(i - 1);
    }
  }
  const NestedProjections np = build_nested_projections(pair, theta0, cfg.pseudo_inverse);
  out["h1"] = np.h1;
  out["h2"] = np.h2;
  out["projection_checks"] = checks_to_json(verify_projections(np), all_pass);
  out["all_pass"] = all_pass;
  return out;
}

}  // namespace detail

// Runs a parsed configuration, writing the report to cfg.out_path or `out`.
// Returns the process exit status.
inline int run(const RunConfig& cfg, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  json report;
  int status = kExitOk;
  try {
    report = detail::provenance(cfg);
    json result;
    if (cfg.subcommand == "fit") {
      result = detail::run_fit(cfg);
      if (result.contains("error")) {
        status = kExitCompute;
      }
    } else if (cfg.subcommand == "gof") {
      result = detail::run_gof(cfg);
    } else if (cfg.subcommand == "nested") {
      result = detail::run_nested(cfg);
    } else if (cfg.subcommand == "select") {
      result = detail::run_select(cfg);
    } else if (cfg.subcommand == "simulate") {
      result = detail::run_simulate(cfg);
    } else if (cfg.subcommand == "verify") {
      result = detail::run_verify(cfg);
      if (!result.at("all_pass").get<bool>()) {
        status = kExitCompute;
      }
    } else {
      throw UsageError("unknown subcommand '" + cfg.subcommand + "'");
    }
    report["result"] = result;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ParseError& e) {
    err << "input error: " << e.what() << '\n';
    return kExitParse;
  } catch (const std::exception& e) {
    err << "computation failed (" << cfg.subcommand << "): " << e.what() << '\n';
    return kExitCompute;
  }

  std::ostringstream text;
  if (cfg.format == "json") {
    text << report.dump(2) << '\n';
  } else {
    detail::flatten(report, "", text);
  }
  if (cfg.out_path.empty()) {
    out << text.str();
  } else {
    std::ofstream os(cfg.out_path);
    if (!os) {
      err << "cannot write " << cfg.out_path << '\n';
      return kExitCompute;
    }
    os << text.str();
  }
  return status;
}

inline int main(int argc, const char* const* argv) {
  std::optional<RunConfig> cfg;
  try {
    cfg = parse_args(argc, argv);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  }
  if (!cfg) {
    return kExitOk;
  }
  return run(*cfg);
}

}  // namespace lcm::cli
