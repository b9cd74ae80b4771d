#pragma once

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dalm/dalm.hpp"

namespace dalm::cli {

enum ExitCode : int { kOk = 0, kSolverFailure = 1, kConfigError = 2 };

/// Everything a run needs. Unset optionals take mode-dependent defaults.
struct RunConfig {
  std::string mode;
  std::string problem = "toy";  // toy | one_agent
  std::size_t n = 20;
  Index d = 3;
  double r = 2.0;
  std::uint64_t seed = 1;

  std::optional<double> rho0, beta, eps0;
  double eta = 1e-6;
  std::size_t max_outer = 30;
  std::string norm = "inf";

  double tau = 1e-14;
  std::size_t max_sweeps = 500;
  std::string b_strategy = "fixed";  // fixed | band
  double b_c = 30.0;
  std::string c_source = "backtracking";  // backtracking | sampled | hint
  double alpha_lower = 1e-3;
  double alpha_upper = 1.0;
  std::size_t starts = 1;

  std::size_t instances = 50;
  std::vector<std::size_t> budgets{0, 10, 25, 50, 100, 200, 500, 1000};
  std::vector<double> tolerances{1e-3, 1e-4, 1e-6};
  std::size_t outer_iterations = 5;

  std::string out;
  std::string trace;
  std::optional<unsigned> threads;
};

namespace detail {

inline std::string line_of_key(const std::string& text, const std::string& key) {
  const auto pos = text.find('"' + key + '"');
  if (pos == std::string::npos) return "?";
  return std::to_string(1 + std::count(text.begin(), text.begin() + static_cast<long>(pos), '\n'));
}

inline std::string line_col_of_byte(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  std::size_t line = 1, col = 1;
  for (std::size_t k = 0; k + 1 < byte; ++k) {
    if (text[k] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return std::to_string(line) + ":" + std::to_string(col);
}

}  // namespace detail

/// Reads a JSON config document into `cfg`. Keys mirror the long flag names
/// with '-' replaced by '_'. Errors carry the file name and line.
inline void load_config_file(const std::string& path, RunConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config file");
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();

  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ":" + detail::line_col_of_byte(text, e.byte) +
                      ": malformed JSON: " + e.what());
  }
  if (!doc.is_object()) throw ConfigError(path + ":1: config must be a JSON object");

  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const std::string& key = it.key();
    const nlohmann::json& v = it.value();
    auto fail = [&](const std::string& msg) {
      throw ConfigError(path + ":" + detail::line_of_key(text, key) + ": key \"" + key +
                        "\": " + msg);
    };
    auto number = [&]() -> double {
      if (!v.is_number()) fail("expected a number");
      return v.get<double>();
    };
    auto count = [&]() -> std::size_t {
      if (!v.is_number_integer() || v.get<long long>() < 0) fail("expected a non-negative integer");
      return v.get<std::size_t>();
    };
    auto string = [&]() -> std::string {
      if (!v.is_string()) fail("expected a string");
      return v.get<std::string>();
    };
    auto boolean = [&]() -> bool {
      if (!v.is_boolean()) fail("expected true or false");
      return v.get<bool>();
    };

    if (key == "mode") cfg.mode = string();
    else if (key == "problem") cfg.problem = string();
    else if (key == "toy") { if (boolean()) cfg.problem = "toy"; }
    else if (key == "n") cfg.n = count();
    else if (key == "d") cfg.d = static_cast<Index>(count());
    else if (key == "r") cfg.r = number();
    else if (key == "seed") cfg.seed = count();
    else if (key == "rho0") cfg.rho0 = number();
    else if (key == "beta") cfg.beta = number();
    else if (key == "eps0") cfg.eps0 = number();
    else if (key == "eta") cfg.eta = number();
    else if (key == "max_outer") cfg.max_outer = count();
    else if (key == "norm") cfg.norm = string();
    else if (key == "tau") cfg.tau = number();
    else if (key == "max_sweeps") cfg.max_sweeps = count();
    else if (key == "b_strategy") cfg.b_strategy = string();
    else if (key == "b_c") cfg.b_c = number();
    else if (key == "c_source") cfg.c_source = string();
    else if (key == "alpha_lower") cfg.alpha_lower = number();
    else if (key == "alpha_upper") cfg.alpha_upper = number();
    else if (key == "starts") cfg.starts = count();
    else if (key == "instances") cfg.instances = count();
    else if (key == "outer_iterations") cfg.outer_iterations = count();
    else if (key == "out") cfg.out = string();
    else if (key == "trace") cfg.trace = string();
    else if (key == "threads") cfg.threads = static_cast<unsigned>(count());
    else if (key == "budgets") {
      if (!v.is_array()) fail("expected an array of non-negative integers");
      cfg.budgets.clear();
      for (const auto& e : v) {
        if (!e.is_number_integer() || e.get<long long>() < 0)
          fail("expected an array of non-negative integers");
        cfg.budgets.push_back(e.get<std::size_t>());
      }
    } else if (key == "tolerances") {
      if (!v.is_array()) fail("expected an array of numbers");
      cfg.tolerances.clear();
      for (const auto& e : v) {
        if (!e.is_number()) fail("expected an array of numbers");
        cfg.tolerances.push_back(e.get<double>());
      }
    } else {
      fail("unknown key");
    }
  }
}

inline void validate(const RunConfig& cfg) {
  auto positive = [](double x, const char* name) {
    if (!(x > 0.0) || !std::isfinite(x)) throw ConfigError(std::string(name) + " must be positive");
  };
  if (cfg.problem != "toy" && cfg.problem != "one_agent")
    throw ConfigError("problem must be \"toy\" or \"one_agent\"");
  if (cfg.n < 2) throw ConfigError("n must be at least 2");
  if (cfg.d < 1) throw ConfigError("d must be at least 1");
  positive(cfg.r, "r");
  if (cfg.rho0) positive(*cfg.rho0, "rho0");
  if (cfg.beta && !(*cfg.beta > 1.0)) throw ConfigError("beta must exceed 1");
  if (cfg.eps0) positive(*cfg.eps0, "eps0");
  positive(cfg.eta, "eta");
  positive(cfg.tau, "tau");
  positive(cfg.b_c, "b_c");
  if (cfg.max_outer == 0) throw ConfigError("max_outer must be positive");
  if (cfg.max_sweeps == 0) throw ConfigError("max_sweeps must be positive");
  if (cfg.norm != "inf" && cfg.norm != "two") throw ConfigError("norm must be \"inf\" or \"two\"");
  if (cfg.b_strategy != "fixed" && cfg.b_strategy != "band")
    throw ConfigError("b_strategy must be \"fixed\" or \"band\"");
  if (cfg.c_source != "backtracking" && cfg.c_source != "sampled" && cfg.c_source != "hint")
    throw ConfigError("c_source must be \"backtracking\", \"sampled\" or \"hint\"");
  if (!(cfg.alpha_lower > 0.0 && cfg.alpha_lower < cfg.alpha_upper))
    throw ConfigError("alpha bounds must satisfy 0 < alpha_lower < alpha_upper");
  if (cfg.starts == 0) throw ConfigError("starts must be positive");
  if (cfg.instances == 0) throw ConfigError("instances must be positive");
  if (cfg.outer_iterations == 0) throw ConfigError("outer_iterations must be positive");
  if (cfg.budgets.empty()) throw ConfigError("budgets must not be empty");
  if (cfg.tolerances.empty()) throw ConfigError("tolerances must not be empty");
  for (double t : cfg.tolerances) positive(t, "tolerances");
}

/// Requested worker count, capped by DIST_ALM_THREADS when that is set.
inline unsigned effective_threads(const RunConfig& cfg) {
  std::optional<unsigned> env;
  if (const char* s = std::getenv("DIST_ALM_THREADS"); s && *s) {
    char* end = nullptr;
    const long v = std::strtol(s, &end, 10);
    if (*end != '\0' || v < 0) throw ConfigError("DIST_ALM_THREADS must be a non-negative integer");
    env = static_cast<unsigned>(v);
  }
  unsigned want = cfg.threads.value_or(env.value_or(0));
  if (env) want = std::min(want, *env);
  return want;
}

inline InnerConfig make_inner(const RunConfig& cfg, unsigned threads) {
  InnerConfig ic;
  ic.tau = cfg.tau;
  ic.max_sweeps = cfg.max_sweeps;
  ic.alpha = AlphaBounds{cfg.alpha_lower, cfg.alpha_upper};
  if (cfg.b_strategy == "band") ic.b_strategy = HessianBand{cfg.b_c, 1e-3};
  else ic.b_strategy = FixedScaled{cfg.b_c};
  if (cfg.c_source == "sampled") ic.c_source = SampledBound{};
  else if (cfg.c_source == "hint") ic.c_source = HintBound{};
  else ic.c_source = BacktrackingBound{};
  ic.threads = threads;
  return ic;
}

inline OuterConfig make_outer(const RunConfig& cfg, double rho0, double beta, double eps0) {
  OuterConfig oc;
  oc.rho0 = cfg.rho0.value_or(rho0);
  oc.beta = cfg.beta.value_or(beta);
  oc.eps0 = cfg.eps0.value_or(eps0);
  oc.eta = cfg.eta;
  oc.max_outer = cfg.max_outer;
  oc.norm = cfg.norm == "two" ? ConstraintNorm::Two : ConstraintNorm::Inf;
  return oc;
}

inline ToyParams toy_params(const RunConfig& cfg) {
  ToyParams p;
  p.agents = cfg.n;
  p.dim = cfg.d;
  p.scale = cfg.r;
  p.seed = cfg.seed;
  return p;
}

inline nlohmann::json to_json(const IterTrace& t) {
  return {{"k", t.k},
          {"rho", t.rho},
          {"eps", t.eps},
          {"h_inf", t.h_inf},
          {"h_two", t.h_two},
          {"lagrangian", t.lagrangian},
          {"residual", t.residual},
          {"sweeps", t.sweeps},
          {"cumulative_sweeps", t.cumulative_sweeps},
          {"certificates_ok", t.certificates_ok},
          {"inner_met_target", t.inner_met_target}};
}

inline std::ofstream open_output(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError(path + ": cannot open for writing");
  return f;
}

inline int run_solve(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const unsigned threads = effective_threads(cfg);
  const OuterConfig oc = make_outer(cfg, 1.0, 10.0, 1e-2);
  const InnerConfig ic = make_inner(cfg, threads);

  std::optional<ToyProblem> toy;
  std::optional<NlpProblem> one;
  std::vector<BlockVector> starts;
  if (cfg.problem == "toy") {
    const ToyParams p = toy_params(cfg);
    if (!p.feasible())
      err << "warning: sphere radius " << format_double(p.radius())
          << " exceeds the box diagonal; the instance is infeasible\n";
    toy = generate_toy(p);
    for (std::size_t s = 0; s < cfg.starts; ++s)
      starts.push_back(random_start(*toy, cfg.seed + s).first);
  } else {
    one = make_one_agent_problem();
    BlockVector z0 = one->zeros();
    z0.flat()(0) = 2.0;
    starts.push_back(z0);
    for (std::size_t s = 1; s < cfg.starts; ++s) {
      z0.flat()(0) = -2.0 + 4.0 * static_cast<double>(s) / static_cast<double>(cfg.starts);
      starts.push_back(z0);
    }
  }
  const NlpProblem& problem = toy ? toy->problem : *one;
  const MultiStartResult ms =
      run_multistart(problem, oc, ic, starts, problem.zero_multipliers());
  const OuterState& st = ms.best.state;

  const IterTrace last = st.trace.empty() ? IterTrace{} : st.trace.back();
  out << "status " << to_string(ms.best.status) << '\n'
      << "outer_iterations " << st.k << '\n'
      << "inner_sweeps " << last.cumulative_sweeps << '\n'
      << "h_inf " << format_double(last.h_inf) << '\n'
      << "residual " << format_double(last.residual) << '\n'
      << "objective " << format_double(ms.objective) << '\n';
  if (cfg.starts > 1) out << "best_start " << ms.best_start << '\n';

  if (!cfg.trace.empty()) {
    std::ofstream f = open_output(cfg.trace);
    for (const auto& row : st.trace) f << to_json(row).dump() << '\n';
  }
  return ms.best.status == OuterStatus::Converged ? kOk : kSolverFailure;
}

inline int run_bench(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const ToyParams p = toy_params(cfg);
  if (!p.feasible())
    err << "warning: sphere radius exceeds the box diagonal; every run will be infeasible\n";
  StatsConfig sc;
  sc.outer_iterations = cfg.outer_iterations;
  sc.outer = make_outer(cfg, 0.1, 100.0, 1e-2);
  sc.outer.stop_on_eta = false;
  sc.inner = make_inner(cfg, 0);
  sc.threads = effective_threads(cfg);

  std::optional<std::ofstream> trace;
  if (!cfg.trace.empty()) trace = open_output(cfg.trace);
  auto sink = [&](const RunRecord& rec) {
    if (rec.failed) err << "instance " << rec.instance << " budget " << rec.budget
                        << " failed: " << rec.error << '\n';
    if (!trace) return;
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& t : rec.trace) rows.push_back(to_json(t));
    nlohmann::json j = {{"instance", rec.instance}, {"seed", rec.seed},
                        {"budget", rec.budget},     {"failed", rec.failed},
                        {"status", to_string(rec.status)}, {"trace", rows}};
    if (rec.failed) j["error"] = rec.error;
    else j["violation"] = rec.violation;
    *trace << j.dump() << '\n';
  };
  const RunStats stats = run_statistics(p, cfg.instances, cfg.budgets, cfg.tolerances, sc, sink);
  if (cfg.out.empty()) {
    write_stats_csv(out, stats);
  } else {
    std::ofstream f = open_output(cfg.out);
    write_stats_csv(f, stats);
    out << "wrote " << cfg.out << '\n';
  }
  return kOk;
}

inline int run_verify(const RunConfig& cfg, std::ostream& out) {
  bool ok = true;
  for (const auto& c : run_oracle_suite(cfg.seed)) {
    out << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
    ok = ok && c.passed;
  }
  return ok ? kOk : kSolverFailure;
}

/// Full command-line entry point; returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Distributed augmented Lagrangian solver"};
  app.require_subcommand(1);
  RunConfig flags;
  std::string config_path;
  bool toy_flag = false;

  CLI::App* solve = app.add_subcommand("solve", "Solve one problem instance");
  CLI::App* bench = app.add_subcommand("bench", "Run the random-instance statistics experiment");
  CLI::App* verify = app.add_subcommand("verify", "Run the built-in oracle suite");

  std::vector<std::pair<CLI::Option*, std::function<void(RunConfig&)>>> overrides;
  auto add = [&](CLI::App* sub, const std::string& name, auto member, const std::string& help) {
    CLI::Option* o = sub->add_option(name, flags.*member, help);
    overrides.emplace_back(o, [member, &flags](RunConfig& c) { c.*member = flags.*member; });
  };

  for (CLI::App* sub : {solve, bench, verify}) {
    sub->add_option("--config", config_path, "JSON config file; flags override its values");
    add(sub, "--seed", &RunConfig::seed, "instance seed");
  }
  for (CLI::App* sub : {solve, bench}) {
    add(sub, "--problem", &RunConfig::problem, "toy | one_agent");
    sub->add_flag("--toy", toy_flag, "use the built-in random chain problem");
    add(sub, "--n", &RunConfig::n, "number of agents");
    add(sub, "--d", &RunConfig::d, "block dimension");
    add(sub, "--r", &RunConfig::r, "scale R (sphere radius sqrt(R), box 0.6 R)");
    add(sub, "--rho0", &RunConfig::rho0, "initial penalty");
    add(sub, "--beta", &RunConfig::beta, "penalty growth factor");
    add(sub, "--eps0", &RunConfig::eps0, "initial inner tolerance");
    add(sub, "--eta", &RunConfig::eta, "final feasibility tolerance");
    add(sub, "--max-outer", &RunConfig::max_outer, "outer iteration cap");
    add(sub, "--norm", &RunConfig::norm, "inf | two");
    add(sub, "--tau", &RunConfig::tau, "inner step tolerance");
    add(sub, "--max-sweeps", &RunConfig::max_sweeps, "inner sweep cap");
    add(sub, "--b-strategy", &RunConfig::b_strategy, "fixed | band");
    add(sub, "--b-c", &RunConfig::b_c, "B scale c in B = c rho I");
    add(sub, "--c-source", &RunConfig::c_source, "backtracking | sampled | hint");
    add(sub, "--alpha-lower", &RunConfig::alpha_lower, "proximal weight lower bound");
    add(sub, "--alpha-upper", &RunConfig::alpha_upper, "proximal weight upper bound");
    add(sub, "--trace", &RunConfig::trace, "JSON-lines trace output path");
    add(sub, "--threads", &RunConfig::threads, "worker threads (capped by DIST_ALM_THREADS)");
  }
  add(solve, "--starts", &RunConfig::starts, "number of seeded starting points");
  add(bench, "--instances", &RunConfig::instances, "number of random instances");
  add(bench, "--budgets", &RunConfig::budgets, "total inner sweep budgets");
  add(bench, "--tolerances", &RunConfig::tolerances, "feasibility tolerances");
  add(bench, "--outer-iterations", &RunConfig::outer_iterations, "outer iterations per run");
  add(bench, "--out", &RunConfig::out, "CSV output path (stdout if empty)");
  bench->get_option("--budgets")->delimiter(',');
  bench->get_option("--tolerances")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kConfigError;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) load_config_file(config_path, cfg);
    for (const auto& [opt, apply] : overrides)
      if (opt->count() > 0) apply(cfg);
    if (toy_flag) cfg.problem = "toy";
    cfg.mode = solve->parsed() ? "solve" : bench->parsed() ? "bench" : "verify";
    validate(cfg);
    if (cfg.mode == "solve") return run_solve(cfg, out, err);
    if (cfg.mode == "bench") return run_bench(cfg, out, err);
    return run_verify(cfg, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kSolverFailure;
  }
}

}  // namespace dalm::cli
