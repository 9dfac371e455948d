#ifndef SPINELAB_CLI_HPP
#define SPINELAB_CLI_HPP

// Command-line front end: run configuration, subcommand dispatch and output
// files. Every output embeds the tool version and the resolved config.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "spinelab/config.hpp"
#include "spinelab/mc.hpp"
#include "spinelab/models.hpp"

namespace spinelab {

inline constexpr std::string_view kVersion = "0.1.0";

/// Process exit status per failure category.
inline int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigInvalid: return 2;
    case ErrorCode::PopulationExplosion: return 3;
    case ErrorCode::NonConverged: return 4;
    case ErrorCode::BracketFailure: return 5;
    case ErrorCode::OutOfDomain: return 6;
  }
  return 1;
}

enum class ModelKind { Bbm, Typed, Ou };

struct RunConfig {
  ModelKind model = ModelKind::Bbm;
  BbmParams bbm;
  TypedParams typed;
  OuParams ou;
  double h = 0.01;
  std::optional<double> lambda;
  std::optional<double> p;
  std::optional<double> t;
  std::vector<double> time_grid;
  std::vector<double> lambda_grid;
  std::vector<double> p_grid;
  std::uint64_t reps = 1000;
  std::uint64_t subtree_reps = 1000;
  std::uint64_t seed = 1;
  std::uint64_t cap = kDefaultCap;
  double fit_from = 0.0;
  std::string measure = "p";
  std::string out;
  Config source;
};

namespace detail {

inline Eigen::MatrixXd to_matrix(const std::vector<std::vector<double>>& rows) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    require(static_cast<Eigen::Index>(rows[i].size()) == n, "q is a square matrix");
    for (Eigen::Index j = 0; j < n; ++j) m(i, j) = rows[i][j];
  }
  return m;
}

inline Eigen::VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

/// `start, stop, count` expands to an evenly spaced grid including both ends.
inline std::vector<double> linear_grid(const std::vector<double>& spec, const std::string& key) {
  require(spec.size() == 3, key + " is start, stop, count");
  const double count = spec[2];
  require(count >= 1.0 && count == std::floor(count), key + " count is a positive integer");
  const auto n = static_cast<std::size_t>(count);
  std::vector<double> grid(n);
  for (std::size_t i = 0; i < n; ++i)
    grid[i] = n == 1 ? spec[0] : spec[0] + (spec[1] - spec[0]) * static_cast<double>(i) / static_cast<double>(n - 1);
  return grid;
}

}  // namespace detail

/// Reads every recognised key, validates the model parameters against their
/// invariants and rejects unknown keys.
inline RunConfig load_run_config(Config cfg) {
  RunConfig rc;
  const std::string kind = cfg.text("model");
  if (kind == "bbm") {
    rc.model = ModelKind::Bbm;
    rc.bbm.r = cfg.number("bbm.r");
    rc.bbm.offspring = parse_offspring(cfg.text("bbm.offspring"));
    rc.bbm.x0 = cfg.number_or("bbm.x0", 0.0);
    rc.bbm.validate();
  } else if (kind == "typed") {
    rc.model = ModelKind::Typed;
    rc.typed.theta = cfg.number_or("typed.theta", 1.0);
    rc.typed.q = detail::to_matrix(cfg.matrix("typed.q"));
    if (cfg.has("typed.pi")) rc.typed.pi = detail::to_vector(cfg.list("typed.pi"));
    rc.typed.a = detail::to_vector(cfg.list("typed.a"));
    rc.typed.r = detail::to_vector(cfg.list("typed.r"));
    rc.typed.offspring = cfg.offspring_list("typed.offspring");
    rc.typed.x0 = cfg.number_or("typed.x0", 0.0);
    rc.typed.y0 = cfg.count_or("typed.y0", 0);
    rc.typed.finalize();
  } else if (kind == "ou") {
    rc.model = ModelKind::Ou;
    rc.ou.theta = cfg.number_or("ou.theta", rc.ou.theta);
    rc.ou.a = cfg.number_or("ou.a", rc.ou.a);
    rc.ou.r = cfg.number_or("ou.r", rc.ou.r);
    rc.ou.rho = cfg.number_or("ou.rho", rc.ou.rho);
    rc.ou.x0 = cfg.number_or("ou.x0", 0.0);
    rc.ou.y0 = cfg.number_or("ou.y0", 0.0);
    rc.h = cfg.number_or("ou.h", rc.h);
    require(rc.h > 0.0, "ou.h > 0");
    rc.ou.validate();
  } else {
    require(false, "model is bbm, typed or ou");
  }
  rc.lambda = cfg.maybe_number("lambda");
  rc.p = cfg.maybe_number("p");
  rc.t = cfg.maybe_number("t");
  if (rc.t) require(*rc.t >= 0.0, "t >= 0");
  if (cfg.has("time_grid")) rc.time_grid = cfg.list("time_grid");
  if (cfg.has("lambda_grid")) rc.lambda_grid = detail::linear_grid(cfg.list("lambda_grid"), "lambda_grid");
  if (cfg.has("p_grid")) rc.p_grid = detail::linear_grid(cfg.list("p_grid"), "p_grid");
  rc.reps = cfg.count_or("reps", rc.reps);
  rc.subtree_reps = cfg.count_or("subtree_reps", rc.subtree_reps);
  rc.seed = cfg.count_or("seed", rc.seed);
  rc.cap = cfg.count_or("cap", rc.cap);
  rc.fit_from = cfg.number_or("fit_from", 0.0);
  rc.measure = cfg.text_or("measure", "p");
  require(rc.measure == "p" || rc.measure == "q", "measure is p or q");
  rc.out = cfg.text_or("out", "");
  cfg.reject_unused();
  rc.source = std::move(cfg);
  return rc;
}

namespace detail {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string type_text(const TypePoint& y) {
  if (const auto* i = std::get_if<std::size_t>(&y)) return std::to_string(*i);
  if (const auto* d = std::get_if<double>(&y)) return num(*d);
  return "";
}

inline std::string csv_header(const RunConfig& rc, std::string_view subcommand) {
  std::string out = "# spinelab " + std::string(kVersion) + "\n# subcommand = " + std::string(subcommand) + "\n";
  std::istringstream lines(rc.source.resolved());
  for (std::string line; std::getline(lines, line);) out += "# " + line + "\n";
  return out;
}

inline nlohmann::ordered_json json_meta(const RunConfig& rc, std::string_view subcommand) {
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  for (const auto& [key, value] : rc.source.values()) config[key] = value;
  return {{"version", kVersion}, {"subcommand", subcommand}, {"config", config}};
}

inline void emit(const std::string& path, const std::string& content, std::ostream& fallback) {
  if (path.empty()) {
    fallback << content;
    return;
  }
  std::ofstream file(path, std::ios::binary);
  require(static_cast<bool>(file), "output path " + path + " is writable");
  file << content;
}

inline double need(const std::optional<double>& v, const std::string& key) {
  require(v.has_value(), "config key " + key + " is required");
  return *v;
}

inline McConfig mc_config(const RunConfig& rc) {
  McConfig mc;
  mc.seed = rc.seed;
  mc.reps = rc.reps;
  mc.sim.cap = rc.cap;
  return mc;
}

/// Calls f with the model adapter at `lambda`.
template <class F>
decltype(auto) with_model(const RunConfig& rc, double lambda, F&& f) {
  switch (rc.model) {
    case ModelKind::Bbm: return f(BbmModel(rc.bbm, lambda));
    case ModelKind::Typed: return f(TypedModel(rc.typed, lambda));
    case ModelKind::Ou: break;
  }
  return f(OuModel(rc.ou, lambda, OuGrid{rc.h, std::nullopt}));
}

inline ConvergenceVerdict classify(const RunConfig& rc, double lambda, std::optional<double> p) {
  switch (rc.model) {
    case ModelKind::Bbm: return classify_bbm(rc.bbm, lambda, p);
    case ModelKind::Typed: return classify_typed(rc.typed, lambda, p);
    case ModelKind::Ou: break;
  }
  return classify_ou(rc.ou, lambda, p);
}

inline nlohmann::ordered_json to_json(const Estimate& e) {
  return {{"mean", e.mean},          {"se", e.se},
          {"n", e.n},                {"extinct_fraction", e.extinct_fraction},
          {"max_share", e.max_share}, {"flag", flag(e)}};
}

inline std::string curve_csv(const GrowthCurve& curve) {
  std::string out = "time,mean,se,n,flag\n";
  for (std::size_t i = 0; i < curve.times.size(); ++i) {
    const Estimate& e = curve.values[i];
    out += num(curve.times[i]) + "," + num(e.mean) + "," + num(e.se) + "," + std::to_string(e.n) + "," +
           std::string(flag(e)) + "\n";
  }
  return out;
}

}  // namespace detail

inline std::string run_eigen(const RunConfig& rc) {
  require(!rc.lambda_grid.empty(), "config key lambda_grid is required");
  std::string out = detail::csv_header(rc, "eigen");
  using detail::num;
  switch (rc.model) {
    case ModelKind::Bbm: {
      out += "lambda,E_lambda,c_lambda,lambda_tilde\n";
      for (double l : rc.lambda_grid) {
        const BbmSpectral s = bbm_spectral(rc.bbm, l);
        out += num(l) + "," + num(s.e_lambda) + "," + (s.c_lambda ? num(*s.c_lambda) : "") + "," +
               num(s.lambda_tilde) + "\n";
      }
      break;
    }
    case ModelKind::Typed: {
      const double tilde = lambda_tilde_typed(rc.typed);
      out += "lambda,E_lambda,E_prime,c_lambda,residual";
      for (std::size_t i = 0; i < rc.typed.n(); ++i) out += ",v_" + std::to_string(i);
      out += ",lambda_tilde\n";
      for (double l : rc.lambda_grid) {
        const TypedSpectral s = typed_spectral(rc.typed, l);
        out += num(l) + "," + num(s.e_lambda) + "," + num(s.e_prime) + "," + (s.c_lambda ? num(*s.c_lambda) : "") +
               "," + num(s.residual);
        for (Eigen::Index i = 0; i < s.v.size(); ++i) out += "," + num(s.v(i));
        out += "," + num(tilde) + "\n";
      }
      break;
    }
    case ModelKind::Ou: {
      const double tilde = lambda_tilde_ou(rc.ou);
      out += "lambda,mu,psi_minus,psi_plus,E_lambda,E_prime,c_lambda,lambda_min,lambda_tilde\n";
      for (double l : rc.lambda_grid) {
        const OuSpectral s = ou_spectral(rc.ou, l);
        out += num(l) + "," + num(s.mu) + "," + num(s.psi_minus) + "," + num(s.psi_plus) + "," + num(s.e_lambda) +
               "," + num(s.e_prime) + "," + num(s.c_lambda) + "," + num(s.lambda_min) + "," + num(tilde) + "\n";
      }
      break;
    }
  }
  return out;
}

inline std::string run_classify(const RunConfig& rc) {
  const double lambda = detail::need(rc.lambda, "lambda");
  const ConvergenceVerdict v = detail::classify(rc, lambda, rc.p);
  nlohmann::ordered_json j = {{"spinelab", detail::json_meta(rc, "classify")},
                              {"lambda", lambda},
                              {"p", rc.p ? nlohmann::ordered_json(*rc.p) : nlohmann::ordered_json(nullptr)},
                              {"verdict", to_string(v.tag)},
                              {"clause", v.clause},
                              {"reason", v.reason}};
  return j.dump(2) + "\n";
}

/// One row per (lambda, p); p = 1 rows carry the L1 verdict.
inline std::string run_region(const RunConfig& rc) {
  require(!rc.lambda_grid.empty(), "config key lambda_grid is required");
  std::vector<std::optional<double>> orders{std::nullopt};
  for (double p : rc.p_grid) orders.emplace_back(p);
  std::string out = detail::csv_header(rc, "region") + "lambda,p,verdict,clause\n";
  for (double l : rc.lambda_grid) {
    for (const auto& p : orders) {
      std::string tag, clause;
      try {
        const ConvergenceVerdict v = detail::classify(rc, l, p);
        tag = to_string(v.tag);
        clause = v.clause;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::OutOfDomain) throw;
        tag = to_string(ErrorCode::OutOfDomain);
      }
      out += detail::num(l) + "," + detail::num(p.value_or(1.0)) + "," + tag + "," + clause + "\n";
    }
  }
  return out;
}

struct SimulateOutput {
  std::string snapshot;
  std::optional<std::string> spine;
};

inline SimulateOutput run_simulate(const RunConfig& rc) {
  const double t = detail::need(rc.t, "t");
  const bool q = rc.measure == "q";
  const double lambda = q ? detail::need(rc.lambda, "lambda") : rc.lambda.value_or(0.0);
  return detail::with_model(rc, lambda, [&](const auto& model) {
    SimOptions opts;
    opts.cap = rc.cap;
    const StreamKey key = StreamKey::from(rc.seed, 0);
    SpineRecord rec;
    const Snapshot snap = grow_snapshot(model.dynamics(), model.root(), t, key, opts, q ? &rec : nullptr);
    using detail::num;
    SimulateOutput out;
    out.snapshot = detail::csv_header(rc, "simulate") + "label,position,type,birth_time,spine\n";
    for (const auto& p : snap.particles) {
      const bool on_spine = q && p.label == rec.spine_label;
      out.snapshot += to_string(p.label) + "," + num(p.position) + "," + detail::type_text(p.type) + "," +
                      num(p.birth_time) + "," + (on_spine ? "1" : "0") + "\n";
    }
    if (q) {
      std::string s = detail::csv_header(rc, "simulate") + "event,time,position,type,extra_offspring,chosen_child\n";
      for (std::size_t k = 0; k < rec.fission_count(); ++k)
        s += "fission," + num(rec.fission_times[k]) + "," + num(rec.states_at_fission[k].position) + "," +
             detail::type_text(rec.states_at_fission[k].type) + "," + std::to_string(rec.extra_offspring[k]) + "," +
             std::to_string(rec.chosen_child[k]) + "\n";
      s += "terminal," + num(rec.horizon) + "," + num(rec.terminal.position) + "," +
           detail::type_text(rec.terminal.type) + ",,\n";
      out.spine = std::move(s);
    }
    return out;
  });
}

struct MartingaleOutput {
  std::string csv;
  std::string summary;
};

/// Mean curve of Z_lambda(t) or, with p set, of E[Z_lambda(t)^p].
inline MartingaleOutput run_martingale(const RunConfig& rc) {
  const double lambda = detail::need(rc.lambda, "lambda");
  std::vector<double> times = rc.time_grid;
  if (times.empty()) times.push_back(detail::need(rc.t, "time_grid or t"));
  const McConfig mc = detail::mc_config(rc);
  const GrowthCurve curve = detail::with_model(rc, lambda, [&](const auto& model) {
    return rc.p ? estimate_p_moment_curve(model, *rc.p, times, mc, rc.fit_from)
                : estimate_martingale_curve(model, times, mc);
  });
  MartingaleOutput out;
  out.csv = detail::csv_header(rc, "martingale") + detail::curve_csv(curve);
  const ConvergenceVerdict v = detail::classify(rc, lambda, rc.p);
  nlohmann::ordered_json j = {{"spinelab", detail::json_meta(rc, "martingale")},
                              {"fitted_log_slope", curve.fitted_log_slope},
                              {"slope_half_width", curve.slope_half_width},
                              {"verdict", to_string(v.tag)},
                              {"clause", v.clause}};
  out.summary = j.dump(2) + "\n";
  return out;
}

inline std::string run_spine_check(const RunConfig& rc) {
  const double lambda = detail::need(rc.lambda, "lambda");
  const double t = detail::need(rc.t, "t");
  const McConfig mc = detail::mc_config(rc);
  nlohmann::ordered_json j = {{"spinelab", detail::json_meta(rc, "spine-check")}};
  detail::with_model(rc, lambda, [&](const auto& model) {
    const SpineReport report = spine_statistics(model, t, mc);
    nlohmann::ordered_json checks = nlohmann::ordered_json::array();
    for (const auto& c : report.checks)
      checks.push_back({{"name", c.name},
                        {"estimate", c.estimate},
                        {"se", c.se},
                        {"target", c.target},
                        {"z", c.z},
                        {"pass", c.pass}});
    j["spine_statistics"] = {{"burn_in", report.burn_in}, {"checks", checks}, {"pass", report.all_pass()}};
    const RnConsistency rn = rn_consistency(model, t, mc);
    j["rn_consistency"] = {{"functional", "exp_neg_popsize"},
                           {"p_side", detail::to_json(rn.p_side)},
                           {"q_side", detail::to_json(rn.q_side)},
                           {"z", rn.z_score},
                           {"pass", std::abs(rn.z_score) <= 3.0}};
    const DecompositionCheck dc = spine_decomp_check(model, t, rc.subtree_reps, mc);
    j["spine_decomp_check"] = {{"spine_value", dc.spine_value},
                               {"resimulated", detail::to_json(dc.resimulated)},
                               {"fissions", dc.skeleton.fission_count()},
                               {"z", dc.z_score},
                               {"pass", std::abs(dc.z_score) <= 3.0}};
  });
  return j.dump(2) + "\n";
}

inline std::string run_lmp(const RunConfig& rc) {
  require(rc.model != ModelKind::Ou, "lmp model is bbm or typed");
  const double t = detail::need(rc.t, "t");
  const McConfig mc = detail::mc_config(rc);
  const Estimate e = detail::with_model(rc, 0.0, [&](const auto& model) { return lmp_estimate(model, t, mc); });
  nlohmann::ordered_json j = {{"spinelab", detail::json_meta(rc, "lmp")}, {"t", t}, {"L_over_t", detail::to_json(e)}};
  return j.dump(2) + "\n";
}

/// Entry point shared by the executable and the tests. Returns the exit status.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"spinelab: spine-based analysis of branching diffusions"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> reps;
  std::optional<std::string> out_path;
  const std::vector<std::string> names{"eigen", "classify", "region", "simulate", "martingale", "spine-check", "lmp"};
  for (const auto& name : names) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("config", config_path, "configuration file")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override seed");
    sub->add_option("--reps", reps, "override replicate count");
    sub->add_option("--out", out_path, "override output path");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }
  const std::string subcommand = app.get_subcommands().front()->get_name();
  try {
    std::ifstream file(config_path);
    std::stringstream buffer;
    buffer << file.rdbuf();
    Config cfg = Config::parse(buffer.str());
    if (seed) cfg.set("seed", std::to_string(*seed));
    if (reps) cfg.set("reps", std::to_string(*reps));
    if (out_path) cfg.set("out", *out_path);
    const RunConfig rc = load_run_config(std::move(cfg));
    if (subcommand == "eigen") {
      detail::emit(rc.out, run_eigen(rc), out);
    } else if (subcommand == "classify") {
      detail::emit(rc.out, run_classify(rc), out);
    } else if (subcommand == "region") {
      detail::emit(rc.out, run_region(rc), out);
    } else if (subcommand == "simulate") {
      const SimulateOutput sim = run_simulate(rc);
      detail::emit(rc.out, sim.snapshot, out);
      if (sim.spine && !rc.out.empty()) detail::emit(rc.out + ".spine.csv", *sim.spine, out);
    } else if (subcommand == "martingale") {
      const MartingaleOutput m = run_martingale(rc);
      detail::emit(rc.out, m.csv, out);
      if (!rc.out.empty()) detail::emit(rc.out + ".summary.json", m.summary, out);
    } else if (subcommand == "spine-check") {
      detail::emit(rc.out, run_spine_check(rc), out);
    } else {
      detail::emit(rc.out, run_lmp(rc), out);
    }
  } catch (const Error& e) {
    err << e.what() << "\n";
    return exit_code(e.code());
  }
  return 0;
}

}  // namespace spinelab

#endif  // SPINELAB_CLI_HPP
