#pragma once

/// \file cli.hpp
/// Command dispatch behind the rhedge executable. Kept in the library so the
/// whole surface (reports and exit codes included) is testable in-process.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "rhedge/dual.hpp"
#include "rhedge/oracle.hpp"
#include "rhedge/primal.hpp"
#include "rhedge/scenario_io.hpp"

namespace rhedge::cli {

enum ExitCode : int { kOk = 0, kSolverFailure = 1, kInputError = 2, kSelftestFailure = 3, kArbitrage = 4 };

enum class Format { Text, Machine };

/// Shortest text that reads back to the same double at 12 significant digits.
inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (v == 0.0) return "0";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

inline std::string fmt_list(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v[i]);
  return s;
}

/// Ordered key/value report. Machine format prints key=value lines; text
/// format aligns them and drops per-path dumps on large trees.
class Report {
 public:
  void add(std::string key, std::string value, bool per_path = false) {
    entries_.push_back({std::move(key), std::move(value), per_path});
  }
  void add(std::string key, double value) { add(std::move(key), fmt(value)); }

  void write(std::ostream& out, Format f, std::size_t paths) const {
    if (f == Format::Machine) {
      for (const auto& e : entries_) out << e.key << '=' << e.value << '\n';
      return;
    }
    std::size_t width = 0;
    for (const auto& e : entries_) width = std::max(width, e.key.size());
    for (const auto& e : entries_) {
      out << e.key << std::string(width + 2 - e.key.size(), ' ');
      if (e.per_path && paths > 50) out << "(" << paths << " paths, shown in machine format only)\n";
      else out << e.value << '\n';
    }
  }

 private:
  struct Entry {
    std::string key;
    std::string value;
    bool per_path;
  };
  std::vector<Entry> entries_;
};

struct Options {
  std::string command;
  std::string scenario;
  std::string payoff;
  std::string side = "both";
  double tol = 1e-7;
  std::string format = "text";
  std::string qmode = "hull";
  bool qmode_given = false;
  std::uint64_t seed = 1;
};

namespace detail {

inline bool solver_failed(SolveStatus s) { return s == SolveStatus::IterLimit; }

inline std::vector<std::string> sides(const Options& o) {
  if (o.side == "both") return {"super", "sub"};
  return {o.side};
}

inline void add_strategy(Report& r, const std::string& p, const Scenario& sc, const Strategy& s) {
  if (s.holdings.empty()) return;
  for (NodeId n : sc.tree.nonterminals()) {
    std::vector<double> h;
    for (const auto& row : s.holdings) h.push_back(row[n]);
    r.add(p + ".strategy.node." + std::to_string(n), fmt_list(h), true);
  }
  if (!sc.market.instruments.empty()) {
    std::vector<double> th;
    for (std::size_t i = 0; i < sc.market.instruments.size(); ++i) th.push_back(s.theta(i));
    r.add(p + ".strategy.static", fmt_list(th));
  }
}

inline void add_primal(Report& r, const std::string& p, const Scenario& sc, const HedgeResult& h) {
  r.add(p + ".primal", h.price);
  r.add(p + ".primal.status", to_string(h.status));
  r.add(p + ".primal.iterations", std::to_string(h.iterations));
  r.add(p + ".residual.risk", h.residual.empty() ? kNaN : acceptance_risk(sc.acceptance, h.residual));
  add_strategy(r, p, sc, h.strategy);
}

inline void add_measure(Report& r, const std::string& p, const GeneralizedMartingaleMeasure& m) {
  r.add(p + ".measure", fmt_list(m.probabilities), true);
  if (!m.weights.empty()) r.add(p + ".measure.weights", fmt_list(m.weights));
  r.add(p + ".measure.penalty", m.penalty);
  r.add(p + ".measure.residual", m.probabilities.empty() ? kNaN : m.residuals.max());
}

inline void add_dual(Report& r, const std::string& p, const DualResult& d) {
  r.add(p + ".dual", d.value);
  r.add(p + ".dual.status", to_string(d.status));
  r.add(p + ".dual.iterations", std::to_string(d.iterations));
  add_measure(r, p, d.measure);
}

inline double gap(double a, double b) { return a == b ? 0.0 : std::abs(a - b); }

inline void header(Report& r, const Options& o, const Scenario& sc) {
  r.add("command", o.command);
  r.add("scenario", sc.name);
  r.add("digest", scenario_digest(sc));
  r.add("paths", std::to_string(sc.tree.path_count()));
  r.add("tol", o.tol);
}

/// price, bounds and dualize.
inline int run_pricing(const Options& o, const Scenario& sc, Report& r) {
  header(r, o, sc);
  if (sc.payoffs.empty()) throw InputError("scenario defines no payoffs");
  const PayoffDef& x = o.payoff.empty() ? sc.payoffs.front() : sc.payoff(o.payoff);
  r.add("payoff", x.name);
  const bool primal = o.command != "dualize";
  const bool dual = o.command != "price";
  HedgeOptions ho;
  ho.tol = o.tol;
  DualOptions dopt;
  dopt.tol = o.tol;
  bool failed = false;
  for (const auto& s : sides(o)) {
    const bool sup = s == "super";
    std::optional<HedgeResult> h;
    std::optional<DualResult> d;
    if (primal) {
      h = sup ? superhedge(sc.tree, sc.market, sc.acceptance, x.values, ho)
              : subhedge(sc.tree, sc.market, sc.acceptance, x.values, ho);
      failed = failed || solver_failed(h->status);
      add_primal(r, s, sc, *h);
    }
    if (dual) {
      d = sup ? dual_superhedge(sc.tree, sc.market, sc.acceptance, x.values, dopt)
              : dual_subhedge(sc.tree, sc.market, sc.acceptance, x.values, dopt);
      failed = failed || solver_failed(d->status);
      add_dual(r, s, *d);
    }
    if (h && d) r.add(s + ".gap", gap(h->price, d->value));
  }
  return failed ? kSolverFailure : kOk;
}

inline int run_ftap(const Options& o, const Scenario& sc, Report& r) {
  header(r, o, sc);
  const FtapVerdict v = ftap_check(sc.tree, sc.market, sc.acceptance, o.tol);
  r.add("ftap.verdict", v.arbitrage ? "arbitrage" : "no-arbitrage");
  r.add("ftap.condition", v.condition);
  if (v.arbitrage) {
    r.add("ftap.margin", v.margin);
    r.add("ftap.outcome", fmt_list(v.outcome), true);
    add_strategy(r, "ftap", sc, *v.strategy);
    return kArbitrage;
  }
  add_measure(r, "ftap", *v.measure);
  return kOk;
}

/// Oracle sandwich on seeded random instances: sampled dual measures below
/// the dual, dual equal to vertex enumeration, primal equal to the dual,
/// grid search above the primal; plus the closed-form fixtures.
inline int run_selftest(const Options& o, Report& r, std::ostream& log, bool verbose) {
  r.add("command", "selftest");
  r.add("seed", std::to_string(o.seed));
  r.add("tol", o.tol);
  std::size_t pass = 0, fail = 0, instances = 0;
  std::vector<std::string> failures;
  auto check = [&](bool ok, const std::string& what) {
    (ok ? pass : fail) += 1;
    if (!ok) failures.push_back(what);
    if (verbose) log << (ok ? "PASS " : "FAIL ") << what << '\n';
  };
  const double tol = o.tol;
  HedgeOptions ho;
  ho.tol = tol;
  DualOptions dopt;
  dopt.tol = tol;

  for (const auto& f : closed_form_fixtures()) {
    ++instances;
    const Instance& in = f.instance;
    const double p = superhedge(in.tree, in.market, in.acceptance, in.payoff, ho).price;
    const double d = dual_superhedge(in.tree, in.market, in.acceptance, in.payoff, dopt).value;
    check(std::abs(p - f.value) <= 10 * tol && std::abs(d - f.value) <= 10 * tol,
          "fixture " + in.name + ": primal " + fmt(p) + ", dual " + fmt(d) + ", closed form " + fmt(f.value));
  }

  std::mt19937_64 rng(o.seed);
  const MarketClass markets[] = {MarketClass::Frictionless, MarketClass::Proportional, MarketClass::PiecewiseLinear,
                                 MarketClass::ShortSaleBan};
  const AcceptanceClass accs[] = {AcceptanceClass::Strict, AcceptanceClass::AVaR};
  RandomOptions ro;
  ro.max_horizon = 2;
  ro.max_paths = 8;
  for (int rep = 0; rep < 3; ++rep)
    for (MarketClass mc : markets)
      for (AcceptanceClass ac : accs) {
        ++instances;
        const Instance in = random_instance(rng, mc, ac, ro);
        const std::string id = in.name + " #" + std::to_string(instances);
        const double p = superhedge(in.tree, in.market, in.acceptance, in.payoff, ho).price;
        const double d = dual_superhedge(in.tree, in.market, in.acceptance, in.payoff, dopt).value;
        check(gap(p, d) <= 10 * tol, id + ": primal " + fmt(p) + " vs dual " + fmt(d));
        const OracleReport v = vertex_dual_value(in.tree, in.market, in.acceptance, in.payoff, d);
        check(gap(v.value, d) <= 1e-6, id + ": vertex enumeration " + fmt(v.value) + " vs dual " + fmt(d));
        const OracleReport ms = measure_sample_value(in.tree, in.market, in.acceptance, in.payoff, 100, o.seed + instances);
        check(ms.value <= d + 10 * tol, id + ": sampled measures " + fmt(ms.value) + " <= dual " + fmt(d));
        const std::size_t dims = in.tree.nonterminals().size() * static_cast<std::size_t>(in.tree.asset_count()) +
                                 in.market.instruments.size();
        if (dims <= 3) {
          GridSpec g;
          g.radius = 3.0;
          g.points = dims == 3 ? 41 : 201;
          const OracleReport gr = grid_primal_value(in.tree, in.market, in.acceptance, in.payoff, g);
          check(p <= gr.value + 10 * tol, id + ": primal " + fmt(p) + " <= strategy grid " + fmt(gr.value));
        }
      }

  // Smooth classes: strong duality only (no exact oracle).
  RandomOptions small;
  small.max_horizon = 1;
  small.max_paths = 3;
  small.max_assets = 1;
  for (auto [mc, ac] : {std::pair{MarketClass::Power, AcceptanceClass::Strict},
                        std::pair{MarketClass::Frictionless, AcceptanceClass::Entropic}}) {
    ++instances;
    const Instance in = random_instance(rng, mc, ac, small);
    const double p = superhedge(in.tree, in.market, in.acceptance, in.payoff, ho).price;
    const double d = dual_superhedge(in.tree, in.market, in.acceptance, in.payoff, dopt).value;
    check(gap(p, d) <= 10 * tol, in.name + " #" + std::to_string(instances) + ": primal " + fmt(p) + " vs dual " + fmt(d));
  }

  r.add("selftest.instances", std::to_string(instances));
  r.add("selftest.pass", std::to_string(pass));
  r.add("selftest.fail", std::to_string(fail));
  for (std::size_t i = 0; i < failures.size(); ++i) r.add("selftest.failure." + std::to_string(i + 1), failures[i]);
  return fail == 0 ? kOk : kSelftestFailure;
}

}  // namespace detail

/// Runs one command. `args` excludes the program name.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Robust super- and subhedging bounds on scenario trees", "rhedge"};
  app.add_option("command", o.command, "price | bounds | ftap | dualize | selftest")
      ->required()
      ->check(CLI::IsMember({"price", "bounds", "ftap", "dualize", "selftest"}));
  app.add_option("--scenario", o.scenario, "Scenario file (JSON)");
  app.add_option("--payoff", o.payoff, "Payoff name (default: the first one in the file)");
  app.add_option("--side", o.side, "super | sub | both")->check(CLI::IsMember({"super", "sub", "both"}));
  app.add_option("--tol", o.tol, "Value tolerance")->check(CLI::PositiveNumber);
  app.add_option("--format", o.format, "text | machine")->check(CLI::IsMember({"text", "machine"}));
  auto* qm = app.add_option("--dual-qmode", o.qmode, "Read acceptance measures as their hull or as generators")
                 ->check(CLI::IsMember({"hull", "generators"}));
  app.add_option("--seed", o.seed, "Seed for selftest");
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "selftest: print every check");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "rhedge: " << e.what() << '\n';
    return kInputError;
  }
  o.qmode_given = qm->count() > 0;
  const Format format = o.format == "machine" ? Format::Machine : Format::Text;

  const auto start = std::chrono::steady_clock::now();
  Report r;
  std::size_t paths = 0;
  int code = kOk;
  try {
    if (o.command == "selftest") {
      code = detail::run_selftest(o, r, out, verbose && format == Format::Text);
    } else {
      if (o.scenario.empty()) throw InputError("--scenario is required for " + o.command);
      Scenario sc = parse_scenario(o.scenario);
      if (o.qmode_given && !sc.acceptance.is_strict())
        sc.acceptance.mode = o.qmode == "generators" ? QMode::Generators : QMode::Hull;
      paths = sc.tree.path_count();
      code = o.command == "ftap" ? detail::run_ftap(o, sc, r) : detail::run_pricing(o, sc, r);
    }
  } catch (const UnsupportedError& e) {
    err << "rhedge: unsupported: " << e.what() << '\n';
    return kInputError;
  } catch (const InputError& e) {
    err << "rhedge: " << e.what() << '\n';
    return kInputError;
  } catch (const SolverError& e) {
    err << "rhedge: solver failure: " << e.what() << '\n';
    return kSolverFailure;
  }
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  r.add("elapsed_ms", fmt(std::round(ms * 10.0) / 10.0));
  r.add("exit", std::to_string(code));
  r.write(out, format, paths);
  return code;
}

}  // namespace rhedge::cli
