#pragma once

/// \file primal.hpp
/// Super- and subhedging programs:
///   phi(X) = inf { m : m - X + gains(strategy) is acceptable }.
/// Piecewise-linear frictions and instrument quotes become LP epigraph rows;
/// power and superlinear costs and entropic acceptance become smooth rows for
/// the cutting-plane solver.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "rhedge/acceptance.hpp"
#include "rhedge/convex.hpp"
#include "rhedge/lattice.hpp"
#include "rhedge/market.hpp"

namespace rhedge {

struct HedgeOptions {
  double tol = 1e-7;
  /// Bound on |strategy| used when the unboxed program is unbounded and,
  /// always, for programs with smooth rows.
  double box = 1e6;
  std::size_t max_iters = 2000;
};

struct HedgeResult {
  /// phi(X) for superhedging, -phi(-X) for subhedging; -inf / +inf when the
  /// program is unbounded (the strategy is then a witness found in the box).
  double price = kNaN;
  Strategy strategy;
  /// m - X + gains (super) or X - m + gains (sub), evaluated with the true
  /// cost functions.
  PathVector residual;
  SolveStatus status = SolveStatus::Infeasible;
  double tol = 0.0;
  std::size_t iterations = 0;
  /// Cutting-plane bracket; equal to price for LPs.
  double bound = kNaN;
  double best_feasible = kNaN;
  std::vector<double> bound_history;

  bool ok() const { return status == SolveStatus::Optimal; }
};

inline bool market_is_smooth(const ScenarioTree& tree, const MarketSpec& m) {
  for (const auto& ins : m.instruments)
    if (ins.superlinear) return true;
  for (int j = 1; j <= tree.asset_count(); ++j)
    for (NodeId n : tree.nonterminals())
      if (std::holds_alternative<PowerFriction>(m.frictions.at(j, tree.node(n)))) return true;
  return false;
}

/// Throws UnsupportedError for combinations outside the supported matrix.
inline void check_supported(const ScenarioTree& tree, const MarketSpec& m, const AcceptanceSpec& acc) {
  validate_market(tree, m);
  validate_acceptance(tree, acc);
  if (market_is_smooth(tree, m) && acc.has_entropic())
    throw UnsupportedError("power or superlinear costs combined with entropic acceptance are not supported");
}

/// True when every program for this instance is a plain LP.
inline bool is_linear_instance(const ScenarioTree& tree, const MarketSpec& m, const AcceptanceSpec& acc) {
  return !market_is_smooth(tree, m) && !acc.has_entropic();
}

namespace detail {

inline constexpr std::size_t kNone = static_cast<std::size_t>(-1);

/// Variable and row bookkeeping of an assembled hedging program.
struct HedgeProgram {
  ConvexProgram cp;
  std::size_t m = kNone;
  std::vector<std::vector<std::size_t>> holdings;  // [j-1][node]
  std::vector<std::size_t> theta_plus, theta_minus, theta;
  std::vector<std::size_t> y;
  std::vector<std::size_t> y_rows;
  AcceptanceBlock acceptance;
};

inline LinearCut power_cut(double scale, double p, double x0) {
  // c >= scale |x|^p ; tangent at x0: scale p |x0|^{p-1} sgn(x0) (x - x0) + f(x0)
  double f0 = scale * std::pow(std::abs(x0), p);
  double d = scale * p * std::pow(std::abs(x0), p - 1.0) * (x0 < 0 ? -1.0 : 1.0);
  return {{d, -1.0}, d * x0 - f0};
}

inline SmoothConstraint power_constraint(std::size_t x, std::size_t c, double scale, double p, double unit, std::string label) {
  SmoothConstraint sc;
  sc.vars = {x, c};
  sc.value = [scale, p](std::span<const double> z) { return scale * std::pow(std::abs(z[0]), p) - z[1]; };
  sc.cut = [scale, p](std::span<const double> z) { return power_cut(scale, p, z[0]); };
  for (double a : {1e-3, 1e-2, 0.1, 0.3, 1.0, 3.0, 10.0, 100.0}) {
    sc.seeds.push_back({a * unit, 0.0});
    sc.seeds.push_back({-a * unit, 0.0});
  }
  sc.label = std::move(label);
  return sc;
}

/// minimize m subject to  m - X + gains acceptable.
inline HedgeProgram build_hedge_program(const ScenarioTree& tree, const MarketSpec& mk, const AcceptanceSpec& acc,
                                        std::span<const double> x, double m_lower, bool boxed, double box) {
  HedgeProgram hp;
  hp.cp.lp = LinearProgram(Sense::Minimize);
  LinearProgram& lp = hp.cp.lp;
  const double lo = boxed ? -box : -kInf, hi = boxed ? box : kInf;
  const std::size_t n_paths = tree.path_count();
  const int J = tree.asset_count();

  hp.m = lp.add_variable(std::max(m_lower, lo), kInf, 1.0, "m");
  // Per-path linear gains expression, built up term by term.
  std::vector<std::vector<Term>> g(n_paths);

  hp.holdings.assign(J, std::vector<std::size_t>(tree.node_count(), kNone));
  for (int j = 1; j <= J; ++j)
    for (NodeId n : tree.nonterminals())
      hp.holdings[j - 1][n] = lp.add_variable(mk.banned(j) ? 0.0 : lo, hi, 0.0, "theta");

  for (int j = 1; j <= J; ++j) {
    for (NodeId n : tree.nonterminals()) {
      const Node& node = tree.node(n);
      const std::size_t v = hp.holdings[j - 1][n];
      auto [first, last] = tree.path_range(n);
      const double s_now = tree.discounted_price(j, n);
      for (std::size_t w = first; w < last; ++w) {
        double ds = tree.discounted_price(j, tree.node_on_path(w, node.depth + 1)) - s_now;
        if (ds != 0.0) g[w].push_back({v, ds});
      }
      // Trading cost of the rebalance at this node.
      const Friction& f = mk.frictions.at(j, node);
      const double price = node.prices[j];
      if (is_zero_friction(f) || price == 0.0) continue;
      std::vector<Term> trade{{v, 1.0}};
      if (node.parent) trade.push_back({hp.holdings[j - 1][*node.parent], -1.0});
      std::size_t c;
      if (auto* pw = std::get_if<PowerFriction>(&f)) {
        std::size_t xv = lp.add_variable(lo, hi, 0.0, "trade");
        std::vector<Term> row{{xv, 1.0}};
        for (Term t : trade) row.push_back({t.var, -t.coef});
        lp.add_row(std::move(row), Relation::Equal, 0.0);
        c = lp.add_variable(0.0, kInf, 0.0, "cost");
        // (eps/p)|price x|^p / S0
        const double scale = pw->eps / pw->p * std::pow(price, pw->p) / node.prices[0];
        hp.cp.smooth.push_back(power_constraint(xv, c, scale, pw->p, 1.0 / price, "power friction"));
      } else {
        const AffinePieces pc = *friction_pieces(f);
        c = lp.add_variable(-kInf, kInf, 0.0, "cost");
        for (std::size_t k = 0; k < pc.slopes.size(); ++k) {
          // S0 c - slope * price * trade >= intercept
          std::vector<Term> row{{c, node.prices[0]}};
          for (Term t : trade)
            if (pc.slopes[k] != 0.0) row.push_back({t.var, -pc.slopes[k] * price * t.coef});
          lp.add_row(std::move(row), Relation::GreaterEqual, pc.intercepts[k]);
        }
      }
      for (std::size_t w = first; w < last; ++w) g[w].push_back({c, -1.0});
    }
  }

  const std::size_t I = mk.instruments.size();
  hp.theta_plus.assign(I, kNone);
  hp.theta_minus.assign(I, kNone);
  hp.theta.assign(I, kNone);
  for (std::size_t i = 0; i < I; ++i) {
    const auto& ins = mk.instruments[i];
    if (ins.superlinear) {
      const auto& s = *ins.superlinear;
      hp.theta[i] = lp.add_variable(lo, hi, 0.0, "theta_static");
      std::size_t c = lp.add_variable(0.0, kInf, 0.0, "static_cost");
      hp.cp.smooth.push_back(power_constraint(hp.theta[i], c, s.delta / s.q, s.q, 1.0, "superlinear static cost"));
      for (std::size_t w = 0; w < n_paths; ++w) {
        if (ins.payoff[w] - s.price != 0.0) g[w].push_back({hp.theta[i], ins.payoff[w] - s.price});
        g[w].push_back({c, -1.0});
      }
      continue;
    }
    double buy = ins.buy_capacity(), sell = ins.sell_capacity();
    if (buy > 0.0) {
      hp.theta_plus[i] = lp.add_variable(0.0, std::min(buy, hi), 0.0, "theta_plus");
      for (std::size_t w = 0; w < n_paths; ++w)
        if (ins.payoff[w] - ins.ask != 0.0) g[w].push_back({hp.theta_plus[i], ins.payoff[w] - ins.ask});
    }
    if (sell > 0.0) {
      hp.theta_minus[i] = lp.add_variable(0.0, std::min(sell, hi), 0.0, "theta_minus");
      for (std::size_t w = 0; w < n_paths; ++w)
        if (ins.bid - ins.payoff[w] != 0.0) g[w].push_back({hp.theta_minus[i], ins.bid - ins.payoff[w]});
    }
  }

  // Y_w - m - gains_w = -X_w
  for (std::size_t w = 0; w < n_paths; ++w) {
    hp.y.push_back(lp.add_variable(-kInf, kInf, 0.0, "Y"));
    std::vector<Term> row{{hp.y[w], 1.0}, {hp.m, -1.0}};
    for (Term t : g[w]) row.push_back({t.var, -t.coef});
    hp.y_rows.push_back(lp.add_row(std::move(row), Relation::Equal, -x[w]));
  }
  hp.acceptance = acceptance_epigraph(hp.cp, acc, hp.y);
  return hp;
}

inline Strategy extract_strategy(const ScenarioTree& tree, const MarketSpec& mk, const HedgeProgram& hp,
                                 const std::vector<double>& sol) {
  Strategy s = Strategy::zero(tree, mk);
  for (int j = 1; j <= tree.asset_count(); ++j)
    for (NodeId n : tree.nonterminals()) {
      double v = sol[hp.holdings[j - 1][n]];
      if (mk.banned(j)) v = std::max(v, 0.0);
      s.holdings[j - 1][n] = v;
    }
  for (std::size_t i = 0; i < mk.instruments.size(); ++i) {
    if (hp.theta[i] != kNone) {
      double t = sol[hp.theta[i]];
      (t >= 0.0 ? s.theta_plus[i] : s.theta_minus[i]) = std::abs(t);
    }
    if (hp.theta_plus[i] != kNone) s.theta_plus[i] = std::max(sol[hp.theta_plus[i]], 0.0);
    if (hp.theta_minus[i] != kNone) s.theta_minus[i] = std::max(sol[hp.theta_minus[i]], 0.0);
  }
  return s;
}

/// Solves min m; handles the unbounded case by re-solving inside the box.
inline HedgeResult solve_hedge(const ScenarioTree& tree, const MarketSpec& mk, const AcceptanceSpec& acc,
                               std::span<const double> x, double m_lower, const HedgeOptions& opt,
                               HedgeProgram* keep = nullptr) {
  const bool smooth = !is_linear_instance(tree, mk, acc);
  HedgeProgram hp = build_hedge_program(tree, mk, acc, x, m_lower, smooth, opt.box);
  ConvexOptions co;
  // Cut violations add up across constraints; keep each well below the
  // value tolerance.
  co.tol = 0.01 * opt.tol;
  co.max_iters = opt.max_iters;
  SolveOutcome out = solve_convex(hp.cp, co);
  bool unbounded = false;
  if (out.status == SolveStatus::Unbounded && !smooth) {
    unbounded = true;
    hp = build_hedge_program(tree, mk, acc, x, m_lower, true, opt.box);
    out = solve_convex(hp.cp, co);
  }
  HedgeResult res;
  res.tol = opt.tol;
  res.iterations = out.iterations;
  res.bound = out.bound;
  res.best_feasible = out.best_feasible;
  res.bound_history = out.bound_history;
  res.status = out.status;
  if (out.status != SolveStatus::Optimal) {
    if (out.status == SolveStatus::IterLimit) res.price = out.bound;
    if (keep) *keep = std::move(hp);
    return res;
  }
  double m = out.x[hp.m];
  // Hitting the artificial lower bound on m also means the true program is unbounded.
  if (m <= -opt.box * (1.0 - 1e-9) && m_lower < -opt.box) unbounded = true;
  res.strategy = extract_strategy(tree, mk, hp, out.x);
  PathVector gn = gains(tree, mk, res.strategy);
  res.residual.resize(x.size());
  for (std::size_t w = 0; w < x.size(); ++w) res.residual[w] = m - x[w] + gn[w];
  if (unbounded) {
    res.status = SolveStatus::Unbounded;
    res.price = -kInf;
  } else {
    res.price = m;
  }
  if (keep) *keep = std::move(hp);
  return res;
}

}  // namespace detail

/// phi(X): least capital m such that m - X + gains is acceptable.
inline HedgeResult superhedge(const ScenarioTree& tree, const MarketSpec& mk, const AcceptanceSpec& acc,
                              std::span<const double> x, const HedgeOptions& opt = {}) {
  tree.check_path_vector(x, "payoff");
  check_supported(tree, mk, acc);
  return detail::solve_hedge(tree, mk, acc, x, -kInf, opt);
}

/// -phi(-X): greatest m such that X - m + gains is acceptable.
inline HedgeResult subhedge(const ScenarioTree& tree, const MarketSpec& mk, const AcceptanceSpec& acc,
                            std::span<const double> x, const HedgeOptions& opt = {}) {
  tree.check_path_vector(x, "payoff");
  PathVector neg(x.begin(), x.end());
  for (double& v : neg) v = -v;
  HedgeResult r = superhedge(tree, mk, acc, neg, opt);
  r.price = -r.price;
  r.bound = -r.bound;
  r.best_feasible = -r.best_feasible;
  for (double& b : r.bound_history) b = -b;
  return r;
}

struct PriceBounds {
  HedgeResult lower;
  HedgeResult upper;
};

/// (subhedge, superhedge). Throws SolverError if both are finite and the
/// lower bound exceeds the upper by more than 2 tol.
inline PriceBounds price_bounds(const ScenarioTree& tree, const MarketSpec& mk, const AcceptanceSpec& acc,
                                std::span<const double> x, const HedgeOptions& opt = {}) {
  PriceBounds b{subhedge(tree, mk, acc, x, opt), superhedge(tree, mk, acc, x, opt)};
  if (b.lower.ok() && b.upper.ok() && b.lower.price > b.upper.price + 2.0 * opt.tol)
    throw SolverError("price bounds out of order: lower " + std::to_string(b.lower.price) + " > upper " +
                      std::to_string(b.upper.price));
  return b;
}

}  // namespace rhedge
