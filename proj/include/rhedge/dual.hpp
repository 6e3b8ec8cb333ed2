#pragma once

/// \file dual.hpp
/// Dual side: maximize E^P X - penalty(P) over probability measures on the
/// paths, where the penalty is the conjugate of the gain set (frictions,
/// short-sale bans, instrument quotes) plus the acceptance penalty. Also the
/// no-arbitrage check and call-strip instruments.
///
/// Conditional expectations enter in multiplied-through form: for a node n
/// and asset j, W = sum_{w through n} P(w) (S~_T(w) - S~(n)), so band and
/// penalty rows stay linear in P.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rhedge/acceptance.hpp"
#include "rhedge/convex.hpp"
#include "rhedge/lattice.hpp"
#include "rhedge/market.hpp"
#include "rhedge/primal.hpp"

namespace rhedge {

/// Largest violations of the defining conditions of a dual measure.
struct MeasureResiduals {
  double simplex = 0.0;          // |sum P - 1| and negative entries
  double band = 0.0;             // friction domain rows (martingale rows when frictionless)
  double degenerate = 0.0;       // moment at zero-price nodes
  double supermartingale = 0.0;  // one-step rows for banned assets
  double instrument = 0.0;       // bid/ask rows with unlimited capacity
  double density = 0.0;          // acceptance density bounds

  double max() const { return std::max({simplex, band, degenerate, supermartingale, instrument, density}); }
};

struct GeneralizedMartingaleMeasure {
  PathVector probabilities;
  /// Weights on the acceptance measures (empty for Strict).
  std::vector<double> weights;
  /// Per acceptance group, the part of P attributed to it (sums to P).
  std::vector<PathVector> parts;
  /// Total penalty (market conjugate plus acceptance penalty).
  double penalty = 0.0;
  MeasureResiduals residuals;
};

struct DualResult {
  /// sup_P (E^P X - penalty(P)); -inf when no measure has finite penalty.
  double value = kNaN;
  SolveStatus status = SolveStatus::Infeasible;
  GeneralizedMartingaleMeasure measure;
  /// Set when the feasible set is empty, which signals arbitrage.
  bool arbitrage = false;
  std::size_t iterations = 0;
  double bound = kNaN;
  double best_feasible = kNaN;
  std::vector<double> bound_history;
  double tol = 0.0;

  bool ok() const { return status == SolveStatus::Optimal; }
};

namespace detail {

struct DualProgram {
  ConvexProgram cp;
  std::vector<std::size_t> p;
  std::vector<std::size_t> weights;
  std::vector<std::vector<std::size_t>> parts;
  std::vector<std::vector<std::size_t>> groups;
};

struct LinExpr {
  std::vector<Term> terms;
  void add(std::size_t v, double c) {
    if (c != 0.0) terms.push_back({v, c});
  }
};

/// v >= kappa * M * |W/M|^r over (M, W, v); jointly convex (perspective).
inline SmoothConstraint perspective_power(std::size_t mvar, std::size_t wvar, std::size_t vvar, double kappa, double r,
                                          std::string label) {
  SmoothConstraint sc;
  sc.vars = {mvar, wvar, vvar};
  sc.value = [kappa, r](std::span<const double> z) {
    double M = z[0], W = z[1];
    if (M <= 1e-300) return std::abs(W) <= 1e-15 ? -z[2] : kInf;
    return kappa * M * std::pow(std::abs(W / M), r) - z[2];
  };
  sc.cut = [kappa, r](std::span<const double> z) {
    double M = z[0], W = z[1];
    double ratio = M > 1e-12 ? W / M : (W > 0 ? 1e6 : W < 0 ? -1e6 : 0.0);
    ratio = std::clamp(ratio, -1e6, 1e6);
    double a = std::abs(ratio);
    double dM = kappa * (1.0 - r) * std::pow(a, r);
    double dW = kappa * r * std::pow(a, r - 1.0) * (ratio < 0 ? -1.0 : 1.0);
    return LinearCut{{dM, dW, -1.0}, 0.0};
  };
  for (double a : {0.0, 0.01, 0.1, 0.3, 1.0}) {
    sc.seeds.push_back({1.0, a, 0.0});
    sc.seeds.push_back({1.0, -a, 0.0});
  }
  sc.label = std::move(label);
  return sc;
}

/// v >= kappa |z|^r over (z, v).
inline SmoothConstraint abs_power(std::size_t zvar, std::size_t vvar, double kappa, double r, std::string label) {
  SmoothConstraint sc;
  sc.vars = {zvar, vvar};
  sc.value = [kappa, r](std::span<const double> z) { return kappa * std::pow(std::abs(z[0]), r) - z[1]; };
  sc.cut = [kappa, r](std::span<const double> z) { return power_cut(kappa, r, z[0]); };
  for (double a : {0.0, 0.01, 0.1, 1.0, 10.0}) {
    sc.seeds.push_back({a, 0.0});
    sc.seeds.push_back({-a, 0.0});
  }
  sc.label = std::move(label);
  return sc;
}

/// e >= R log(R/q) over (R, q, e).
inline SmoothConstraint relative_entropy(std::size_t rvar, std::size_t qvar, std::size_t evar) {
  SmoothConstraint sc;
  sc.vars = {rvar, qvar, evar};
  sc.value = [](std::span<const double> z) {
    double R = std::max(z[0], 0.0), q = z[1];
    if (R <= 1e-300) return -z[2];
    if (q <= 1e-300) return kInf;
    return R * std::log(R / q) - z[2];
  };
  sc.cut = [](std::span<const double> z) {
    double R = std::max(z[0], 0.0), q = z[1];
    double ratio = q > 1e-300 ? R / q : 1e12;
    ratio = std::clamp(ratio, 1e-12, 1e12);
    // The function is 1-homogeneous, so its tangent plane passes through 0.
    return LinearCut{{std::log(ratio) + 1.0, -ratio, -1.0}, 0.0};
  };
  for (double r : {0.02, 0.1, 0.3, 0.6, 1.0, 1.5, 3.0, 10.0, 50.0}) sc.seeds.push_back({r, 1.0, 0.0});
  sc.label = "relative entropy";
  return sc;
}

/// The dual program. With zero_penalty the objective is dropped, smooth
/// penalties are replaced by their zero sets and the linear penalty total is
/// forced to 0, leaving a feasibility LP whose solutions are the measures
/// with zero penalty.
inline DualProgram build_dual_program(const ScenarioTree& tree, const MarketSpec& mk, const AcceptanceSpec& acc,
                                      std::span<const double> x, bool zero_penalty) {
  DualProgram dp;
  dp.cp.lp = LinearProgram(Sense::Maximize);
  LinearProgram& lp = dp.cp.lp;
  const std::size_t n = tree.path_count();
  LinExpr penalty_total;  // linear penalty terms, objective -sum

  for (std::size_t w = 0; w < n; ++w) dp.p.push_back(lp.add_variable(0.0, kInf, zero_penalty ? 0.0 : x[w], "P"));
  auto add_penalty_var = [&](double lower, double weight, const char* name) {
    std::size_t v = lp.add_variable(lower, kInf, zero_penalty ? 0.0 : -weight, name);
    penalty_total.add(v, weight);
    return v;
  };

  if (acc.is_strict()) {
    std::vector<Term> row;
    for (std::size_t v : dp.p) row.push_back({v, 1.0});
    lp.add_row(std::move(row), Relation::Equal, 1.0);
  } else {
    dp.groups = acceptance_groups(acc);
    for (std::size_t k = 0; k < acc.entries.size(); ++k) dp.weights.push_back(lp.add_variable(0.0, kInf, 0.0, "v"));
    {
      std::vector<Term> row;
      for (std::size_t v : dp.weights) row.push_back({v, 1.0});
      lp.add_row(std::move(row), Relation::Equal, 1.0);
    }
    const bool single = dp.groups.size() == 1;
    for (const auto& g : dp.groups) {
      std::vector<std::size_t> r(n);
      for (std::size_t w = 0; w < n; ++w) r[w] = single ? dp.p[w] : lp.add_variable(0.0, kInf, 0.0, "R");
      dp.parts.push_back(r);
      // group mass equals its weights
      std::vector<Term> mass;
      for (std::size_t w = 0; w < n; ++w) mass.push_back({r[w], 1.0});
      for (std::size_t k : g) mass.push_back({dp.weights[k], -1.0});
      lp.add_row(std::move(mass), Relation::Equal, 0.0);

      const LossFunction& l = acc.entries[g.front()].loss;
      auto q_terms = [&](std::size_t w, double scale) {
        std::vector<Term> t;
        for (std::size_t k : g)
          if (acc.entries[k].measure[w] > 0.0) t.push_back({dp.weights[k], scale * acc.entries[k].measure[w]});
        return t;
      };
      if (auto* e = std::get_if<EntropicLoss>(&l)) {
        for (std::size_t w = 0; w < n; ++w) {
          // R(w) cannot exceed the weight of the measures charging w.
          std::vector<Term> cap{{r[w], 1.0}};
          for (std::size_t k : g)
            if (acc.entries[k].measure[w] > 0.0) cap.push_back({dp.weights[k], -1.0});
          lp.add_row(std::move(cap), Relation::LessEqual, 0.0);
          if (zero_penalty) {
            std::vector<Term> eq{{r[w], 1.0}};
            for (Term t : q_terms(w, -1.0)) eq.push_back(t);
            lp.add_row(std::move(eq), Relation::Equal, 0.0);
            continue;
          }
          std::size_t qv = lp.add_variable(0.0, kInf, 0.0, "q");
          std::vector<Term> def{{qv, 1.0}};
          for (Term t : q_terms(w, -1.0)) def.push_back(t);
          lp.add_row(std::move(def), Relation::Equal, 0.0);
          std::size_t ev = lp.add_variable(-kInf, kInf, -1.0 / e->lambda, "entropy");
          dp.cp.smooth.push_back(relative_entropy(r[w], qv, ev));
        }
        continue;
      }
      const AffinePieces pc = loss_pieces(l);
      const double a0 = pc.slopes.front(), aK = pc.slopes.back();
      std::vector<double> cand = pc.breakpoints, cval = pc.values_at_breakpoints;
      if (cand.empty()) cand = {0.0}, cval = {pc.intercepts[0]};
      bool trivial = true;
      for (std::size_t i = 0; i < cand.size(); ++i) trivial = trivial && cand[i] == 0.0 && cval[i] == 0.0;
      for (std::size_t w = 0; w < n; ++w) {
        // a0 q <= R <= aK q
        std::vector<Term> up{{r[w], 1.0}};
        for (Term t : q_terms(w, -aK)) up.push_back(t);
        lp.add_row(std::move(up), Relation::LessEqual, 0.0);
        if (a0 > 0.0) {
          std::vector<Term> dn{{r[w], 1.0}};
          for (Term t : q_terms(w, -a0)) dn.push_back(t);
          lp.add_row(std::move(dn), Relation::GreaterEqual, 0.0);
        }
        if (trivial) continue;
        // e >= b R - l(b) q for every breakpoint b
        std::size_t ev = add_penalty_var(-kInf, 1.0, "loss_penalty");
        for (std::size_t i = 0; i < cand.size(); ++i) {
          std::vector<Term> row{{ev, 1.0}};
          if (cand[i] != 0.0) row.push_back({r[w], -cand[i]});
          for (Term t : q_terms(w, cval[i])) row.push_back(t);
          lp.add_row(std::move(row), Relation::GreaterEqual, 0.0);
        }
      }
    }
    if (!single) {
      for (std::size_t w = 0; w < n; ++w) {
        std::vector<Term> row{{dp.p[w], 1.0}};
        for (const auto& r : dp.parts) row.push_back({r[w], -1.0});
        lp.add_row(std::move(row), Relation::Equal, 0.0);
      }
    }
  }

  // Dynamic trading.
  for (int j = 1; j <= tree.asset_count(); ++j) {
    const PathVector st = tree.terminal_discounted(j);
    for (NodeId nd : tree.nonterminals()) {
      const Node& node = tree.node(nd);
      auto [first, last] = tree.path_range(nd);
      const double s = tree.discounted_price(j, nd);
      const double s0 = node.prices[0];
      if (mk.banned(j)) {
        // one-step supermartingale row
        std::vector<Term> row;
        for (std::size_t w = first; w < last; ++w) {
          double d = tree.discounted_price(j, tree.node_on_path(w, node.depth + 1)) - s;
          if (d != 0.0) row.push_back({dp.p[w], d});
        }
        if (!row.empty()) lp.add_row(std::move(row), Relation::LessEqual, 0.0);
        continue;
      }
      if (s == 0.0) {
        // No mass may flow from a zero price to a positive terminal price.
        std::vector<Term> row;
        for (std::size_t w = first; w < last; ++w)
          if (st[w] != 0.0) row.push_back({dp.p[w], st[w]});
        if (!row.empty()) lp.add_row(std::move(row), Relation::LessEqual, 0.0);
        continue;
      }
      auto w_terms = [&](double scale) {
        std::vector<Term> t;
        for (std::size_t w = first; w < last; ++w)
          if (st[w] - s != 0.0) t.push_back({dp.p[w], scale * (st[w] - s)});
        return t;
      };
      auto mass_terms = [&](double scale) {
        std::vector<Term> t;
        for (std::size_t w = first; w < last; ++w) t.push_back({dp.p[w], scale});
        return t;
      };
      const Friction& f = mk.frictions.at(j, node);
      if (auto* pw = std::get_if<PowerFriction>(&f)) {
        if (zero_penalty) {
          auto row = w_terms(1.0);
          if (!row.empty()) lp.add_row(std::move(row), Relation::Equal, 0.0);
          continue;
        }
        const double r = pw->p / (pw->p - 1.0);
        const double kappa = std::pow(pw->eps, 1.0 - r) / (r * s0 * std::pow(s, r));
        std::size_t mv = lp.add_variable(0.0, kInf, 0.0, "mass");
        std::size_t wv = lp.add_variable(-kInf, kInf, 0.0, "drift");
        std::size_t vv = lp.add_variable(0.0, kInf, -1.0, "friction_penalty");
        auto mrow = mass_terms(-1.0);
        mrow.push_back({mv, 1.0});
        lp.add_row(std::move(mrow), Relation::Equal, 0.0);
        auto wrow = w_terms(-1.0);
        wrow.push_back({wv, 1.0});
        lp.add_row(std::move(wrow), Relation::Equal, 0.0);
        dp.cp.smooth.push_back(perspective_power(mv, wv, vv, kappa, r, "power friction penalty"));
        continue;
      }
      const AffinePieces pc = *friction_pieces(f);
      const double lo = pc.slopes.front(), hi = pc.slopes.back();
      // lo * mass * s <= W <= hi * mass * s
      auto upper = w_terms(1.0);
      for (Term t : mass_terms(-hi * s)) upper.push_back(t);
      if (lo == hi) {
        lp.add_row(std::move(upper), Relation::Equal, 0.0);
        continue;
      }
      lp.add_row(std::move(upper), Relation::LessEqual, 0.0);
      auto lower = w_terms(1.0);
      for (Term t : mass_terms(-lo * s)) lower.push_back(t);
      lp.add_row(std::move(lower), Relation::GreaterEqual, 0.0);
      bool trivial = true;
      for (double b : pc.breakpoints) trivial = trivial && b == 0.0;
      if (trivial) continue;
      // v >= (b W / s - g(b) mass) / S0 for each breakpoint; scaled by S0 s.
      std::size_t vv = add_penalty_var(-kInf, 1.0, "friction_penalty");
      for (std::size_t k = 0; k < pc.breakpoints.size(); ++k) {
        std::vector<Term> row{{vv, s0 * s}};
        for (Term t : w_terms(-pc.breakpoints[k])) row.push_back(t);
        for (Term t : mass_terms(pc.values_at_breakpoints[k] * s)) row.push_back(t);
        lp.add_row(std::move(row), Relation::GreaterEqual, 0.0);
      }
    }
  }

  // Static instruments.
  for (const auto& ins : mk.instruments) {
    std::vector<Term> eh;
    for (std::size_t w = 0; w < n; ++w)
      if (ins.payoff[w] != 0.0) eh.push_back({dp.p[w], ins.payoff[w]});
    if (ins.superlinear) {
      const auto& sl = *ins.superlinear;
      if (zero_penalty) {
        lp.add_row(eh, Relation::Equal, sl.price);
        continue;
      }
      const double r = sl.q / (sl.q - 1.0);
      const double kappa = std::pow(sl.delta, 1.0 - r) / r;
      std::size_t zv = lp.add_variable(-kInf, kInf, 0.0, "mispricing");
      std::size_t vv = lp.add_variable(0.0, kInf, -1.0, "static_penalty");
      auto row = eh;
      for (Term& t : row) t.coef = -t.coef;
      row.push_back({zv, 1.0});
      lp.add_row(std::move(row), Relation::Equal, -sl.price);
      dp.cp.smooth.push_back(abs_power(zv, vv, kappa, r, "superlinear static penalty"));
      continue;
    }
    const double buy = ins.buy_capacity(), sell = ins.sell_capacity();
    if (buy == kInf) {
      lp.add_row(eh, Relation::LessEqual, ins.ask);
    } else if (buy > 0.0) {
      // u >= E H - ask, paid buy times
      std::size_t u = add_penalty_var(0.0, buy, "ask_penalty");
      std::vector<Term> row{{u, 1.0}};
      for (Term t : eh) row.push_back({t.var, -t.coef});
      lp.add_row(std::move(row), Relation::GreaterEqual, -ins.ask);
    }
    if (sell == kInf) {
      lp.add_row(eh, Relation::GreaterEqual, ins.bid);
    } else if (sell > 0.0) {
      std::size_t u = add_penalty_var(0.0, sell, "bid_penalty");
      std::vector<Term> row{{u, 1.0}};
      for (Term t : eh) row.push_back(t);
      lp.add_row(std::move(row), Relation::GreaterEqual, ins.bid);
    }
  }

  if (zero_penalty && !penalty_total.terms.empty())
    lp.add_row(penalty_total.terms, Relation::LessEqual, 0.0);
  return dp;
}

}  // namespace detail

/// Market part of the penalty: sum over nodes and assets of
/// mass * g*(W / (mass S~)) / S0, plus the instrument conjugate; +inf when P
/// charges a path on which a zero price revives. `tol` absorbs round-off at
/// the edges of the friction bands.
inline double penalty_strict(const ScenarioTree& tree, const MarketSpec& mk, std::span<const double> p, double tol = 1e-9) {
  tree.check_path_vector(p, "measure");
  validate_market(tree, mk);
  double pen = 0.0;
  for (int j = 1; j <= tree.asset_count(); ++j) {
    const PathVector st = tree.terminal_discounted(j);
    for (NodeId nd : tree.nonterminals()) {
      const Node& node = tree.node(nd);
      const double s = tree.discounted_price(j, nd);
      const MassMoment mm = node_mass_moment(tree, p, st, nd);
      if (mk.banned(j)) {
        auto [first, last] = tree.path_range(nd);
        double drift = 0.0;
        for (std::size_t w = first; w < last; ++w)
          drift += p[w] * (tree.discounted_price(j, tree.node_on_path(w, node.depth + 1)) - s);
        if (drift > tol) return kInf;
        continue;
      }
      if (s == 0.0) {
        if (mm.moment > tol) return kInf;
        continue;
      }
      if (mm.mass <= 0.0) continue;  // 0 * g*(0/0) := 0
      const double y = (mm.moment - mm.mass * s) / (mm.mass * s);
      const Friction& f = mk.frictions.at(j, node);
      double c;
      if (auto pc = friction_pieces(f)) c = detail::pieces_conjugate(*pc, y, tol / (mm.mass * s));
      else c = friction_conjugate(f, y);
      if (c == kInf) return kInf;
      pen += mm.mass * c / node.prices[0];
    }
  }
  for (const auto& ins : mk.instruments) {
    const double eh = expectation(p, ins.payoff);
    if (ins.superlinear) {
      const auto& sl = *ins.superlinear;
      const double r = sl.q / (sl.q - 1.0);
      pen += std::pow(sl.delta, 1.0 - r) / r * std::pow(std::abs(eh - sl.price), r);
      continue;
    }
    const double buy = ins.buy_capacity(), sell = ins.sell_capacity();
    if (eh > ins.ask + tol) {
      if (buy == kInf) return kInf;
      pen += buy * (eh - ins.ask);
    }
    if (eh < ins.bid - tol) {
      if (sell == kInf) return kInf;
      pen += sell * (ins.bid - eh);
    }
  }
  return pen;
}

/// Acceptance penalty of a decomposition P = sum_g parts[g] with weights on
/// the acceptance measures: sum_g sum_w q_g(w) l*(R_g(w) / q_g(w)).
inline double acceptance_penalty(const AcceptanceSpec& acc, std::span<const double> weights,
                                 const std::vector<PathVector>& parts, double tol = 1e-9) {
  if (acc.is_strict()) return 0.0;
  const auto groups = acceptance_groups(acc);
  if (parts.size() != groups.size() || weights.size() != acc.entries.size())
    throw InputError("acceptance penalty: decomposition does not match the acceptance groups");
  double pen = 0.0;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const LossFunction& l = acc.entries[groups[gi].front()].loss;
    const PathVector& r = parts[gi];
    for (std::size_t w = 0; w < r.size(); ++w) {
      double q = 0.0;
      for (std::size_t k : groups[gi]) q += weights[k] * acc.entries[k].measure[w];
      double rw = std::max(r[w], 0.0);
      if (q <= 0.0) {
        if (rw > tol) return kInf;
        continue;
      }
      double c;
      if (is_entropic(l)) c = loss_conjugate(l, rw / q);
      else c = detail::pieces_conjugate(loss_pieces(l), rw / q, tol / q);
      if (c == kInf) return kInf;
      pen += q * c;
    }
  }
  return pen;
}

/// Re-checks the defining conditions of a dual measure from scratch.
inline MeasureResiduals measure_residuals(const ScenarioTree& tree, const MarketSpec& mk, const AcceptanceSpec& acc,
                                          const GeneralizedMartingaleMeasure& m) {
  MeasureResiduals r;
  const auto& p = m.probabilities;
  double sum = 0.0;
  for (double x : p) {
    sum += x;
    r.simplex = std::max(r.simplex, -x);
  }
  r.simplex = std::max(r.simplex, std::abs(sum - 1.0));
  for (int j = 1; j <= tree.asset_count(); ++j) {
    const PathVector st = tree.terminal_discounted(j);
    for (NodeId nd : tree.nonterminals()) {
      const Node& node = tree.node(nd);
      const double s = tree.discounted_price(j, nd);
      auto [first, last] = tree.path_range(nd);
      double mass = 0.0, moment = 0.0, drift = 0.0;
      for (std::size_t w = first; w < last; ++w) {
        mass += std::max(p[w], 0.0);
        moment += std::max(p[w], 0.0) * st[w];
        drift += std::max(p[w], 0.0) * (tree.discounted_price(j, tree.node_on_path(w, node.depth + 1)) - s);
      }
      if (mk.banned(j)) {
        r.supermartingale = std::max(r.supermartingale, drift);
        continue;
      }
      if (s == 0.0) {
        r.degenerate = std::max(r.degenerate, moment);
        continue;
      }
      const Friction& f = mk.frictions.at(j, node);
      if (auto pc = friction_pieces(f)) {
        double W = moment - mass * s;
        r.band = std::max({r.band, W - pc->slopes.back() * mass * s, pc->slopes.front() * mass * s - W});
      }
    }
  }
  for (const auto& ins : mk.instruments) {
    if (ins.superlinear) continue;
    double eh = expectation(p, ins.payoff);
    if (ins.buy_capacity() == kInf) r.instrument = std::max(r.instrument, eh - ins.ask);
    if (ins.sell_capacity() == kInf) r.instrument = std::max(r.instrument, ins.bid - eh);
  }
  if (!acc.is_strict()) {
    const auto groups = acceptance_groups(acc);
    double wsum = 0.0;
    for (double v : m.weights) {
      wsum += v;
      r.density = std::max(r.density, -v);
    }
    r.density = std::max(r.density, std::abs(wsum - 1.0));
    for (std::size_t w = 0; w < p.size(); ++w) {
      double total = 0.0;
      for (const auto& part : m.parts) total += part[w];
      r.simplex = std::max(r.simplex, std::abs(total - p[w]));
    }
    for (std::size_t gi = 0; gi < groups.size() && gi < m.parts.size(); ++gi) {
      const LossFunction& l = acc.entries[groups[gi].front()].loss;
      double gmass = 0.0, gweight = 0.0;
      for (double x : m.parts[gi]) gmass += x;
      for (std::size_t k : groups[gi]) gweight += m.weights[k];
      r.density = std::max(r.density, std::abs(gmass - gweight));
      for (std::size_t w = 0; w < p.size(); ++w) {
        double q = 0.0;
        bool charged = false;
        for (std::size_t k : groups[gi]) {
          q += m.weights[k] * acc.entries[k].measure[w];
          charged = charged || acc.entries[k].measure[w] > 0.0;
        }
        double rw = m.parts[gi][w];
        r.density = std::max(r.density, -rw);
        if (is_entropic(l)) {
          if (q <= 0.0) r.density = std::max(r.density, rw);
          continue;
        }
        const AffinePieces pc = loss_pieces(l);
        r.density = std::max({r.density, rw - pc.slopes.back() * q, pc.slopes.front() * q - rw});
      }
    }
  }
  return r;
}

namespace detail {

inline GeneralizedMartingaleMeasure extract_measure(const DualProgram& dp, const std::vector<double>& sol) {
  GeneralizedMartingaleMeasure m;
  for (std::size_t v : dp.p) m.probabilities.push_back(std::max(sol[v], 0.0));
  for (std::size_t v : dp.weights) m.weights.push_back(std::max(sol[v], 0.0));
  for (const auto& part : dp.parts) {
    PathVector r;
    for (std::size_t v : part) r.push_back(std::max(sol[v], 0.0));
    m.parts.push_back(std::move(r));
  }
  return m;
}

}  // namespace detail

/// Total penalty of a measure returned by the dual programs.
inline double total_penalty(const ScenarioTree& tree, const MarketSpec& mk, const AcceptanceSpec& acc,
                            const GeneralizedMartingaleMeasure& m, double tol = 1e-9) {
  return penalty_strict(tree, mk, m.probabilities, tol) + acceptance_penalty(acc, m.weights, m.parts, tol);
}

struct DualOptions {
  double tol = 1e-7;
  std::size_t max_iters = 2000;
};

/// max_P (E^P X - penalty(P)).
inline DualResult dual_superhedge(const ScenarioTree& tree, const MarketSpec& mk, const AcceptanceSpec& acc,
                                  std::span<const double> x, const DualOptions& opt = {}) {
  tree.check_path_vector(x, "payoff");
  check_supported(tree, mk, acc);
  detail::DualProgram dp = detail::build_dual_program(tree, mk, acc, x, false);
  ConvexOptions co;
  // Cut violations add up across constraints; keep each well below the
  // value tolerance.
  co.tol = 0.01 * opt.tol;
  co.max_iters = opt.max_iters;
  SolveOutcome out = solve_convex(dp.cp, co);
  DualResult res;
  res.tol = opt.tol;
  res.status = out.status;
  res.iterations = out.iterations;
  res.bound = out.bound;
  res.best_feasible = out.best_feasible;
  res.bound_history = out.bound_history;
  if (out.status == SolveStatus::Infeasible) {
    res.value = -kInf;
    res.arbitrage = true;
    return res;
  }
  if (out.status == SolveStatus::Unbounded) {
    // Cannot happen for valid data (P lives in the simplex); report as is.
    res.value = kInf;
    return res;
  }
  if (out.status == SolveStatus::IterLimit) {
    res.value = out.bound;
    return res;
  }
  res.value = out.value;
  res.measure = detail::extract_measure(dp, out.x);
  res.measure.penalty = expectation(res.measure.probabilities, x) - out.value;
  res.measure.residuals = measure_residuals(tree, mk, acc, res.measure);
  return res;
}

/// min_P (E^P X + penalty(P)) = -dual_superhedge(-X).
inline DualResult dual_subhedge(const ScenarioTree& tree, const MarketSpec& mk, const AcceptanceSpec& acc,
                                std::span<const double> x, const DualOptions& opt = {}) {
  PathVector neg(x.begin(), x.end());
  for (double& v : neg) v = -v;
  DualResult r = dual_superhedge(tree, mk, acc, neg, opt);
  r.value = -r.value;
  r.bound = -r.bound;
  r.best_feasible = -r.best_feasible;
  for (double& b : r.bound_history) b = -b;
  return r;
}

/// A measure with zero penalty, if one exists (the generalized martingale
/// measures of the instance).
inline std::optional<GeneralizedMartingaleMeasure> zero_penalty_measure(const ScenarioTree& tree, const MarketSpec& mk,
                                                                        const AcceptanceSpec& acc, double tol = 1e-9) {
  check_supported(tree, mk, acc);
  PathVector zero(tree.path_count(), 0.0);
  detail::DualProgram dp = detail::build_dual_program(tree, mk, acc, zero, true);
  SolveOutcome out = solve_lp(dp.cp.lp, tol);
  if (out.status != SolveStatus::Optimal) return std::nullopt;
  GeneralizedMartingaleMeasure m = detail::extract_measure(dp, out.x);
  m.residuals = measure_residuals(tree, mk, acc, m);
  m.penalty = 0.0;
  return m;
}

struct FtapVerdict {
  bool arbitrage = false;
  /// Which equivalent condition the certificate establishes.
  std::string condition;
  /// Arbitrage: a strategy whose gains minus `margin` are acceptable.
  std::optional<Strategy> strategy;
  PathVector outcome;
  double margin = 0.0;
  /// No arbitrage: a measure with zero penalty.
  std::optional<GeneralizedMartingaleMeasure> measure;
  SolveStatus status = SolveStatus::Optimal;
};

/// Decides whether some gain minus an acceptable position is bounded below
/// by a positive constant. Solves  min m  s.t.  m + gains acceptable, m >= -1
/// (so -m is the largest such constant, capped at 1): arbitrage iff m < -tol.
/// The no-arbitrage certificate comes from the row multipliers of that
/// program when it is an LP with a single acceptance group, otherwise from
/// the zero-penalty feasibility program.
inline FtapVerdict ftap_check(const ScenarioTree& tree, const MarketSpec& mk, const AcceptanceSpec& acc, double tol = 1e-7) {
  check_supported(tree, mk, acc);
  FtapVerdict v;
  PathVector zero(tree.path_count(), 0.0);
  HedgeOptions ho;
  ho.tol = tol;
  detail::HedgeProgram hp;
  HedgeResult h = detail::solve_hedge(tree, mk, acc, zero, -1.0, ho, &hp);
  v.status = h.status;
  if (h.status != SolveStatus::Optimal) throw SolverError(std::string("arbitrage program: ") + to_string(h.status));
  if (h.price < -tol) {
    v.arbitrage = true;
    v.condition = "arbitrage strategy: gains minus an acceptable position exceed a positive constant";
    v.strategy = h.strategy;
    v.outcome = gains(tree, mk, h.strategy);
    v.margin = -h.price;
    return v;
  }
  v.condition = "generalized martingale measure with zero penalty";
  const bool linear = is_linear_instance(tree, mk, acc);
  const auto groups = acc.is_strict() ? std::vector<std::vector<std::size_t>>{} : acceptance_groups(acc);
  if (linear && groups.size() <= 1) {
    // Re-solve to read multipliers (solve_hedge keeps the program, not the duals).
    SolveOutcome out = solve_lp(hp.cp.lp, 1e-9);
    if (out.status == SolveStatus::Optimal) {
      GeneralizedMartingaleMeasure m;
      double s = 0.0;
      for (std::size_t row : hp.y_rows) s += std::max(-out.row_duals[row], 0.0);
      if (s > 0.0) {
        for (std::size_t row : hp.y_rows) m.probabilities.push_back(std::max(-out.row_duals[row], 0.0) / s);
        if (!acc.is_strict()) {
          double ws = 0.0;
          for (std::size_t k = 0; k < acc.entries.size(); ++k) {
            double d = std::max(-out.row_duals[hp.acceptance.first_row[k]], 0.0);
            m.weights.push_back(d);
            ws += d;
          }
          for (double& d : m.weights) d = ws > 0.0 ? d / ws : 1.0 / static_cast<double>(m.weights.size());
          m.parts = {m.probabilities};
        }
        m.residuals = measure_residuals(tree, mk, acc, m);
        if (m.residuals.max() <= std::max(tol, 1e-7) && total_penalty(tree, mk, acc, m, tol) <= tol) {
          v.measure = std::move(m);
          return v;
        }
      }
    }
  }
  v.measure = zero_penalty_measure(tree, mk, acc);
  if (!v.measure)
    throw SolverError("inconsistent no-arbitrage verdict: no zero-penalty measure although no arbitrage was found");
  return v;
}

/// One quote in a call strip.
struct CallQuote {
  double strike = 0.0;
  double bid = -kInf;
  double ask = kInf;
};

/// Static instruments paying (S~^j_t - K)^+ with the quoted bid/ask; with
/// bid = ask at every tree value they pin the time-t marginal of asset j.
inline std::vector<StaticInstrument> marginal_constraints_from_calls(const ScenarioTree& tree, int asset, int time,
                                                                     const std::vector<CallQuote>& quotes) {
  if (asset < 1 || asset > tree.asset_count()) throw InputError("call strip: unknown asset " + std::to_string(asset));
  if (time < 0 || time > tree.horizon()) throw InputError("call strip: time outside 0..T");
  std::vector<StaticInstrument> out;
  const PathVector s = tree.discounted_at(static_cast<std::size_t>(asset), time);
  for (const auto& q : quotes) {
    if (!std::isfinite(q.strike)) throw InputError("call strip: non-finite strike");
    if (q.bid > q.ask) throw InputError("call strip: bid exceeds ask at strike " + std::to_string(q.strike));
    StaticInstrument ins;
    ins.name = "call(" + std::to_string(asset) + "," + std::to_string(q.strike) + "," + std::to_string(time) + ")";
    ins.payoff.resize(s.size());
    for (std::size_t w = 0; w < s.size(); ++w) ins.payoff[w] = std::max(s[w] - q.strike, 0.0);
    ins.bid = q.bid;
    ins.ask = q.ask;
    out.push_back(std::move(ins));
  }
  return out;
}

}  // namespace rhedge
