#pragma once

/// \file acceptance.hpp
/// Acceptance sets: the nonnegative cone, or finitely many optimized
/// certainty equivalent constraints rho_Q(Y) <= 0 with
///   rho_Q(Y) = min_s ( E^Q l(s - Y) - s ).

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "rhedge/convex.hpp"
#include "rhedge/lattice.hpp"
#include "rhedge/market.hpp"

namespace rhedge {

/// l(x) = x^+ / lambda
struct AVaRLoss {
  double lambda = 1.0;
  bool operator==(const AVaRLoss&) const = default;
};

/// l(x) = exp(lambda x - 1) / lambda
struct EntropicLoss {
  double lambda = 1.0;
  bool operator==(const EntropicLoss&) const = default;
};

/// Increasing convex piecewise-linear loss through (0, value_at_zero).
struct PiecewiseLinearLoss {
  std::vector<double> slopes;
  std::vector<double> breakpoints;
  double value_at_zero = 0.0;
  bool operator==(const PiecewiseLinearLoss&) const = default;
};

using LossFunction = std::variant<AVaRLoss, EntropicLoss, PiecewiseLinearLoss>;

inline bool is_entropic(const LossFunction& l) { return std::holds_alternative<EntropicLoss>(l); }

/// Max-of-affine form of AVaR and piecewise losses.
inline AffinePieces loss_pieces(const LossFunction& l) {
  if (auto* a = std::get_if<AVaRLoss>(&l)) return detail::make_pieces({0.0, 1.0 / a->lambda}, {0.0}, 0.0);
  if (auto* p = std::get_if<PiecewiseLinearLoss>(&l)) return detail::make_pieces(p->slopes, p->breakpoints, p->value_at_zero);
  throw InputError("entropic loss has no piecewise form");
}

inline double loss_value(const LossFunction& l, double x) {
  if (auto* e = std::get_if<EntropicLoss>(&l)) return std::exp(e->lambda * x - 1.0) / e->lambda;
  return detail::pieces_value(loss_pieces(l), x);
}

/// l*(y) = sup_x (x y - l(x)).
inline double loss_conjugate(const LossFunction& l, double y) {
  if (auto* e = std::get_if<EntropicLoss>(&l)) {
    if (y < 0.0) return kInf;
    if (y == 0.0) return 0.0;
    return y * std::log(y) / e->lambda;
  }
  return detail::pieces_conjugate(loss_pieces(l), y);
}

inline void validate_loss(const LossFunction& l) {
  if (auto* a = std::get_if<AVaRLoss>(&l)) {
    if (!(a->lambda > 0.0 && a->lambda <= 1.0)) throw InputError("avar loss: lambda must lie in (0, 1]");
    return;
  }
  if (auto* e = std::get_if<EntropicLoss>(&l)) {
    if (!(e->lambda > 0.0) || !std::isfinite(e->lambda)) throw InputError("entropic loss: lambda must be > 0");
    return;
  }
  const auto& p = std::get<PiecewiseLinearLoss>(l);
  detail::check_piecewise(p.slopes, p.breakpoints, "piecewise loss");
  if (!std::isfinite(p.value_at_zero)) throw InputError("piecewise loss: non-finite value at zero");
  if (p.slopes.front() < 0.0) throw InputError("piecewise loss: must be nondecreasing");
  if (!(p.slopes.front() < 1.0 && p.slopes.back() > 1.0))
    throw InputError("piecewise loss: need first slope < 1 < last slope so that l(x) - x grows in both directions");
  double c = loss_conjugate(l, 1.0);
  if (std::abs(c) > 1e-12) throw InputError("piecewise loss: conjugate at 1 must vanish (got " + std::to_string(c) + ")");
}

namespace detail {

inline void check_measure(std::span<const double> q, std::size_t n, const char* what) {
  if (q.size() != n) throw InputError(std::string(what) + ": length mismatch");
  for (double x : q)
    if (!(x >= 0.0) || !std::isfinite(x)) throw InputError(std::string(what) + ": entries must be nonnegative");
  double s = std::accumulate(q.begin(), q.end(), 0.0);
  if (std::abs(s - 1.0) > 1e-9) throw InputError(std::string(what) + ": entries must sum to 1");
}

inline double oce_objective(const LossFunction& l, std::span<const double> q, std::span<const double> x, double s) {
  double v = -s;
  for (std::size_t w = 0; w < q.size(); ++w)
    if (q[w] > 0.0) v += q[w] * loss_value(l, s - x[w]);
  return v;
}

}  // namespace detail

/// rho_Q(X). AVaR by sorting (the minimizing s is a lambda-quantile),
/// entropic in closed form, piecewise losses by scanning the kinks.
inline double oce_risk(const LossFunction& l, std::span<const double> q, std::span<const double> x) {
  validate_loss(l);
  detail::check_measure(q, x.size(), "oce measure");
  if (auto* e = std::get_if<EntropicLoss>(&l)) {
    // (1/lambda) log E^Q exp(-lambda X), shifted for stability.
    double lo = kInf;
    for (std::size_t w = 0; w < q.size(); ++w)
      if (q[w] > 0.0) lo = std::min(lo, x[w]);
    double acc = 0.0;
    for (std::size_t w = 0; w < q.size(); ++w)
      if (q[w] > 0.0) acc += q[w] * std::exp(-e->lambda * (x[w] - lo));
    return -lo + std::log(acc) / e->lambda;
  }
  if (auto* a = std::get_if<AVaRLoss>(&l)) {
    // Maximize E^P[-X] over densities P/Q <= 1/lambda: fill worst outcomes first.
    std::vector<std::size_t> idx;
    for (std::size_t w = 0; w < q.size(); ++w)
      if (q[w] > 0.0) idx.push_back(w);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return x[i] < x[j]; });
    double left = 1.0, v = 0.0;
    for (std::size_t w : idx) {
      double take = std::min(left, q[w] / a->lambda);
      v -= take * x[w];
      left -= take;
      if (left <= 0.0) break;
    }
    return v;
  }
  // Piecewise: the objective is convex piecewise-linear in s with kinks at
  // X(w) + breakpoint; with no breakpoints it is linear with slope E l' - 1,
  // which validation forbids from being constant.
  const auto pc = loss_pieces(l);
  double best = kInf;
  for (std::size_t w = 0; w < q.size(); ++w) {
    if (q[w] <= 0.0) continue;
    for (double b : pc.breakpoints) best = std::min(best, detail::oce_objective(l, q, x, x[w] + b));
  }
  return best;
}

/// Lower bound E^P[-X] - E^Q l*(dP/dQ) on rho_Q(X).
inline double oce_dual_check(const LossFunction& l, std::span<const double> q, std::span<const double> x,
                             std::span<const double> p) {
  validate_loss(l);
  detail::check_measure(q, x.size(), "oce measure");
  detail::check_measure(p, x.size(), "candidate measure");
  double v = 0.0;
  for (std::size_t w = 0; w < q.size(); ++w) {
    if (q[w] == 0.0) {
      if (p[w] != 0.0) throw InputError("candidate measure is not absolutely continuous w.r.t. Q");
      continue;
    }
    // p / q is rounded: allow a few ulps past the edge of the domain.
    const double r = p[w] / q[w];
    const double c = is_entropic(l) ? loss_conjugate(l, r)
                                    : detail::pieces_conjugate(loss_pieces(l), r, 8 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(r)));
    v += -p[w] * x[w] - q[w] * c;
  }
  return v;
}

struct OceEntry {
  PathVector measure;
  LossFunction loss;
  bool operator==(const OceEntry&) const = default;
};

/// How a finite list of measures sharing one loss is read: as the set of
/// generators itself, or as its convex hull.
enum class QMode { Hull, Generators };

inline const char* to_string(QMode m) { return m == QMode::Hull ? "hull" : "generators"; }

struct AcceptanceSpec {
  enum class Kind { Strict, RobustOCE };
  Kind kind = Kind::Strict;
  std::vector<OceEntry> entries;
  QMode mode = QMode::Hull;

  static AcceptanceSpec strict() { return {}; }
  static AcceptanceSpec robust(std::vector<OceEntry> entries, QMode mode = QMode::Hull) {
    AcceptanceSpec a;
    a.kind = Kind::RobustOCE;
    a.entries = std::move(entries);
    a.mode = mode;
    return a;
  }
  bool is_strict() const { return kind == Kind::Strict; }
  bool has_entropic() const {
    return std::any_of(entries.begin(), entries.end(), [](const OceEntry& e) { return is_entropic(e.loss); });
  }
  bool operator==(const AcceptanceSpec&) const = default;
};

inline bool same_loss(const LossFunction& a, const LossFunction& b) {
  if (a.index() != b.index()) return false;
  if (auto* x = std::get_if<AVaRLoss>(&a)) return x->lambda == std::get<AVaRLoss>(b).lambda;
  if (auto* x = std::get_if<EntropicLoss>(&a)) return x->lambda == std::get<EntropicLoss>(b).lambda;
  const auto& p = std::get<PiecewiseLinearLoss>(a);
  const auto& q = std::get<PiecewiseLinearLoss>(b);
  return p.slopes == q.slopes && p.breakpoints == q.breakpoints && p.value_at_zero == q.value_at_zero;
}

/// Entries that share one risk constraint. In hull mode all entries with the
/// same loss form one group (the hull of their measures); in generator mode
/// every entry stands alone.
inline std::vector<std::vector<std::size_t>> acceptance_groups(const AcceptanceSpec& acc) {
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t k = 0; k < acc.entries.size(); ++k) {
    bool placed = false;
    if (acc.mode == QMode::Hull)
      for (auto& g : groups)
        if (same_loss(acc.entries[g.front()].loss, acc.entries[k].loss)) {
          g.push_back(k);
          placed = true;
          break;
        }
    if (!placed) groups.push_back({k});
  }
  return groups;
}

inline void validate_acceptance(const ScenarioTree& tree, const AcceptanceSpec& acc) {
  if (acc.is_strict()) return;
  if (acc.entries.empty()) throw InputError("robust OCE acceptance needs at least one entry");
  for (const auto& e : acc.entries) {
    validate_loss(e.loss);
    detail::check_measure(e.measure, tree.path_count(), "acceptance measure");
  }
}

/// Worst risk over one group: the max over generators, or over their hull.
/// For the hull this is min_s max_k (E^{Q_k} l(s - Y) - s) by the minimax
/// theorem, a convex piecewise function of s located by golden-section search.
inline double group_risk(const AcceptanceSpec& acc, const std::vector<std::size_t>& group, std::span<const double> y) {
  const LossFunction& l = acc.entries[group.front()].loss;
  if (group.size() == 1 || is_entropic(l)) {
    double worst = -kInf;
    for (std::size_t k : group) worst = std::max(worst, oce_risk(l, acc.entries[k].measure, y));
    return worst;
  }
  auto f = [&](double s) {
    double worst = -kInf;
    for (std::size_t k : group) worst = std::max(worst, detail::oce_objective(l, acc.entries[k].measure, y, s));
    return worst;
  };
  const auto pc = loss_pieces(l);
  double lo = *std::min_element(y.begin(), y.end()), hi = *std::max_element(y.begin(), y.end());
  double bmin = *std::min_element(pc.breakpoints.begin(), pc.breakpoints.end());
  double bmax = *std::max_element(pc.breakpoints.begin(), pc.breakpoints.end());
  double a = lo + bmin - 1.0, b = hi + bmax + 1.0;
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - phi * (b - a), d = a + phi * (b - a);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < 200; ++it) {
    if (fc < fd) {
      b = d, d = c, fd = fc;
      c = b - phi * (b - a), fc = f(c);
    } else {
      a = c, c = d, fc = fd;
      d = a + phi * (b - a), fd = f(d);
    }
  }
  double best = std::min(fc, fd);
  // The minimum sits at a kink; polish by checking every kink as well.
  for (std::size_t k : group)
    for (std::size_t w = 0; w < y.size(); ++w)
      if (acc.entries[k].measure[w] > 0.0)
        for (double bp : pc.breakpoints) best = std::min(best, f(y[w] + bp));
  return best;
}

/// max over all constraints of the risk of Y; <= 0 means acceptable.
/// For Strict this is -min Y.
inline double acceptance_risk(const AcceptanceSpec& acc, std::span<const double> y) {
  if (acc.is_strict()) return -*std::min_element(y.begin(), y.end());
  double worst = -kInf;
  for (const auto& g : acceptance_groups(acc)) worst = std::max(worst, group_risk(acc, g, y));
  return worst;
}

inline bool is_acceptable(const AcceptanceSpec& acc, std::span<const double> y, double tol) {
  return acceptance_risk(acc, y) <= tol;
}

/// Variables introduced by acceptance_epigraph.
struct AcceptanceBlock {
  /// One s per group (piecewise groups only; NaN index for entropic groups).
  std::vector<std::size_t> s_vars;
  std::vector<std::size_t> first_row;
  std::size_t row_count = 0;
};

namespace detail {

inline LinearCut exp_epigraph_cut(double lambda, double y0) {
  // t >= exp(-lambda y): tangent at y0 is t >= e0 (1 - lambda (y - y0)),
  // i.e. -lambda e0 y - t <= -e0 (1 + lambda y0). Clamp to avoid overflow.
  y0 = std::max(y0, -600.0 / lambda);
  double e0 = std::exp(-lambda * y0);
  return {{-lambda * e0, -1.0}, -e0 * (1.0 + lambda * y0)};
}

}  // namespace detail

/// Appends "Y is acceptable" to a program whose residual variables are
/// y_vars. Strict gives Y >= 0 rows. A piecewise group (AVaR included) gets
/// a shared s and u_w >= a_i (s - Y_w) + c_i, with sum_w Q_k(w) u_w - s <= 0
/// per member measure. An entropic group uses t_w >= exp(-lambda Y_w) with
/// sum_w Q_k(w) t_w <= 1, which is log E^{Q_k} exp(-lambda Y) <= 0.
inline AcceptanceBlock acceptance_epigraph(ConvexProgram& cp, const AcceptanceSpec& acc,
                                           std::span<const std::size_t> y_vars) {
  AcceptanceBlock blk;
  LinearProgram& lp = cp.lp;
  const std::size_t n = y_vars.size();
  if (acc.is_strict()) {
    for (std::size_t w = 0; w < n; ++w) {
      blk.first_row.push_back(lp.row_count());
      lp.add_row({{y_vars[w], 1.0}}, Relation::GreaterEqual, 0.0);
    }
    blk.row_count = n;
    return blk;
  }
  std::vector<std::pair<double, std::vector<std::size_t>>> exp_vars;  // lambda -> t vars
  for (const auto& g : acceptance_groups(acc)) {
    const LossFunction& l = acc.entries[g.front()].loss;
    if (auto* e = std::get_if<EntropicLoss>(&l)) {
      std::vector<std::size_t>* t = nullptr;
      for (auto& [lam, vars] : exp_vars)
        if (lam == e->lambda) t = &vars;
      if (!t) {
        std::vector<std::size_t> vars;
        for (std::size_t w = 0; w < n; ++w) {
          std::size_t tv = lp.add_variable(0.0, kInf, 0.0, "t");
          vars.push_back(tv);
          SmoothConstraint c;
          c.vars = {y_vars[w], tv};
          const double lam = e->lambda;
          c.value = [lam](std::span<const double> z) {
            double a = -lam * z[0];
            return (a > 700.0 ? kInf : std::exp(a)) - z[1];
          };
          c.cut = [lam](std::span<const double> z) { return detail::exp_epigraph_cut(lam, z[0]); };
          for (double s0 : {-4.0, -2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 4.0}) c.seeds.push_back({s0 / lam, 0.0});
          c.label = "exp";
          cp.smooth.push_back(std::move(c));
        }
        exp_vars.emplace_back(e->lambda, std::move(vars));
        t = &exp_vars.back().second;
      }
      blk.s_vars.push_back(static_cast<std::size_t>(-1));
      for (std::size_t k : g) {
        std::vector<Term> terms;
        for (std::size_t w = 0; w < n; ++w)
          if (acc.entries[k].measure[w] > 0.0) terms.push_back({(*t)[w], acc.entries[k].measure[w]});
        blk.first_row.push_back(lp.row_count());
        lp.add_row(std::move(terms), Relation::LessEqual, 1.0);
        ++blk.row_count;
      }
      continue;
    }
    const auto pc = loss_pieces(l);
    std::size_t s = lp.add_variable(-kInf, kInf, 0.0, "s");
    blk.s_vars.push_back(s);
    std::vector<std::size_t> u(n);
    for (std::size_t w = 0; w < n; ++w) {
      u[w] = lp.add_variable(-kInf, kInf, 0.0, "u");
      for (std::size_t i = 0; i < pc.slopes.size(); ++i) {
        // u - a s + a Y >= c
        std::vector<Term> terms{{u[w], 1.0}};
        if (pc.slopes[i] != 0.0) {
          terms.push_back({s, -pc.slopes[i]});
          terms.push_back({y_vars[w], pc.slopes[i]});
        }
        lp.add_row(std::move(terms), Relation::GreaterEqual, pc.intercepts[i]);
        ++blk.row_count;
      }
    }
    for (std::size_t k : g) {
      std::vector<Term> terms{{s, -1.0}};
      for (std::size_t w = 0; w < n; ++w)
        if (acc.entries[k].measure[w] > 0.0) terms.push_back({u[w], acc.entries[k].measure[w]});
      blk.first_row.push_back(lp.row_count());
      lp.add_row(std::move(terms), Relation::LessEqual, 0.0);
      ++blk.row_count;
    }
  }
  return blk;
}

}  // namespace rhedge
