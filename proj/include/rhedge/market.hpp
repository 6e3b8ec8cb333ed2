#pragma once

/// \file market.hpp
/// The attainable gain set: dynamic trading in the risky assets with
/// per-trade friction costs and optional short-sale bans, plus buy-and-hold
/// positions in static instruments quoted with bid/ask or a convex cost.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "rhedge/lattice.hpp"
#include "rhedge/lp.hpp"

namespace rhedge {

struct ZeroFriction {
  bool operator==(const ZeroFriction&) const = default;
};

/// g(x) = eps |x|
struct ProportionalFriction {
  double eps = 0.0;
  bool operator==(const ProportionalFriction&) const = default;
};

/// g(x) = (eps / p) |x|^p
struct PowerFriction {
  double eps = 1.0;
  double p = 2.0;
  bool operator==(const PowerFriction&) const = default;
};

/// Convex piecewise-linear g with g(0) = 0: slope slopes[0] left of
/// breakpoints[0], slopes[k] between breakpoints[k-1] and breakpoints[k],
/// slopes.back() right of the last breakpoint.
struct PiecewiseLinearFriction {
  std::vector<double> slopes;
  std::vector<double> breakpoints;
  bool operator==(const PiecewiseLinearFriction&) const = default;
};

using Friction = std::variant<ZeroFriction, ProportionalFriction, PowerFriction, PiecewiseLinearFriction>;

/// Max-of-affine form of a piecewise-linear convex function:
/// f(x) = max_k (slopes[k] x + intercepts[k]).
struct AffinePieces {
  std::vector<double> slopes;
  std::vector<double> intercepts;
  std::vector<double> breakpoints;
  std::vector<double> values_at_breakpoints;
};

namespace detail {

inline void check_piecewise(const std::vector<double>& slopes, const std::vector<double>& breaks, const char* what) {
  if (slopes.empty()) throw InputError(std::string(what) + ": needs at least one slope");
  if (breaks.size() + 1 != slopes.size())
    throw InputError(std::string(what) + ": need exactly one more slope than breakpoints");
  for (double s : slopes)
    if (!std::isfinite(s)) throw InputError(std::string(what) + ": non-finite slope");
  for (double b : breaks)
    if (!std::isfinite(b)) throw InputError(std::string(what) + ": non-finite breakpoint");
  for (std::size_t k = 1; k < slopes.size(); ++k)
    if (!(slopes[k] > slopes[k - 1])) throw InputError(std::string(what) + ": slopes must be strictly increasing (convexity)");
  for (std::size_t k = 1; k < breaks.size(); ++k)
    if (!(breaks[k] > breaks[k - 1])) throw InputError(std::string(what) + ": breakpoints must be strictly increasing");
}

/// Builds the affine pieces of the piecewise function through (0, value_at_zero).
inline AffinePieces make_pieces(const std::vector<double>& slopes, const std::vector<double>& breaks, double value_at_zero) {
  AffinePieces out;
  out.slopes = slopes;
  out.breakpoints = breaks;
  const std::size_t K = breaks.size();
  // Segment index containing 0: the k with breaks[k-1] <= 0 <= breaks[k].
  std::size_t seg = static_cast<std::size_t>(std::lower_bound(breaks.begin(), breaks.end(), 0.0) - breaks.begin());
  out.values_at_breakpoints.assign(K, 0.0);
  // Walk right from 0.
  double x = 0.0, v = value_at_zero;
  for (std::size_t k = seg; k < K; ++k) {
    v += slopes[k] * (breaks[k] - x);
    x = breaks[k];
    out.values_at_breakpoints[k] = v;
  }
  x = 0.0, v = value_at_zero;
  for (std::size_t k = seg; k-- > 0;) {
    v -= slopes[k + 1] * (x - breaks[k]);
    x = breaks[k];
    out.values_at_breakpoints[k] = v;
  }
  out.intercepts.resize(slopes.size());
  for (std::size_t k = 0; k < slopes.size(); ++k) {
    // Segment k touches breakpoint k-1 (left) or k (right); pick any.
    if (K == 0) out.intercepts[k] = value_at_zero;
    else if (k < K) out.intercepts[k] = out.values_at_breakpoints[k] - slopes[k] * breaks[k];
    else out.intercepts[k] = out.values_at_breakpoints[K - 1] - slopes[k] * breaks[K - 1];
  }
  return out;
}

/// Conjugate of a max-of-affine function: +inf outside [slopes.front(),
/// slopes.back()], otherwise the best breakpoint (or -f(0) when linear).
/// `slack` widens the domain to absorb round-off in callers' y.
inline double pieces_conjugate(const AffinePieces& pc, double y, double slack = 0.0) {
  if (y < pc.slopes.front() - slack || y > pc.slopes.back() + slack) return kInf;
  y = std::clamp(y, pc.slopes.front(), pc.slopes.back());
  if (pc.breakpoints.empty()) return -pc.intercepts[0];
  double best = -kInf;
  for (std::size_t k = 0; k < pc.breakpoints.size(); ++k)
    best = std::max(best, pc.breakpoints[k] * y - pc.values_at_breakpoints[k]);
  return best;
}

inline double pieces_value(const AffinePieces& pc, double x) {
  double best = -kInf;
  for (std::size_t k = 0; k < pc.slopes.size(); ++k) best = std::max(best, pc.slopes[k] * x + pc.intercepts[k]);
  return best;
}

}  // namespace detail

inline void validate_friction(const Friction& f) {
  std::visit(
      [](const auto& g) {
        using T = std::decay_t<decltype(g)>;
        if constexpr (std::is_same_v<T, ProportionalFriction>) {
          if (!(g.eps >= 0.0) || !std::isfinite(g.eps)) throw InputError("proportional friction: eps must be >= 0");
        } else if constexpr (std::is_same_v<T, PowerFriction>) {
          if (!(g.eps > 0.0) || !std::isfinite(g.eps)) throw InputError("power friction: eps must be > 0");
          if (!(g.p > 1.0) || !std::isfinite(g.p)) throw InputError("power friction: p must be > 1");
        } else if constexpr (std::is_same_v<T, PiecewiseLinearFriction>) {
          detail::check_piecewise(g.slopes, g.breakpoints, "piecewise friction");
        }
      },
      f);
}

/// Piecewise-linear view of a friction, or nullopt for Power.
inline std::optional<AffinePieces> friction_pieces(const Friction& f) {
  if (std::holds_alternative<ZeroFriction>(f)) return detail::make_pieces({0.0}, {}, 0.0);
  if (auto* p = std::get_if<ProportionalFriction>(&f)) {
    if (p->eps == 0.0) return detail::make_pieces({0.0}, {}, 0.0);
    return detail::make_pieces({-p->eps, p->eps}, {0.0}, 0.0);
  }
  if (auto* p = std::get_if<PiecewiseLinearFriction>(&f)) return detail::make_pieces(p->slopes, p->breakpoints, 0.0);
  return std::nullopt;
}

inline bool is_zero_friction(const Friction& f) {
  if (std::holds_alternative<ZeroFriction>(f)) return true;
  if (auto* p = std::get_if<ProportionalFriction>(&f)) return p->eps == 0.0;
  if (auto* p = std::get_if<PiecewiseLinearFriction>(&f)) return p->slopes.size() == 1 && p->slopes[0] == 0.0;
  return false;
}

/// Cost g(x) of trading nominal amount x.
inline double friction_cost(const Friction& f, double x) {
  if (auto* p = std::get_if<PowerFriction>(&f)) return p->eps / p->p * std::pow(std::abs(x), p->p);
  return detail::pieces_value(*friction_pieces(f), x);
}

/// g*(y) = sup_x (x y - g(x)).
inline double friction_conjugate(const Friction& f, double y) {
  if (auto* p = std::get_if<PowerFriction>(&f)) {
    double pc = p->p / (p->p - 1.0);
    return std::pow(p->eps, 1.0 - pc) / pc * std::pow(std::abs(y), pc);
  }
  return detail::pieces_conjugate(*friction_pieces(f), y);
}

/// Grid lower bound on g*(y): max over x in a uniform grid on [-radius, radius].
inline double conjugate_numeric_check(const Friction& f, double y, double radius, int steps) {
  if (steps < 2) throw InputError("conjugate grid needs at least 2 steps");
  double best = -kInf;
  for (int i = 0; i < steps; ++i) {
    double x = -radius + 2.0 * radius * i / (steps - 1);
    best = std::max(best, x * y - friction_cost(f, x));
  }
  return best;
}

/// Friction functions per (asset, time) with optional per-node overrides,
/// which is how state-dependent coefficients are expressed.
class FrictionTable {
 public:
  FrictionTable() = default;
  FrictionTable(int assets, int horizon)
      : assets_(assets), horizon_(horizon), table_(static_cast<std::size_t>(assets * horizon), ZeroFriction{}) {}

  int assets() const { return assets_; }
  int horizon() const { return horizon_; }

  void set(int asset, int time, Friction f) {
    check(asset, time);
    validate_friction(f);
    table_[index(asset, time)] = std::move(f);
  }
  void set_all(Friction f) {
    validate_friction(f);
    for (auto& e : table_) e = f;
  }
  void set_node(int asset, NodeId node, Friction f) {
    check(asset, 0);
    validate_friction(f);
    overrides_[{asset, node}] = std::move(f);
  }

  const Friction& at(int asset, const Node& node) const {
    check(asset, node.depth);
    auto it = overrides_.find({asset, node.id});
    if (it != overrides_.end()) return it->second;
    return table_[index(asset, node.depth)];
  }
  const Friction& at(int asset, int time) const {
    check(asset, time);
    return table_[index(asset, time)];
  }
  const std::map<std::pair<int, NodeId>, Friction>& overrides() const { return overrides_; }
  bool operator==(const FrictionTable&) const = default;

 private:
  int assets_ = 0;
  int horizon_ = 0;
  std::vector<Friction> table_;
  std::map<std::pair<int, NodeId>, Friction> overrides_;

  std::size_t index(int asset, int time) const { return static_cast<std::size_t>((asset - 1) * horizon_ + time); }
  void check(int asset, int time) const {
    if (asset < 1 || asset > assets_) throw InputError("friction: unknown asset " + std::to_string(asset));
    if (time < 0 || time >= horizon_) throw InputError("friction: time " + std::to_string(time) + " outside 0..T-1");
  }
};

/// h(theta) = price*theta + (delta/q)|theta|^q
struct SuperlinearCost {
  double price = 0.0;
  double delta = 1.0;
  double q = 2.0;
  bool operator==(const SuperlinearCost&) const = default;
};

struct StaticInstrument {
  std::string name;
  /// Discounted payoff per path.
  PathVector payoff;
  double bid = -kInf;
  double ask = kInf;
  std::optional<SuperlinearCost> superlinear;
  double min_position = -kInf;
  double max_position = kInf;

  /// Largest long position actually available (0 when there is no ask).
  double buy_capacity() const { return std::isfinite(ask) ? max_position : 0.0; }
  double sell_capacity() const { return std::isfinite(bid) ? -min_position : 0.0; }
  bool operator==(const StaticInstrument&) const = default;
};

struct MarketSpec {
  FrictionTable frictions;
  /// Indexed by asset - 1.
  std::vector<bool> short_sale_banned;
  std::vector<StaticInstrument> instruments;

  bool banned(int asset) const {
    return static_cast<std::size_t>(asset - 1) < short_sale_banned.size() && short_sale_banned[asset - 1];
  }
  bool operator==(const MarketSpec&) const = default;
};

/// Frictionless market on the tree with no bans and no instruments.
inline MarketSpec frictionless_market(const ScenarioTree& tree) {
  MarketSpec m;
  m.frictions = FrictionTable(tree.asset_count(), tree.horizon());
  m.short_sale_banned.assign(tree.asset_count(), false);
  return m;
}

inline void validate_market(const ScenarioTree& tree, const MarketSpec& m) {
  if (m.frictions.assets() != tree.asset_count() || m.frictions.horizon() != tree.horizon())
    throw InputError("friction table shape does not match the tree");
  if (m.short_sale_banned.size() > static_cast<std::size_t>(tree.asset_count()))
    throw InputError("short-sale flags for unknown assets");
  for (const auto& [key, f] : m.frictions.overrides()) {
    if (key.second >= tree.node_count()) throw InputError("friction override for unknown node " + std::to_string(key.second));
    if (tree.is_terminal(key.second)) throw InputError("friction override on terminal node " + std::to_string(key.second));
  }
  for (const auto& ins : m.instruments) {
    const std::string who = "instrument '" + ins.name + "'";
    tree.check_path_vector(ins.payoff, who.c_str());
    for (double v : ins.payoff)
      if (!std::isfinite(v)) throw InputError(who + ": non-finite payoff");
    if (std::isnan(ins.bid) || std::isnan(ins.ask) || ins.bid == kInf || ins.ask == -kInf)
      throw InputError(who + ": invalid bid/ask");
    if (ins.bid > ins.ask) throw InputError(who + ": bid exceeds ask");
    if (!(ins.min_position <= 0.0) || !(ins.max_position >= 0.0))
      throw InputError(who + ": position bounds must contain 0");
    if (ins.superlinear) {
      const auto& s = *ins.superlinear;
      if (!std::isfinite(s.price) || !(s.delta > 0.0) || !(s.q > 1.0) || !std::isfinite(s.delta) || !std::isfinite(s.q))
        throw InputError(who + ": superlinear cost needs finite price, delta > 0, q > 1");
      if (std::isfinite(ins.bid) || std::isfinite(ins.ask))
        throw InputError(who + ": give either bid/ask or a superlinear cost, not both");
      if (std::isfinite(ins.min_position) || std::isfinite(ins.max_position))
        throw InputError(who + ": position bounds are not supported with a superlinear cost");
    }
  }
  for (int j = 1; j <= tree.asset_count(); ++j) {
    if (!m.banned(j)) continue;
    for (NodeId n : tree.nonterminals())
      if (!is_zero_friction(m.frictions.at(j, tree.node(n))))
        throw InputError("asset " + std::to_string(j) + ": short-sale ban is only supported without frictions");
  }
}

/// Dynamic holdings per (asset, node) plus static positions split into
/// long and short parts.
struct Strategy {
  /// holdings[j-1][node id]; entries at terminal nodes are ignored.
  std::vector<std::vector<double>> holdings;
  std::vector<double> theta_plus;
  std::vector<double> theta_minus;

  static Strategy zero(const ScenarioTree& tree, const MarketSpec& m) {
    Strategy s;
    s.holdings.assign(tree.asset_count(), std::vector<double>(tree.node_count(), 0.0));
    s.theta_plus.assign(m.instruments.size(), 0.0);
    s.theta_minus.assign(m.instruments.size(), 0.0);
    return s;
  }
  double theta(std::size_t i) const { return theta_plus[i] - theta_minus[i]; }
};

/// Cost of one static position, expressed against its own payoff: the
/// cash paid at time 0 for holding theta = theta_plus - theta_minus.
inline double static_cost(const StaticInstrument& ins, double theta_plus, double theta_minus) {
  if (ins.superlinear) {
    double th = theta_plus - theta_minus;
    return ins.superlinear->price * th + ins.superlinear->delta / ins.superlinear->q * std::pow(std::abs(th), ins.superlinear->q);
  }
  double c = 0.0;
  if (theta_plus != 0.0) c += theta_plus * ins.ask;
  if (theta_minus != 0.0) c -= theta_minus * ins.bid;
  return c;
}

/// Discounted terminal outcome of a strategy on every path.
inline PathVector gains(const ScenarioTree& tree, const MarketSpec& m, const Strategy& s) {
  const int J = tree.asset_count();
  if (s.holdings.size() != static_cast<std::size_t>(J)) throw InputError("strategy: expected holdings for every asset");
  for (const auto& h : s.holdings)
    if (h.size() != tree.node_count()) throw InputError("strategy: expected one holding per node");
  if (s.theta_plus.size() != m.instruments.size() || s.theta_minus.size() != m.instruments.size())
    throw InputError("strategy: expected one static position per instrument");
  for (int j = 1; j <= J; ++j) {
    if (!m.banned(j)) continue;
    for (NodeId n : tree.nonterminals())
      if (s.holdings[j - 1][n] < 0.0) throw InputError("strategy: negative holding in short-sale banned asset " + std::to_string(j));
  }

  PathVector out(tree.path_count(), 0.0);
  for (std::size_t w = 0; w < out.size(); ++w) {
    double g = 0.0;
    for (int t = 0; t < tree.horizon(); ++t) {
      NodeId n = tree.node_on_path(w, t);
      NodeId next = tree.node_on_path(w, t + 1);
      const Node& node = tree.node(n);
      for (int j = 1; j <= J; ++j) {
        double hold = s.holdings[j - 1][n];
        double prev = node.parent ? s.holdings[j - 1][*node.parent] : 0.0;
        g += hold * (tree.discounted_price(j, next) - tree.discounted_price(j, n));
        double trade = hold - prev;
        if (trade != 0.0) g -= friction_cost(m.frictions.at(j, node), trade * node.prices[j]) / node.prices[0];
      }
    }
    out[w] = g;
  }
  for (std::size_t i = 0; i < m.instruments.size(); ++i) {
    const auto& ins = m.instruments[i];
    double tp = s.theta_plus[i], tm = s.theta_minus[i];
    if (tp < 0.0 || tm < 0.0) throw InputError("strategy: static long/short parts must be nonnegative");
    if (tp == 0.0 && tm == 0.0) continue;
    if (!ins.superlinear) {
      if (tp > 0.0 && !std::isfinite(ins.ask)) throw InputError("strategy: buying '" + ins.name + "' which has no ask");
      if (tm > 0.0 && !std::isfinite(ins.bid)) throw InputError("strategy: selling '" + ins.name + "' which has no bid");
    }
    double cost = static_cost(ins, tp, tm);
    for (std::size_t w = 0; w < out.size(); ++w) out[w] += (tp - tm) * ins.payoff[w] - cost;
  }
  return out;
}

}  // namespace rhedge
