#pragma once

/// \file oracle.hpp
/// Brute-force verifiers for tiny instances. Nothing here reuses the program
/// builders of primal.hpp / dual.hpp: the dual polytope is assembled afresh
/// and its vertices enumerated by the double description method, gains are
/// evaluated by an independent loop, and conjugates come straight from
/// breakpoint suprema of the cost functions.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rhedge/acceptance.hpp"
#include "rhedge/lattice.hpp"
#include "rhedge/market.hpp"

namespace rhedge {

enum class OracleMethod { VertexEnum, StrategyGrid, MeasureSample, ClosedForm };

inline const char* to_string(OracleMethod m) {
  switch (m) {
    case OracleMethod::VertexEnum: return "vertex-enumeration";
    case OracleMethod::StrategyGrid: return "strategy-grid";
    case OracleMethod::MeasureSample: return "measure-sample";
    case OracleMethod::ClosedForm: return "closed-form";
  }
  return "?";
}

struct OracleReport {
  double value = kNaN;
  OracleMethod method = OracleMethod::VertexEnum;
  /// Vertices, grid points or samples examined.
  std::size_t count = 0;
  /// |value - engine value| when an engine value was supplied.
  double max_deviation = kNaN;
  bool infeasible = false;
  /// Best point found: a measure for VertexEnum / MeasureSample.
  PathVector argmax;
};

namespace oracle_detail {

using Matrix = std::vector<std::vector<double>>;

/// Polyhedron {z : eq z = beq, in z <= bin}.
struct Polyhedron {
  std::size_t dim = 0;
  Matrix eq, in;
  std::vector<double> beq, bin;

  void add_eq(std::vector<double> a, double b) { eq.push_back(std::move(a)), beq.push_back(b); }
  void add_le(std::vector<double> a, double b) { in.push_back(std::move(a)), bin.push_back(b); }
  void add_ge(std::vector<double> a, double b) {
    for (double& x : a) x = -x;
    add_le(std::move(a), -b);
  }
};

class Bits {
 public:
  explicit Bits(std::size_t n = 0) : w_((n + 63) / 64, 0) {}
  void set(std::size_t i) { w_[i / 64] |= std::uint64_t{1} << (i % 64); }
  std::size_t count() const {
    std::size_t c = 0;
    for (auto x : w_) c += static_cast<std::size_t>(std::popcount(x));
    return c;
  }
  Bits operator&(const Bits& o) const {
    Bits r;
    r.w_.resize(w_.size());
    for (std::size_t i = 0; i < w_.size(); ++i) r.w_[i] = w_[i] & o.w_[i];
    return r;
  }
  bool subset_of(const Bits& o) const {
    for (std::size_t i = 0; i < w_.size(); ++i)
      if (w_[i] & ~o.w_[i]) return false;
    return true;
  }

 private:
  std::vector<std::uint64_t> w_;
};

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm_inf(const std::vector<double>& a) {
  double s = 0.0;
  for (double x : a) s = std::max(s, std::abs(x));
  return s;
}

/// Reduced row echelon form; returns pivot columns, or nullopt if the
/// system is inconsistent.
struct AffineParam {
  std::vector<double> z0;
  Matrix basis;  // columns of the nullspace, stored as vectors
};

inline std::optional<AffineParam> solve_equalities(const Polyhedron& P) {
  const std::size_t n = P.dim;
  Matrix a = P.eq;
  std::vector<double> b = P.beq;
  const std::size_t m = a.size();
  std::vector<std::size_t> pivots;
  std::size_t row = 0;
  for (std::size_t col = 0; col < n && row < m; ++col) {
    std::size_t best = row;
    for (std::size_t i = row; i < m; ++i)
      if (std::abs(a[i][col]) > std::abs(a[best][col])) best = i;
    if (std::abs(a[best][col]) < 1e-10) continue;
    std::swap(a[best], a[row]);
    std::swap(b[best], b[row]);
    double piv = a[row][col];
    for (double& x : a[row]) x /= piv;
    b[row] /= piv;
    for (std::size_t i = 0; i < m; ++i) {
      if (i == row || a[i][col] == 0.0) continue;
      double f = a[i][col];
      for (std::size_t j = 0; j < n; ++j) a[i][j] -= f * a[row][j];
      b[i] -= f * b[row];
    }
    pivots.push_back(col);
    ++row;
  }
  for (std::size_t i = row; i < m; ++i)
    if (std::abs(b[i]) > 1e-9) return std::nullopt;
  AffineParam ap;
  ap.z0.assign(n, 0.0);
  for (std::size_t r = 0; r < pivots.size(); ++r) ap.z0[pivots[r]] = b[r];
  std::vector<bool> is_pivot(n, false);
  for (std::size_t c : pivots) is_pivot[c] = true;
  for (std::size_t f = 0; f < n; ++f) {
    if (is_pivot[f]) continue;
    std::vector<double> v(n, 0.0);
    v[f] = 1.0;
    for (std::size_t r = 0; r < pivots.size(); ++r) v[pivots[r]] = -a[r][f];
    ap.basis.push_back(std::move(v));
  }
  return ap;
}

struct Ray {
  std::vector<double> v;
  Bits zeros;
};

/// Extreme rays of {x : A x <= 0} by the double description method, with
/// lineality eliminated first. Returns nullopt if the ray count blows past
/// `limit`.
inline std::optional<std::vector<Ray>> extreme_rays(const Matrix& A, std::size_t dim, std::size_t limit,
                                                    std::vector<std::vector<double>>* lineality_out = nullptr) {
  const std::size_t m = A.size();
  Matrix lin;
  for (std::size_t i = 0; i < dim; ++i) {
    std::vector<double> e(dim, 0.0);
    e[i] = 1.0;
    lin.push_back(std::move(e));
  }
  std::vector<Ray> rays;
  for (std::size_t c = 0; c < m; ++c) {
    const auto& a = A[c];
    const double an = std::max(norm_inf(a), 1e-300);
    auto eps_for = [&](const std::vector<double>& r) { return 1e-9 * an * std::max(norm_inf(r), 1e-300); };
    // Lineality step.
    std::size_t pick = lin.size();
    double best = 0.0;
    for (std::size_t i = 0; i < lin.size(); ++i) {
      double d = std::abs(dot(a, lin[i]));
      if (d > eps_for(lin[i]) && d > best) best = d, pick = i;
    }
    if (pick < lin.size()) {
      std::vector<double> l0 = lin[pick];
      double al0 = dot(a, l0);
      for (std::size_t i = 0; i < lin.size(); ++i) {
        if (i == pick) continue;
        double f = dot(a, lin[i]) / al0;
        for (std::size_t k = 0; k < dim; ++k) lin[i][k] -= f * l0[k];
      }
      for (auto& r : rays) {
        double f = dot(a, r.v) / al0;
        for (std::size_t k = 0; k < dim; ++k) r.v[k] -= f * l0[k];
        r.zeros.set(c);
      }
      lin.erase(lin.begin() + static_cast<std::ptrdiff_t>(pick));
      // l0 lay in every earlier hyperplane.
      Ray nr{l0, Bits(m)};
      for (std::size_t k = 0; k < c; ++k) nr.zeros.set(k);
      if (al0 > 0) for (double& x : nr.v) x = -x;
      rays.push_back(std::move(nr));
      continue;
    }
    // Standard step.
    std::vector<std::size_t> pos, neg, zero;
    std::vector<double> val(rays.size());
    for (std::size_t i = 0; i < rays.size(); ++i) {
      val[i] = dot(a, rays[i].v);
      if (val[i] > eps_for(rays[i].v)) pos.push_back(i);
      else if (val[i] < -eps_for(rays[i].v)) neg.push_back(i);
      else zero.push_back(i);
    }
    if (pos.empty()) {
      for (std::size_t i : zero) rays[i].zeros.set(c);
      continue;
    }
    const std::size_t cone_dim = dim - lin.size();
    std::vector<Ray> next;
    for (std::size_t i : neg) next.push_back(rays[i]);
    for (std::size_t i : zero) {
      next.push_back(rays[i]);
      next.back().zeros.set(c);
    }
    for (std::size_t ip : pos)
      for (std::size_t in : neg) {
        Bits common = rays[ip].zeros & rays[in].zeros;
        if (cone_dim >= 2 && common.count() + 2 < cone_dim) continue;
        bool adjacent = true;
        for (std::size_t k = 0; k < rays.size() && adjacent; ++k) {
          if (k == ip || k == in) continue;
          if (common.subset_of(rays[k].zeros)) adjacent = false;
        }
        if (!adjacent) continue;
        Ray nr{std::vector<double>(dim), common};
        for (std::size_t k = 0; k < dim; ++k) nr.v[k] = val[ip] * rays[in].v[k] - val[in] * rays[ip].v[k];
        double s = norm_inf(nr.v);
        if (s <= 0.0) continue;
        for (double& x : nr.v) x /= s;
        nr.zeros.set(c);
        next.push_back(std::move(nr));
        if (next.size() > limit) return std::nullopt;
      }
    rays = std::move(next);
  }
  if (lineality_out) *lineality_out = lin;
  return rays;
}

struct VertexResult {
  bool feasible = false;
  bool unbounded = false;
  double best = -kInf;
  std::vector<double> argmax;
  std::vector<std::vector<double>> vertices;
};

/// Maximizes c.z over the polyhedron by enumerating its vertices.
inline VertexResult maximize_over_vertices(const Polyhedron& P, const std::vector<double>& c, std::size_t limit = 200000) {
  VertexResult res;
  auto ap = solve_equalities(P);
  if (!ap) return res;
  const std::size_t r = ap->basis.size();
  // Homogenized cone in (t, sigma): sigma >= 0 and (A N) t - (b - A z0) sigma <= 0.
  Matrix cone;
  {
    std::vector<double> s(r + 1, 0.0);
    s[r] = -1.0;
    cone.push_back(std::move(s));
  }
  for (std::size_t i = 0; i < P.in.size(); ++i) {
    std::vector<double> row(r + 1, 0.0);
    for (std::size_t k = 0; k < r; ++k) row[k] = dot(P.in[i], ap->basis[k]);
    row[r] = -(P.bin[i] - dot(P.in[i], ap->z0));
    cone.push_back(std::move(row));
  }
  std::vector<std::vector<double>> lin;
  auto rays = extreme_rays(cone, r + 1, limit, &lin);
  if (!rays) throw SolverError("vertex enumeration exceeded its size limit");
  auto lift = [&](const std::vector<double>& t, double scale, bool affine) {
    std::vector<double> z(P.dim, 0.0);
    if (affine) z = ap->z0;
    for (std::size_t k = 0; k < r; ++k)
      for (std::size_t d = 0; d < P.dim; ++d) z[d] += t[k] * scale * ap->basis[k][d];
    return z;
  };
  for (const auto& l : lin) {
    auto dir = lift(l, 1.0, false);
    if (std::abs(dot(c, dir)) > 1e-9 * norm_inf(dir)) res.unbounded = true;
  }
  for (const auto& ray : *rays) {
    double sigma = ray.v[r];
    if (sigma > 1e-12 * norm_inf(ray.v)) {
      auto z = lift(ray.v, 1.0 / sigma, true);
      res.feasible = true;
      double val = dot(c, z);
      if (val > res.best) res.best = val, res.argmax = z;
      res.vertices.push_back(std::move(z));
    } else {
      auto dir = lift(ray.v, 1.0, false);
      if (dot(c, dir) > 1e-9 * std::max(norm_inf(dir), 1.0)) res.unbounded = true;
    }
  }
  // A feasible point only exists if some vertex does (the cone is pointed).
  if (!res.feasible) res.unbounded = false;
  return res;
}

/// Piecewise data of a friction, read directly from its parameters.
struct Band {
  double lo = 0.0, hi = 0.0;
  std::vector<double> kinks;  // nonzero breakpoints
};

inline std::optional<Band> friction_band(const Friction& f) {
  if (std::holds_alternative<ZeroFriction>(f)) return Band{};
  if (auto* p = std::get_if<ProportionalFriction>(&f)) return Band{-p->eps, p->eps, {}};
  if (auto* p = std::get_if<PiecewiseLinearFriction>(&f)) {
    Band b{p->slopes.front(), p->slopes.back(), {}};
    for (double k : p->breakpoints)
      if (k != 0.0) b.kinks.push_back(k);
    return b;
  }
  return std::nullopt;
}

/// AVaR data shared by every acceptance entry, if the oracle can handle it.
struct AvarView {
  double lambda = 1.0;
  std::vector<const PathVector*> measures;
};

inline std::optional<AvarView> avar_view(const AcceptanceSpec& acc) {
  if (acc.is_strict()) return std::nullopt;
  AvarView v;
  for (std::size_t k = 0; k < acc.entries.size(); ++k) {
    const auto* a = std::get_if<AVaRLoss>(&acc.entries[k].loss);
    if (!a) throw InputError("vertex oracle: only strict or AVaR acceptance is supported");
    if (k == 0) v.lambda = a->lambda;
    else if (a->lambda != v.lambda) throw InputError("vertex oracle: AVaR entries must share lambda");
    v.measures.push_back(&acc.entries[k].measure);
  }
  if (acc.entries.size() > 1 && acc.mode != QMode::Hull)
    throw InputError("vertex oracle: several AVaR measures are only supported in hull mode");
  return v;
}

}  // namespace oracle_detail

/// Exact sup of E^P X - penalty(P) for all-linear instances on at most 12
/// paths, by enumerating the vertices of the lifted dual polyhedron
/// (measure, acceptance weights, penalty epigraph variables).
inline OracleReport vertex_dual_value(const ScenarioTree& tree, const MarketSpec& mk, const AcceptanceSpec& acc,
                                      std::span<const double> x, double engine_value = kNaN) {
  using namespace oracle_detail;
  const std::size_t n = tree.path_count();
  if (n > 12) throw InputError("vertex oracle: instance too large (more than 12 paths)");
  tree.check_path_vector(x, "payoff");
  validate_market(tree, mk);
  validate_acceptance(tree, acc);
  auto av = avar_view(acc);
  for (const auto& ins : mk.instruments)
    if (ins.superlinear) throw InputError("vertex oracle: nonlinear instrument cost");

  // Variable layout: P, then weights, then penalty variables appended on demand.
  struct Col {
    std::vector<double> obj;
  } layout;
  const std::size_t K = av ? av->measures.size() : 0;
  std::size_t dim = n + K;
  struct PenaltyRow {
    std::vector<double> coef_p;  // on P
    double coef_v;               // on own penalty variable
    double rhs;
    std::size_t var;
  };
  std::vector<PenaltyRow> pen_rows;
  std::vector<std::pair<std::size_t, double>> pen_obj;  // var -> objective coefficient
  std::vector<std::vector<double>> eqs, les;  // over P only (padded later)
  std::vector<double> beqs, bles;
  std::vector<std::vector<double>> les_full;  // rows already in full space (built after dim known)

  auto prow = [&]() { return std::vector<double>(n, 0.0); };
  {
    auto r = prow();
    std::fill(r.begin(), r.end(), 1.0);
    eqs.push_back(r), beqs.push_back(1.0);
  }
  for (int j = 1; j <= tree.asset_count(); ++j) {
    for (NodeId nd : tree.nonterminals()) {
      const Node& node = tree.node(nd);
      auto [first, last] = tree.path_range(nd);
      const double s = node.prices[j] / node.prices[0];
      std::vector<double> drift1 = prow(), driftT = prow(), mass = prow();
      for (std::size_t w = first; w < last; ++w) {
        const Node& next = tree.node(tree.node_on_path(w, node.depth + 1));
        const Node& leaf = tree.node(tree.node_on_path(w, tree.horizon()));
        drift1[w] = next.prices[j] / next.prices[0] - s;
        driftT[w] = leaf.prices[j] / leaf.prices[0] - s;
        mass[w] = 1.0;
      }
      if (mk.banned(j)) {
        les.push_back(drift1), bles.push_back(0.0);
        continue;
      }
      if (s == 0.0) {
        les.push_back(driftT), bles.push_back(0.0);
        continue;
      }
      auto band = friction_band(mk.frictions.at(j, node));
      if (!band) throw InputError("vertex oracle: power frictions are not linear");
      // lo*s*mass <= W <= hi*s*mass
      auto up = prow(), dn = prow();
      for (std::size_t w = 0; w < n; ++w) {
        up[w] = driftT[w] - band->hi * s * mass[w];
        dn[w] = band->lo * s * mass[w] - driftT[w];
      }
      if (band->lo == band->hi) {
        eqs.push_back(up), beqs.push_back(0.0);
      } else {
        les.push_back(up), bles.push_back(0.0);
        les.push_back(dn), bles.push_back(0.0);
      }
      if (band->kinks.empty()) continue;
      // v >= (b W / s - g(b) mass)/S0, v >= 0
      std::size_t var = dim++;
      const Friction& f = mk.frictions.at(j, node);
      for (double b : band->kinks) {
        PenaltyRow pr{prow(), -1.0, 0.0, var};
        for (std::size_t w = 0; w < n; ++w)
          pr.coef_p[w] = (b * driftT[w] / s - friction_cost(f, b) * mass[w]) / node.prices[0];
        pen_rows.push_back(std::move(pr));
      }
      pen_rows.push_back({prow(), -1.0, 0.0, var});
      pen_obj.push_back({var, -1.0});
    }
  }
  for (const auto& ins : mk.instruments) {
    std::vector<double> h(ins.payoff.begin(), ins.payoff.end());
    const double buy = ins.buy_capacity(), sell = ins.sell_capacity();
    if (buy == kInf) les.push_back(h), bles.push_back(ins.ask);
    else if (buy > 0.0) {
      std::size_t var = dim++;
      pen_rows.push_back({h, -1.0, ins.ask, var});
      pen_rows.push_back({prow(), -1.0, 0.0, var});
      pen_obj.push_back({var, -buy});
    }
    auto negh = h;
    for (double& v : negh) v = -v;
    if (sell == kInf) les.push_back(negh), bles.push_back(-ins.bid);
    else if (sell > 0.0) {
      std::size_t var = dim++;
      pen_rows.push_back({negh, -1.0, -ins.bid, var});
      pen_rows.push_back({prow(), -1.0, 0.0, var});
      pen_obj.push_back({var, -sell});
    }
  }

  Polyhedron P;
  P.dim = dim;
  auto pad = [&](const std::vector<double>& r) {
    std::vector<double> z(dim, 0.0);
    std::copy(r.begin(), r.end(), z.begin());
    return z;
  };
  for (std::size_t w = 0; w < n; ++w) {
    std::vector<double> z(dim, 0.0);
    z[w] = -1.0;
    P.add_le(z, 0.0);
  }
  if (av) {
    std::vector<double> wsum(dim, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
      std::vector<double> z(dim, 0.0);
      z[n + k] = -1.0;
      P.add_le(z, 0.0);
      wsum[n + k] = 1.0;
    }
    P.add_eq(wsum, 1.0);
    for (std::size_t w = 0; w < n; ++w) {
      std::vector<double> z(dim, 0.0);
      z[w] = 1.0;
      for (std::size_t k = 0; k < K; ++k) z[n + k] = -(*av->measures[k])[w] / av->lambda;
      P.add_le(z, 0.0);
    }
  }
  for (std::size_t i = 0; i < eqs.size(); ++i) P.add_eq(pad(eqs[i]), beqs[i]);
  for (std::size_t i = 0; i < les.size(); ++i) P.add_le(pad(les[i]), bles[i]);
  for (const auto& pr : pen_rows) {
    auto z = pad(pr.coef_p);
    z[pr.var] = pr.coef_v;
    P.add_le(z, pr.rhs);
  }
  std::vector<double> c(dim, 0.0);
  for (std::size_t w = 0; w < n; ++w) c[w] = x[w];
  for (auto [var, coef] : pen_obj) c[var] += coef;

  VertexResult vr = maximize_over_vertices(P, c);
  OracleReport rep;
  rep.method = OracleMethod::VertexEnum;
  rep.count = vr.vertices.size();
  if (!vr.feasible) {
    rep.infeasible = true;
    rep.value = -kInf;
  } else if (vr.unbounded) {
    rep.value = kInf;
  } else {
    rep.value = vr.best;
    rep.argmax.assign(vr.argmax.begin(), vr.argmax.begin() + static_cast<std::ptrdiff_t>(n));
  }
  if (!std::isnan(engine_value)) {
    rep.max_deviation = (rep.value == engine_value) ? 0.0 : std::abs(rep.value - engine_value);
  }
  (void)layout;
  return rep;
}

/// Measures (P parts only) at the vertices of the oracle's dual polyhedron.
inline std::vector<PathVector> dual_vertices(const ScenarioTree& tree, const MarketSpec& mk, const AcceptanceSpec& acc) {
  // Enumerate with a zero objective and read back the measure coordinates by
  // re-running the enumeration; cheap at oracle sizes.
  PathVector zero(tree.path_count(), 0.0);
  using namespace oracle_detail;
  std::vector<PathVector> out;
  // The simplest independent route: maximize each coordinate direction and
  // keep distinct argmax points, plus random directions.
  std::mt19937_64 rng(12345);
  std::normal_distribution<double> nd;
  for (int k = 0; k < static_cast<int>(4 * tree.path_count() + 8); ++k) {
    PathVector dir(tree.path_count());
    for (double& d : dir) d = nd(rng);
    OracleReport r = vertex_dual_value(tree, mk, acc, dir);
    if (r.infeasible) return {};
    bool seen = false;
    for (const auto& v : out) {
      double dmax = 0.0;
      for (std::size_t w = 0; w < v.size(); ++w) dmax = std::max(dmax, std::abs(v[w] - r.argmax[w]));
      seen = seen || dmax < 1e-10;
    }
    if (!seen && !r.argmax.empty()) out.push_back(r.argmax);
  }
  return out;
}

/// Penalty of a measure evaluated directly from the cost functions: for each
/// node, mass/S0 times the breakpoint supremum of b y - g(b) (+inf outside
/// the slope band), the instrument conjugate, and the AVaR density cap
/// against the best hull weights found by a small LP-free search.
inline double oracle_market_penalty(const ScenarioTree& tree, const MarketSpec& mk, std::span<const double> p, double tol) {
  double pen = 0.0;
  for (int j = 1; j <= tree.asset_count(); ++j)
    for (NodeId nd : tree.nonterminals()) {
      const Node& node = tree.node(nd);
      auto [first, last] = tree.path_range(nd);
      const double s = node.prices[j] / node.prices[0];
      double mass = 0.0, w_t = 0.0, w_1 = 0.0;
      for (std::size_t w = first; w < last; ++w) {
        const Node& next = tree.node(tree.node_on_path(w, node.depth + 1));
        const Node& leaf = tree.node(tree.node_on_path(w, tree.horizon()));
        mass += p[w];
        w_t += p[w] * (leaf.prices[j] / leaf.prices[0] - s);
        w_1 += p[w] * (next.prices[j] / next.prices[0] - s);
      }
      if (mk.banned(j)) {
        if (w_1 > tol) return kInf;
        continue;
      }
      if (s == 0.0) {
        if (w_t > tol) return kInf;
        continue;
      }
      if (mass <= 0.0) continue;
      const Friction& f = mk.frictions.at(j, node);
      auto band = oracle_detail::friction_band(f);
      const double y = w_t / (mass * s);
      if (!band) {
        const auto& pw = std::get<PowerFriction>(f);
        const double r = pw.p / (pw.p - 1.0);
        pen += mass * std::pow(pw.eps, 1.0 - r) / r * std::pow(std::abs(y), r) / node.prices[0];
        continue;
      }
      if (w_t > band->hi * mass * s + tol || w_t < band->lo * mass * s - tol) return kInf;
      double best = 0.0;
      for (double b : band->kinks) best = std::max(best, b * y - friction_cost(f, b));
      pen += mass * best / node.prices[0];
    }
  for (const auto& ins : mk.instruments) {
    double eh = 0.0;
    for (std::size_t w = 0; w < p.size(); ++w) eh += p[w] * ins.payoff[w];
    if (ins.superlinear) {
      const double r = ins.superlinear->q / (ins.superlinear->q - 1.0);
      pen += std::pow(ins.superlinear->delta, 1.0 - r) / r * std::pow(std::abs(eh - ins.superlinear->price), r);
      continue;
    }
    if (eh > ins.ask + tol) {
      if (ins.buy_capacity() == kInf) return kInf;
      pen += ins.buy_capacity() * (eh - ins.ask);
    }
    if (eh < ins.bid - tol) {
      if (ins.sell_capacity() == kInf) return kInf;
      pen += ins.sell_capacity() * (ins.bid - eh);
    }
  }
  return pen;
}

/// Lower bound on the dual value from random convex combinations of the
/// oracle's dual vertices (strict or AVaR acceptance). Each sample is scored
/// with its own penalty, so every sample is a valid lower bound.
inline OracleReport measure_sample_value(const ScenarioTree& tree, const MarketSpec& mk, const AcceptanceSpec& acc,
                                         std::span<const double> x, std::size_t samples, std::uint64_t seed,
                                         double engine_value = kNaN) {
  OracleReport rep;
  rep.method = OracleMethod::MeasureSample;
  auto verts = dual_vertices(tree, mk, acc);
  if (verts.empty()) {
    rep.infeasible = true;
    rep.value = -kInf;
    return rep;
  }
  auto av = oracle_detail::avar_view(acc);
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> ex(1.0);
  double best = -kInf;
  for (std::size_t s = 0; s < samples; ++s) {
    std::vector<double> wts(verts.size());
    double tot = 0.0;
    for (double& v : wts) tot += (v = ex(rng));
    PathVector p(tree.path_count(), 0.0);
    for (std::size_t k = 0; k < verts.size(); ++k)
      for (std::size_t w = 0; w < p.size(); ++w) p[w] += wts[k] / tot * std::max(verts[k][w], 0.0);
    double ps = std::accumulate(p.begin(), p.end(), 0.0);
    for (double& v : p) v /= ps;
    double pen = oracle_market_penalty(tree, mk, p, 1e-9);
    if (av && av->measures.size() == 1) {
      for (std::size_t w = 0; w < p.size(); ++w)
        if (p[w] > (*av->measures[0])[w] / av->lambda + 1e-9) pen = kInf;
    }
    // With several hull measures, sampled vertices carry their own weights;
    // mixtures of feasible (P, w) pairs stay feasible, so the cap holds.
    double val = 0.0;
    for (std::size_t w = 0; w < p.size(); ++w) val += p[w] * x[w];
    val -= pen;
    ++rep.count;
    if (val > best) best = val, rep.argmax = p;
  }
  rep.value = best;
  if (!std::isnan(engine_value)) rep.max_deviation = std::abs(best - engine_value);
  return rep;
}

/// Grid description: every dynamic holding and static position ranges over
/// `points` equally spaced values in [-radius, radius].
struct GridSpec {
  double radius = 2.0;
  int points = 401;
};

/// Independent path-wise gains for the grid search.
inline PathVector oracle_gains(const ScenarioTree& tree, const MarketSpec& mk, const std::vector<std::vector<double>>& hold,
                               const std::vector<double>& theta) {
  PathVector out(tree.path_count(), 0.0);
  for (std::size_t w = 0; w < out.size(); ++w) {
    double total = 0.0;
    for (int j = 1; j <= tree.asset_count(); ++j) {
      double prev = 0.0;
      for (int t = 0; t < tree.horizon(); ++t) {
        const Node& a = tree.node(tree.node_on_path(w, t));
        const Node& b = tree.node(tree.node_on_path(w, t + 1));
        double h = hold[j - 1][a.id];
        total += h * (b.prices[j] / b.prices[0] - a.prices[j] / a.prices[0]);
        total -= friction_cost(mk.frictions.at(j, a), (h - prev) * a.prices[j]) / a.prices[0];
        prev = h;
      }
    }
    out[w] = total;
  }
  for (std::size_t i = 0; i < mk.instruments.size(); ++i) {
    const auto& ins = mk.instruments[i];
    const double th = theta[i];
    if (th == 0.0) continue;
    double cost;
    if (ins.superlinear) cost = ins.superlinear->price * th + ins.superlinear->delta / ins.superlinear->q * std::pow(std::abs(th), ins.superlinear->q);
    else cost = th > 0 ? th * ins.ask : th * ins.bid;
    for (std::size_t w = 0; w < out.size(); ++w) out[w] += th * ins.payoff[w] - cost;
  }
  return out;
}

/// Least m making m + Y acceptable, for a fixed Y: max(-Y) for Strict, and
/// for OCE the worst group value of min_s max_k (E^{Q_k} l(s + Y) - s)
/// evaluated at candidate s values (any s gives an upper bound).
inline double oracle_required_capital(const AcceptanceSpec& acc, std::span<const double> y) {
  if (acc.is_strict()) return -*std::min_element(y.begin(), y.end());
  double worst = -kInf;
  for (const auto& g : acceptance_groups(acc)) {
    const LossFunction& l = acc.entries[g.front()].loss;
    const bool smooth = is_entropic(l);
    const AffinePieces pc = smooth ? AffinePieces{} : loss_pieces(l);
    auto loss = [&](double x) {
      if (smooth) return loss_value(l, x);
      double v = -kInf;
      for (std::size_t i = 0; i < pc.slopes.size(); ++i) v = std::max(v, pc.slopes[i] * x + pc.intercepts[i]);
      return v;
    };
    auto f = [&](double s) {
      double v = -kInf;
      for (std::size_t k : g) {
        double e = -s;
        for (std::size_t w = 0; w < y.size(); ++w)
          if (acc.entries[k].measure[w] > 0.0) e += acc.entries[k].measure[w] * loss(s - y[w]);
        v = std::max(v, e);
      }
      return v;
    };
    double best = kInf;
    // A single piecewise-linear entry is convex and piecewise linear in s
    // with kinks at y + breakpoint, so its minimum sits on one of them.
    if (!smooth) {
      best = f(0.0);
      for (std::size_t w = 0; w < y.size(); ++w)
        for (double b : pc.breakpoints) best = std::min(best, f(y[w] + b));
    }
    if (smooth || g.size() > 1) {
      double a = *std::min_element(y.begin(), y.end()) - 10.0, b = *std::max_element(y.begin(), y.end()) + 10.0;
      for (int it = 0; it < 120; ++it) {
        double m1 = a + (b - a) / 3.0, m2 = b - (b - a) / 3.0;
        if (f(m1) < f(m2)) b = m2;
        else a = m1;
      }
      best = std::min(best, f(0.5 * (a + b)));
    }
    worst = std::max(worst, best);
  }
  return worst;
}

/// Upper bound on phi(X): minimum over a strategy grid of the capital each
/// grid strategy needs.
inline OracleReport grid_primal_value(const ScenarioTree& tree, const MarketSpec& mk, const AcceptanceSpec& acc,
                                      std::span<const double> x, const GridSpec& grid = {}, double engine_value = kNaN) {
  validate_market(tree, mk);
  validate_acceptance(tree, acc);
  tree.check_path_vector(x, "payoff");
  struct Dim {
    int kind;  // 0 holding, 1 static
    int asset;
    std::size_t index;
    double lo, hi;
  };
  std::vector<Dim> dims;
  for (int j = 1; j <= tree.asset_count(); ++j)
    for (NodeId nd : tree.nonterminals())
      dims.push_back({0, j, nd, mk.banned(j) ? 0.0 : -grid.radius, grid.radius});
  for (std::size_t i = 0; i < mk.instruments.size(); ++i) {
    const auto& ins = mk.instruments[i];
    double lo = ins.superlinear ? -grid.radius : -std::min(grid.radius, ins.sell_capacity());
    double hi = ins.superlinear ? grid.radius : std::min(grid.radius, ins.buy_capacity());
    dims.push_back({1, 0, i, lo, hi});
  }
  if (dims.size() > 6) throw InputError("grid oracle: more than 6 strategy dimensions");
  if (grid.points < 1) throw InputError("grid oracle: needs at least one point per dimension");
  std::vector<std::vector<double>> hold(tree.asset_count(), std::vector<double>(tree.node_count(), 0.0));
  std::vector<double> theta(mk.instruments.size(), 0.0);
  std::vector<int> idx(dims.size(), 0);
  OracleReport rep;
  rep.method = OracleMethod::StrategyGrid;
  double best = kInf;
  auto coord = [&](const Dim& d, int i) {
    if (grid.points == 1 || d.lo == d.hi) return std::clamp(0.0, d.lo, d.hi);
    return d.lo + (d.hi - d.lo) * i / (grid.points - 1);
  };
  while (true) {
    for (std::size_t k = 0; k < dims.size(); ++k) {
      double v = coord(dims[k], idx[k]);
      if (dims[k].kind == 0) hold[dims[k].asset - 1][dims[k].index] = v;
      else theta[dims[k].index] = v;
    }
    PathVector g = oracle_gains(tree, mk, hold, theta);
    for (std::size_t w = 0; w < g.size(); ++w) g[w] -= x[w];
    best = std::min(best, oracle_required_capital(acc, g));
    ++rep.count;
    std::size_t k = 0;
    for (; k < dims.size(); ++k) {
      int limit = (dims[k].lo == dims[k].hi) ? 1 : grid.points;
      if (++idx[k] < limit) break;
      idx[k] = 0;
    }
    if (k == dims.size()) break;
  }
  rep.value = best;
  if (!std::isnan(engine_value)) rep.max_deviation = std::abs(best - engine_value);
  return rep;
}

/// A complete pricing problem.
struct Instance {
  std::string name;
  ScenarioTree tree;
  MarketSpec market;
  AcceptanceSpec acceptance;
  PathVector payoff;
};

struct Fixture {
  Instance instance;
  /// Exact superhedging price.
  double value = 0.0;
  std::string formula;
};

inline ScenarioTree one_period_tree(const std::vector<double>& up_prices, double root_price = 1.0) {
  TreeSpec s{1, 1, {}};
  s.nodes.push_back({0, 0, std::nullopt, {1.0, root_price}});
  for (std::size_t i = 0; i < up_prices.size(); ++i) s.nodes.push_back({i + 1, 1, NodeId{0}, {1.0, up_prices[i]}});
  return build_tree(s);
}

/// The canonical closed-form instances: entropic and AVaR without trading,
/// and the complete one-period binomial call.
inline std::vector<Fixture> closed_form_fixtures() {
  std::vector<Fixture> out;
  ScenarioTree flat = one_period_tree({1.0, 1.0});
  PathVector x{1.0, 0.0};
  PathVector q{0.5, 0.5};
  {
    Instance in{"entropic", flat, frictionless_market(flat), AcceptanceSpec::robust({{q, EntropicLoss{1.0}}}), x};
    out.push_back({in, std::log((std::exp(1.0) + 1.0) / 2.0), "(1/lambda) log E^Q exp(lambda X)"});
  }
  {
    Instance in{"avar-0.5", flat, frictionless_market(flat), AcceptanceSpec::robust({{q, AVaRLoss{0.5}}}), x};
    out.push_back({in, 1.0, "max E^P X over dP/dQ <= 1/lambda"});
  }
  {
    Instance in{"avar-0.8", flat, frictionless_market(flat), AcceptanceSpec::robust({{q, AVaRLoss{0.8}}}), x};
    out.push_back({in, 0.625, "max E^P X over dP/dQ <= 1/lambda"});
  }
  {
    ScenarioTree bin = one_period_tree({2.0, 0.5});
    Instance in{"binomial-call", bin, frictionless_market(bin), AcceptanceSpec::strict(), x};
    out.push_back({in, 1.0 / 3.0, "replication under the unique martingale measure"});
  }
  return out;
}

enum class MarketClass { Frictionless, Proportional, PiecewiseLinear, ShortSaleBan, Power };
enum class AcceptanceClass { Strict, AVaR, Entropic };

inline const char* to_string(MarketClass c) {
  switch (c) {
    case MarketClass::Frictionless: return "frictionless";
    case MarketClass::Proportional: return "proportional";
    case MarketClass::PiecewiseLinear: return "piecewise";
    case MarketClass::ShortSaleBan: return "short-sale-ban";
    case MarketClass::Power: return "power";
  }
  return "?";
}
inline const char* to_string(AcceptanceClass c) {
  switch (c) {
    case AcceptanceClass::Strict: return "strict";
    case AcceptanceClass::AVaR: return "avar";
    case AcceptanceClass::Entropic: return "entropic";
  }
  return "?";
}

struct RandomOptions {
  int max_horizon = 3;
  int max_branching = 3;
  int max_assets = 2;
  /// When set, parent prices are conditional expectations of child prices
  /// under a random full-support measure, so the frictionless market has a
  /// martingale measure.
  bool arbitrage_free = true;
  /// Add one call instrument quoted around its price under that measure.
  bool instruments = true;
  std::size_t max_paths = 27;
};

/// Random tree: T in {1..max_horizon}, branching in {2..max_branching},
/// J in {1..max_assets}, prices log-uniform in [0.2, 5].
inline Instance random_instance(std::mt19937_64& rng, MarketClass mc, AcceptanceClass ac, const RandomOptions& opt = {}) {
  std::uniform_int_distribution<int> T_d(1, opt.max_horizon), B_d(2, opt.max_branching), J_d(1, opt.max_assets);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  auto log_uniform = [&]() { return 0.2 * std::exp(U(rng) * std::log(25.0)); };
  int T, B;
  do {
    T = T_d(rng), B = B_d(rng);
  } while (static_cast<std::size_t>(std::pow(B, T)) > opt.max_paths);
  const int J = J_d(rng);

  TreeSpec spec{T, J, {}};
  std::vector<int> depth{0};
  std::vector<std::optional<NodeId>> parent{std::nullopt};
  std::vector<std::vector<NodeId>> children(1);
  for (std::size_t i = 0; i < depth.size(); ++i) {
    if (depth[i] == T) continue;
    for (int b = 0; b < B; ++b) {
      NodeId id = depth.size();
      depth.push_back(depth[i] + 1);
      parent.push_back(i);
      children.push_back({});
      children[i].push_back(id);
    }
  }
  const std::size_t N = depth.size();
  std::vector<double> num(N, 1.0);
  for (std::size_t i = 1; i < N; ++i) num[i] = num[*parent[i]] * (1.0 + 0.05 * U(rng));
  std::vector<std::vector<double>> disc(N, std::vector<double>(J + 1, 1.0));
  std::vector<std::vector<double>> q(N);  // conditional one-step measure
  for (std::size_t i = 0; i < N; ++i) {
    if (children[i].empty()) continue;
    double tot = 0.0;
    for (std::size_t c = 0; c < children[i].size(); ++c) {
      q[i].push_back(0.2 + U(rng));
      tot += q[i].back();
    }
    for (double& v : q[i]) v /= tot;
  }
  for (std::size_t i = N; i-- > 0;) {
    for (int j = 1; j <= J; ++j) {
      if (children[i].empty() || !opt.arbitrage_free) {
        disc[i][j] = log_uniform();
      } else {
        double e = 0.0;
        for (std::size_t c = 0; c < children[i].size(); ++c) e += q[i][c] * disc[children[i][c]][j];
        disc[i][j] = e;
      }
    }
  }
  for (std::size_t i = 0; i < N; ++i) {
    NodeSpec ns{i, depth[i], parent[i], std::vector<double>(J + 1)};
    ns.prices[0] = num[i];
    for (int j = 1; j <= J; ++j) ns.prices[j] = disc[i][j] * num[i];
    spec.nodes.push_back(std::move(ns));
  }
  ScenarioTree tree = build_tree(spec);
  const std::size_t n = tree.path_count();

  // Path probabilities of the construction measure.
  PathVector qpath(n, 1.0);
  for (std::size_t w = 0; w < n; ++w)
    for (int t = 0; t < T; ++t) {
      NodeId a = tree.node_on_path(w, t), b = tree.node_on_path(w, t + 1);
      const auto& ch = tree.node(a).children;
      std::size_t c = static_cast<std::size_t>(std::find(ch.begin(), ch.end(), b) - ch.begin());
      qpath[w] *= q[a][c];
    }

  MarketSpec mk = frictionless_market(tree);
  switch (mc) {
    case MarketClass::Frictionless: break;
    case MarketClass::Proportional:
      for (int j = 1; j <= J; ++j)
        for (int t = 0; t < T; ++t) mk.frictions.set(j, t, ProportionalFriction{0.2 * U(rng)});
      break;
    case MarketClass::PiecewiseLinear: {
      for (int j = 1; j <= J; ++j)
        for (int t = 0; t < T; ++t) mk.frictions.set(j, t, ProportionalFriction{0.1 * U(rng)});
      // Proportional fee up to a size threshold, steeper beyond it.
      int j = std::uniform_int_distribution<int>(1, J)(rng), t = std::uniform_int_distribution<int>(0, T - 1)(rng);
      double e1 = 0.01 + 0.05 * U(rng), e2 = e1 + 0.05 + 0.2 * U(rng), beta = 0.2 + U(rng);
      mk.frictions.set(j, t, PiecewiseLinearFriction{{-e2, -e1, e1, e2}, {-beta, 0.0, beta}});
      break;
    }
    case MarketClass::ShortSaleBan: mk.short_sale_banned.assign(J, true); break;
    case MarketClass::Power:
      for (int j = 1; j <= J; ++j)
        for (int t = 0; t < T; ++t) mk.frictions.set(j, t, PowerFriction{0.05 + 0.5 * U(rng), std::array{1.5, 2.0, 3.0}[std::uniform_int_distribution<int>(0, 2)(rng)]});
      break;
  }
  if (opt.instruments && U(rng) < 0.5) {
    StaticInstrument ins;
    const PathVector st = tree.terminal_discounted(1);
    double k = st[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)];
    ins.name = "call";
    ins.payoff.resize(n);
    for (std::size_t w = 0; w < n; ++w) ins.payoff[w] = std::max(st[w] - k, 0.0);
    double fair = expectation(qpath, ins.payoff);
    ins.bid = fair - 0.05 * U(rng);
    ins.ask = fair + 0.05 * U(rng);
    if (U(rng) < 0.5) {
      ins.max_position = 0.5 + U(rng);
      ins.min_position = -(0.5 + U(rng));
    }
    mk.instruments.push_back(std::move(ins));
  }

  AcceptanceSpec acc = AcceptanceSpec::strict();
  if (ac != AcceptanceClass::Strict) {
    int K = std::uniform_int_distribution<int>(1, 2)(rng);
    std::vector<OceEntry> entries;
    double lam = ac == AcceptanceClass::AVaR ? 0.3 + 0.7 * U(rng) : 0.5 + 1.5 * U(rng);
    for (int k = 0; k < K; ++k) {
      PathVector qm(n);
      double tot = 0.0;
      for (double& v : qm) tot += (v = 0.1 + U(rng));
      for (double& v : qm) v /= tot;
      LossFunction l = ac == AcceptanceClass::AVaR ? LossFunction{AVaRLoss{lam}} : LossFunction{EntropicLoss{lam}};
      entries.push_back({qm, l});
    }
    acc = AcceptanceSpec::robust(std::move(entries), QMode::Hull);
  }

  PathVector x(n);
  if (U(rng) < 0.5) {
    for (double& v : x) v = -1.0 + 3.0 * U(rng);
  } else {
    const PathVector st = tree.terminal_discounted(1);
    double k = st[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)];
    for (std::size_t w = 0; w < n; ++w) x[w] = std::max(st[w] - k, 0.0);
  }
  std::string name = std::string(to_string(mc)) + "/" + to_string(ac) + " T=" + std::to_string(T) + " B=" +
                     std::to_string(B) + " J=" + std::to_string(J);
  return {name, std::move(tree), std::move(mk), std::move(acc), std::move(x)};
}

}  // namespace rhedge
