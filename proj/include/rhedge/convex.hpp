#pragma once

/// \file convex.hpp
/// Kelley's cutting-plane method on top of the simplex core. Each smooth
/// constraint g(x) <= 0 is replaced by tangent cuts accumulated at the
/// relaxation optima until the largest violation drops below tolerance.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rhedge/lp.hpp"

namespace rhedge {

/// sum_k coefs[k] * x[vars[k]] <= rhs
struct LinearCut {
  std::vector<double> coefs;
  double rhs = 0.0;
};

/// Convex constraint g(x_vars) <= 0 over a handful of program variables.
/// `cut` returns a valid linear under-estimator of g at the given local point,
/// already rearranged into "<= rhs" form; builders choose tangent points so
/// that the cut is finite even on the boundary of the domain.
struct SmoothConstraint {
  std::vector<std::size_t> vars;
  std::function<double(std::span<const double>)> value;
  std::function<LinearCut(std::span<const double>)> cut;
  /// Local points at which cuts are added before the first solve.
  std::vector<std::vector<double>> seeds;
  std::string label;
};

/// Tangent cut from a gradient: g(x0) + grad.(x - x0) <= 0.
inline LinearCut tangent_cut(double g0, std::span<const double> grad, std::span<const double> x0) {
  LinearCut c;
  c.coefs.assign(grad.begin(), grad.end());
  c.rhs = -g0;
  for (std::size_t k = 0; k < grad.size(); ++k) c.rhs += grad[k] * x0[k];
  return c;
}

struct ConvexProgram {
  LinearProgram lp;
  std::vector<SmoothConstraint> smooth;
};

struct ConvexOptions {
  double tol = 1e-7;
  std::size_t max_iters = 400;
  double lp_tol = 1e-9;
};

namespace detail {

inline std::vector<double> gather(const std::vector<double>& x, const std::vector<std::size_t>& vars) {
  std::vector<double> local(vars.size());
  for (std::size_t k = 0; k < vars.size(); ++k) local[k] = x[vars[k]];
  return local;
}

inline std::optional<LinearRow> cut_row(const SmoothConstraint& c, const LinearCut& cut) {
  LinearRow row;
  double scale = 0.0;
  for (double a : cut.coefs) scale = std::max(scale, std::abs(a));
  if (!(scale > 0.0) || !std::isfinite(scale) || !std::isfinite(cut.rhs)) return std::nullopt;
  // Scale very steep cuts down; keeps the tableau from mixing 1e30 and 1.
  const double s = scale > 1e6 ? 1e6 / scale : 1.0;
  for (std::size_t k = 0; k < c.vars.size(); ++k)
    if (cut.coefs[k] != 0.0) row.terms.push_back({c.vars[k], cut.coefs[k] * s});
  row.rhs = cut.rhs * s;
  return row;
}

inline void add_cut(LinearProgram& lp, const SmoothConstraint& c, const LinearCut& cut) {
  if (auto row = cut_row(c, cut)) lp.add_row(std::move(row->terms), Relation::LessEqual, row->rhs);
}

}  // namespace detail

/// Largest violation max(0, g(x)) over the smooth constraints.
inline double smooth_violation(const ConvexProgram& cp, const std::vector<double>& x) {
  double worst = 0.0;
  for (const auto& c : cp.smooth) {
    auto local = detail::gather(x, c.vars);
    double g = c.value(local);
    if (std::isnan(g)) g = kInf;
    worst = std::max(worst, g);
  }
  return worst;
}

/// Cutting-plane solve. With no smooth constraints this is exactly solve_lp.
/// The relaxation bound is recorded each iteration in `bound_history`; on
/// IterLimit `bound` and `best_feasible` bracket the optimum (the latter is
/// NaN when no iterate met the tolerance).
inline SolveOutcome solve_convex(const ConvexProgram& cp, ConvexOptions opt = {}) {
  if (cp.smooth.empty()) {
    SolveOutcome out = solve_lp(cp.lp, opt.lp_tol);
    if (out.status == SolveStatus::Optimal) {
      out.bound = out.value;
      out.best_feasible = out.value;
      out.bound_history.push_back(out.value);
    }
    return out;
  }
  const bool minimize = cp.lp.sense() == Sense::Minimize;
  LinearProgram work = cp.lp;
  for (const auto& c : cp.smooth)
    for (const auto& s : c.seeds) detail::add_cut(work, c, c.cut(s));

  double bound = minimize ? -kInf : kInf;
  std::vector<double> history;
  std::size_t total_pivots = 0;
  // One solver carried across iterations; new cuts are added with a warm
  // start and the program is re-solved from scratch only if that fails.
  auto simplex = std::make_unique<detail::Simplex>(work, opt.lp_tol);
  std::vector<LinearRow> pending;
  for (std::size_t it = 0; it < opt.max_iters; ++it) {
    SolveOutcome out;
    std::optional<SolveOutcome> warm;
    if (it > 0) warm = simplex->add_rows(pending);
    if (warm) {
      out = std::move(*warm);
    } else {
      if (it > 0) {
        work = simplex->program();
        simplex = std::make_unique<detail::Simplex>(work, opt.lp_tol);
      }
      out = simplex->run();
    }
    pending.clear();
    total_pivots += out.iterations;
    if (out.status != SolveStatus::Optimal) {
      out.iterations = total_pivots;
      out.bound_history = std::move(history);
      return out;
    }
    // Cuts only shrink the relaxation, so the bound can only move one way;
    // clamp away round-off so consumers see a monotone sequence.
    bound = minimize ? std::max(bound, out.value) : std::min(bound, out.value);
    history.push_back(bound);

    double worst = 0.0;
    std::vector<std::size_t> violated;
    for (std::size_t k = 0; k < cp.smooth.size(); ++k) {
      auto local = detail::gather(out.x, cp.smooth[k].vars);
      double g = cp.smooth[k].value(local);
      if (std::isnan(g)) g = kInf;
      worst = std::max(worst, g);
      if (g > opt.tol) violated.push_back(k);
    }
    if (violated.empty()) {
      out.iterations = total_pivots;
      out.bound = bound;
      out.best_feasible = out.value;
      out.bound_history = std::move(history);
      // Row duals refer to the augmented program; keep only the original rows.
      out.row_duals.resize(cp.lp.row_count());
      return out;
    }
    for (std::size_t k : violated) {
      const auto& c = cp.smooth[k];
      if (auto row = detail::cut_row(c, c.cut(detail::gather(out.x, c.vars)))) pending.push_back(std::move(*row));
    }
  }
  SolveOutcome out;
  out.status = SolveStatus::IterLimit;
  out.iterations = total_pivots;
  out.value = bound;
  out.bound = bound;
  out.best_feasible = kNaN;
  out.bound_history = std::move(history);
  return out;
}

}  // namespace rhedge
