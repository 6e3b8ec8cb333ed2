#pragma once

/// \file lp.hpp
/// Dense two-phase primal simplex for small linear programs.
///
/// Variables carry bounds (either side may be infinite) and rows are
/// <=, = or >= constraints. The solver converts to standard form, runs
/// Dantzig pricing with a switch to Bland's rule after a run of degenerate
/// pivots, and finishes by re-solving the optimal basis from the original
/// data so that the reported point and multipliers are accurate to roughly
/// machine precision times the basis condition number.
///
/// Row duals are reported as sensitivities d(optimal value)/d(rhs) in the
/// program's own sense, so they have the same meaning for minimization and
/// maximization.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rhedge {

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

enum class Relation { LessEqual, Equal, GreaterEqual };
enum class Sense { Minimize, Maximize };
enum class SolveStatus { Optimal, Infeasible, Unbounded, IterLimit };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::Infeasible: return "infeasible";
    case SolveStatus::Unbounded: return "unbounded";
    case SolveStatus::IterLimit: return "iteration-limit";
  }
  return "?";
}

struct Term {
  std::size_t var = 0;
  double coef = 0.0;
};

struct LinearRow {
  std::vector<Term> terms;
  Relation relation = Relation::LessEqual;
  double rhs = 0.0;
};

struct Variable {
  double lower = 0.0;
  double upper = kInf;
  double cost = 0.0;
  std::string name;
};

class LinearProgram {
 public:
  explicit LinearProgram(Sense sense = Sense::Minimize) : sense_(sense) {}

  std::size_t add_variable(double lower, double upper, double cost = 0.0, std::string name = {}) {
    vars_.push_back({lower, upper, cost, std::move(name)});
    return vars_.size() - 1;
  }

  std::size_t add_row(std::vector<Term> terms, Relation rel, double rhs) {
    rows_.push_back({std::move(terms), rel, rhs});
    return rows_.size() - 1;
  }

  void set_cost(std::size_t var, double cost) { vars_.at(var).cost = cost; }
  void set_bounds(std::size_t var, double lower, double upper) {
    vars_.at(var).lower = lower;
    vars_.at(var).upper = upper;
  }
  void set_sense(Sense s) { sense_ = s; }
  void set_objective_constant(double c) { constant_ = c; }

  Sense sense() const { return sense_; }
  double objective_constant() const { return constant_; }
  const std::vector<Variable>& variables() const { return vars_; }
  const std::vector<LinearRow>& rows() const { return rows_; }
  std::size_t variable_count() const { return vars_.size(); }
  std::size_t row_count() const { return rows_.size(); }

  /// Throws std::invalid_argument on out-of-range indices, NaN data or
  /// crossed bounds.
  void validate() const {
    for (std::size_t j = 0; j < vars_.size(); ++j) {
      const auto& v = vars_[j];
      if (std::isnan(v.lower) || std::isnan(v.upper) || !std::isfinite(v.cost))
        throw std::invalid_argument("variable " + std::to_string(j) + ": NaN or infinite data");
      if (v.lower == kInf || v.upper == -kInf)
        throw std::invalid_argument("variable " + std::to_string(j) + ": bound at the wrong infinity");
    }
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      const auto& r = rows_[i];
      if (!std::isfinite(r.rhs)) throw std::invalid_argument("row " + std::to_string(i) + ": non-finite rhs");
      for (const Term& t : r.terms) {
        if (t.var >= vars_.size())
          throw std::invalid_argument("row " + std::to_string(i) + ": dimension mismatch (variable " + std::to_string(t.var) + ")");
        if (!std::isfinite(t.coef)) throw std::invalid_argument("row " + std::to_string(i) + ": NaN coefficient");
      }
    }
  }

  /// Objective value of a point (including the constant).
  double objective(const std::vector<double>& x) const {
    double v = constant_;
    for (std::size_t j = 0; j < vars_.size(); ++j) v += vars_[j].cost * x[j];
    return v;
  }

  double row_activity(std::size_t i, const std::vector<double>& x) const {
    double a = 0.0;
    for (const Term& t : rows_[i].terms) a += t.coef * x[t.var];
    return a;
  }

  /// Largest violation of any row or bound at x.
  double max_violation(const std::vector<double>& x) const {
    double worst = 0.0;
    for (std::size_t j = 0; j < vars_.size(); ++j) {
      worst = std::max(worst, vars_[j].lower - x[j]);
      worst = std::max(worst, x[j] - vars_[j].upper);
    }
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      double a = row_activity(i, x);
      switch (rows_[i].relation) {
        case Relation::LessEqual: worst = std::max(worst, a - rows_[i].rhs); break;
        case Relation::GreaterEqual: worst = std::max(worst, rows_[i].rhs - a); break;
        case Relation::Equal: worst = std::max(worst, std::abs(a - rows_[i].rhs)); break;
      }
    }
    return worst;
  }

  /// Plain-text tableau dump: a header line, one line per variable and one
  /// line per row ("row <i> <rel> <rhs> : var:coef ...").
  std::string dump() const {
    std::ostringstream os;
    os.precision(17);
    os << "lp " << (sense_ == Sense::Minimize ? "min" : "max") << " vars=" << vars_.size()
       << " rows=" << rows_.size() << " constant=" << constant_ << "\n";
    for (std::size_t j = 0; j < vars_.size(); ++j)
      os << "var " << j << " " << vars_[j].lower << " " << vars_[j].upper << " " << vars_[j].cost
         << (vars_[j].name.empty() ? "" : " " + vars_[j].name) << "\n";
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      const auto& r = rows_[i];
      const char* rel = r.relation == Relation::LessEqual ? "<=" : r.relation == Relation::Equal ? "=" : ">=";
      os << "row " << i << " " << rel << " " << r.rhs << " :";
      for (const Term& t : r.terms) os << " " << t.var << ":" << t.coef;
      os << "\n";
    }
    return os.str();
  }

 private:
  Sense sense_;
  double constant_ = 0.0;
  std::vector<Variable> vars_;
  std::vector<LinearRow> rows_;
};

struct SolveOutcome {
  SolveStatus status = SolveStatus::Infeasible;
  /// Optimal value; +-inf when unbounded; relaxation bound at IterLimit.
  double value = kNaN;
  /// Primal point, present iff status == Optimal.
  std::vector<double> x;
  /// d(value)/d(rhs) per row (LP solves and the final cutting-plane relaxation).
  std::vector<double> row_duals;
  std::vector<double> reduced_costs;
  /// Improving direction when unbounded, phase-one row multipliers when infeasible.
  std::vector<double> ray;
  std::size_t iterations = 0;
  /// Cutting-plane only: best relaxation bound and best feasible value seen.
  double bound = kNaN;
  double best_feasible = kNaN;
  std::vector<double> bound_history;

  bool has_point() const { return status == SolveStatus::Optimal; }
};

namespace detail {

/// Dense LU with partial pivoting; returns false when singular.
class DenseLu {
 public:
  bool factor(std::vector<double> a, std::size_t n) {
    n_ = n;
    lu_ = std::move(a);
    perm_.resize(n);
    for (std::size_t i = 0; i < n; ++i) perm_[i] = i;
    for (std::size_t k = 0; k < n; ++k) {
      std::size_t p = k;
      double best = std::abs(lu_[k * n + k]);
      for (std::size_t i = k + 1; i < n; ++i)
        if (std::abs(lu_[i * n + k]) > best) best = std::abs(lu_[i * n + k]), p = i;
      if (best < 1e-14) return false;
      if (p != k) {
        for (std::size_t j = 0; j < n; ++j) std::swap(lu_[k * n + j], lu_[p * n + j]);
        std::swap(perm_[k], perm_[p]);
      }
      for (std::size_t i = k + 1; i < n; ++i) {
        double f = lu_[i * n + k] /= lu_[k * n + k];
        if (f == 0.0) continue;
        for (std::size_t j = k + 1; j < n; ++j) lu_[i * n + j] -= f * lu_[k * n + j];
      }
    }
    return true;
  }

  /// Solves A x = b.
  std::vector<double> solve(const std::vector<double>& b) const {
    const std::size_t n = n_;
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      double s = b[perm_[i]];
      for (std::size_t j = 0; j < i; ++j) s -= lu_[i * n + j] * y[j];
      y[i] = s;
    }
    for (std::size_t i = n; i-- > 0;) {
      double s = y[i];
      for (std::size_t j = i + 1; j < n; ++j) s -= lu_[i * n + j] * y[j];
      y[i] = s / lu_[i * n + i];
    }
    return y;
  }

  /// Solves A x = b, skipping work on zero entries (cheap for sparse b).
  std::vector<double> solve_sparse(const std::vector<double>& b) const {
    const std::size_t n = n_;
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = b[perm_[i]];
    for (std::size_t j = 0; j < n; ++j) {
      const double v = y[j];
      if (v == 0.0) continue;
      for (std::size_t i = j + 1; i < n; ++i) y[i] -= lu_[i * n + j] * v;
    }
    for (std::size_t j = n; j-- > 0;) {
      if (y[j] == 0.0) continue;
      y[j] /= lu_[j * n + j];
      const double v = y[j];
      for (std::size_t i = 0; i < j; ++i) y[i] -= lu_[i * n + j] * v;
    }
    return y;
  }

  /// Solves A^T x = b.
  std::vector<double> solve_transposed(const std::vector<double>& b) const {
    const std::size_t n = n_;
    // A = P^T L U  =>  A^T = U^T L^T P
    std::vector<double> z(n);
    for (std::size_t i = 0; i < n; ++i) {
      double s = b[i];
      for (std::size_t j = 0; j < i; ++j) s -= lu_[j * n + i] * z[j];
      z[i] = s / lu_[i * n + i];
    }
    for (std::size_t i = n; i-- > 0;) {
      double s = z[i];
      for (std::size_t j = i + 1; j < n; ++j) s -= lu_[j * n + i] * z[j];
      z[i] = s;
    }
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[perm_[i]] = z[i];
    return x;
  }

 private:
  std::size_t n_ = 0;
  std::vector<double> lu_;
  std::vector<std::size_t> perm_;
};

enum class ColumnMap { Shifted, Mirrored, SplitPos, SplitNeg };

struct StdColumn {
  std::size_t original = 0;
  ColumnMap map = ColumnMap::Shifted;
};

class Simplex {
 public:
  Simplex(LinearProgram lp, double tol) : lp_(std::move(lp)), tol_(tol) {}

  const LinearProgram& program() const { return lp_; }

  SolveOutcome run() {
    lp_.validate();
    SolveOutcome out;
    for (const auto& v : lp_.variables())
      if (v.lower > v.upper) {
        out.status = SolveStatus::Infeasible;
        return out;
      }
    build_standard_form();
    build_tableau();

    // Phase one.
    std::size_t iters = 0;
    if (artificial_count_ > 0) {
      set_phase_costs(true);
      auto st = iterate(true, iters);
      if (st == SolveStatus::IterLimit) {
        out.status = st;
        out.iterations = iters;
        return out;
      }
      double infeas = -obj_[width_ - 1];
      double scale = 1.0;
      for (double b : b_) scale = std::max(scale, std::abs(b));
      if (infeas > tol_ * scale) {
        out.status = SolveStatus::Infeasible;
        out.iterations = iters;
        out.ray = phase_one_multipliers();
        return out;
      }
      drive_out_artificials();
    }
    set_phase_costs(false);
    auto st = iterate(false, iters);
    out.iterations = iters;
    if (st == SolveStatus::IterLimit) {
      out.status = st;
      return out;
    }
    if (st == SolveStatus::Unbounded) {
      out.status = SolveStatus::Unbounded;
      out.value = lp_.sense() == Sense::Minimize ? -kInf : kInf;
      out.ray = unbounded_ray();
      return out;
    }
    // Back to the exact right-hand side: the basis stays dual feasible and
    // is at most slightly primal infeasible, which the dual simplex repairs.
    b_ = b_exact_;
    if (!reinvert(false)) {
      out.status = SolveStatus::IterLimit;
      return out;
    }
    st = dual_iterate(iters);
    if (st == SolveStatus::Optimal) st = iterate(false, iters);
    out.iterations = iters;
    if (st != SolveStatus::Optimal) {
      out.status = st == SolveStatus::Unbounded ? SolveStatus::IterLimit : st;
      if (st == SolveStatus::Infeasible) out.value = kNaN;
      return out;
    }
    finish(out);
    ready_ = true;
    iters_ = iters;
    return out;
  }

  /// Appends <= rows to a program last solved to optimality and re-optimizes
  /// from the current basis: the old basis stays dual feasible, so a dual
  /// simplex pass restores primal feasibility. Returns nullopt when the warm
  /// start is unavailable or inconclusive; the caller should then solve from
  /// scratch.
  std::optional<SolveOutcome> add_rows(const std::vector<LinearRow>& rows) {
    if (!ready_) return std::nullopt;
    ready_ = false;
    for (const auto& row : rows)
      if (row.relation != Relation::LessEqual) return std::nullopt;
    append_rows(rows);
    std::size_t iters = 0;
    if (dual_iterate(iters) != SolveStatus::Optimal) return std::nullopt;
    if (iterate(false, iters) != SolveStatus::Optimal) return std::nullopt;
    SolveOutcome out;
    finish(out);
    if (lp_.max_violation(out.x) > 1e-7) return std::nullopt;
    iters_ += iters;
    out.iterations = iters;
    ready_ = true;
    return out;
  }

 private:
  LinearProgram lp_;
  bool ready_ = false;
  std::size_t iters_ = 0;
  double tol_;
  static constexpr double kPivotTol = 1e-9;
  static constexpr double kCostTol = 1e-10;
  static constexpr double kFeasTol = 1e-9;
  static constexpr double kPerturb = 1e-7;

  std::vector<StdColumn> cols_;                 // structural standard-form columns
  std::vector<std::vector<std::size_t>> var_cols_;  // original var -> std cols
  std::size_t m_ = 0;                           // rows in standard form
  std::size_t n_struct_ = 0;
  std::size_t n_total_ = 0;                     // structural + slack + artificial
  std::size_t width_ = 0;                       // n_total_ + 1 (rhs)
  std::size_t artificial_begin_ = 0;
  std::size_t artificial_count_ = 0;
  std::vector<double> a_;                       // original standard-form matrix m_ x n_total_
  std::vector<double> b_;
  std::vector<double> b_exact_;
  std::vector<double> c_;                       // phase-two costs (minimization form)
  std::vector<double> row_sign_;                // +-1 applied to the row
  std::vector<long> row_origin_;                // original row index, or -1 - var for bound rows
  std::vector<double> t_;                       // tableau m_ x width_
  std::vector<double> obj_;                     // reduced-cost row, last entry = -objective
  std::vector<double> obj2_;                    // phase-two row carried through phase one
  std::vector<std::size_t> basis_;
  std::vector<std::size_t> nz_;                 // scratch: nonzero columns of the pivot row
  std::vector<std::size_t> row_basic_init_;     // initial basic column per row
  double const_shift_ = 0.0;

  double& T(std::size_t i, std::size_t j) { return t_[i * width_ + j]; }
  double A(std::size_t i, std::size_t j) const { return a_[i * n_total_ + j]; }

  void build_standard_form() {
    const auto& vars = lp_.variables();
    const double sense = lp_.sense() == Sense::Minimize ? 1.0 : -1.0;
    var_cols_.assign(vars.size(), {});
    std::vector<double> struct_cost;
    for (std::size_t j = 0; j < vars.size(); ++j) {
      const auto& v = vars[j];
      double c = sense * v.cost;
      if (std::isfinite(v.lower)) {
        var_cols_[j].push_back(cols_.size());
        cols_.push_back({j, ColumnMap::Shifted});
        struct_cost.push_back(c);
        const_shift_ += c * v.lower;
      } else if (std::isfinite(v.upper)) {
        var_cols_[j].push_back(cols_.size());
        cols_.push_back({j, ColumnMap::Mirrored});
        struct_cost.push_back(-c);
        const_shift_ += c * v.upper;
      } else {
        var_cols_[j].push_back(cols_.size());
        cols_.push_back({j, ColumnMap::SplitPos});
        struct_cost.push_back(c);
        var_cols_[j].push_back(cols_.size());
        cols_.push_back({j, ColumnMap::SplitNeg});
        struct_cost.push_back(-c);
      }
    }
    n_struct_ = cols_.size();

    struct StdRow {
      std::vector<double> coef;
      Relation rel;
      double rhs;
      long origin;
    };
    std::vector<StdRow> rows;
    const auto& lrows = lp_.rows();
    for (std::size_t i = 0; i < lrows.size(); ++i) {
      StdRow r{std::vector<double>(n_struct_, 0.0), lrows[i].relation, lrows[i].rhs, static_cast<long>(i)};
      for (const Term& t : lrows[i].terms) add_term(r.coef, r.rhs, t.var, t.coef);
      rows.push_back(std::move(r));
    }
    for (std::size_t j = 0; j < vars.size(); ++j) {
      const auto& v = vars[j];
      if (std::isfinite(v.lower) && std::isfinite(v.upper)) {
        StdRow r{std::vector<double>(n_struct_, 0.0), Relation::LessEqual, v.upper - v.lower, -1 - static_cast<long>(j)};
        r.coef[var_cols_[j][0]] = 1.0;
        rows.push_back(std::move(r));
      }
    }

    m_ = rows.size();
    row_sign_.assign(m_, 1.0);
    row_origin_.resize(m_);
    std::size_t slack_count = 0;
    artificial_count_ = 0;
    for (std::size_t i = 0; i < m_; ++i) {
      auto& r = rows[i];
      row_origin_[i] = r.origin;
      if (r.rhs < 0.0 || (r.rhs == 0.0 && r.rel == Relation::GreaterEqual)) {
        for (double& x : r.coef) x = -x;
        r.rhs = -r.rhs;
        row_sign_[i] = -1.0;
        if (r.rel == Relation::LessEqual) r.rel = Relation::GreaterEqual;
        else if (r.rel == Relation::GreaterEqual) r.rel = Relation::LessEqual;
      }
      if (r.rel != Relation::Equal) ++slack_count;
      if (r.rel != Relation::LessEqual) ++artificial_count_;
    }
    artificial_begin_ = n_struct_ + slack_count;
    n_total_ = artificial_begin_ + artificial_count_;
    width_ = n_total_ + 1;
    a_.assign(m_ * n_total_, 0.0);
    b_.assign(m_, 0.0);
    c_.assign(n_total_, 0.0);
    for (std::size_t j = 0; j < n_struct_; ++j) c_[j] = struct_cost[j];
    row_basic_init_.assign(m_, 0);
    std::size_t slack = n_struct_, art = artificial_begin_;
    for (std::size_t i = 0; i < m_; ++i) {
      const auto& r = rows[i];
      for (std::size_t j = 0; j < n_struct_; ++j) a_[i * n_total_ + j] = r.coef[j];
      b_[i] = r.rhs;
      if (r.rel == Relation::LessEqual) {
        a_[i * n_total_ + slack] = 1.0;
        row_basic_init_[i] = slack++;
      } else if (r.rel == Relation::GreaterEqual) {
        a_[i * n_total_ + slack++] = -1.0;
        a_[i * n_total_ + art] = 1.0;
        row_basic_init_[i] = art++;
      } else {
        a_[i * n_total_ + art] = 1.0;
        row_basic_init_[i] = art++;
      }
    }
    // Relax every inequality by a tiny amount so that no vertex is
    // degenerate (no cycling); the exact data is restored at the end.
    b_exact_ = b_;
    std::uint32_t seed = 12345u;
    for (std::size_t i = 0; i < m_; ++i) {
      seed = seed * 1664525u + 1013904223u;
      const double d = kPerturb * (1.0 + std::abs(b_[i])) * (1.0 + (seed >> 8) / 16777216.0);
      if (rows[i].rel == Relation::LessEqual) b_[i] += d;
      else if (rows[i].rel == Relation::GreaterEqual) b_[i] -= std::min(d, 0.5 * b_[i]);
    }
  }

  void add_term(std::vector<double>& coef, double& rhs, std::size_t var, double a) const {
    const auto& v = lp_.variables()[var];
    const auto& cs = var_cols_[var];
    switch (cols_[cs[0]].map) {
      case ColumnMap::Shifted:
        coef[cs[0]] += a;
        rhs -= a * v.lower;
        break;
      case ColumnMap::Mirrored:
        coef[cs[0]] -= a;
        rhs -= a * v.upper;
        break;
      default:
        coef[cs[0]] += a;
        coef[cs[1]] -= a;
        break;
    }
  }

  void build_tableau() {
    t_.assign(m_ * width_, 0.0);
    for (std::size_t i = 0; i < m_; ++i) {
      for (std::size_t j = 0; j < n_total_; ++j) T(i, j) = A(i, j);
      T(i, n_total_) = b_[i];
    }
    basis_ = row_basic_init_;
  }

  bool is_artificial(std::size_t j) const { return j >= artificial_begin_ && j < artificial_begin_ + artificial_count_; }

  /// New <= rows, each with its own slack column appended after every
  /// existing column; the slacks start basic.
  void append_rows(const std::vector<LinearRow>& rows) {
    const std::size_t k = rows.size();
    if (k == 0) return;
    const std::size_t old_m = m_, old_n = n_total_, old_w = width_;
    n_total_ = old_n + k;
    m_ = old_m + k;
    width_ = n_total_ + 1;
    std::vector<double> a(m_ * n_total_, 0.0);
    for (std::size_t i = 0; i < old_m; ++i)
      std::copy(a_.begin() + static_cast<std::ptrdiff_t>(i * old_n), a_.begin() + static_cast<std::ptrdiff_t>((i + 1) * old_n),
                a.begin() + static_cast<std::ptrdiff_t>(i * n_total_));
    std::vector<double> t(m_ * width_, 0.0);
    for (std::size_t i = 0; i < old_m; ++i) {
      std::copy(t_.begin() + static_cast<std::ptrdiff_t>(i * old_w), t_.begin() + static_cast<std::ptrdiff_t>(i * old_w + old_n),
                t.begin() + static_cast<std::ptrdiff_t>(i * width_));
      t[i * width_ + n_total_] = t_[i * old_w + old_n];
    }
    for (std::size_t r = 0; r < k; ++r) {
      const LinearRow& row = rows[r];
      lp_.add_row(row.terms, Relation::LessEqual, row.rhs);
      std::vector<double> coef(n_struct_, 0.0);
      double rhs = row.rhs;
      for (const Term& term : row.terms) add_term(coef, rhs, term.var, term.coef);
      const std::size_t i = old_m + r, slack = old_n + r;
      for (std::size_t j = 0; j < n_struct_; ++j) a[i * n_total_ + j] = coef[j];
      a[i * n_total_ + slack] = 1.0;
      b_.push_back(rhs);
      b_exact_.push_back(rhs);
      c_.push_back(0.0);
      row_sign_.push_back(1.0);
      row_origin_.push_back(static_cast<long>(lp_.row_count() - 1));
      row_basic_init_.push_back(slack);
      double* nr = &t[i * width_];
      for (std::size_t j = 0; j < n_struct_; ++j) nr[j] = coef[j];
      nr[slack] = 1.0;
      nr[n_total_] = rhs;
      for (std::size_t bi = 0; bi < old_m; ++bi) {
        double f = nr[basis_[bi]];
        if (f == 0.0) continue;
        const double* src = &t[bi * width_];
        for (std::size_t j = 0; j < width_; ++j) nr[j] -= f * src[j];
        nr[basis_[bi]] = 0.0;
      }
    }
    for (std::size_t r = 0; r < k; ++r) basis_.push_back(old_n + r);
    a_ = std::move(a);
    t_ = std::move(t);
    double z = obj_.back();
    obj_.resize(width_, 0.0);
    std::fill(obj_.begin() + static_cast<std::ptrdiff_t>(old_n), obj_.end(), 0.0);
    obj_.back() = z;
  }

  /// Dual simplex: the basis is dual feasible, some basic values negative.
  SolveStatus dual_iterate(std::size_t& iters) {
    const std::size_t limit = 5000 + 50 * (m_ + n_total_);
    std::size_t since_reinvert = 0;
    while (true) {
      if (iters >= limit) return SolveStatus::IterLimit;
      if (since_reinvert >= std::max<std::size_t>(100, m_)) {
        reinvert(false);
        since_reinvert = 0;
      }
      std::size_t r = m_;
      double worst = -1e-10;
      for (std::size_t i = 0; i < m_; ++i)
        if (T(i, n_total_) < worst) worst = T(i, n_total_), r = i;
      if (r == m_) {
        if (since_reinvert > 0 && reinvert(false)) {
          since_reinvert = 0;
          continue;
        }
        for (std::size_t i = 0; i < m_; ++i) T(i, n_total_) = std::max(T(i, n_total_), 0.0);
        return SolveStatus::Optimal;
      }
      // Two-pass ratio test on the reduced costs, mirroring the primal one.
      double bound = kInf;
      for (std::size_t j = 0; j < n_total_; ++j) {
        double a = T(r, j);
        if (!is_artificial(j) && a < -kPivotTol) bound = std::min(bound, (std::max(obj_[j], 0.0) + kCostTol) / -a);
      }
      std::size_t q = n_total_;
      for (std::size_t j = 0; j < n_total_; ++j) {
        double a = T(r, j);
        if (is_artificial(j) || a >= -kPivotTol || std::max(obj_[j], 0.0) / -a > bound) continue;
        if (q == n_total_ || -a > -T(r, q)) q = j;
      }
      if (q == n_total_) {
        if (since_reinvert > 0 && reinvert(false)) {
          since_reinvert = 0;
          continue;
        }
        return SolveStatus::Infeasible;
      }
      pivot(r, q);
      ++iters;
      ++since_reinvert;
    }
  }

  void price_row(std::vector<double>& row, const std::vector<double>& cost) {
    row.assign(width_, 0.0);
    for (std::size_t j = 0; j < n_total_; ++j) row[j] = cost[j];
    for (std::size_t i = 0; i < m_; ++i) {
      double cb = cost[basis_[i]];
      if (cb == 0.0) continue;
      for (std::size_t j = 0; j < width_; ++j) row[j] -= cb * T(i, j);
    }
  }

  void set_phase_costs(bool phase_one) {
    if (phase_one) {
      std::vector<double> c1(n_total_, 0.0);
      for (std::size_t j = artificial_begin_; j < artificial_begin_ + artificial_count_; ++j) c1[j] = 1.0;
      price_row(obj_, c1);
      price_row(obj2_, c_);
    } else {
      price_row(obj_, c_);
    }
  }

  void pivot(std::size_t r, std::size_t q) {
    double p = T(r, q);
    nz_.clear();
    for (std::size_t j = 0; j < width_; ++j) {
      if (T(r, j) == 0.0) continue;
      T(r, j) /= p;
      nz_.push_back(j);
    }
    T(r, q) = 1.0;
    for (std::size_t i = 0; i < m_; ++i) {
      if (i == r) continue;
      double f = T(i, q);
      if (f == 0.0) continue;
      double* row = &t_[i * width_];
      const double* prow = &t_[r * width_];
      for (std::size_t j : nz_) row[j] -= f * prow[j];
      row[q] = 0.0;
      if (row[n_total_] < 0.0 && row[n_total_] > -1e-11) row[n_total_] = 0.0;
    }
    auto update = [&](std::vector<double>& row) {
      double f = row[q];
      if (f == 0.0) return;
      for (std::size_t j : nz_) row[j] -= f * T(r, j);
      row[q] = 0.0;
    };
    update(obj_);
    if (!obj2_.empty()) update(obj2_);
    basis_[r] = q;
  }

  /// Rebuilds the tableau as B^{-1} [A | b] from the original data, which
  /// discards the rounding accumulated by successive pivots.
  bool reinvert(bool phase_one) {
    std::vector<double> bmat(m_ * m_);
    for (std::size_t i = 0; i < m_; ++i)
      for (std::size_t k = 0; k < m_; ++k) bmat[i * m_ + k] = A(i, basis_[k]);
    DenseLu lu;
    if (m_ == 0 || !lu.factor(std::move(bmat), m_)) return false;
    std::vector<double> col(m_);
    std::vector<bool> basic(n_total_, false);
    for (std::size_t k = 0; k < m_; ++k) basic[basis_[k]] = true;
    for (std::size_t j = 0; j <= n_total_; ++j) {
      if (j < n_total_ && basic[j]) {
        for (std::size_t i = 0; i < m_; ++i) T(i, j) = 0.0;
        continue;
      }
      for (std::size_t i = 0; i < m_; ++i) col[i] = j < n_total_ ? A(i, j) : b_[i];
      auto z = lu.solve_sparse(col);
      for (std::size_t i = 0; i < m_; ++i) T(i, j) = std::abs(z[i]) < 1e-13 ? 0.0 : z[i];
    }
    for (std::size_t k = 0; k < m_; ++k) T(k, basis_[k]) = 1.0;
    for (std::size_t i = 0; i < m_; ++i)
      if (T(i, n_total_) < 0.0 && T(i, n_total_) > -1e-9) T(i, n_total_) = 0.0;
    std::vector<double> keep2 = obj2_;
    set_phase_costs(phase_one);
    if (!phase_one) obj2_ = std::move(keep2);
    return true;
  }

  SolveStatus iterate(bool phase_one, std::size_t& iters) {
    const std::size_t limit = 5000 + 50 * (m_ + n_total_);
    std::size_t degenerate_run = 0;
    std::size_t since_reinvert = 0;
    while (true) {
      if (iters >= limit) return SolveStatus::IterLimit;
      if (since_reinvert >= std::max<std::size_t>(100, m_)) {
        reinvert(phase_one);
        since_reinvert = 0;
      }
      const bool bland = degenerate_run > 50;
      std::size_t q = n_total_;
      double best = -kCostTol;
      for (std::size_t j = 0; j < n_total_; ++j) {
        if (!phase_one && is_artificial(j)) continue;
        double d = obj_[j];
        if (d < best) {
          q = j;
          if (bland) break;
          best = d;
        }
      }
      if (q == n_total_) {
        // Confirm on a fresh tableau before declaring optimality.
        if (since_reinvert > 0 && reinvert(phase_one)) {
          since_reinvert = 0;
          continue;
        }
        return SolveStatus::Optimal;
      }

      // Harris two-pass ratio test: bound the step with a small feasibility
      // allowance, then take the largest pivot within the bound. Under
      // Bland's rule the lowest basis index wins among comparably large pivots.
      std::size_t r = m_;
      double bound = kInf;
      for (std::size_t i = 0; i < m_; ++i) {
        double a = T(i, q);
        if (a > kPivotTol) bound = std::min(bound, (std::max(T(i, n_total_), 0.0) + kFeasTol) / a);
      }
      double amax = 0.0;
      for (std::size_t i = 0; i < m_; ++i) {
        double a = T(i, q);
        if (a > kPivotTol && std::max(T(i, n_total_), 0.0) / a <= bound) amax = std::max(amax, a);
      }
      for (std::size_t i = 0; i < m_; ++i) {
        double a = T(i, q);
        if (a <= kPivotTol || std::max(T(i, n_total_), 0.0) / a > bound) continue;
        if (bland) {
          if (a >= 0.1 * amax && (r == m_ || basis_[i] < basis_[r])) r = i;
        } else if (r == m_ || a > T(r, q)) {
          r = i;
        }
      }
      const double best_ratio = r == m_ ? kInf : std::max(T(r, n_total_), 0.0) / T(r, q);
      if (r == m_) {
        if (since_reinvert > 0 && reinvert(phase_one)) {
          since_reinvert = 0;
          continue;
        }
        unbounded_col_ = q;
        return SolveStatus::Unbounded;
      }
      degenerate_run = best_ratio <= 1e-12 ? degenerate_run + 1 : 0;
      pivot(r, q);
      ++iters;
      ++since_reinvert;
    }
  }

  void drive_out_artificials() {
    for (std::size_t i = 0; i < m_; ++i) {
      if (!is_artificial(basis_[i])) continue;
      std::size_t q = n_total_;
      double best = 1e-9;
      for (std::size_t j = 0; j < artificial_begin_; ++j)
        if (std::abs(T(i, j)) > best) best = std::abs(T(i, j)), q = j;
      if (q != n_total_) pivot(i, q);
    }
    obj2_.clear();
  }

  std::size_t unbounded_col_ = 0;

  std::vector<double> to_original(const std::vector<double>& xs) const {
    const auto& vars = lp_.variables();
    std::vector<double> x(vars.size(), 0.0);
    for (std::size_t j = 0; j < vars.size(); ++j) {
      const auto& cs = var_cols_[j];
      switch (cols_[cs[0]].map) {
        case ColumnMap::Shifted: x[j] = vars[j].lower + xs[cs[0]]; break;
        case ColumnMap::Mirrored: x[j] = vars[j].upper - xs[cs[0]]; break;
        default: x[j] = xs[cs[0]] - xs[cs[1]]; break;
      }
    }
    return x;
  }

  std::vector<double> unbounded_ray() const {
    std::vector<double> d(n_total_, 0.0);
    d[unbounded_col_] = 1.0;
    for (std::size_t i = 0; i < m_; ++i) d[basis_[i]] -= t_[i * width_ + unbounded_col_];
    const auto& vars = lp_.variables();
    std::vector<double> ray(vars.size(), 0.0);
    for (std::size_t j = 0; j < vars.size(); ++j) {
      const auto& cs = var_cols_[j];
      switch (cols_[cs[0]].map) {
        case ColumnMap::Shifted: ray[j] = d[cs[0]]; break;
        case ColumnMap::Mirrored: ray[j] = -d[cs[0]]; break;
        default: ray[j] = d[cs[0]] - d[cs[1]]; break;
      }
    }
    return ray;
  }

  std::vector<double> phase_one_multipliers() const {
    // Reduced cost of the initial basic column of row i is c1 - y_i.
    std::vector<double> y(lp_.row_count(), 0.0);
    for (std::size_t i = 0; i < m_; ++i) {
      if (row_origin_[i] < 0) continue;
      std::size_t col = row_basic_init_[i];
      double c1 = is_artificial(col) ? 1.0 : 0.0;
      y[static_cast<std::size_t>(row_origin_[i])] = row_sign_[i] * (c1 - obj_[col]);
    }
    return y;
  }

  void finish(SolveOutcome& out) {
    // Re-solve the final basis against the original standard-form data.
    std::vector<double> bmat(m_ * m_);
    for (std::size_t i = 0; i < m_; ++i)
      for (std::size_t k = 0; k < m_; ++k) bmat[i * m_ + k] = A(i, basis_[k]);
    std::vector<double> xs(n_total_, 0.0);
    std::vector<double> y(m_, 0.0);
    DenseLu lu;
    if (m_ > 0 && lu.factor(bmat, m_)) {
      auto xb = lu.solve(b_);
      for (std::size_t k = 0; k < m_; ++k) xs[basis_[k]] = xb[k];
      std::vector<double> cb(m_);
      for (std::size_t k = 0; k < m_; ++k) cb[k] = c_[basis_[k]];
      y = lu.solve_transposed(cb);
    } else {
      for (std::size_t i = 0; i < m_; ++i) xs[basis_[i]] = T(i, n_total_);
      for (std::size_t i = 0; i < m_; ++i) y[i] = c_[row_basic_init_[i]] - obj_[row_basic_init_[i]];
    }
    for (std::size_t j = 0; j < n_struct_; ++j) xs[j] = std::max(xs[j], 0.0);
    const double sense = lp_.sense() == Sense::Minimize ? 1.0 : -1.0;
    out.status = SolveStatus::Optimal;
    out.x = to_original(xs);
    const auto& vars = lp_.variables();
    for (std::size_t j = 0; j < vars.size(); ++j) out.x[j] = std::clamp(out.x[j], vars[j].lower, vars[j].upper);
    out.value = lp_.objective(out.x);
    out.row_duals.assign(lp_.row_count(), 0.0);
    for (std::size_t i = 0; i < m_; ++i)
      if (row_origin_[i] >= 0) out.row_duals[static_cast<std::size_t>(row_origin_[i])] = sense * row_sign_[i] * y[i];
    out.reduced_costs.assign(vars.size(), 0.0);
    for (std::size_t j = 0; j < vars.size(); ++j) out.reduced_costs[j] = vars[j].cost;
    const auto& rows = lp_.rows();
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (const Term& t : rows[i].terms) out.reduced_costs[t.var] -= t.coef * out.row_duals[i];
  }
};

}  // namespace detail

/// Solves the program; `tol` is the feasibility tolerance used to declare
/// infeasibility after phase one.
inline SolveOutcome solve_lp(const LinearProgram& lp, double tol = 1e-9) {
  detail::Simplex simplex(lp, tol);
  return simplex.run();
}

/// Rigorous dual bound for an Optimal outcome: sign-infeasible multipliers
/// are projected to zero, and the bound is b.y plus the best bound terms
/// from the reduced costs. Returns -inf (min) / +inf (max) if the projected
/// multipliers leave a reduced cost that pushes against an infinite bound.
inline double lp_dual_bound(const LinearProgram& lp, const SolveOutcome& out, double tol = 1e-9) {
  const bool minimize = lp.sense() == Sense::Minimize;
  const auto& rows = lp.rows();
  const auto& vars = lp.variables();
  std::vector<double> y = out.row_duals;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    // Minimization: <= rows need y <= 0, >= rows y >= 0; maximization flips.
    double s = minimize ? 1.0 : -1.0;
    if (rows[i].relation == Relation::LessEqual && s * y[i] > 0.0) y[i] = 0.0;
    if (rows[i].relation == Relation::GreaterEqual && s * y[i] < 0.0) y[i] = 0.0;
  }
  std::vector<double> rc(vars.size());
  for (std::size_t j = 0; j < vars.size(); ++j) rc[j] = vars[j].cost;
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (const Term& t : rows[i].terms) rc[t.var] -= t.coef * y[i];
  double bound = lp.objective_constant();
  for (std::size_t i = 0; i < rows.size(); ++i) bound += rows[i].rhs * y[i];
  for (std::size_t j = 0; j < vars.size(); ++j) {
    double d = minimize ? rc[j] : -rc[j];  // d >= 0 wants the lower bound
    if (std::abs(d) <= tol) {
      // Treat tiny reduced costs at the point actually attained.
      bound += rc[j] * out.x[j];
      continue;
    }
    double at = d > 0.0 ? vars[j].lower : vars[j].upper;
    if (!std::isfinite(at)) return minimize ? -kInf : kInf;
    bound += rc[j] * at;
  }
  return bound;
}

}  // namespace rhedge
