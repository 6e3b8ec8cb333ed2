#include <gtest/gtest.h>

#include <array>

#include "support.hpp"

namespace rhedge {
namespace {

TEST(Lp, BoxedMaximum) {
  LinearProgram lp(Sense::Maximize);
  std::size_t x = lp.add_variable(-kInf, kInf, 1.0);
  lp.add_row({{x, 1.0}}, Relation::LessEqual, 3.0);
  SolveOutcome out = solve_lp(lp);
  ASSERT_EQ(out.status, SolveStatus::Optimal);
  EXPECT_NEAR(out.value, 3.0, 1e-12);
  EXPECT_NEAR(out.x[x], 3.0, 1e-12);
  EXPECT_NEAR(out.row_duals[0], 1.0, 1e-12);
}

TEST(Lp, Infeasible) {
  LinearProgram lp;
  std::size_t x = lp.add_variable(-kInf, kInf, 1.0);
  lp.add_row({{x, 1.0}}, Relation::GreaterEqual, 1.0);
  lp.add_row({{x, 1.0}}, Relation::LessEqual, 0.0);
  SolveOutcome out = solve_lp(lp);
  EXPECT_EQ(out.status, SolveStatus::Infeasible);
  EXPECT_TRUE(out.x.empty());
}

TEST(Lp, Unbounded) {
  LinearProgram lp(Sense::Maximize);
  lp.add_variable(-kInf, kInf, 1.0);
  SolveOutcome out = solve_lp(lp);
  EXPECT_EQ(out.status, SolveStatus::Unbounded);
  EXPECT_EQ(out.value, kInf);
  ASSERT_EQ(out.ray.size(), 1u);
  EXPECT_GT(out.ray[0], 0.0);
}

TEST(Lp, CrossedBoundsAreInfeasible) {
  LinearProgram lp;
  lp.add_variable(1.0, 0.0, 1.0);
  EXPECT_EQ(solve_lp(lp).status, SolveStatus::Infeasible);
}

TEST(Lp, BadDataIsRejected) {
  LinearProgram lp;
  std::size_t x = lp.add_variable(0.0, 1.0, 1.0);
  lp.add_row({{x + 3, 1.0}}, Relation::LessEqual, 1.0);
  EXPECT_THROW(solve_lp(lp), std::invalid_argument);
  LinearProgram nan;
  std::size_t y = nan.add_variable(0.0, 1.0, kNaN);
  nan.add_row({{y, 1.0}}, Relation::LessEqual, 1.0);
  EXPECT_THROW(solve_lp(nan), std::invalid_argument);
}

TEST(Lp, DumpListsVariablesAndRows) {
  LinearProgram lp(Sense::Maximize);
  std::size_t x = lp.add_variable(0.0, 2.0, 1.5, "x");
  lp.add_row({{x, 1.0}}, Relation::LessEqual, 3.0);
  const std::string d = lp.dump();
  EXPECT_NE(d.find("lp max vars=1 rows=1"), std::string::npos) << d;
  EXPECT_NE(d.find("var 0 0 2 1.5 x"), std::string::npos) << d;
  EXPECT_NE(d.find("row 0 <= 3 : 0:1"), std::string::npos) << d;
}

// Two variables in a box plus random <= rows: the optimum sits on a vertex,
// and every vertex is an intersection of two tight constraints.
double brute_force_2d(const std::vector<std::array<double, 3>>& rows, std::array<double, 2> c, double box) {
  std::vector<std::array<double, 3>> all = rows;
  all.push_back({1, 0, box});
  all.push_back({-1, 0, box});
  all.push_back({0, 1, box});
  all.push_back({0, -1, box});
  double best = -kInf;
  for (std::size_t i = 0; i < all.size(); ++i)
    for (std::size_t j = i + 1; j < all.size(); ++j) {
      const auto& a = all[i];
      const auto& b = all[j];
      double det = a[0] * b[1] - a[1] * b[0];
      if (std::abs(det) < 1e-12) continue;
      double x = (a[2] * b[1] - a[1] * b[2]) / det, y = (a[0] * b[2] - a[2] * b[0]) / det;
      bool ok = true;
      for (const auto& r : all) ok = ok && r[0] * x + r[1] * y <= r[2] + 1e-9;
      if (ok) best = std::max(best, c[0] * x + c[1] * y);
    }
  return best;
}

TEST(Lp, AgreesWithVertexEnumerationIn2d) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<std::array<double, 3>> rows;
    const int m = 1 + trial % 6;
    for (int i = 0; i < m; ++i) rows.push_back({u(rng), u(rng), u(rng)});
    std::array<double, 2> c{u(rng), u(rng)};
    LinearProgram lp(Sense::Maximize);
    std::size_t x = lp.add_variable(-4.0, 4.0, c[0]), y = lp.add_variable(-4.0, 4.0, c[1]);
    for (const auto& r : rows) lp.add_row({{x, r[0]}, {y, r[1]}}, Relation::LessEqual, r[2]);
    const double expect = brute_force_2d(rows, c, 4.0);
    SolveOutcome out = solve_lp(lp);
    if (expect == -kInf) {
      EXPECT_EQ(out.status, SolveStatus::Infeasible) << trial;
    } else {
      ASSERT_EQ(out.status, SolveStatus::Optimal) << trial;
      EXPECT_NEAR(out.value, expect, 1e-8) << trial;
      EXPECT_LE(lp.max_violation(out.x), 1e-9);
    }
  }
}

LinearProgram random_feasible_lp(std::mt19937_64& rng, int n, int m, Sense sense) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  LinearProgram lp(sense);
  std::vector<double> x0(n);
  for (int j = 0; j < n; ++j) {
    x0[j] = u(rng);
    double lo = (j % 3 == 0) ? -kInf : x0[j] - 2.0, hi = (j % 3 == 1) ? kInf : x0[j] + 2.0;
    lp.add_variable(lo, hi, u(rng));
  }
  for (int i = 0; i < m; ++i) {
    std::vector<Term> terms;
    double act = 0.0;
    for (int j = 0; j < n; ++j) {
      double a = u(rng);
      terms.push_back({static_cast<std::size_t>(j), a});
      act += a * x0[j];
    }
    const int kind = i % 3;
    lp.add_row(terms, kind == 0 ? Relation::LessEqual : kind == 1 ? Relation::GreaterEqual : Relation::Equal,
               kind == 0 ? act + std::abs(u(rng)) : kind == 1 ? act - std::abs(u(rng)) : act);
  }
  return lp;
}

// Strong duality: the projected multipliers certify the optimum.
TEST(Lp, StrongDualityOnRandomPrograms) {
  std::mt19937_64 rng(12);
  int optimal = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const Sense sense = trial % 2 ? Sense::Maximize : Sense::Minimize;
    LinearProgram lp = random_feasible_lp(rng, 2 + trial % 7, 1 + trial % 9, sense);
    SolveOutcome out = solve_lp(lp);
    ASSERT_NE(out.status, SolveStatus::Infeasible) << trial;
    if (out.status != SolveStatus::Optimal) continue;
    ++optimal;
    EXPECT_LE(lp.max_violation(out.x), 1e-9);
    EXPECT_NEAR(lp_dual_bound(lp, out), out.value, 1e-7 * (1 + std::abs(out.value))) << trial;
    EXPECT_NEAR(lp.objective(out.x), out.value, 1e-9 * (1 + std::abs(out.value)));
  }
  EXPECT_GT(optimal, 50);
}

TEST(Lp, IsDeterministic) {
  std::mt19937_64 rng(13);
  LinearProgram lp = random_feasible_lp(rng, 8, 8, Sense::Minimize);
  SolveOutcome a = solve_lp(lp), b = solve_lp(lp);
  EXPECT_EQ(a.status, b.status);
  EXPECT_EQ(a.value, b.value);
  EXPECT_EQ(a.x, b.x);
  EXPECT_EQ(a.iterations, b.iterations);
}

// Beale's example cycles under textbook Dantzig pricing without
// anti-cycling safeguards.
TEST(Lp, BealeCyclingExample) {
  LinearProgram lp;
  std::size_t x1 = lp.add_variable(0, kInf, -0.75), x2 = lp.add_variable(0, kInf, 150),
              x3 = lp.add_variable(0, kInf, -0.02), x4 = lp.add_variable(0, kInf, 6);
  lp.add_row({{x1, 0.25}, {x2, -60}, {x3, -0.04}, {x4, 9}}, Relation::LessEqual, 0);
  lp.add_row({{x1, 0.5}, {x2, -90}, {x3, -0.02}, {x4, 3}}, Relation::LessEqual, 0);
  lp.add_row({{x3, 1}}, Relation::LessEqual, 1);
  SolveOutcome out = solve_lp(lp);
  ASSERT_EQ(out.status, SolveStatus::Optimal);
  EXPECT_NEAR(out.value, -0.05, 1e-10);
}

TEST(Lp, DegenerateAndRedundantRows) {
  LinearProgram lp(Sense::Maximize);
  std::size_t x = lp.add_variable(0, kInf, 1), y = lp.add_variable(0, kInf, 1);
  lp.add_row({{x, 1}, {y, 1}}, Relation::LessEqual, 1);
  lp.add_row({{x, 2}, {y, 2}}, Relation::LessEqual, 2);
  lp.add_row({{x, 1}, {y, 1}}, Relation::Equal, 1);
  lp.add_row({{x, 1}}, Relation::LessEqual, 1);
  lp.add_row({{y, 1}}, Relation::LessEqual, 1);
  lp.add_row({{x, 1}, {y, -1}}, Relation::Equal, 0);
  SolveOutcome out = solve_lp(lp);
  ASSERT_EQ(out.status, SolveStatus::Optimal);
  EXPECT_NEAR(out.value, 1.0, 1e-12);
  EXPECT_NEAR(out.x[x], 0.5, 1e-12);
}

TEST(Convex, ExponentialConstraint) {
  // min x s.t. exp(-x) <= 1, i.e. x >= 0.
  ConvexProgram cp;
  std::size_t x = cp.lp.add_variable(-10.0, 10.0, 1.0);
  SmoothConstraint c;
  c.vars = {x};
  c.value = [](std::span<const double> v) { return std::exp(-v[0]) - 1.0; };
  c.cut = [](std::span<const double> v) {
    const double g = -std::exp(-v[0]);
    return tangent_cut(std::exp(-v[0]) - 1.0, std::span<const double>(&g, 1), v);
  };
  c.label = "exp";
  cp.smooth.push_back(c);
  SolveOutcome out = solve_convex(cp, {1e-10, 400, 1e-9});
  ASSERT_EQ(out.status, SolveStatus::Optimal);
  EXPECT_NEAR(out.value, 0.0, 1e-6);
  for (std::size_t k = 1; k < out.bound_history.size(); ++k) EXPECT_GE(out.bound_history[k], out.bound_history[k - 1]);
}

TEST(Convex, IterLimitBracketsTheOptimum) {
  ConvexProgram cp;
  std::size_t x = cp.lp.add_variable(-10.0, 10.0, 1.0);
  SmoothConstraint c;
  c.vars = {x};
  c.value = [](std::span<const double> v) { return std::exp(-v[0]) - 1.0; };
  c.cut = [](std::span<const double> v) {
    const double g = -std::exp(-v[0]);
    return tangent_cut(std::exp(-v[0]) - 1.0, std::span<const double>(&g, 1), v);
  };
  cp.smooth.push_back(c);
  SolveOutcome out = solve_convex(cp, {1e-14, 3, 1e-9});
  EXPECT_EQ(out.status, SolveStatus::IterLimit);
  EXPECT_LE(out.bound, 0.0);
  EXPECT_EQ(out.bound_history.size(), 3u);
}

TEST(Convex, LinearOnlyMatchesTheSimplex) {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    ConvexProgram cp;
    cp.lp = random_feasible_lp(rng, 5, 5, Sense::Minimize);
    SolveOutcome a = solve_convex(cp), b = solve_lp(cp.lp);
    EXPECT_EQ(a.status, b.status);
    if (a.status == SolveStatus::Optimal) {
      EXPECT_EQ(a.value, b.value);
      EXPECT_EQ(a.x, b.x);
    }
  }
}

// The entropic closed form as a program: min c s.t. 0.5 exp(-(1 - c)) +
// 0.5 exp(-(0 - c)) <= 1, which gives log((e + 1) / 2) with lambda = 1.
TEST(Convex, EntropicCapital) {
  ConvexProgram cp;
  std::size_t c = cp.lp.add_variable(-10.0, 10.0, 1.0);
  SmoothConstraint s;
  s.vars = {c};
  auto g = [](double v) { return 0.5 * std::exp(v - 1.0) + 0.5 * std::exp(v) - 1.0; };
  s.value = [g](std::span<const double> v) { return g(v[0]); };
  s.cut = [g](std::span<const double> v) {
    const double d = 0.5 * std::exp(v[0] - 1.0) + 0.5 * std::exp(v[0]);
    return tangent_cut(g(v[0]), std::span<const double>(&d, 1), v);
  };
  cp.lp.set_sense(Sense::Maximize);
  cp.smooth.push_back(s);
  SolveOutcome out = solve_convex(cp, {1e-12, 400, 1e-9});
  ASSERT_EQ(out.status, SolveStatus::Optimal);
  // Largest c with E exp(c - X) <= 1: c = -log E exp(-X).
  EXPECT_NEAR(out.value, -std::log(0.5 * std::exp(-1.0) + 0.5), 1e-8);
}

}  // namespace
}  // namespace rhedge
