#include <gtest/gtest.h>

#include "support.hpp"

namespace rhedge {
namespace {

using testing::binomial;
using testing::trinomial;

MarketSpec proportional(const ScenarioTree& t, double eps) {
  MarketSpec m = frictionless_market(t);
  for (int j = 1; j <= t.asset_count(); ++j)
    for (int s = 0; s < t.horizon(); ++s) m.frictions.set(j, s, ProportionalFriction{eps});
  return m;
}

TEST(Primal, NoTradingGivesTheMaximum) {
  ScenarioTree flat = testing::one_period({1.0, 1.0, 1.0});
  PathVector x{0.3, 2.5, -1.0};
  HedgeResult r = superhedge(flat, frictionless_market(flat), AcceptanceSpec::strict(), x);
  ASSERT_TRUE(r.ok());
  EXPECT_NEAR(r.price, 2.5, 1e-9);
}

TEST(Primal, BinomialCallReplicates) {
  ScenarioTree t = binomial();
  HedgeResult r = superhedge(t, frictionless_market(t), AcceptanceSpec::strict(), PathVector{1.0, 0.0});
  ASSERT_TRUE(r.ok());
  EXPECT_NEAR(r.price, 1.0 / 3.0, 1e-9);
  EXPECT_NEAR(r.strategy.holdings[0][t.root()], 2.0 / 3.0, 1e-9);
  for (double v : r.residual) EXPECT_NEAR(v, 0.0, 1e-9);
}

TEST(Primal, ClosedFormFixtures) {
  for (const Fixture& f : closed_form_fixtures()) {
    const Instance& in = f.instance;
    HedgeResult r = superhedge(in.tree, in.market, in.acceptance, in.payoff);
    ASSERT_TRUE(r.ok()) << in.name;
    EXPECT_NEAR(r.price, f.value, 1e-6) << in.name;
  }
  // The same values from the formulas, not the fixture table.
  const double e = std::exp(1.0);
  ScenarioTree flat = testing::one_period({1.0, 1.0});
  AcceptanceSpec ent = AcceptanceSpec::robust({{{0.5, 0.5}, EntropicLoss{1.0}}});
  EXPECT_NEAR(superhedge(flat, frictionless_market(flat), ent, PathVector{1.0, 0.0}).price, std::log((e + 1) / 2), 1e-6);
  AcceptanceSpec av = AcceptanceSpec::robust({{{0.5, 0.5}, AVaRLoss{0.5}}});
  EXPECT_NEAR(superhedge(flat, frictionless_market(flat), av, PathVector{1.0, 0.0}).price, 1.0, 1e-9);
}

TEST(Primal, TrinomialInterval) {
  ScenarioTree t = trinomial();
  PriceBounds b = price_bounds(t, frictionless_market(t), AcceptanceSpec::strict(), PathVector{1.0, 0.0, 0.0});
  EXPECT_NEAR(b.lower.price, 0.0, 1e-9);
  EXPECT_NEAR(b.upper.price, 1.0 / 3.0, 1e-9);
}

TEST(Primal, ConstantPayoffCostsItsValue) {
  ScenarioTree t = trinomial();
  for (double c : {-2.0, 0.0, 0.7}) {
    PriceBounds b = price_bounds(t, proportional(t, 0.1), AcceptanceSpec::strict(), PathVector(3, c));
    EXPECT_NEAR(b.lower.price, c, 1e-9);
    EXPECT_NEAR(b.upper.price, c, 1e-9);
  }
}

TEST(Primal, FrictionWidensTheInterval) {
  ScenarioTree t = binomial();
  PathVector x{1.0, 0.0};
  PriceBounds b = price_bounds(t, proportional(t, 0.5), AcceptanceSpec::strict(), x);
  EXPECT_GT(b.upper.price, 1.0 / 3.0 + 1e-6);
  EXPECT_LE(b.lower.price, 1.0 / 3.0 + 1e-9);
  EXPECT_LT(b.lower.price, b.upper.price);
}

TEST(Primal, ResidualIsAcceptable) {
  std::mt19937_64 rng(21);
  RandomOptions opt;
  opt.max_paths = 9;
  for (int i = 0; i < 20; ++i) {
    Instance in = random_instance(rng, MarketClass::Proportional, i % 2 ? AcceptanceClass::AVaR : AcceptanceClass::Strict, opt);
    HedgeResult r = superhedge(in.tree, in.market, in.acceptance, in.payoff);
    if (r.status == SolveStatus::Unbounded) continue;  // arbitrage under the reference measure
    ASSERT_TRUE(r.ok()) << in.name;
    EXPECT_LE(acceptance_risk(in.acceptance, r.residual), 1e-7) << in.name;
  }
}

TEST(Primal, ShapeErrors) {
  ScenarioTree t = binomial();
  EXPECT_THROW(superhedge(t, frictionless_market(t), AcceptanceSpec::strict(), PathVector{1.0}), InputError);
}

struct Prices {
  double super, sub;
};

Prices both(const Instance& in, const PathVector& x) {
  PriceBounds b = price_bounds(in.tree, in.market, in.acceptance, x);
  return {b.upper.price, b.lower.price};
}

// Monotone, cash-additive, convex; larger acceptance sets and smaller
// frictions lower the superhedging price.
TEST(Primal, PricingFunctionalProperties) {
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RandomOptions opt;
  opt.max_paths = 9;
  const MarketClass classes[] = {MarketClass::Frictionless, MarketClass::Proportional, MarketClass::PiecewiseLinear,
                                 MarketClass::ShortSaleBan};
  for (int i = 0; i < 40; ++i) {
    Instance in = random_instance(rng, classes[i % 4], i % 3 ? AcceptanceClass::AVaR : AcceptanceClass::Strict, opt);
    const std::size_t n = in.tree.path_count();
    PathVector x = in.payoff, y = testing::uniform_vec(rng, n, -1, 2), up = x, cash = x, mid(n);
    for (double& v : up) v += u(rng);
    const double c = u(rng) - 0.5;
    for (double& v : cash) v += c;
    for (std::size_t w = 0; w < n; ++w) mid[w] = 0.5 * (x[w] + y[w]);
    const Prices px = both(in, x);
    if (!std::isfinite(px.super)) continue;  // arbitrage in a random instance
    EXPECT_LE(px.sub, px.super + 1e-7) << in.name;
    EXPECT_LE(px.super, both(in, up).super + 1e-7) << in.name;
    EXPECT_NEAR(both(in, cash).super, px.super + c, 1e-7) << in.name;
    EXPECT_LE(both(in, mid).super, 0.5 * (px.super + both(in, y).super) + 1e-7) << in.name;

    Instance strict = in;
    strict.acceptance = AcceptanceSpec::strict();
    EXPECT_LE(px.super, both(strict, x).super + 1e-7) << in.name;

    if (classes[i % 4] == MarketClass::ShortSaleBan) continue;  // bans go without frictions
    Instance more = in;
    for (int j = 1; j <= in.tree.asset_count(); ++j)
      for (int t = 0; t < in.tree.horizon(); ++t) {
        const Friction& f = in.market.frictions.at(j, t);
        double eps = std::holds_alternative<ProportionalFriction>(f) ? std::get<ProportionalFriction>(f).eps : 0.0;
        if (!std::holds_alternative<PiecewiseLinearFriction>(f)) more.market.frictions.set(j, t, ProportionalFriction{eps + 0.1});
      }
    EXPECT_LE(px.super, both(more, x).super + 1e-7) << in.name;
  }
}

TEST(Primal, AVaRLevelOrdersThePrices) {
  std::mt19937_64 rng(23);
  RandomOptions opt;
  opt.max_paths = 9;
  for (int i = 0; i < 15; ++i) {
    Instance in = random_instance(rng, MarketClass::Proportional, AcceptanceClass::AVaR, opt);
    const PathVector q = in.acceptance.entries[0].measure;
    double prev = -kInf;
    // Smaller lambda: fewer acceptable positions, higher price.
    for (double lam : {1.0, 0.6, 0.3, 0.1}) {
      Instance v = in;
      v.acceptance = AcceptanceSpec::robust({{q, AVaRLoss{lam}}});
      HedgeResult r = superhedge(v.tree, v.market, v.acceptance, v.payoff);
      ASSERT_TRUE(r.ok() || r.status == SolveStatus::Unbounded) << in.name;
      EXPECT_GE(r.price, prev - 1e-7) << in.name << " lambda " << lam;
      prev = r.price;
    }
  }
}

TEST(Primal, SmoothInstances) {
  ScenarioTree t = binomial();
  MarketSpec m = frictionless_market(t);
  m.frictions.set(1, 0, PowerFriction{0.5, 2.0});
  PriceBounds b = price_bounds(t, m, AcceptanceSpec::strict(), PathVector{1.0, 0.0});
  ASSERT_TRUE(b.upper.ok());
  ASSERT_TRUE(b.lower.ok());
  EXPECT_GT(b.upper.price, 1.0 / 3.0);
  EXPECT_LT(b.lower.price, 1.0 / 3.0);
  EXPECT_LE(b.lower.price, b.upper.price);
  for (std::size_t k = 1; k < b.upper.bound_history.size(); ++k)
    EXPECT_GE(b.upper.bound_history[k], b.upper.bound_history[k - 1] - 1e-12);
}

}  // namespace
}  // namespace rhedge
