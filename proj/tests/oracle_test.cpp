#include <gtest/gtest.h>

#include "support.hpp"

namespace rhedge {
namespace {

TEST(Oracle, VertexEnumerationOnTheBinomial) {
  ScenarioTree t = testing::binomial();
  OracleReport r = vertex_dual_value(t, frictionless_market(t), AcceptanceSpec::strict(), PathVector{1.0, 0.0});
  EXPECT_NEAR(r.value, 1.0 / 3.0, 1e-12);
  EXPECT_EQ(r.method, OracleMethod::VertexEnum);
  EXPECT_FALSE(r.infeasible);
  auto v = dual_vertices(t, frictionless_market(t), AcceptanceSpec::strict());
  ASSERT_EQ(v.size(), 1u);
  EXPECT_NEAR(v[0][0], 1.0 / 3.0, 1e-12);
}

TEST(Oracle, TrinomialVertices) {
  ScenarioTree t = testing::trinomial();
  auto v = dual_vertices(t, frictionless_market(t), AcceptanceSpec::strict());
  // The martingale measures form a segment between (1/3, 0, 2/3) and (0, 1, 0).
  ASSERT_EQ(v.size(), 2u);
  std::sort(v.begin(), v.end());
  EXPECT_NEAR(v[0][1], 1.0, 1e-12);
  EXPECT_NEAR(v[1][0], 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(v[1][2], 2.0 / 3.0, 1e-12);
}

TEST(Oracle, VertexEnumerationDetectsArbitrage) {
  ScenarioTree t = testing::one_period({2.0, 1.5});
  OracleReport r = vertex_dual_value(t, frictionless_market(t), AcceptanceSpec::strict(), PathVector{1.0, 0.0});
  EXPECT_TRUE(r.infeasible);
}

TEST(Oracle, RefusesLargeTrees) {
  ScenarioTree t = testing::one_period(std::vector<double>(13, 1.0));
  EXPECT_THROW(vertex_dual_value(t, frictionless_market(t), AcceptanceSpec::strict(), PathVector(13, 0.0)), InputError);
}

TEST(Oracle, GridOnTheBinomialCall) {
  ScenarioTree t = testing::binomial();
  OracleReport r = grid_primal_value(t, frictionless_market(t), AcceptanceSpec::strict(), PathVector{1.0, 0.0}, {2.0, 601});
  // The replicating holding 2/3 lies on the grid (step 1/150).
  EXPECT_NEAR(r.value, 1.0 / 3.0, 1e-9);
}

TEST(Oracle, ClosedFormFixturesAgreeWithVertices) {
  for (const Fixture& f : closed_form_fixtures()) {
    const Instance& in = f.instance;
    if (!in.acceptance.is_strict() && std::holds_alternative<EntropicLoss>(in.acceptance.entries[0].loss)) continue;
    EXPECT_NEAR(vertex_dual_value(in.tree, in.market, in.acceptance, in.payoff).value, f.value, 1e-9) << in.name;
  }
}

// Sandwich: samples <= engine = vertex optimum <= grid on random instances.
TEST(Oracle, SandwichOnRandomInstances) {
  std::mt19937_64 rng(41);
  RandomOptions opt;
  opt.max_paths = 8;
  opt.max_horizon = 2;
  const MarketClass classes[] = {MarketClass::Frictionless, MarketClass::Proportional, MarketClass::PiecewiseLinear,
                                 MarketClass::ShortSaleBan};
  int compared = 0;
  for (int i = 0; i < 24; ++i) {
    Instance in = random_instance(rng, classes[i % 4], i % 2 ? AcceptanceClass::AVaR : AcceptanceClass::Strict, opt);
    HedgeResult p = superhedge(in.tree, in.market, in.acceptance, in.payoff);
    OracleReport v = vertex_dual_value(in.tree, in.market, in.acceptance, in.payoff, p.price);
    if (v.infeasible) {
      EXPECT_EQ(p.price, -kInf) << in.name;
      continue;
    }
    ASSERT_TRUE(p.ok()) << in.name;
    EXPECT_NEAR(v.value, p.price, 1e-6) << in.name;
    OracleReport s = measure_sample_value(in.tree, in.market, in.acceptance, in.payoff, 200, 7 + i);
    EXPECT_LE(s.value, p.price + 1e-7) << in.name;
    std::size_t dims = in.tree.nonterminals().size() * in.tree.asset_count() + 2 * in.market.instruments.size();
    if (dims <= 2) {
      OracleReport g = grid_primal_value(in.tree, in.market, in.acceptance, in.payoff, {4.0, 81});
      EXPECT_GE(g.value, p.price - 1e-7) << in.name;
    }
    ++compared;
  }
  EXPECT_GT(compared, 10);
}

}  // namespace
}  // namespace rhedge
