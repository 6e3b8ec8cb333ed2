#pragma once

// Fixture trees, hand-rolled random generators and closed-form oracles that
// do not go through the library's builders.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "rhedge/rhedge.hpp"

namespace rhedge::testing {

/// One period, S0 = 1 at the root and `num` at the children, S1: 1 -> children.
inline ScenarioTree one_period(const std::vector<double>& children, double num = 1.0) {
  TreeSpec s{1, 1, {}};
  s.nodes.push_back({0, 0, std::nullopt, {1.0, 1.0}});
  for (std::size_t i = 0; i < children.size(); ++i) s.nodes.push_back({i + 1, 1, NodeId{0}, {num, children[i]}});
  return build_tree(s);
}

inline ScenarioTree binomial() { return one_period({2.0, 0.5}); }
inline ScenarioTree trinomial() { return one_period({2.0, 1.0, 0.5}); }

/// Zero-then-positive: node 1 has price 0 and revives to 1 on path 1.
inline ScenarioTree revival_tree() {
  TreeSpec s{2, 1, {}};
  s.nodes = {{0, 0, std::nullopt, {1, 1}}, {1, 1, NodeId{0}, {1, 0}}, {2, 2, NodeId{1}, {1, 0}}, {3, 2, NodeId{1}, {1, 1}},
             {4, 1, NodeId{0}, {1, 2}},    {5, 2, NodeId{4}, {1, 3}}, {6, 2, NodeId{4}, {1, 1}}};
  return build_tree(s);
}

inline StaticInstrument instrument(std::string name, PathVector payoff, double bid = -kInf, double ask = kInf) {
  StaticInstrument ins;
  ins.name = std::move(name);
  ins.payoff = std::move(payoff);
  ins.bid = bid;
  ins.ask = ask;
  return ins;
}

inline std::vector<double> uniform_vec(std::mt19937_64& rng, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

/// Probability vector with entries bounded away from zero.
inline std::vector<double> probability(std::mt19937_64& rng, std::size_t n) {
  std::vector<double> v = uniform_vec(rng, n, 0.05, 1.0);
  const double s = std::accumulate(v.begin(), v.end(), 0.0);
  for (double& x : v) x /= s;
  return v;
}

/// Random full tree with T periods, B children per node, J assets, random
/// numeraire growth and log-uniform prices (no arbitrage guarantee).
inline ScenarioTree random_tree(std::mt19937_64& rng, int T, int B, int J) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  TreeSpec s{T, J, {}};
  std::vector<std::size_t> frontier{0};
  s.nodes.push_back({0, 0, std::nullopt, std::vector<double>(J + 1, 1.0)});
  for (int t = 1; t <= T; ++t) {
    std::vector<std::size_t> next;
    for (std::size_t p : frontier)
      for (int b = 0; b < B; ++b) {
        NodeSpec n{s.nodes.size(), t, p, std::vector<double>(J + 1)};
        n.prices[0] = s.nodes[p].prices[0] * (1.0 + 0.05 * u(rng));
        for (int j = 1; j <= J; ++j) n.prices[j] = 0.2 * std::exp(u(rng) * std::log(25.0));
        next.push_back(n.id);
        s.nodes.push_back(std::move(n));
      }
    frontier = std::move(next);
  }
  return build_tree(s);
}

/// max E^P X over dP/dQ <= 1/lambda: fill the largest outcomes first.
inline double avar_sorting_value(const std::vector<double>& q, const std::vector<double>& x, double lambda) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] > x[b]; });
  double left = 1.0, v = 0.0;
  for (std::size_t w : idx) {
    const double take = std::min(left, q[w] / lambda);
    v += take * x[w];
    left -= take;
    if (left <= 0.0) break;
  }
  return v;
}

/// (1/lambda) log E^Q exp(lambda X), computed with a shifted exponent.
inline double entropic_value(const std::vector<double>& q, const std::vector<double>& x, double lambda) {
  const double mx = *std::max_element(x.begin(), x.end());
  double s = 0.0;
  for (std::size_t w = 0; w < x.size(); ++w) s += q[w] * std::exp(lambda * (x[w] - mx));
  return mx + std::log(s) / lambda;
}

inline double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace rhedge::testing
