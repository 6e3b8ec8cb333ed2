#pragma once

/// \file lattice.hpp
/// Finite event trees: the sample space is the set of root-to-leaf paths,
/// every node carries the numeraire price followed by the J risky prices.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rhedge {

using NodeId = std::size_t;

/// One real value per terminal path, in the tree's path order.
using PathVector = std::vector<double>;

/// Malformed user input (tree shape, market data, scenario files).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Valid input that this library does not handle (e.g. power frictions
/// combined with entropic acceptance).
class UnsupportedError : public InputError {
 public:
  using InputError::InputError;
};

/// A solve that did not reach a usable answer.
class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Node {
  NodeId id = 0;
  int depth = 0;
  std::optional<NodeId> parent;
  std::vector<NodeId> children;
  /// prices[0] is the numeraire S^0, prices[j] the nominal price of asset j.
  std::vector<double> prices;
};

struct NodeSpec {
  NodeId id = 0;
  int depth = 0;
  std::optional<NodeId> parent;
  std::vector<double> prices;
  bool operator==(const NodeSpec&) const = default;
};

struct TreeSpec {
  int horizon = 0;
  int assets = 0;
  std::vector<NodeSpec> nodes;
  bool operator==(const TreeSpec&) const = default;
};

/// (mass, moment) of a node under a measure: mass = sum of P over the paths
/// through the node, moment = sum of P*v over the same paths.
struct MassMoment {
  double mass = 0.0;
  double moment = 0.0;
};

class ScenarioTree {
 public:
  /// Validates the description and enumerates paths depth-first, children in
  /// the order they appear in the node list.
  static ScenarioTree build(const TreeSpec& spec) {
    ScenarioTree tree;
    tree.horizon_ = spec.horizon;
    tree.assets_ = spec.assets;
    if (spec.horizon < 1) throw InputError("horizon must be at least 1");
    if (spec.assets < 1) throw InputError("at least one risky asset is required");
    const std::size_t n = spec.nodes.size();
    if (n == 0) throw InputError("tree has no nodes");

    tree.nodes_.resize(n);
    std::vector<bool> seen(n, false);
    for (const auto& ns : spec.nodes) {
      if (ns.id >= n) throw InputError("node id " + std::to_string(ns.id) + " out of range (ids must be 0.." + std::to_string(n - 1) + ")");
      if (seen[ns.id]) throw InputError("duplicate node id " + std::to_string(ns.id));
      seen[ns.id] = true;
      if (ns.prices.size() != static_cast<std::size_t>(spec.assets) + 1)
        throw InputError("node " + std::to_string(ns.id) + ": expected " + std::to_string(spec.assets + 1) + " prices");
      for (double p : ns.prices)
        if (!std::isfinite(p)) throw InputError("node " + std::to_string(ns.id) + ": non-finite price");
      if (!(ns.prices[0] > 0.0)) throw InputError("node " + std::to_string(ns.id) + ": nonpositive numeraire");
      for (std::size_t j = 1; j < ns.prices.size(); ++j)
        if (ns.prices[j] < 0.0) throw InputError("node " + std::to_string(ns.id) + ": negative risky price");
      if (ns.depth < 0 || ns.depth > spec.horizon)
        throw InputError("node " + std::to_string(ns.id) + ": depth outside 0..T");
      Node& node = tree.nodes_[ns.id];
      node.id = ns.id;
      node.depth = ns.depth;
      node.parent = ns.parent;
      node.prices = ns.prices;
    }

    std::optional<NodeId> root;
    for (const auto& ns : spec.nodes) {
      if (!ns.parent) {
        if (root) throw InputError("orphan node " + std::to_string(ns.id) + " (second node without parent)");
        root = ns.id;
        continue;
      }
      if (*ns.parent >= n || !seen[*ns.parent])
        throw InputError("orphan node " + std::to_string(ns.id) + " (unknown parent)");
      const Node& parent = tree.nodes_[*ns.parent];
      if (parent.depth + 1 != ns.depth)
        throw InputError("depth gap between node " + std::to_string(ns.id) + " and its parent");
      tree.nodes_[*ns.parent].children.push_back(ns.id);
    }
    if (!root) throw InputError("tree has no root");
    tree.root_ = *root;
    if (tree.nodes_[tree.root_].depth != 0) throw InputError("root must have depth 0");
    if (tree.nodes_[tree.root_].prices[0] != 1.0) throw InputError("root numeraire must equal 1");

    for (const Node& node : tree.nodes_) {
      if (node.children.empty() && node.depth < spec.horizon)
        throw InputError("non-terminal leaf: node " + std::to_string(node.id) + " at depth " + std::to_string(node.depth));
      if (!node.children.empty() && node.depth == spec.horizon)
        throw InputError("node " + std::to_string(node.id) + " at depth T has children");
    }

    // Depth-first enumeration; also checks reachability (no cycles, no detached parts).
    tree.first_path_.assign(n, 0);
    tree.last_path_.assign(n, 0);
    std::vector<bool> visited(n, false);
    std::vector<std::pair<NodeId, std::size_t>> stack{{tree.root_, 0}};
    visited[tree.root_] = true;
    tree.first_path_[tree.root_] = 0;
    while (!stack.empty()) {
      auto& [id, next_child] = stack.back();
      const Node& node = tree.nodes_[id];
      if (next_child == 0) {
        tree.first_path_[id] = tree.terminals_.size();
        if (node.children.empty()) tree.terminals_.push_back(id);
        else tree.nonterminals_.push_back(id);
      }
      if (next_child < node.children.size()) {
        NodeId child = node.children[next_child++];
        if (visited[child]) throw InputError("node " + std::to_string(child) + " reached twice");
        visited[child] = true;
        stack.emplace_back(child, 0);
      } else {
        tree.last_path_[id] = tree.terminals_.size();
        stack.pop_back();
      }
    }
    for (NodeId id = 0; id < n; ++id)
      if (!visited[id]) throw InputError("orphan node " + std::to_string(id) + " (not reachable from root)");

    // path -> node at each depth
    tree.path_nodes_.assign(tree.terminals_.size(), std::vector<NodeId>(spec.horizon + 1, 0));
    for (std::size_t w = 0; w < tree.terminals_.size(); ++w) {
      NodeId cur = tree.terminals_[w];
      while (true) {
        const Node& node = tree.nodes_[cur];
        tree.path_nodes_[w][node.depth] = cur;
        if (!node.parent) break;
        cur = *node.parent;
      }
    }
    return tree;
  }

  int horizon() const { return horizon_; }
  int asset_count() const { return assets_; }
  NodeId root() const { return root_; }
  std::size_t node_count() const { return nodes_.size(); }
  std::size_t path_count() const { return terminals_.size(); }

  const Node& node(NodeId id) const {
    if (id >= nodes_.size()) throw InputError("unknown node " + std::to_string(id));
    return nodes_[id];
  }
  const std::vector<Node>& nodes() const { return nodes_; }

  /// Terminal nodes in path order.
  std::span<const NodeId> terminals() const { return terminals_; }
  /// Non-terminal nodes in depth-first preorder.
  std::span<const NodeId> nonterminals() const { return nonterminals_; }

  /// Paths through a node form the contiguous range [first, last).
  std::pair<std::size_t, std::size_t> path_range(NodeId id) const {
    node(id);
    return {first_path_[id], last_path_[id]};
  }

  NodeId node_on_path(std::size_t path, int depth) const {
    if (path >= path_nodes_.size()) throw InputError("unknown path " + std::to_string(path));
    if (depth < 0 || depth > horizon_) throw InputError("depth outside 0..T");
    return path_nodes_[path][depth];
  }

  bool is_terminal(NodeId id) const { return node(id).children.empty(); }

  /// S^j / S^0 at a node; 1 for the numeraire itself.
  double discounted_price(std::size_t asset, NodeId id) const {
    const Node& nd = node(id);
    if (asset > static_cast<std::size_t>(assets_)) throw InputError("unknown asset " + std::to_string(asset));
    if (asset == 0) return 1.0;
    return nd.prices[asset] / nd.prices[0];
  }

  double numeraire(NodeId id) const { return node(id).prices[0]; }

  /// Discounted terminal price of an asset along every path.
  PathVector terminal_discounted(std::size_t asset) const {
    PathVector out(path_count());
    for (std::size_t w = 0; w < out.size(); ++w) out[w] = discounted_price(asset, terminals_[w]);
    return out;
  }

  /// Discounted price of an asset at depth t along every path.
  PathVector discounted_at(std::size_t asset, int depth) const {
    PathVector out(path_count());
    for (std::size_t w = 0; w < out.size(); ++w) out[w] = discounted_price(asset, node_on_path(w, depth));
    return out;
  }

  void check_path_vector(std::span<const double> v, const char* what) const {
    if (v.size() != path_count())
      throw InputError(std::string(what) + ": expected " + std::to_string(path_count()) + " entries, got " + std::to_string(v.size()));
  }

 private:
  int horizon_ = 0;
  int assets_ = 0;
  NodeId root_ = 0;
  std::vector<Node> nodes_;
  std::vector<NodeId> terminals_;
  std::vector<NodeId> nonterminals_;
  std::vector<std::size_t> first_path_;
  std::vector<std::size_t> last_path_;
  std::vector<std::vector<NodeId>> path_nodes_;
};

inline ScenarioTree build_tree(const TreeSpec& spec) { return ScenarioTree::build(spec); }

inline double discounted_price(const ScenarioTree& tree, std::size_t asset, NodeId node) {
  return tree.discounted_price(asset, node);
}

/// Conditional expectations in multiplied-through form. E^P[v | node] equals
/// moment / mass whenever mass > 0; zero-mass nodes are left to the caller.
inline MassMoment node_mass_moment(const ScenarioTree& tree, std::span<const double> prob,
                                   std::span<const double> values, NodeId node) {
  tree.check_path_vector(prob, "measure");
  tree.check_path_vector(values, "values");
  auto [first, last] = tree.path_range(node);
  MassMoment out;
  for (std::size_t w = first; w < last; ++w) {
    if (prob[w] < 0.0) throw InputError("measure has a negative entry");
    out.mass += prob[w];
    out.moment += prob[w] * values[w];
  }
  return out;
}

/// Expectation of a path vector under a measure.
inline double expectation(std::span<const double> prob, std::span<const double> values) {
  double s = 0.0;
  for (std::size_t w = 0; w < prob.size(); ++w) s += prob[w] * values[w];
  return s;
}

inline bool is_probability(std::span<const double> p, double tol = 1e-9) {
  double s = 0.0;
  for (double x : p) {
    if (!(x >= -tol)) return false;
    s += x;
  }
  return std::abs(s - 1.0) <= tol * std::max<std::size_t>(1, p.size());
}

}  // namespace rhedge
