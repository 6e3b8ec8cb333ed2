#pragma once

/// \file scenario_io.hpp
/// Scenario files: a JSON document describing the tree, the market, the
/// acceptance set and named payoffs. The schema is strict (unknown keys are
/// errors) and emit/parse round-trips to identical objects. The field list
/// lives in docs/scenario_format.md.

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "rhedge/acceptance.hpp"
#include "rhedge/dual.hpp"
#include "rhedge/lattice.hpp"
#include "rhedge/market.hpp"

namespace rhedge {

/// Input error located in a scenario file: "source:line:col: msg" for
/// syntax errors, "source: /json/pointer: msg" for schema errors.
class ScenarioError : public InputError {
 public:
  using InputError::InputError;
};

struct PayoffDef {
  std::string name;
  /// Source expression when the payoff was given as one.
  std::optional<std::string> expr;
  PathVector values;
  bool operator==(const PayoffDef&) const = default;
};

struct Scenario {
  std::string name;
  std::string description;
  TreeSpec spec;
  ScenarioTree tree;
  MarketSpec market;
  /// Parallel to market.instruments.
  std::vector<std::optional<std::string>> instrument_exprs;
  AcceptanceSpec acceptance;
  std::vector<PayoffDef> payoffs;

  const PayoffDef& payoff(std::string_view want) const {
    for (const auto& p : payoffs)
      if (p.name == want) return p;
    std::string known;
    for (const auto& p : payoffs) known += (known.empty() ? "" : ", ") + p.name;
    throw InputError("unknown payoff '" + std::string(want) + "' (known: " + (known.empty() ? "none" : known) + ")");
  }
  /// The tree is derived from spec, so it takes no part in comparison.
  bool operator==(const Scenario& o) const {
    return name == o.name && description == o.description && spec == o.spec && market == o.market &&
           instrument_exprs == o.instrument_exprs && acceptance == o.acceptance && payoffs == o.payoffs;
  }
};

// ---------------------------------------------------------------------------
// Payoff expressions

namespace detail {

/// Recursive-descent evaluator over path vectors.
///   expr    := term (('+' | '-') term)*
///   term    := unary (('*' | '/') unary)*
///   unary   := '-' unary | primary
///   primary := number | '(' expr ')' | 'S'<j> | name '(' expr (',' expr)* ')'
/// Prices are discounted; S<j> and the default time argument refer to T.
class PayoffParser {
 public:
  PayoffParser(const ScenarioTree& tree, std::string_view text) : tree_(tree), text_(text) {}

  PathVector parse() {
    Value v = expr();
    skip_ws();
    if (pos_ < text_.size()) fail("unexpected '" + std::string(1, text_[pos_]) + "'");
    return v.v;
  }

 private:
  struct Value {
    PathVector v;
    bool constant = false;
  };

  const ScenarioTree& tree_;
  std::string_view text_;
  std::size_t pos_ = 0;

  [[noreturn]] void fail(const std::string& msg) const {
    throw InputError("payoff expression, column " + std::to_string(pos_ + 1) + ": " + msg);
  }
  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }
  bool eat(char c) {
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  void expect(char c) {
    if (!eat(c)) fail(std::string("expected '") + c + "'");
  }
  Value constant(double x) const { return {PathVector(tree_.path_count(), x), true}; }

  template <class F>
  static Value combine(const Value& a, const Value& b, F f) {
    Value r{a.v, a.constant && b.constant};
    for (std::size_t w = 0; w < r.v.size(); ++w) r.v[w] = f(a.v[w], b.v[w]);
    return r;
  }

  Value expr() {
    Value v = term();
    while (true) {
      if (eat('+')) v = combine(v, term(), [](double a, double b) { return a + b; });
      else if (eat('-')) v = combine(v, term(), [](double a, double b) { return a - b; });
      else return v;
    }
  }
  Value term() {
    Value v = unary();
    while (true) {
      if (eat('*')) {
        v = combine(v, unary(), [](double a, double b) { return a * b; });
      } else if (eat('/')) {
        const std::size_t at = pos_;
        Value d = unary();
        for (double x : d.v)
          if (x == 0.0) {
            pos_ = at;
            fail("division by zero");
          }
        v = combine(v, d, [](double a, double b) { return a / b; });
      } else {
        return v;
      }
    }
  }
  Value unary() {
    if (eat('-')) {
      Value v = unary();
      for (double& x : v.v) x = -x;
      return v;
    }
    if (eat('+')) return unary();
    return primary();
  }
  Value primary() {
    skip_ws();
    if (pos_ >= text_.size()) fail("unexpected end of expression");
    const char c = text_[pos_];
    if (c == '(') {
      ++pos_;
      Value v = expr();
      expect(')');
      return v;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return call();
    fail("unexpected '" + std::string(1, c) + "'");
  }
  Value number() {
    double x = 0.0;
    const char* first = text_.data() + pos_;
    auto [ptr, ec] = std::from_chars(first, text_.data() + text_.size(), x);
    if (ec != std::errc() || !std::isfinite(x)) fail("bad number");
    pos_ += static_cast<std::size_t>(ptr - first);
    return constant(x);
  }

  int integer_arg(const Value& v, const char* what, int lo, int hi) {
    if (!v.constant) fail(std::string(what) + " must be a constant");
    const double x = v.v.empty() ? 0.0 : v.v[0];
    if (x != std::floor(x) || x < lo || x > hi)
      fail(std::string(what) + " must be an integer in " + std::to_string(lo) + ".." + std::to_string(hi));
    return static_cast<int>(x);
  }
  Value price(int asset, int time) const { return {tree_.discounted_at(static_cast<std::size_t>(asset), time), false}; }

  Value call() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() && (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) ++pos_;
    const std::string name(text_.substr(start, pos_ - start));
    const int J = tree_.asset_count();
    const int T = tree_.horizon();
    if (name.size() > 1 && name[0] == 'S' && name.find_first_not_of("0123456789", 1) == std::string::npos) {
      const int j = std::stoi(name.substr(1));
      if (j < 1 || j > J) {
        pos_ = start;
        fail("unknown asset in '" + name + "'");
      }
      return price(j, T);
    }
    const std::size_t name_end = pos_;
    if (!eat('(')) {
      pos_ = start;
      fail("unknown name '" + name + "'");
    }
    std::vector<Value> args;
    if (!eat(')')) {
      do args.push_back(expr());
      while (eat(','));
      expect(')');
    }
    auto arity = [&](std::size_t lo, std::size_t hi) {
      if (args.size() < lo || args.size() > hi) {
        pos_ = name_end;
        fail(name + ": expected " + (lo == hi ? std::to_string(lo) : std::to_string(lo) + ".." + std::to_string(hi)) +
             " arguments");
      }
    };
    if (name == "call" || name == "put" || name == "forward") {
      arity(2, 3);
      const int j = integer_arg(args[0], "asset", 1, J);
      const int t = args.size() == 3 ? integer_arg(args[2], "time", 0, T) : T;
      Value s = price(j, t);
      const PathVector& k = args[1].v;
      for (std::size_t w = 0; w < s.v.size(); ++w) {
        const double d = s.v[w] - k[w];
        s.v[w] = name == "call" ? std::max(d, 0.0) : name == "put" ? std::max(-d, 0.0) : d;
      }
      return s;
    }
    if (name == "S") {
      arity(1, 2);
      const int j = integer_arg(args[0], "asset", 1, J);
      return price(j, args.size() == 2 ? integer_arg(args[1], "time", 0, T) : T);
    }
    if (name == "basket") {
      // basket(K, w1, ..., wJ) = (sum_j w_j S_j(T) - K)^+
      arity(static_cast<std::size_t>(J) + 1, static_cast<std::size_t>(J) + 1);
      Value r{PathVector(tree_.path_count(), 0.0), false};
      for (int j = 1; j <= J; ++j) {
        const PathVector s = tree_.discounted_at(static_cast<std::size_t>(j), T);
        for (std::size_t w = 0; w < s.size(); ++w) r.v[w] += args[j].v[w] * s[w];
      }
      for (std::size_t w = 0; w < r.v.size(); ++w) r.v[w] = std::max(r.v[w] - args[0].v[w], 0.0);
      return r;
    }
    if (name == "max" || name == "min") {
      arity(1, 64);
      Value r = args[0];
      for (std::size_t a = 1; a < args.size(); ++a)
        r = combine(r, args[a], [&](double x, double y) { return name == "max" ? std::max(x, y) : std::min(x, y); });
      return r;
    }
    pos_ = start;
    fail("unknown function '" + name + "'");
  }
};

}  // namespace detail

/// Evaluates a payoff expression against the terminal discounted prices.
inline PathVector evaluate_payoff(const ScenarioTree& tree, std::string_view expr) {
  return detail::PayoffParser(tree, expr).parse();
}

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

using Json = nlohmann::ordered_json;

class ScenarioReader {
 public:
  explicit ScenarioReader(std::string source) : source_(std::move(source)) {}

  Scenario read(const std::string& text) {
    Json doc;
    try {
      doc = Json::parse(text, nullptr, true, true);
    } catch (const Json::parse_error& e) {
      syntax_error(text, e);
    }
    Scenario s;
    object(doc, "", {"meta", "nodes", "payoffs", "market", "acceptance"}, {"meta", "nodes"});
    read_meta(doc["meta"], s);
    read_nodes(doc["nodes"], s);
    try {
      s.tree = ScenarioTree::build(s.spec);
    } catch (const InputError& e) {
      throw ScenarioError(source_ + ": /nodes: " + e.what());
    }
    s.market = frictionless_market(s.tree);
    if (doc.contains("market")) read_market(doc["market"], s);
    if (doc.contains("acceptance")) read_acceptance(doc["acceptance"], s);
    if (doc.contains("payoffs")) read_payoffs(doc["payoffs"], s);
    return s;
  }

 private:
  std::string source_;

  [[noreturn]] void syntax_error(const std::string& text, const Json::parse_error& e) const {
    // Byte offset -> line/column (1-based); e.byte points one past the offending character.
    std::size_t line = 1, col = 1;
    const std::size_t end = std::min<std::size_t>(e.byte > 0 ? e.byte - 1 : 0, text.size());
    for (std::size_t i = 0; i < end; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    std::string msg = e.what();
    const auto cut = msg.find(": ", msg.find("column"));
    if (cut != std::string::npos) msg = msg.substr(cut + 2);
    throw ScenarioError(source_ + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + msg);
  }
  [[noreturn]] void fail(const std::string& ptr, const std::string& msg) const {
    throw ScenarioError(source_ + ": " + (ptr.empty() ? "/" : ptr) + ": " + msg);
  }

  void object(const Json& j, const std::string& ptr, std::initializer_list<const char*> allowed,
              std::initializer_list<const char*> required = {}) const {
    if (!j.is_object()) fail(ptr, "expected an object");
    for (const auto& [key, _] : j.items()) {
      bool ok = false;
      for (const char* a : allowed) ok = ok || key == a;
      if (!ok) fail(ptr + "/" + key, "unknown key");
    }
    for (const char* r : required)
      if (!j.contains(r)) fail(ptr + "/" + r, "missing required key");
  }
  double number(const Json& j, const std::string& ptr) const {
    if (!j.is_number()) fail(ptr, "expected a number");
    const double x = j.get<double>();
    if (!std::isfinite(x)) fail(ptr, "expected a finite number");
    return x;
  }
  long long integer(const Json& j, const std::string& ptr, long long lo, long long hi) const {
    if (!j.is_number_integer()) fail(ptr, "expected an integer");
    const long long x = j.get<long long>();
    if (x < lo || x > hi) fail(ptr, "expected an integer in " + std::to_string(lo) + ".." + std::to_string(hi));
    return x;
  }
  std::string string(const Json& j, const std::string& ptr) const {
    if (!j.is_string()) fail(ptr, "expected a string");
    return j.get<std::string>();
  }
  std::vector<double> numbers(const Json& j, const std::string& ptr) const {
    if (!j.is_array()) fail(ptr, "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(number(j[i], ptr + "/" + std::to_string(i)));
    return out;
  }
  const Json& array(const Json& j, const std::string& ptr) const {
    if (!j.is_array()) fail(ptr, "expected an array");
    return j;
  }

  void read_meta(const Json& j, Scenario& s) const {
    object(j, "/meta", {"name", "description", "T", "J"}, {"T", "J"});
    if (j.contains("name")) s.name = string(j["name"], "/meta/name");
    if (j.contains("description")) s.description = string(j["description"], "/meta/description");
    s.spec.horizon = static_cast<int>(integer(j["T"], "/meta/T", 1, 1000));
    s.spec.assets = static_cast<int>(integer(j["J"], "/meta/J", 1, 1000));
  }

  void read_nodes(const Json& j, Scenario& s) const {
    array(j, "/nodes");
    for (std::size_t i = 0; i < j.size(); ++i) {
      const std::string ptr = "/nodes/" + std::to_string(i);
      const Json& n = j[i];
      object(n, ptr, {"id", "depth", "parent", "prices"}, {"id", "depth", "prices"});
      NodeSpec ns;
      ns.id = static_cast<NodeId>(integer(n["id"], ptr + "/id", 0, 100000000));
      ns.depth = static_cast<int>(integer(n["depth"], ptr + "/depth", 0, 1000));
      if (n.contains("parent") && !n["parent"].is_null())
        ns.parent = static_cast<NodeId>(integer(n["parent"], ptr + "/parent", 0, 100000000));
      ns.prices = numbers(n["prices"], ptr + "/prices");
      s.spec.nodes.push_back(std::move(ns));
    }
  }

  /// Either an expression string or an explicit per-path array.
  PayoffDef payoff(const Json& j, const std::string& ptr, const Scenario& s) const {
    PayoffDef p;
    if (j.is_string()) {
      p.expr = j.get<std::string>();
      try {
        p.values = evaluate_payoff(s.tree, *p.expr);
      } catch (const InputError& e) {
        fail(ptr, e.what());
      }
    } else if (j.is_array()) {
      p.values = numbers(j, ptr);
      if (p.values.size() != s.tree.path_count())
        fail(ptr, "expected " + std::to_string(s.tree.path_count()) + " values (one per path), got " +
                      std::to_string(p.values.size()));
    } else {
      fail(ptr, "expected an expression string or an array of per-path values");
    }
    return p;
  }

  void read_payoffs(const Json& j, Scenario& s) const {
    if (!j.is_object()) fail("/payoffs", "expected an object mapping names to payoffs");
    for (const auto& [name, def] : j.items()) {
      if (name.empty()) fail("/payoffs", "empty payoff name");
      PayoffDef p = payoff(def, "/payoffs/" + name, s);
      p.name = name;
      s.payoffs.push_back(std::move(p));
    }
  }

  Friction friction(const Json& j, const std::string& ptr) const {
    if (!j.is_object() || !j.contains("type")) fail(ptr, "expected an object with a 'type'");
    const std::string type = string(j["type"], ptr + "/type");
    Friction f;
    if (type == "zero") {
      object(j, ptr, {"type", "asset", "time", "node"});
      f = ZeroFriction{};
    } else if (type == "proportional") {
      object(j, ptr, {"type", "asset", "time", "node", "eps"}, {"eps"});
      f = ProportionalFriction{number(j["eps"], ptr + "/eps")};
    } else if (type == "power") {
      object(j, ptr, {"type", "asset", "time", "node", "eps", "p"}, {"eps", "p"});
      f = PowerFriction{number(j["eps"], ptr + "/eps"), number(j["p"], ptr + "/p")};
    } else if (type == "piecewise") {
      object(j, ptr, {"type", "asset", "time", "node", "slopes", "breakpoints"}, {"slopes", "breakpoints"});
      f = PiecewiseLinearFriction{numbers(j["slopes"], ptr + "/slopes"), numbers(j["breakpoints"], ptr + "/breakpoints")};
    } else {
      fail(ptr + "/type", "unknown friction type '" + type + "' (zero, proportional, power, piecewise)");
    }
    try {
      validate_friction(f);
    } catch (const InputError& e) {
      fail(ptr, e.what());
    }
    return f;
  }

  void read_market(const Json& j, Scenario& s) const {
    object(j, "/market", {"frictions", "short_sale_banned", "instruments", "call_strips"});
    const int J = s.spec.assets;
    const int T = s.spec.horizon;
    if (j.contains("frictions")) {
      const Json& fs = array(j["frictions"], "/market/frictions");
      for (std::size_t i = 0; i < fs.size(); ++i) {
        const std::string ptr = "/market/frictions/" + std::to_string(i);
        const Friction f = friction(fs[i], ptr);
        int lo = 1, hi = J;
        if (fs[i].contains("asset")) lo = hi = static_cast<int>(integer(fs[i]["asset"], ptr + "/asset", 1, J));
        if (fs[i].contains("node")) {
          if (fs[i].contains("time")) fail(ptr, "give either 'time' or 'node', not both");
          const auto node = static_cast<NodeId>(integer(fs[i]["node"], ptr + "/node", 0, static_cast<long long>(s.tree.node_count()) - 1));
          if (s.tree.is_terminal(node)) fail(ptr + "/node", "frictions apply at non-terminal nodes only");
          for (int a = lo; a <= hi; ++a) s.market.frictions.set_node(a, node, f);
          continue;
        }
        int t0 = 0, t1 = T - 1;
        if (fs[i].contains("time")) t0 = t1 = static_cast<int>(integer(fs[i]["time"], ptr + "/time", 0, T - 1));
        for (int a = lo; a <= hi; ++a)
          for (int t = t0; t <= t1; ++t) s.market.frictions.set(a, t, f);
      }
    }
    if (j.contains("short_sale_banned")) {
      const Json& b = array(j["short_sale_banned"], "/market/short_sale_banned");
      for (std::size_t i = 0; i < b.size(); ++i) {
        const int a = static_cast<int>(integer(b[i], "/market/short_sale_banned/" + std::to_string(i), 1, J));
        s.market.short_sale_banned[static_cast<std::size_t>(a - 1)] = true;
      }
    }
    if (j.contains("instruments")) {
      const Json& is = array(j["instruments"], "/market/instruments");
      for (std::size_t i = 0; i < is.size(); ++i) read_instrument(is[i], "/market/instruments/" + std::to_string(i), s);
    }
    if (j.contains("call_strips")) {
      const Json& cs = array(j["call_strips"], "/market/call_strips");
      for (std::size_t i = 0; i < cs.size(); ++i) read_strip(cs[i], "/market/call_strips/" + std::to_string(i), s);
    }
    try {
      validate_market(s.tree, s.market);
    } catch (const InputError& e) {
      fail("/market", e.what());
    }
  }

  void read_instrument(const Json& j, const std::string& ptr, Scenario& s) const {
    object(j, ptr, {"name", "payoff", "bid", "ask", "min_position", "max_position", "cost"}, {"name", "payoff"});
    StaticInstrument ins;
    ins.name = string(j["name"], ptr + "/name");
    PayoffDef p = payoff(j["payoff"], ptr + "/payoff", s);
    ins.payoff = std::move(p.values);
    if (j.contains("bid")) ins.bid = number(j["bid"], ptr + "/bid");
    if (j.contains("ask")) ins.ask = number(j["ask"], ptr + "/ask");
    if (ins.bid > ins.ask) fail(ptr, "bid exceeds ask");
    if (j.contains("min_position")) ins.min_position = number(j["min_position"], ptr + "/min_position");
    if (j.contains("max_position")) ins.max_position = number(j["max_position"], ptr + "/max_position");
    if (!(ins.min_position <= 0.0) || !(ins.max_position >= 0.0)) fail(ptr, "position bounds must contain 0");
    if (j.contains("cost")) {
      const std::string cp = ptr + "/cost";
      object(j["cost"], cp, {"price", "delta", "q"}, {"price", "delta", "q"});
      ins.superlinear = SuperlinearCost{number(j["cost"]["price"], cp + "/price"), number(j["cost"]["delta"], cp + "/delta"),
                                        number(j["cost"]["q"], cp + "/q")};
    }
    s.market.instruments.push_back(std::move(ins));
    s.instrument_exprs.push_back(std::move(p.expr));
  }

  void read_strip(const Json& j, const std::string& ptr, Scenario& s) const {
    object(j, ptr, {"asset", "time", "quotes"}, {"asset", "time", "quotes"});
    const int asset = static_cast<int>(integer(j["asset"], ptr + "/asset", 1, s.spec.assets));
    const int time = static_cast<int>(integer(j["time"], ptr + "/time", 0, s.spec.horizon));
    const Json& qs = array(j["quotes"], ptr + "/quotes");
    std::vector<CallQuote> quotes;
    for (std::size_t i = 0; i < qs.size(); ++i) {
      const std::string qp = ptr + "/quotes/" + std::to_string(i);
      object(qs[i], qp, {"strike", "bid", "ask"}, {"strike"});
      CallQuote q;
      q.strike = number(qs[i]["strike"], qp + "/strike");
      if (qs[i].contains("bid")) q.bid = number(qs[i]["bid"], qp + "/bid");
      if (qs[i].contains("ask")) q.ask = number(qs[i]["ask"], qp + "/ask");
      if (q.bid > q.ask) fail(qp, "bid exceeds ask");
      quotes.push_back(q);
    }
    for (auto& ins : marginal_constraints_from_calls(s.tree, asset, time, quotes)) {
      s.market.instruments.push_back(std::move(ins));
      s.instrument_exprs.emplace_back();
    }
  }

  LossFunction loss(const Json& j, const std::string& ptr) const {
    if (!j.is_object() || !j.contains("type")) fail(ptr, "expected an object with a 'type'");
    const std::string type = string(j["type"], ptr + "/type");
    LossFunction l;
    if (type == "avar") {
      object(j, ptr, {"type", "lambda"}, {"lambda"});
      l = AVaRLoss{number(j["lambda"], ptr + "/lambda")};
    } else if (type == "entropic") {
      object(j, ptr, {"type", "lambda"}, {"lambda"});
      l = EntropicLoss{number(j["lambda"], ptr + "/lambda")};
    } else if (type == "piecewise") {
      object(j, ptr, {"type", "slopes", "breakpoints", "value_at_zero"}, {"slopes", "breakpoints"});
      PiecewiseLinearLoss p;
      p.slopes = numbers(j["slopes"], ptr + "/slopes");
      p.breakpoints = numbers(j["breakpoints"], ptr + "/breakpoints");
      if (j.contains("value_at_zero")) p.value_at_zero = number(j["value_at_zero"], ptr + "/value_at_zero");
      l = std::move(p);
    } else {
      fail(ptr + "/type", "unknown loss type '" + type + "' (avar, entropic, piecewise)");
    }
    try {
      validate_loss(l);
    } catch (const InputError& e) {
      fail(ptr, e.what());
    }
    return l;
  }

  void read_acceptance(const Json& j, Scenario& s) const {
    if (!j.is_object() || !j.contains("type")) fail("/acceptance", "expected an object with a 'type'");
    const std::string type = string(j["type"], "/acceptance/type");
    if (type == "strict") {
      object(j, "/acceptance", {"type"});
      s.acceptance = AcceptanceSpec::strict();
      return;
    }
    if (type != "oce") fail("/acceptance/type", "unknown acceptance type '" + type + "' (strict, oce)");
    object(j, "/acceptance", {"type", "mode", "entries"}, {"entries"});
    QMode mode = QMode::Hull;
    if (j.contains("mode")) {
      const std::string m = string(j["mode"], "/acceptance/mode");
      if (m == "generators") mode = QMode::Generators;
      else if (m != "hull") fail("/acceptance/mode", "expected 'hull' or 'generators'");
    }
    const Json& es = array(j["entries"], "/acceptance/entries");
    if (es.empty()) fail("/acceptance/entries", "at least one entry is required");
    std::vector<OceEntry> entries;
    const std::size_t n = s.tree.path_count();
    for (std::size_t i = 0; i < es.size(); ++i) {
      const std::string ptr = "/acceptance/entries/" + std::to_string(i);
      object(es[i], ptr, {"measure", "loss"}, {"measure", "loss"});
      OceEntry e;
      const Json& m = es[i]["measure"];
      if (m.is_string() && m.get<std::string>() == "uniform") {
        e.measure.assign(n, 1.0 / static_cast<double>(n));
      } else {
        if (!m.is_array()) fail(ptr + "/measure", "expected \"uniform\" or an array of per-path probabilities");
        e.measure = numbers(m, ptr + "/measure");
      }
      e.loss = loss(es[i]["loss"], ptr + "/loss");
      entries.push_back(std::move(e));
    }
    s.acceptance = AcceptanceSpec::robust(std::move(entries), mode);
    try {
      validate_acceptance(s.tree, s.acceptance);
    } catch (const InputError& e) {
      fail("/acceptance", e.what());
    }
  }
};

}  // namespace detail

inline Scenario parse_scenario_text(const std::string& text, const std::string& source = "<scenario>") {
  return detail::ScenarioReader(source).read(text);
}

inline Scenario parse_scenario(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ScenarioError(path + ": cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_scenario_text(ss.str(), path);
}

// ---------------------------------------------------------------------------
// Emission

namespace detail {

inline Json friction_json(const Friction& f) {
  Json j;
  if (std::holds_alternative<ZeroFriction>(f)) {
    j["type"] = "zero";
  } else if (auto* p = std::get_if<ProportionalFriction>(&f)) {
    j["type"] = "proportional";
    j["eps"] = p->eps;
  } else if (auto* w = std::get_if<PowerFriction>(&f)) {
    j["type"] = "power";
    j["eps"] = w->eps;
    j["p"] = w->p;
  } else {
    const auto& pl = std::get<PiecewiseLinearFriction>(f);
    j["type"] = "piecewise";
    j["slopes"] = pl.slopes;
    j["breakpoints"] = pl.breakpoints;
  }
  return j;
}

inline Json loss_json(const LossFunction& l) {
  Json j;
  if (auto* a = std::get_if<AVaRLoss>(&l)) {
    j["type"] = "avar";
    j["lambda"] = a->lambda;
  } else if (auto* e = std::get_if<EntropicLoss>(&l)) {
    j["type"] = "entropic";
    j["lambda"] = e->lambda;
  } else {
    const auto& p = std::get<PiecewiseLinearLoss>(l);
    j["type"] = "piecewise";
    j["slopes"] = p.slopes;
    j["breakpoints"] = p.breakpoints;
    j["value_at_zero"] = p.value_at_zero;
  }
  return j;
}

inline Json payoff_json(const std::optional<std::string>& expr, const PathVector& values) {
  return expr ? Json(*expr) : Json(values);
}

}  // namespace detail

/// Canonical JSON text of a scenario. Call strips come back as plain
/// instruments; everything else keeps its source form.
inline std::string emit_scenario(const Scenario& s) {
  using detail::Json;
  Json doc;
  Json& meta = doc["meta"];
  if (!s.name.empty()) meta["name"] = s.name;
  if (!s.description.empty()) meta["description"] = s.description;
  meta["T"] = s.spec.horizon;
  meta["J"] = s.spec.assets;

  Json nodes = Json::array();
  for (const auto& n : s.spec.nodes) {
    Json j;
    j["id"] = n.id;
    j["depth"] = n.depth;
    if (n.parent) j["parent"] = *n.parent;
    j["prices"] = n.prices;
    nodes.push_back(std::move(j));
  }
  doc["nodes"] = std::move(nodes);

  Json payoffs = Json::object();
  for (const auto& p : s.payoffs) payoffs[p.name] = detail::payoff_json(p.expr, p.values);
  doc["payoffs"] = std::move(payoffs);

  Json market = Json::object();
  Json fr = Json::array();
  const auto& tab = s.market.frictions;
  for (int a = 1; a <= tab.assets(); ++a)
    for (int t = 0; t < tab.horizon(); ++t) {
      if (std::holds_alternative<ZeroFriction>(tab.at(a, t))) continue;
      Json j = detail::friction_json(tab.at(a, t));
      j["asset"] = a;
      j["time"] = t;
      fr.push_back(std::move(j));
    }
  for (const auto& [key, f] : tab.overrides()) {
    Json j = detail::friction_json(f);
    j["asset"] = key.first;
    j["node"] = key.second;
    fr.push_back(std::move(j));
  }
  if (!fr.empty()) market["frictions"] = std::move(fr);
  Json banned = Json::array();
  for (std::size_t a = 0; a < s.market.short_sale_banned.size(); ++a)
    if (s.market.short_sale_banned[a]) banned.push_back(a + 1);
  if (!banned.empty()) market["short_sale_banned"] = std::move(banned);
  Json ins = Json::array();
  for (std::size_t i = 0; i < s.market.instruments.size(); ++i) {
    const auto& in = s.market.instruments[i];
    Json j;
    j["name"] = in.name;
    j["payoff"] = detail::payoff_json(i < s.instrument_exprs.size() ? s.instrument_exprs[i] : std::nullopt, in.payoff);
    if (std::isfinite(in.bid)) j["bid"] = in.bid;
    if (std::isfinite(in.ask)) j["ask"] = in.ask;
    if (std::isfinite(in.min_position)) j["min_position"] = in.min_position;
    if (std::isfinite(in.max_position)) j["max_position"] = in.max_position;
    if (in.superlinear) j["cost"] = {{"price", in.superlinear->price}, {"delta", in.superlinear->delta}, {"q", in.superlinear->q}};
    ins.push_back(std::move(j));
  }
  if (!ins.empty()) market["instruments"] = std::move(ins);
  doc["market"] = std::move(market);

  Json acc;
  if (s.acceptance.is_strict()) {
    acc["type"] = "strict";
  } else {
    acc["type"] = "oce";
    acc["mode"] = to_string(s.acceptance.mode);
    Json es = Json::array();
    for (const auto& e : s.acceptance.entries) es.push_back({{"measure", e.measure}, {"loss", detail::loss_json(e.loss)}});
    acc["entries"] = std::move(es);
  }
  doc["acceptance"] = std::move(acc);
  return doc.dump(2) + "\n";
}

/// FNV-1a of the canonical text, as 16 hex digits.
inline std::string scenario_digest(const Scenario& s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : emit_scenario(s)) {
    h ^= c;
    h *= 1099511628211ull;
  }
  static const char* hex = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = hex[h & 15];
  return out;
}

}  // namespace rhedge
