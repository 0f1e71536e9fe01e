#include "ndae/expr.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <unordered_set>

namespace ndae::expr {

namespace {

double int_pow(double x, int e) {
  if (e < 0) return 1.0 / int_pow(x, -e);
  double r = 1.0, b = x;
  unsigned n = static_cast<unsigned>(e);
  while (n != 0) {
    if (n & 1u) r *= b;
    b *= b;
    n >>= 1u;
  }
  return r;
}

std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  return h;
}

// Sorted-vector set union into `out` (out may alias neither input).
void set_union(const std::vector<std::int32_t>& a, const std::vector<std::int32_t>& b,
               std::vector<std::int32_t>& out) {
  out.clear();
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
}

}  // namespace

// ---------------------------------------------------------------------------
// Graph

Graph::Graph(int n_vars) : n_vars_(n_vars) {
  if (n_vars < 0) fail(Errc::DimensionMismatch, "negative variable count");
}

std::uint64_t Graph::node_hash(const Node& n, std::span<const NodeId> kids) const {
  std::uint64_t h = static_cast<std::uint64_t>(n.op);
  if (n.op == Op::Add) {
    for (NodeId k : kids) h = mix(h, static_cast<std::uint64_t>(k));
  } else {
    h = mix(h, static_cast<std::uint64_t>(static_cast<std::uint32_t>(n.a)));
    h = mix(h, static_cast<std::uint64_t>(static_cast<std::uint32_t>(n.b)));
  }
  h = mix(h, std::bit_cast<std::uint64_t>(n.c));
  return h;
}

bool Graph::node_equal(NodeId id, const Node& n, std::span<const NodeId> kids) const {
  const Node& m = nodes_[id];
  if (m.op != n.op) return false;
  if (std::bit_cast<std::uint64_t>(m.c) != std::bit_cast<std::uint64_t>(n.c)) return false;
  if (n.op == Op::Add) {
    auto mk = kids_of(m);
    if (mk.size() != kids.size()) return false;
    return std::equal(mk.begin(), mk.end(), kids.begin());
  }
  return m.a == n.a && m.b == n.b;
}

NodeId Graph::push(Node n) {
  nodes_.push_back(n);
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::intern(Node n, std::span<const NodeId> kids) {
  std::uint64_t h = node_hash(n, kids);
  auto range = cse_.equal_range(h);
  for (auto it = range.first; it != range.second; ++it) {
    if (node_equal(it->second, n, kids)) return it->second;
  }
  if (n.op == Op::Add) {
    n.a = static_cast<NodeId>(add_kids_.size());
    n.b = static_cast<NodeId>(kids.size());
    add_kids_.insert(add_kids_.end(), kids.begin(), kids.end());
  }
  NodeId id = push(n);
  cse_.emplace(h, id);
  return id;
}

NodeId Graph::constant(double v) { return intern({Op::Const, -1, -1, v}); }

NodeId Graph::variable(VarId v) {
  if (v < 0 || v >= n_vars_) fail(Errc::UnknownSymbol, "variable index out of range");
  return intern({Op::Var, v, -1, 0.0});
}

NodeId Graph::add(std::span<const NodeId> kids_in) {
  // Flatten nested sums, fold constants, drop zeros, sort for canonical form.
  std::vector<NodeId> kids;
  double csum = 0.0;
  std::vector<NodeId> stack(kids_in.begin(), kids_in.end());
  while (!stack.empty()) {
    NodeId k = stack.back();
    stack.pop_back();
    const Node& n = nodes_[k];
    if (n.op == Op::Add) {
      auto kk = kids_of(n);
      stack.insert(stack.end(), kk.begin(), kk.end());
    } else if (n.op == Op::Const) {
      csum += n.c;
    } else {
      kids.push_back(k);
    }
  }
  std::sort(kids.begin(), kids.end());
  if (csum != 0.0) kids.push_back(constant(csum));
  if (kids.empty()) return constant(csum);
  if (kids.size() == 1) return kids[0];
  return intern({Op::Add, -1, -1, 0.0}, kids);
}

NodeId Graph::add_ordered(std::span<const NodeId> kids) {
  if (kids.empty()) return constant(0.0);
  if (kids.size() == 1) return kids[0];
  return intern({Op::Add, -1, -1, 0.0}, kids);
}

NodeId Graph::mul(std::span<const NodeId> kids_in) {
  std::vector<NodeId> kids;
  double cprod = 1.0;
  std::vector<NodeId> stack(kids_in.begin(), kids_in.end());
  while (!stack.empty()) {
    NodeId k = stack.back();
    stack.pop_back();
    const Node& n = nodes_[k];
    if (n.op == Op::Mul) {
      stack.push_back(n.a);
      stack.push_back(n.b);
    } else if (n.op == Op::Const) {
      cprod *= n.c;
    } else {
      kids.push_back(k);
    }
  }
  if (cprod == 0.0) return constant(0.0);
  std::sort(kids.begin(), kids.end());
  if (kids.empty()) return constant(cprod);
  bool negate = false;
  if (cprod == -1.0) {
    negate = true;
  } else if (cprod != 1.0) {
    kids.insert(kids.begin(), constant(cprod));
  }
  NodeId acc = kids[0];
  for (std::size_t i = 1; i < kids.size(); ++i) {
    acc = intern({Op::Mul, std::min(acc, kids[i]), std::max(acc, kids[i]), 0.0});
  }
  return negate ? neg(acc) : acc;
}

NodeId Graph::pow(NodeId base, int exponent) {
  if (exponent == 0) return constant(1.0);
  if (exponent == 1) return base;
  const Node& b = nodes_[base];
  if (b.op == Op::Const) {
    if (exponent < 0 && std::abs(b.c) < kDomainEps)
      throw DomainError(base, "constant base of negative power is zero");
    return constant(int_pow(b.c, exponent));
  }
  return intern({Op::Pow, base, exponent, 0.0});
}

NodeId Graph::div(NodeId num, NodeId den) {
  const Node& d = nodes_[den];
  if (d.op == Op::Const) {
    if (std::abs(d.c) < kDomainEps) throw DomainError(den, "division by constant zero");
    const Node& n = nodes_[num];
    if (n.op == Op::Const) return constant(n.c / d.c);
  }
  return intern({Op::Div, num, den, 0.0});
}

NodeId Graph::neg(NodeId x) {
  const Node& n = nodes_[x];
  if (n.op == Op::Const) return constant(-n.c);
  if (n.op == Op::Neg) return n.a;
  return intern({Op::Neg, x, -1, 0.0});
}

NodeId Graph::exp(NodeId x, double guard) {
  const Node& n = nodes_[x];
  if (n.op == Op::Const) {
    if (n.c > guard) throw DomainError(x, "exp argument exceeds guard");
    return constant(std::exp(n.c));
  }
  return intern({Op::Exp, x, -1, guard});
}

NodeId Graph::log(NodeId x) {
  const Node& n = nodes_[x];
  if (n.op == Op::Const) {
    if (n.c < kDomainEps) throw DomainError(x, "log of nonpositive constant");
    return constant(std::log(n.c));
  }
  return intern({Op::Log, x, -1, 0.0});
}

NodeId Graph::sqrt(NodeId x) {
  const Node& n = nodes_[x];
  if (n.op == Op::Const) {
    if (n.c < 0.0) throw DomainError(x, "sqrt of negative constant");
    return constant(std::sqrt(n.c));
  }
  return intern({Op::Sqrt, x, -1, 0.0});
}

NodeId Graph::tanh(NodeId x) {
  const Node& n = nodes_[x];
  if (n.op == Op::Const) return constant(std::tanh(n.c));
  return intern({Op::Tanh, x, -1, 0.0});
}

std::vector<NodeId> Graph::emit(const Graph& src, std::span<const NodeId> roots,
                                std::span<const NodeId> substitution) {
  if (static_cast<int>(substitution.size()) != src.n_vars())
    fail(Errc::DimensionMismatch, "emit substitution size != source variable count");
  // Mark reachable subgraph.
  std::vector<char> reach(src.nodes_.size(), 0);
  std::vector<NodeId> stack(roots.begin(), roots.end());
  while (!stack.empty()) {
    NodeId id = stack.back();
    stack.pop_back();
    if (reach[id]) continue;
    reach[id] = 1;
    const Node& n = src.nodes_[id];
    switch (n.op) {
      case Op::Const:
      case Op::Var:
        break;
      case Op::Add:
        for (NodeId k : src.kids_of(n)) stack.push_back(k);
        break;
      case Op::Mul:
      case Op::Div:
        stack.push_back(n.a);
        stack.push_back(n.b);
        break;
      default:
        stack.push_back(n.a);
        break;
    }
  }
  std::vector<NodeId> map(src.nodes_.size(), -1);
  std::vector<NodeId> scratch;
  for (std::size_t id = 0; id < src.nodes_.size(); ++id) {
    if (!reach[id]) continue;
    const Node& n = src.nodes_[id];
    switch (n.op) {
      case Op::Const:
        map[id] = constant(n.c);
        break;
      case Op::Var:
        map[id] = substitution[n.a];
        break;
      case Op::Add: {
        scratch.clear();
        for (NodeId k : src.kids_of(n)) scratch.push_back(map[k]);
        map[id] = add(scratch);
        break;
      }
      case Op::Mul: {
        NodeId kk[2] = {map[n.a], map[n.b]};
        map[id] = mul(kk);
        break;
      }
      case Op::Pow:
        map[id] = pow(map[n.a], n.b);
        break;
      case Op::Div:
        map[id] = div(map[n.a], map[n.b]);
        break;
      case Op::Neg:
        map[id] = neg(map[n.a]);
        break;
      case Op::Exp:
        map[id] = exp(map[n.a], n.c);
        break;
      case Op::Log:
        map[id] = log(map[n.a]);
        break;
      case Op::Sqrt:
        map[id] = sqrt(map[n.a]);
        break;
      case Op::Tanh:
        map[id] = tanh(map[n.a]);
        break;
    }
  }
  std::vector<NodeId> out;
  out.reserve(roots.size());
  for (NodeId r : roots) out.push_back(map[r]);
  return out;
}

// ---------------------------------------------------------------------------
// Operator sugar

namespace {
Graph* same_graph(Expr x, Expr y) {
  if (x.g != y.g) fail(Errc::DimensionMismatch, "expressions from different graphs");
  return x.g;
}
}  // namespace

Expr operator+(Expr x, Expr y) {
  Graph* g = same_graph(x, y);
  NodeId kk[2] = {x.id, y.id};
  return {g, g->add(kk)};
}
Expr operator-(Expr x, Expr y) {
  Graph* g = same_graph(x, y);
  NodeId kk[2] = {x.id, g->neg(y.id)};
  return {g, g->add(kk)};
}
Expr operator*(Expr x, Expr y) {
  Graph* g = same_graph(x, y);
  NodeId kk[2] = {x.id, y.id};
  return {g, g->mul(kk)};
}
Expr operator/(Expr x, Expr y) {
  Graph* g = same_graph(x, y);
  return {g, g->div(x.id, y.id)};
}
Expr operator-(Expr x) { return {x.g, x.g->neg(x.id)}; }
Expr operator+(Expr x, double v) { return x + x.g->c(v); }
Expr operator+(double v, Expr x) { return x + v; }
Expr operator-(Expr x, double v) { return x + (-v); }
Expr operator-(double v, Expr x) { return x.g->c(v) - x; }
Expr operator*(Expr x, double v) { return x * x.g->c(v); }
Expr operator*(double v, Expr x) { return x * v; }
Expr operator/(Expr x, double v) { return {x.g, x.g->div(x.id, x.g->constant(v))}; }
Expr operator/(double v, Expr x) { return {x.g, x.g->div(x.g->constant(v), x.id)}; }
Expr pow(Expr x, int e) { return {x.g, x.g->pow(x.id, e)}; }
Expr exp(Expr x, double guard) { return {x.g, x.g->exp(x.id, guard)}; }
Expr log(Expr x) { return {x.g, x.g->log(x.id)}; }
Expr sqrt(Expr x) { return {x.g, x.g->sqrt(x.id)}; }
Expr tanh(Expr x) { return {x.g, x.g->tanh(x.id)}; }
Expr sum(std::span<const Expr> terms) {
  if (terms.empty()) fail(Errc::DimensionMismatch, "sum of zero terms needs a graph");
  Graph* g = terms[0].g;
  std::vector<NodeId> kk;
  kk.reserve(terms.size());
  for (Expr t : terms) {
    same_graph(terms[0], t);
    kk.push_back(t.id);
  }
  return {g, g->add(kk)};
}

// ---------------------------------------------------------------------------
// Workspace

void Workspace::Buffers::ensure(std::size_t n) {
  if (val.size() < n) {
    val.resize(n);
    adj.resize(n);
    dot.resize(n);
    adjdot.resize(n);
  }
}

Workspace::Buffers& Workspace::slot(int i) {
  if (static_cast<std::size_t>(i) >= slots_.size()) slots_.resize(i + 1);
  return slots_[i];
}

// ---------------------------------------------------------------------------
// Function

Function::Function(const Graph& g, std::span<const NodeId> outputs) : n_vars_(g.n_vars()) {
  // Prune to the subgraph reachable from the outputs, preserving order.
  const auto& src = g.nodes();
  std::vector<char> reach(src.size(), 0);
  std::vector<NodeId> stack(outputs.begin(), outputs.end());
  while (!stack.empty()) {
    NodeId id = stack.back();
    stack.pop_back();
    if (id < 0 || static_cast<std::size_t>(id) >= src.size())
      fail(Errc::IndexOutOfRange, "output node out of range");
    if (reach[id]) continue;
    reach[id] = 1;
    const Node& n = src[id];
    switch (n.op) {
      case Op::Const:
      case Op::Var:
        break;
      case Op::Add:
        for (NodeId k : g.kids_of(n)) stack.push_back(k);
        break;
      case Op::Mul:
      case Op::Div:
        stack.push_back(n.a);
        stack.push_back(n.b);
        break;
      default:
        stack.push_back(n.a);
        break;
    }
  }
  std::vector<NodeId> map(src.size(), -1);
  for (std::size_t id = 0; id < src.size(); ++id) {
    if (!reach[id]) continue;
    Node n = src[id];
    if (n.op == Op::Add) {
      auto kk = g.kids_of(n);
      NodeId off = static_cast<NodeId>(add_kids_.size());
      for (NodeId k : kk) add_kids_.push_back(map[k]);
      n.a = off;
      n.b = static_cast<NodeId>(kk.size());
    } else if (n.op == Op::Mul || n.op == Op::Div) {
      n.a = map[n.a];
      n.b = map[n.b];
    } else if (n.op != Op::Const && n.op != Op::Var && n.op != Op::Pow) {
      n.a = map[n.a];
    } else if (n.op == Op::Pow) {
      n.a = map[n.a];
    }
    nodes_.push_back(n);
    map[id] = static_cast<NodeId>(nodes_.size() - 1);
  }
  outputs_.reserve(outputs.size());
  for (NodeId r : outputs) outputs_.push_back(map[r]);

  var_nodes_.assign(n_vars_, -1);
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    if (nodes_[id].op == Op::Var) var_nodes_[nodes_[id].a] = static_cast<NodeId>(id);
  }

  compute_row_schedules();
  compute_hessian_cliques();
}

void Function::compute_row_schedules() {
  const int n_out = static_cast<int>(outputs_.size());
  row_ptr_.assign(n_out + 1, 0);
  jac_.row_ptr.assign(n_out + 1, 0);
  std::vector<char> seen(nodes_.size());
  std::vector<NodeId> stack, collected;
  for (int r = 0; r < n_out; ++r) {
    std::fill(seen.begin(), seen.end(), 0);
    collected.clear();
    stack.assign(1, outputs_[r]);
    while (!stack.empty()) {
      NodeId id = stack.back();
      stack.pop_back();
      if (seen[id]) continue;
      seen[id] = 1;
      collected.push_back(id);
      const Node& n = nodes_[id];
      switch (n.op) {
        case Op::Const:
        case Op::Var:
          break;
        case Op::Add:
          for (NodeId k : kids_of(n)) stack.push_back(k);
          break;
        case Op::Mul:
        case Op::Div:
          stack.push_back(n.a);
          stack.push_back(n.b);
          break;
        default:
          stack.push_back(n.a);
          break;
      }
    }
    std::sort(collected.begin(), collected.end());
    row_nodes_.insert(row_nodes_.end(), collected.begin(), collected.end());
    row_ptr_[r + 1] = static_cast<std::int32_t>(row_nodes_.size());
    std::vector<VarId> vars;
    for (NodeId id : collected) {
      if (nodes_[id].op == Op::Var) vars.push_back(nodes_[id].a);
    }
    std::sort(vars.begin(), vars.end());
    jac_.cols.insert(jac_.cols.end(), vars.begin(), vars.end());
    jac_.row_ptr[r + 1] = static_cast<std::int32_t>(jac_.cols.size());
  }
}

void Function::forward(std::span<const double> w, Workspace::Buffers& b) const {
  if (static_cast<int>(w.size()) != n_vars_)
    fail(Errc::DimensionMismatch, "eval point size != variable count");
  b.ensure(nodes_.size());
  double* val = b.val.data();
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    switch (n.op) {
      case Op::Const:
        val[id] = n.c;
        break;
      case Op::Var:
        val[id] = w[n.a];
        break;
      case Op::Add: {
        double s = 0.0;
        for (NodeId k : kids_of(n)) s += val[k];
        val[id] = s;
        break;
      }
      case Op::Mul:
        val[id] = val[n.a] * val[n.b];
        break;
      case Op::Pow: {
        double base = val[n.a];
        if (n.b < 0 && std::abs(base) < kDomainEps)
          throw DomainError(static_cast<int>(id), "zero base of negative power");
        val[id] = int_pow(base, n.b);
        break;
      }
      case Op::Div: {
        double den = val[n.b];
        if (std::abs(den) < kDomainEps)
          throw DomainError(static_cast<int>(id), "division by zero");
        val[id] = val[n.a] / den;
        break;
      }
      case Op::Neg:
        val[id] = -val[n.a];
        break;
      case Op::Exp: {
        double arg = val[n.a];
        if (arg > n.c) throw DomainError(static_cast<int>(id), "exp argument exceeds guard");
        val[id] = std::exp(arg);
        break;
      }
      case Op::Log: {
        double arg = val[n.a];
        if (arg < kDomainEps)
          throw DomainError(static_cast<int>(id), "log of nonpositive argument");
        val[id] = std::log(arg);
        break;
      }
      case Op::Sqrt: {
        double arg = val[n.a];
        if (arg < 0.0) throw DomainError(static_cast<int>(id), "sqrt of negative argument");
        val[id] = std::sqrt(arg);
        break;
      }
      case Op::Tanh:
        val[id] = std::tanh(val[n.a]);
        break;
    }
  }
}

void Function::eval(std::span<const double> w, std::span<double> out, Workspace& ws) const {
  if (out.size() != outputs_.size()) fail(Errc::DimensionMismatch, "output buffer size");
  auto& b = ws.slot(0);
  forward(w, b);
  for (std::size_t r = 0; r < outputs_.size(); ++r) out[r] = b.val[outputs_[r]];
}

Eigen::VectorXd Function::eval(const Eigen::VectorXd& w, Workspace& ws) const {
  Eigen::VectorXd out(n_out());
  eval({w.data(), static_cast<std::size_t>(w.size())},
       {out.data(), static_cast<std::size_t>(out.size())}, ws);
  return out;
}

void Function::reverse_row(int row, Workspace::Buffers& b) const {
  const double* val = b.val.data();
  double* adj = b.adj.data();
  const std::int32_t lo = row_ptr_[row], hi = row_ptr_[row + 1];
  for (std::int32_t i = lo; i < hi; ++i) adj[row_nodes_[i]] = 0.0;
  adj[outputs_[row]] = 1.0;
  for (std::int32_t i = hi - 1; i >= lo; --i) {
    NodeId id = row_nodes_[i];
    double a = adj[id];
    if (a == 0.0) continue;
    const Node& n = nodes_[id];
    switch (n.op) {
      case Op::Const:
      case Op::Var:
        break;
      case Op::Add:
        for (NodeId k : kids_of(n)) adj[k] += a;
        break;
      case Op::Mul:
        adj[n.a] += a * val[n.b];
        adj[n.b] += a * val[n.a];
        break;
      case Op::Pow:
        adj[n.a] += a * n.b * int_pow(val[n.a], n.b - 1);
        break;
      case Op::Div:
        adj[n.a] += a / val[n.b];
        adj[n.b] -= a * val[id] / val[n.b];
        break;
      case Op::Neg:
        adj[n.a] -= a;
        break;
      case Op::Exp:
        adj[n.a] += a * val[id];
        break;
      case Op::Log:
        adj[n.a] += a / val[n.a];
        break;
      case Op::Sqrt:
        if (val[id] == 0.0)
          throw DomainError(static_cast<int>(id), "derivative of sqrt at zero");
        adj[n.a] += a * 0.5 / val[id];
        break;
      case Op::Tanh:
        adj[n.a] += a * (1.0 - val[id] * val[id]);
        break;
    }
  }
}

void Function::jacobian(std::span<const double> w, std::span<double> values,
                        Workspace& ws) const {
  if (values.size() != jac_.nnz()) fail(Errc::DimensionMismatch, "jacobian value buffer size");
  auto& b = ws.slot(0);
  forward(w, b);
  b.ensure(nodes_.size());
  for (int r = 0; r < n_out(); ++r) {
    reverse_row(r, b);
    for (std::int32_t j = jac_.row_ptr[r]; j < jac_.row_ptr[r + 1]; ++j) {
      NodeId vn = var_nodes_[jac_.cols[j]];
      values[j] = b.adj[vn];
    }
  }
}

void Function::gradient(std::span<const double> w, int row, std::span<double> values,
                        Workspace& ws) const {
  const std::size_t nnz = jac_.row_ptr[row + 1] - jac_.row_ptr[row];
  if (values.size() != nnz) fail(Errc::DimensionMismatch, "gradient value buffer size");
  auto& b = ws.slot(0);
  forward(w, b);
  b.ensure(nodes_.size());
  reverse_row(row, b);
  for (std::int32_t j = jac_.row_ptr[row]; j < jac_.row_ptr[row + 1]; ++j) {
    values[j - jac_.row_ptr[row]] = b.adj[var_nodes_[jac_.cols[j]]];
  }
}

// Linear/nonlinear interaction analysis per output row. Produces, for each
// row, the variable groups that can interact in second derivatives; the union
// of group-squares is a superset of the true Hessian pattern.
void Function::compute_hessian_cliques() {
  struct NodeSets {
    std::vector<VarId> lin;          // variables entering linearly
    std::vector<std::int32_t> cliq;  // handles into the row-local clique table
  };
  std::unordered_set<std::uint64_t> seen_hashes;
  auto clique_hash = [](const std::vector<VarId>& c) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (VarId v : c) h = mix(h, static_cast<std::uint64_t>(v));
    return h;
  };
  std::vector<std::vector<VarId>> local_cliques;
  std::vector<NodeSets> sets;
  std::vector<std::int32_t> local_of(nodes_.size(), -1);
  std::vector<VarId> tmp, tmp2;

  auto all_vars = [&](const NodeSets& s, std::vector<VarId>& out) {
    out = s.lin;
    for (std::int32_t h : s.cliq) {
      tmp2 = out;
      set_union(tmp2, local_cliques[h], out);
    }
  };

  for (int r = 0; r < n_out(); ++r) {
    local_cliques.clear();
    const std::int32_t lo = row_ptr_[r], hi = row_ptr_[r + 1];
    sets.assign(hi - lo, {});
    for (std::int32_t i = lo; i < hi; ++i) local_of[row_nodes_[i]] = i - lo;

    auto merge_to_clique = [&](std::initializer_list<const NodeSets*> parts) {
      std::vector<VarId> members;
      for (const NodeSets* p : parts) {
        all_vars(*p, tmp);
        tmp2 = members;
        set_union(tmp2, tmp, members);
      }
      local_cliques.push_back(std::move(members));
      return static_cast<std::int32_t>(local_cliques.size() - 1);
    };
    auto has_vars = [&](const NodeSets& s) { return !s.lin.empty() || !s.cliq.empty(); };

    for (std::int32_t i = lo; i < hi; ++i) {
      NodeId id = row_nodes_[i];
      const Node& n = nodes_[id];
      NodeSets& out = sets[i - lo];
      switch (n.op) {
        case Op::Const:
          break;
        case Op::Var:
          out.lin.push_back(n.a);
          break;
        case Op::Add: {
          for (NodeId k : kids_of(n)) {
            const NodeSets& ks = sets[local_of[k]];
            tmp2 = out.lin;
            set_union(tmp2, ks.lin, out.lin);
            std::vector<std::int32_t> ch = out.cliq;
            set_union(ch, ks.cliq, out.cliq);
          }
          break;
        }
        case Op::Neg:
          out = sets[local_of[n.a]];
          break;
        case Op::Mul: {
          const NodeSets& sa = sets[local_of[n.a]];
          const NodeSets& sb = sets[local_of[n.b]];
          if (!has_vars(sa)) {
            out = sb;
          } else if (!has_vars(sb)) {
            out = sa;
          } else {
            out.cliq.push_back(merge_to_clique({&sa, &sb}));
          }
          break;
        }
        case Op::Div: {
          const NodeSets& sa = sets[local_of[n.a]];
          const NodeSets& sb = sets[local_of[n.b]];
          if (!has_vars(sb)) {
            out = sa;
          } else {
            out.cliq.push_back(merge_to_clique({&sa, &sb}));
          }
          break;
        }
        default: {  // Pow, Exp, Log, Sqrt, Tanh: everything below interacts
          const NodeSets& sa = sets[local_of[n.a]];
          if (has_vars(sa)) out.cliq.push_back(merge_to_clique({&sa}));
          break;
        }
      }
    }

    const NodeSets& root = sets[local_of[outputs_[r]]];
    for (std::int32_t h : root.cliq) {
      if (local_cliques[h].size() < 1) continue;
      std::uint64_t hh = clique_hash(local_cliques[h]);
      if (seen_hashes.count(hh)) {
        bool dup = false;
        for (const auto& c : cliques_) {
          if (c == local_cliques[h]) {
            dup = true;
            break;
          }
        }
        if (dup) continue;
      }
      seen_hashes.insert(hh);
      cliques_.push_back(local_cliques[h]);
    }
    for (std::int32_t i = lo; i < hi; ++i) local_of[row_nodes_[i]] = -1;
  }
}

// ---------------------------------------------------------------------------
// LagrangianHessian

LagrangianHessian::LagrangianHessian(std::vector<const Function*> funs, Options opt)
    : funs_(std::move(funs)) {
  if (funs_.empty()) fail(Errc::DimensionMismatch, "LagrangianHessian needs >= 1 function");
  n_vars_ = -1;
  for (const Function* f : funs_) {
    if (f == nullptr) fail(Errc::DimensionMismatch, "null function");
    if (n_vars_ < 0) n_vars_ = f->n_vars();
    if (f->n_vars() != n_vars_)
      fail(Errc::DimensionMismatch, "functions disagree on variable count");
  }
  build_pattern_and_colors(opt);
}

void LagrangianHessian::build_pattern_and_colors(Options opt) {
  // Gather and deduplicate cliques across functions.
  std::vector<std::vector<VarId>> cliques;
  {
    std::unordered_set<std::uint64_t> hashes;
    for (const Function* f : funs_) {
      for (const auto& c : f->hessian_cliques()) {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (VarId v : c) h = mix(h, static_cast<std::uint64_t>(v));
        bool dup = false;
        if (hashes.count(h)) {
          for (const auto& prev : cliques) {
            if (prev == c) {
              dup = true;
              break;
            }
          }
        }
        if (!dup) {
          hashes.insert(h);
          cliques.push_back(c);
        }
      }
    }
  }

  // var -> incident cliques
  std::vector<std::vector<std::int32_t>> incidence(n_vars_);
  for (std::size_t ci = 0; ci < cliques.size(); ++ci) {
    for (VarId v : cliques[ci]) incidence[v].push_back(static_cast<std::int32_t>(ci));
  }

  std::vector<char> hub(n_vars_, 0);
  std::vector<std::int32_t> stamp(n_vars_, -1);
  std::int32_t epoch = 0;

  auto degree_of = [&](VarId v, bool skip_hubs) {
    ++epoch;
    std::int32_t deg = 0;
    for (std::int32_t ci : incidence[v]) {
      for (VarId u : cliques[ci]) {
        if (skip_hubs && hub[u]) continue;
        if (stamp[u] != epoch) {
          stamp[u] = epoch;
          ++deg;
        }
      }
    }
    return deg;
  };

  // Hub peeling: repeatedly mark the highest-degree variables as hubs until
  // the remaining pattern is block-local.
  for (;;) {
    std::int32_t dmax = 0;
    std::vector<std::int32_t> deg(n_vars_, 0);
    for (VarId v = 0; v < n_vars_; ++v) {
      if (hub[v] || incidence[v].empty()) continue;
      deg[v] = degree_of(v, true);
      dmax = std::max(dmax, deg[v]);
    }
    if (dmax <= opt.hub_degree_threshold) break;
    const double cut =
        std::max(static_cast<double>(opt.hub_degree_threshold), opt.hub_peel_fraction * dmax);
    for (VarId v = 0; v < n_vars_; ++v) {
      if (!hub[v] && deg[v] > cut) hub[v] = 1;
    }
  }

  // Phase-2 coloring on the non-hub remainder (classic CPR: two columns may
  // share a color only if no row of the remaining pattern contains both).
  std::vector<std::int32_t> p2color(n_vars_, -1);
  std::vector<std::vector<VarId>> rem_partners(n_vars_);
  std::vector<VarId> candidates;
  for (VarId v = 0; v < n_vars_; ++v) {
    if (hub[v] || incidence[v].empty()) continue;
    ++epoch;
    for (std::int32_t ci : incidence[v]) {
      for (VarId u : cliques[ci]) {
        if (hub[u] || stamp[u] == epoch) continue;
        stamp[u] = epoch;
        rem_partners[v].push_back(u);
      }
    }
    std::sort(rem_partners[v].begin(), rem_partners[v].end());
    if (!rem_partners[v].empty()) candidates.push_back(v);
  }
  std::sort(candidates.begin(), candidates.end(), [&](VarId a, VarId b) {
    if (rem_partners[a].size() != rem_partners[b].size())
      return rem_partners[a].size() > rem_partners[b].size();
    return a < b;
  });
  std::int32_t n_p2 = 0;
  {
    std::vector<std::int32_t> forbidden;
    for (VarId v : candidates) {
      forbidden.clear();
      for (VarId u : rem_partners[v]) {
        for (VarId t : rem_partners[u]) {
          if (p2color[t] >= 0) forbidden.push_back(p2color[t]);
        }
      }
      std::sort(forbidden.begin(), forbidden.end());
      forbidden.erase(std::unique(forbidden.begin(), forbidden.end()), forbidden.end());
      std::int32_t c = 0;
      for (std::int32_t fcol : forbidden) {
        if (fcol == c)
          ++c;
        else if (fcol > c)
          break;
      }
      p2color[v] = c;
      n_p2 = std::max(n_p2, c + 1);
    }
  }

  // Colors: hubs first (singleton seeds, ascending var id), then phase-2 groups.
  std::vector<std::int32_t> hub_color(n_vars_, -1);
  for (VarId v = 0; v < n_vars_; ++v) {
    if (hub[v]) {
      hub_color[v] = static_cast<std::int32_t>(colors_.size());
      colors_.push_back({{v}, {}});
    }
  }
  const std::int32_t p2base = static_cast<std::int32_t>(colors_.size());
  colors_.resize(colors_.size() + n_p2);
  for (VarId v = 0; v < n_vars_; ++v) {
    if (p2color[v] >= 0) colors_[p2base + p2color[v]].seeds.push_back(v);
  }

  // Materialize the lower-triangle pattern column by column and assign each
  // entry to the color that recovers it.
  std::vector<VarId> partners;
  for (VarId j = 0; j < n_vars_; ++j) {
    if (incidence[j].empty()) continue;
    ++epoch;
    partners.clear();
    for (std::int32_t ci : incidence[j]) {
      for (VarId u : cliques[ci]) {
        if (u >= j && stamp[u] != epoch) {
          stamp[u] = epoch;
          partners.push_back(u);
        }
      }
    }
    std::sort(partners.begin(), partners.end());
    for (VarId i : partners) {
      const std::int32_t e = static_cast<std::int32_t>(pattern_.rows.size());
      pattern_.rows.push_back(i);
      pattern_.cols.push_back(j);
      if (hub[j]) {
        colors_[hub_color[j]].recover.emplace_back(e, i);
      } else if (hub[i]) {
        colors_[hub_color[i]].recover.emplace_back(e, j);
      } else {
        colors_[p2base + p2color[j]].recover.emplace_back(e, i);
      }
    }
  }
}

void LagrangianHessian::eval(std::span<const double> w,
                             std::span<const std::span<const double>> weights,
                             std::span<double> values, Workspace& ws) const {
  if (weights.size() != funs_.size()) fail(Errc::DimensionMismatch, "weight slot count");
  if (values.size() != pattern_.nnz()) fail(Errc::DimensionMismatch, "hessian value buffer");
  const int nf = static_cast<int>(funs_.size());

  // Forward values and weighted reverse adjoints, once per function.
  for (int s = 0; s < nf; ++s) {
    const Function& f = *funs_[s];
    if (static_cast<int>(weights[s].size()) != f.n_out())
      fail(Errc::DimensionMismatch, "weight vector length");
    auto& b = ws.slot(s);
    f.forward(w, b);
    std::fill(b.adj.begin(), b.adj.begin() + f.nodes_.size(), 0.0);
    for (int r = 0; r < f.n_out(); ++r) b.adj[f.outputs_[r]] += weights[s][r];
    const auto& nodes = f.nodes_;
    double* adj = b.adj.data();
    const double* val = b.val.data();
    for (std::int32_t id = static_cast<std::int32_t>(nodes.size()) - 1; id >= 0; --id) {
      double a = adj[id];
      if (a == 0.0) continue;
      const Node& n = nodes[id];
      switch (n.op) {
        case Op::Const:
        case Op::Var:
          break;
        case Op::Add:
          for (NodeId k : f.kids_of(n)) adj[k] += a;
          break;
        case Op::Mul:
          adj[n.a] += a * val[n.b];
          adj[n.b] += a * val[n.a];
          break;
        case Op::Pow:
          adj[n.a] += a * n.b * int_pow(val[n.a], n.b - 1);
          break;
        case Op::Div:
          adj[n.a] += a / val[n.b];
          adj[n.b] -= a * val[id] / val[n.b];
          break;
        case Op::Neg:
          adj[n.a] -= a;
          break;
        case Op::Exp:
          adj[n.a] += a * val[id];
          break;
        case Op::Log:
          adj[n.a] += a / val[n.a];
          break;
        case Op::Sqrt:
          if (val[id] == 0.0) throw DomainError(id, "derivative of sqrt at zero");
          adj[n.a] += a * 0.5 / val[id];
          break;
        case Op::Tanh:
          adj[n.a] += a * (1.0 - val[id] * val[id]);
          break;
      }
    }
  }

  std::vector<char> seeded(n_vars_, 0);
  for (const Color& color : colors_) {
    for (VarId v : color.seeds) seeded[v] = 1;

    // Forward-over-reverse per function: tangent sweep then adjoint-tangent sweep.
    for (int s = 0; s < nf; ++s) {
      const Function& f = *funs_[s];
      auto& b = ws.slot(s);
      const auto& nodes = f.nodes_;
      const double* val = b.val.data();
      const double* adj = b.adj.data();
      double* dot = b.dot.data();
      double* adjdot = b.adjdot.data();
      for (std::size_t id = 0; id < nodes.size(); ++id) {
        const Node& n = nodes[id];
        switch (n.op) {
          case Op::Const:
            dot[id] = 0.0;
            break;
          case Op::Var:
            dot[id] = seeded[n.a] ? 1.0 : 0.0;
            break;
          case Op::Add: {
            double s2 = 0.0;
            for (NodeId k : f.kids_of(n)) s2 += dot[k];
            dot[id] = s2;
            break;
          }
          case Op::Mul:
            dot[id] = dot[n.a] * val[n.b] + val[n.a] * dot[n.b];
            break;
          case Op::Pow:
            dot[id] = n.b * int_pow(val[n.a], n.b - 1) * dot[n.a];
            break;
          case Op::Div:
            dot[id] = (dot[n.a] - val[id] * dot[n.b]) / val[n.b];
            break;
          case Op::Neg:
            dot[id] = -dot[n.a];
            break;
          case Op::Exp:
            dot[id] = val[id] * dot[n.a];
            break;
          case Op::Log:
            dot[id] = dot[n.a] / val[n.a];
            break;
          case Op::Sqrt:
            dot[id] = val[id] == 0.0 ? 0.0 : 0.5 * dot[n.a] / val[id];
            break;
          case Op::Tanh:
            dot[id] = (1.0 - val[id] * val[id]) * dot[n.a];
            break;
        }
      }
      std::fill(b.adjdot.begin(), b.adjdot.begin() + nodes.size(), 0.0);
      for (std::int32_t id = static_cast<std::int32_t>(nodes.size()) - 1; id >= 0; --id) {
        const Node& n = nodes[id];
        const double a = adj[id];
        const double ad = adjdot[id];
        if (a == 0.0 && ad == 0.0) continue;
        switch (n.op) {
          case Op::Const:
          case Op::Var:
            break;
          case Op::Add:
            for (NodeId k : f.kids_of(n)) adjdot[k] += ad;
            break;
          case Op::Mul:
            adjdot[n.a] += ad * val[n.b] + a * dot[n.b];
            adjdot[n.b] += ad * val[n.a] + a * dot[n.a];
            break;
          case Op::Pow: {
            const double p = n.b * int_pow(val[n.a], n.b - 1);
            const double pd = static_cast<double>(n.b) * (n.b - 1) *
                              int_pow(val[n.a], n.b - 2) * dot[n.a];
            adjdot[n.a] += ad * p + a * pd;
            break;
          }
          case Op::Div: {
            const double ib = 1.0 / val[n.b];
            adjdot[n.a] += ad * ib - a * dot[n.b] * ib * ib;
            adjdot[n.b] += -ad * val[id] * ib +
                           a * (-dot[n.a] * ib * ib + 2.0 * val[id] * dot[n.b] * ib * ib);
            break;
          }
          case Op::Neg:
            adjdot[n.a] -= ad;
            break;
          case Op::Exp:
            adjdot[n.a] += ad * val[id] + a * dot[id];
            break;
          case Op::Log:
            adjdot[n.a] += ad / val[n.a] - a * dot[n.a] / (val[n.a] * val[n.a]);
            break;
          case Op::Sqrt:
            if (val[id] == 0.0) throw DomainError(id, "second derivative of sqrt at zero");
            adjdot[n.a] += ad * 0.5 / val[id] - a * 0.5 * dot[id] / (val[id] * val[id]);
            break;
          case Op::Tanh:
            adjdot[n.a] += ad * (1.0 - val[id] * val[id]) - a * 2.0 * val[id] * dot[id];
            break;
        }
      }
    }

    for (const auto& [e, readvar] : color.recover) {
      double h = 0.0;
      for (int s = 0; s < nf; ++s) {
        const NodeId vn = funs_[s]->var_nodes_[readvar];
        if (vn >= 0) h += ws.slot(s).adjdot[vn];
      }
      values[e] = h;
    }

    for (VarId v : color.seeds) seeded[v] = 0;
  }
}

HessPattern hessian_of_lagrangian(const Function* objective, const Function* constraints,
                                  std::span<const double> w, double obj_factor,
                                  std::span<const double> multipliers,
                                  std::vector<double>& values, Workspace& ws) {
  std::vector<const Function*> funs;
  std::vector<std::span<const double>> weights;
  std::span<const double> of{&obj_factor, 1};
  if (objective != nullptr) {
    if (objective->n_out() != 1) fail(Errc::DimensionMismatch, "objective must be scalar");
    funs.push_back(objective);
    weights.push_back(of);
  }
  if (constraints != nullptr) {
    if (static_cast<int>(multipliers.size()) != constraints->n_out())
      fail(Errc::DimensionMismatch, "multiplier count != constraint outputs");
    funs.push_back(constraints);
    weights.push_back(multipliers);
  }
  LagrangianHessian lh(funs);
  values.assign(lh.pattern().nnz(), 0.0);
  lh.eval(w, weights, values, ws);
  return lh.pattern();
}

}  // namespace ndae::expr
