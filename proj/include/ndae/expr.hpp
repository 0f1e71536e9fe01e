#pragma once

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "ndae/errors.hpp"

namespace ndae::expr {

using NodeId = std::int32_t;
using VarId = std::int32_t;

enum class Op : std::uint8_t { Const, Var, Add, Mul, Pow, Div, Neg, Exp, Log, Sqrt, Tanh };

/// One node of the expression DAG. Children always have smaller ids, so node
/// order is a topological order.
struct Node {
  Op op;
  NodeId a = -1;   // unary/left child; Var: variable id; Add: offset into kid arena
  NodeId b = -1;   // right child; Add: kid count; Pow: integer exponent
  double c = 0.0;  // Const: value; Exp: guard bound on the argument
};

class Graph;

/// Handle used while building expressions; supports natural operator syntax.
struct Expr {
  Graph* g = nullptr;
  NodeId id = -1;
};

constexpr double kDefaultExpGuard = 709.0;  // just below log(DBL_MAX)
constexpr double kDomainEps = 1e-300;

/// Mutable expression DAG over a fixed set of variables. Construction applies
/// hash-consing (shared subexpressions) and constant folding. Not thread-safe;
/// freeze into a Function for evaluation.
class Graph {
 public:
  explicit Graph(int n_vars);

  int n_vars() const { return n_vars_; }
  int n_nodes() const { return static_cast<int>(nodes_.size()); }

  NodeId constant(double v);
  NodeId variable(VarId v);
  NodeId add(std::span<const NodeId> kids);
  // Sum preserving the given accumulation order (no flatten/sort/fold); used
  // where a numeric reference path must match the graph bit for bit.
  NodeId add_ordered(std::span<const NodeId> kids);
  NodeId mul(std::span<const NodeId> kids);
  NodeId pow(NodeId base, int exponent);
  NodeId div(NodeId num, NodeId den);
  NodeId neg(NodeId x);
  NodeId exp(NodeId x, double guard = kDefaultExpGuard);
  NodeId log(NodeId x);
  NodeId sqrt(NodeId x);
  NodeId tanh(NodeId x);

  // Copies the subgraph of `src` rooted at `roots` into this graph, replacing
  // src variable i by `substitution[i]` (a node of this graph). Returns the
  // mapped roots. This is the transcription workhorse: one model expression
  // re-emitted per collocation point.
  std::vector<NodeId> emit(const Graph& src, std::span<const NodeId> roots,
                           std::span<const NodeId> substitution);

  Expr c(double v) { return {this, constant(v)}; }
  Expr var(VarId v) { return {this, variable(v)}; }

  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<NodeId>& add_kids() const { return add_kids_; }
  std::span<const NodeId> kids_of(const Node& n) const {
    return {add_kids_.data() + n.a, static_cast<std::size_t>(n.b)};
  }

 private:
  NodeId push(Node n);
  NodeId intern(Node n, std::span<const NodeId> kids = {});
  std::uint64_t node_hash(const Node& n, std::span<const NodeId> kids) const;
  bool node_equal(NodeId id, const Node& n, std::span<const NodeId> kids) const;

  int n_vars_;
  std::vector<Node> nodes_;
  std::vector<NodeId> add_kids_;
  std::unordered_multimap<std::uint64_t, NodeId> cse_;
};

// Operator sugar over Expr handles.
Expr operator+(Expr x, Expr y);
Expr operator-(Expr x, Expr y);
Expr operator*(Expr x, Expr y);
Expr operator/(Expr x, Expr y);
Expr operator-(Expr x);
Expr operator+(Expr x, double v);
Expr operator+(double v, Expr x);
Expr operator-(Expr x, double v);
Expr operator-(double v, Expr x);
Expr operator*(Expr x, double v);
Expr operator*(double v, Expr x);
Expr operator/(Expr x, double v);
Expr operator/(double v, Expr x);
Expr pow(Expr x, int e);
Expr exp(Expr x, double guard = kDefaultExpGuard);
Expr log(Expr x);
Expr sqrt(Expr x);
Expr tanh(Expr x);
Expr sum(std::span<const Expr> terms);

/// Jacobian sparsity in CSR layout; column ids sorted within each row.
struct JacSparsity {
  std::vector<std::int32_t> row_ptr;
  std::vector<VarId> cols;
  std::size_t nnz() const { return cols.size(); }
};

/// Scratch buffers for evaluation/differentiation; caller-owned so frozen
/// functions can be shared across threads.
class Workspace {
 public:
  struct Buffers {
    std::vector<double> val, adj, dot, adjdot;
    void ensure(std::size_t n);
  };
  Buffers& slot(int i);

 private:
  std::vector<Buffers> slots_;
};

/// Frozen, immutable view of an expression graph with a fixed output list.
/// Construction prunes to the subgraph reachable from the outputs and
/// precomputes per-row reverse schedules and derivative sparsity.
class Function {
 public:
  Function(const Graph& g, std::span<const NodeId> outputs);

  int n_vars() const { return n_vars_; }
  int n_out() const { return static_cast<int>(outputs_.size()); }

  /// Forward evaluation of all outputs; deterministic node order, so repeated
  /// calls are bit-identical.
  void eval(std::span<const double> w, std::span<double> out, Workspace& ws) const;
  Eigen::VectorXd eval(const Eigen::VectorXd& w, Workspace& ws) const;

  const JacSparsity& jac_sparsity() const { return jac_; }

  /// Reverse-mode Jacobian; `values` aligned with jac_sparsity (row-major).
  void jacobian(std::span<const double> w, std::span<double> values, Workspace& ws) const;

  /// Reverse-mode gradient of one output row; `values` aligned with the row's
  /// slice of jac_sparsity.
  void gradient(std::span<const double> w, int row, std::span<double> values,
                Workspace& ws) const;

  // Internal structure shared with LagrangianHessian.
  const std::vector<Node>& nodes() const { return nodes_; }
  std::span<const NodeId> kids_of(const Node& n) const {
    return {add_kids_.data() + n.a, static_cast<std::size_t>(n.b)};
  }
  const std::vector<NodeId>& outputs() const { return outputs_; }
  NodeId var_node(VarId v) const { return var_nodes_[v]; }
  const std::vector<std::vector<VarId>>& hessian_cliques() const { return cliques_; }

 private:
  void forward(std::span<const double> w, Workspace::Buffers& b) const;
  void reverse_row(int row, Workspace::Buffers& b) const;
  void compute_row_schedules();
  void compute_hessian_cliques();
  friend class LagrangianHessian;

  int n_vars_;
  std::vector<Node> nodes_;
  std::vector<NodeId> add_kids_;
  std::vector<NodeId> outputs_;
  std::vector<NodeId> var_nodes_;  // var id -> node id or -1

  // per-row reverse schedule: nodes reachable from a row's output, ascending
  std::vector<std::int32_t> row_ptr_;
  std::vector<NodeId> row_nodes_;

  JacSparsity jac_;
  std::vector<std::vector<VarId>> cliques_;  // nonlinear interaction groups, deduplicated
};

/// Lower-triangle sparsity in COO layout sorted by (col, row); row >= col.
struct HessPattern {
  std::vector<std::int32_t> rows, cols;
  std::size_t nnz() const { return rows.size(); }
};

/// Exact Hessian of a weighted sum of function outputs
///   H = sum_s sum_r weight_s[r] * hess(f_s row r)
/// over the shared variable space, computed by forward-over-reverse sweeps
/// with a two-phase seed coloring (hub columns get singleton seeds, the
/// block-local remainder is grouped).
struct HessColoringOptions {
  int hub_degree_threshold = 64;
  double hub_peel_fraction = 0.75;
};

class LagrangianHessian {
 public:
  using Options = HessColoringOptions;

  explicit LagrangianHessian(std::vector<const Function*> funs, Options opt = Options());

  const HessPattern& pattern() const { return pattern_; }
  int n_colors() const { return static_cast<int>(colors_.size()); }

  /// weights[s] must have size funs[s]->n_out(). Output `values` aligned with
  /// pattern(). Each call overwrites all values.
  void eval(std::span<const double> w, std::span<const std::span<const double>> weights,
            std::span<double> values, Workspace& ws) const;

 private:
  struct Color {
    std::vector<VarId> seeds;
    std::vector<std::pair<std::int32_t, VarId>> recover;  // (value index, read row)
  };

  void build_pattern_and_colors(Options opt);

  std::vector<const Function*> funs_;
  int n_vars_;
  HessPattern pattern_;
  std::vector<Color> colors_;
};

/// Convenience wrapper: obj_factor * hess(f) + sum_i mult[i] * hess(c_i) as a
/// dense-indexable triplet list. Builds the coloring on every call; prefer
/// LagrangianHessian for repeated evaluation.
HessPattern hessian_of_lagrangian(const Function* objective, const Function* constraints,
                                  std::span<const double> w, double obj_factor,
                                  std::span<const double> multipliers,
                                  std::vector<double>& values, Workspace& ws);

}  // namespace ndae::expr
