#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

namespace diffalign {

/// Raised when array shapes or indices disagree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a value violates a documented invariant.
class InvariantError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite values or an empty distribution during numeric evaluation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Alphabet {
  int node = 0;
  int edge = 0;
  bool operator==(const Alphabet&) const = default;
};

/// Attributed undirected graph over fixed label alphabets. Labels are stored as
/// indices; one-hot views are produced on demand. Node label `blank_index` is
/// the blank/absorbing node state and edge label `none_index` means "no edge".
///
/// The structural invariants (symmetry, no self loops, labels in range) hold at
/// all times. The "edges only between non-blank nodes" invariant is checked by
/// validate(), since intermediate diffusion states legitimately violate it.
class Graph {
 public:
  Graph() = default;
  Graph(int n, Alphabet alphabet, int blank_index = 0, int none_index = 0);

  static Graph from_labels(const std::vector<int>& node_labels,
                           const std::vector<std::tuple<int, int, int>>& edges,
                           Alphabet alphabet, int blank_index = 0, int none_index = 0);

  int size() const { return n_; }
  Alphabet alphabet() const { return alphabet_; }
  int blank_index() const { return blank_; }
  int none_index() const { return none_; }

  int node_label(int i) const { return nodes_[check_index(i)]; }
  int edge_label(int i, int j) const {
    return edges_[static_cast<std::size_t>(check_index(i)) * n_ + check_index(j)];
  }
  void set_node_label(int i, int label);
  /// Sets both (i, j) and (j, i). Self loops may only carry the none label.
  void set_edge_label(int i, int j, int label);

  const std::vector<int>& node_labels() const { return nodes_; }

  /// n x K_a one-hot matrix.
  Eigen::MatrixXd node_one_hot() const;
  /// n^2 x K_b one-hot matrix; row i*n + j holds edge (i, j).
  Eigen::MatrixXd edge_one_hot() const;

  int count_non_blank() const;
  int count_edges() const;

  /// Throws InvariantError unless every edge touching a blank node is none.
  void validate() const;
  bool is_valid() const;

  /// Sets every edge incident to a blank node to none.
  void drop_dangling_edges();

  bool operator==(const Graph&) const = default;

 private:
  int check_index(int i) const {
    if (i < 0 || i >= n_) throw DimensionError("node index out of range");
    return i;
  }

  int n_ = 0;
  Alphabet alphabet_{};
  int blank_ = 0;
  int none_ = 0;
  std::vector<int> nodes_;
  std::vector<int> edges_;
};

/// Dense graph-shaped array: per-node feature rows and per-ordered-pair edge
/// feature rows (row i*n + j). Used for denoiser inputs and outputs.
struct GraphTensor {
  int n = 0;
  Eigen::MatrixXd nodes;
  Eigen::MatrixXd edges;

  int node_width() const { return static_cast<int>(nodes.cols()); }
  int edge_width() const { return static_cast<int>(edges.cols()); }

  static GraphTensor one_hot(const Graph& g);
  static GraphTensor zeros(int n, int node_width, int edge_width);
};

/// Graph-shaped probability vectors (denoiser output).
struct SoftGraph : GraphTensor {
  SoftGraph() = default;
  explicit SoftGraph(GraphTensor t) : GraphTensor(std::move(t)) {}

  /// Throws InvariantError if any row is negative, fails to sum to one within
  /// `tol`, or the edge rows are not symmetric.
  void check_normalized(double tol = 1e-6) const;
};

/// Bijection on [0, n). `apply(i)` is the image of i.
class Permutation {
 public:
  Permutation() = default;
  explicit Permutation(std::vector<int> order);

  static Permutation identity(int n);
  static Permutation swap(int n, int a, int b);

  int size() const { return static_cast<int>(order_.size()); }
  int apply(int i) const { return order_.at(static_cast<std::size_t>(i)); }
  int operator()(int i) const { return apply(i); }
  const std::vector<int>& order() const { return order_; }

  Permutation inverse() const;
  /// Returns (*this) o inner, i.e. x -> this(inner(x)).
  Permutation after(const Permutation& inner) const;

  bool operator==(const Permutation&) const = default;

 private:
  std::vector<int> order_;
};

/// Partial injective matching from input nodes (columns, N_Y) to target nodes
/// (rows, N_X). A pair (i, j) means target node i corresponds to input node j.
class NodeMapping {
 public:
  NodeMapping() = default;
  NodeMapping(int rows, int cols);
  NodeMapping(int rows, int cols, const std::vector<std::pair<int, int>>& pairs);

  /// Input node j maps to target node j for j < cols.
  static NodeMapping identity_prefix(int rows, int cols);
  /// Full mapping induced by a permutation: input j maps to target p(j).
  static NodeMapping from_permutation(const Permutation& p);

  int rows() const { return rows_; }
  int cols() const { return cols_; }

  void add_pair(int target, int input);

  /// Target index matched to input j, or -1.
  int target_of(int input) const { return target_of_.at(static_cast<std::size_t>(input)); }
  /// Input index matched to target i, or -1.
  int input_of(int target) const { return input_of_.at(static_cast<std::size_t>(target)); }

  /// Pairs sorted by target index.
  std::vector<std::pair<int, int>> pairs() const;
  std::size_t pair_count() const;

  /// Target indices that no input node maps onto.
  std::vector<int> unmapped_targets() const;

  Eigen::MatrixXd matrix() const;

  bool operator==(const NodeMapping&) const = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<int> target_of_;
  std::vector<int> input_of_;
};

/// Relabels nodes: output node p(i) is input node i.
Graph apply_permutation(const Permutation& p, const Graph& g);
GraphTensor apply_permutation(const Permutation& p, const GraphTensor& g);
SoftGraph apply_permutation(const Permutation& p, const SoftGraph& g);

/// Projects the input graph onto the target index space: mapped rows copy the
/// input one-hots, unmapped rows and fibers are all zero.
GraphTensor apply_mapping(const NodeMapping& m, const Graph& y);

/// Row-permutes a per-node matrix through the mapping (P * phi).
Eigen::MatrixXd apply_mapping_rows(const NodeMapping& m, const Eigen::MatrixXd& rows);

/// Co-permutes a mapping: pair (i, j) becomes (r(i), q(j)).
NodeMapping permute_mapping(const Permutation& r, const Permutation& q, const NodeMapping& m);

/// Concatenates node and edge features of `a` then `b` along the feature axis.
GraphTensor concat_features(const GraphTensor& a, const GraphTensor& b);

/// Returns the subgraph of non-blank nodes, preserving their relative order.
Graph strip_blank_nodes(const Graph& g);

}  // namespace diffalign
