#include "diffalign/graph.hpp"

#include <algorithm>
#include <cmath>

namespace diffalign {

Graph::Graph(int n, Alphabet alphabet, int blank_index, int none_index)
    : n_(n), alphabet_(alphabet), blank_(blank_index), none_(none_index) {
  if (n < 0) throw DimensionError("Graph: negative node count");
  if (alphabet.node < 1 || alphabet.edge < 1) throw DimensionError("Graph: empty alphabet");
  if (blank_index < 0 || blank_index >= alphabet.node) throw DimensionError("Graph: blank index out of range");
  if (none_index < 0 || none_index >= alphabet.edge) throw DimensionError("Graph: none index out of range");
  nodes_.assign(static_cast<std::size_t>(n), blank_index);
  edges_.assign(static_cast<std::size_t>(n) * n, none_index);
}

Graph Graph::from_labels(const std::vector<int>& node_labels,
                         const std::vector<std::tuple<int, int, int>>& edges, Alphabet alphabet,
                         int blank_index, int none_index) {
  Graph g(static_cast<int>(node_labels.size()), alphabet, blank_index, none_index);
  for (std::size_t i = 0; i < node_labels.size(); ++i) g.set_node_label(static_cast<int>(i), node_labels[i]);
  for (const auto& [i, j, l] : edges) g.set_edge_label(i, j, l);
  return g;
}

void Graph::set_node_label(int i, int label) {
  if (label < 0 || label >= alphabet_.node) throw DimensionError("node label out of range");
  nodes_[check_index(i)] = label;
}

void Graph::set_edge_label(int i, int j, int label) {
  if (label < 0 || label >= alphabet_.edge) throw DimensionError("edge label out of range");
  check_index(i);
  check_index(j);
  if (i == j && label != none_) throw InvariantError("self loops are not allowed");
  edges_[static_cast<std::size_t>(i) * n_ + j] = label;
  edges_[static_cast<std::size_t>(j) * n_ + i] = label;
}

Eigen::MatrixXd Graph::node_one_hot() const {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n_, alphabet_.node);
  for (int i = 0; i < n_; ++i) m(i, nodes_[i]) = 1.0;
  return m;
}

Eigen::MatrixXd Graph::edge_one_hot() const {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_) * n_, alphabet_.edge);
  for (std::size_t r = 0; r < edges_.size(); ++r) m(static_cast<Eigen::Index>(r), edges_[r]) = 1.0;
  return m;
}

int Graph::count_non_blank() const {
  return static_cast<int>(std::count_if(nodes_.begin(), nodes_.end(), [&](int l) { return l != blank_; }));
}

int Graph::count_edges() const {
  int c = 0;
  for (int i = 0; i < n_; ++i)
    for (int j = i + 1; j < n_; ++j) c += edge_label(i, j) != none_;
  return c;
}

void Graph::validate() const {
  for (int i = 0; i < n_; ++i) {
    if (nodes_[i] != blank_) continue;
    for (int j = 0; j < n_; ++j) {
      if (edge_label(i, j) != none_) {
        throw InvariantError("edge (" + std::to_string(i) + "," + std::to_string(j) +
                             ") touches a blank node");
      }
    }
  }
}

bool Graph::is_valid() const {
  try {
    validate();
    return true;
  } catch (const InvariantError&) {
    return false;
  }
}

void Graph::drop_dangling_edges() {
  for (int i = 0; i < n_; ++i) {
    if (nodes_[i] != blank_) continue;
    for (int j = 0; j < n_; ++j) {
      edges_[static_cast<std::size_t>(i) * n_ + j] = none_;
      edges_[static_cast<std::size_t>(j) * n_ + i] = none_;
    }
  }
}

GraphTensor GraphTensor::one_hot(const Graph& g) {
  return GraphTensor{g.size(), g.node_one_hot(), g.edge_one_hot()};
}

GraphTensor GraphTensor::zeros(int n, int node_width, int edge_width) {
  return GraphTensor{n, Eigen::MatrixXd::Zero(n, node_width),
                     Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n) * n, edge_width)};
}

void SoftGraph::check_normalized(double tol) const {
  auto check_rows = [tol](const Eigen::MatrixXd& m, const char* what) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      if ((m.row(r).array() < 0.0).any() || !m.row(r).allFinite()) {
        throw InvariantError(std::string(what) + " row has invalid probabilities");
      }
      if (std::abs(m.row(r).sum() - 1.0) > tol) {
        throw InvariantError(std::string(what) + " row does not sum to one");
      }
    }
  };
  check_rows(nodes, "node");
  check_rows(edges, "edge");
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (edges.row(i * n + j) != edges.row(j * n + i)) throw InvariantError("edge output not symmetric");
}

Permutation::Permutation(std::vector<int> order) : order_(std::move(order)) {
  std::vector<char> seen(order_.size(), 0);
  for (int v : order_) {
    if (v < 0 || v >= static_cast<int>(order_.size()) || seen[static_cast<std::size_t>(v)]) {
      throw InvariantError("Permutation: order is not a bijection");
    }
    seen[static_cast<std::size_t>(v)] = 1;
  }
}

Permutation Permutation::identity(int n) {
  std::vector<int> o(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) o[static_cast<std::size_t>(i)] = i;
  return Permutation(std::move(o));
}

Permutation Permutation::swap(int n, int a, int b) {
  auto p = identity(n).order_;
  std::swap(p.at(static_cast<std::size_t>(a)), p.at(static_cast<std::size_t>(b)));
  return Permutation(std::move(p));
}

Permutation Permutation::inverse() const {
  std::vector<int> inv(order_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) inv[static_cast<std::size_t>(order_[i])] = static_cast<int>(i);
  return Permutation(std::move(inv));
}

Permutation Permutation::after(const Permutation& inner) const {
  if (inner.size() != size()) throw DimensionError("Permutation::after: size mismatch");
  std::vector<int> o(order_.size());
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = order_[static_cast<std::size_t>(inner.order_[i])];
  return Permutation(std::move(o));
}

NodeMapping::NodeMapping(int rows, int cols)
    : rows_(rows), cols_(cols),
      target_of_(static_cast<std::size_t>(cols), -1),
      input_of_(static_cast<std::size_t>(rows), -1) {
  if (rows < 0 || cols < 0) throw DimensionError("NodeMapping: negative size");
}

NodeMapping::NodeMapping(int rows, int cols, const std::vector<std::pair<int, int>>& pairs)
    : NodeMapping(rows, cols) {
  for (const auto& [i, j] : pairs) add_pair(i, j);
}

NodeMapping NodeMapping::identity_prefix(int rows, int cols) {
  if (cols > rows) throw DimensionError("identity_prefix: more inputs than targets");
  NodeMapping m(rows, cols);
  for (int j = 0; j < cols; ++j) m.add_pair(j, j);
  return m;
}

NodeMapping NodeMapping::from_permutation(const Permutation& p) {
  NodeMapping m(p.size(), p.size());
  for (int j = 0; j < p.size(); ++j) m.add_pair(p(j), j);
  return m;
}

void NodeMapping::add_pair(int target, int input) {
  if (target < 0 || target >= rows_ || input < 0 || input >= cols_) {
    throw DimensionError("NodeMapping: pair index out of range");
  }
  if (input_of_[static_cast<std::size_t>(target)] != -1 || target_of_[static_cast<std::size_t>(input)] != -1) {
    throw InvariantError("NodeMapping: matching is not injective");
  }
  input_of_[static_cast<std::size_t>(target)] = input;
  target_of_[static_cast<std::size_t>(input)] = target;
}

std::vector<std::pair<int, int>> NodeMapping::pairs() const {
  std::vector<std::pair<int, int>> out;
  for (int i = 0; i < rows_; ++i)
    if (input_of_[static_cast<std::size_t>(i)] >= 0) out.emplace_back(i, input_of_[static_cast<std::size_t>(i)]);
  return out;
}

std::size_t NodeMapping::pair_count() const {
  return static_cast<std::size_t>(std::count_if(input_of_.begin(), input_of_.end(), [](int v) { return v >= 0; }));
}

std::vector<int> NodeMapping::unmapped_targets() const {
  std::vector<int> out;
  for (int i = 0; i < rows_; ++i)
    if (input_of_[static_cast<std::size_t>(i)] < 0) out.push_back(i);
  return out;
}

Eigen::MatrixXd NodeMapping::matrix() const {
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(rows_, cols_);
  for (const auto& [i, j] : pairs()) p(i, j) = 1.0;
  return p;
}

Graph apply_permutation(const Permutation& p, const Graph& g) {
  if (p.size() != g.size()) throw DimensionError("apply_permutation: size mismatch");
  Graph out(g.size(), g.alphabet(), g.blank_index(), g.none_index());
  for (int i = 0; i < g.size(); ++i) out.set_node_label(p(i), g.node_label(i));
  for (int i = 0; i < g.size(); ++i)
    for (int j = i + 1; j < g.size(); ++j) out.set_edge_label(p(i), p(j), g.edge_label(i, j));
  return out;
}

GraphTensor apply_permutation(const Permutation& p, const GraphTensor& g) {
  if (p.size() != g.n) throw DimensionError("apply_permutation: size mismatch");
  const int n = g.n;
  GraphTensor out{n, Eigen::MatrixXd(g.nodes.rows(), g.nodes.cols()), Eigen::MatrixXd(g.edges.rows(), g.edges.cols())};
  for (int i = 0; i < n; ++i) out.nodes.row(p(i)) = g.nodes.row(i);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) out.edges.row(p(i) * n + p(j)) = g.edges.row(i * n + j);
  return out;
}

SoftGraph apply_permutation(const Permutation& p, const SoftGraph& g) {
  return SoftGraph(apply_permutation(p, static_cast<const GraphTensor&>(g)));
}

GraphTensor apply_mapping(const NodeMapping& m, const Graph& y) {
  if (m.cols() != y.size()) throw DimensionError("apply_mapping: mapping columns must equal input size");
  const int n = m.rows();
  GraphTensor out = GraphTensor::zeros(n, y.alphabet().node, y.alphabet().edge);
  const auto pairs = m.pairs();
  for (const auto& [i, j] : pairs) out.nodes(i, y.node_label(j)) = 1.0;
  for (const auto& [i, j] : pairs)
    for (const auto& [i2, j2] : pairs) out.edges(i * n + i2, y.edge_label(j, j2)) = 1.0;
  return out;
}

Eigen::MatrixXd apply_mapping_rows(const NodeMapping& m, const Eigen::MatrixXd& rows) {
  if (m.cols() != rows.rows()) throw DimensionError("apply_mapping_rows: size mismatch");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(m.rows(), rows.cols());
  for (const auto& [i, j] : m.pairs()) out.row(i) = rows.row(j);
  return out;
}

NodeMapping permute_mapping(const Permutation& r, const Permutation& q, const NodeMapping& m) {
  if (r.size() != m.rows() || q.size() != m.cols()) throw DimensionError("permute_mapping: size mismatch");
  NodeMapping out(m.rows(), m.cols());
  for (const auto& [i, j] : m.pairs()) out.add_pair(r(i), q(j));
  return out;
}

GraphTensor concat_features(const GraphTensor& a, const GraphTensor& b) {
  if (a.n != b.n) throw DimensionError("concat_features: node count mismatch");
  GraphTensor out{a.n, Eigen::MatrixXd(a.nodes.rows(), a.nodes.cols() + b.nodes.cols()),
                  Eigen::MatrixXd(a.edges.rows(), a.edges.cols() + b.edges.cols())};
  out.nodes << a.nodes, b.nodes;
  out.edges << a.edges, b.edges;
  return out;
}

Graph strip_blank_nodes(const Graph& g) {
  std::vector<int> keep;
  for (int i = 0; i < g.size(); ++i)
    if (g.node_label(i) != g.blank_index()) keep.push_back(i);
  Graph out(static_cast<int>(keep.size()), g.alphabet(), g.blank_index(), g.none_index());
  for (std::size_t a = 0; a < keep.size(); ++a) {
    out.set_node_label(static_cast<int>(a), g.node_label(keep[a]));
    for (std::size_t b = a + 1; b < keep.size(); ++b)
      out.set_edge_label(static_cast<int>(a), static_cast<int>(b), g.edge_label(keep[a], keep[b]));
  }
  return out;
}

}  // namespace diffalign
