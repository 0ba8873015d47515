#pragma once

#include "diffalign/denoiser.hpp"
#include "diffalign/evalkit.hpp"
#include "diffalign/sampler.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <span>

namespace diffalign {

struct MarginalReport {
  Eigen::RowVectorXd nodes;
  Eigen::RowVectorXd edges;
};

/// Label frequencies of y: nodes over all nodes, edges over unordered pairs.
/// A graph without pairs reports a one-hot edge marginal on "none".
MarginalReport optimal_equivariant_output(const Graph& y);

/// Optimal equivariant output of the node-only absorbing identity task:
/// unmasked rows copy their label, masked rows get the label frequencies of
/// the masked nodes. Throws std::invalid_argument on an empty node set.
Eigen::MatrixXd masked_optimal_output(std::span<const int> labels, int alphabet, std::span<const bool> masked);

/// Denoiser under test: (X_t, condition, t) -> output over the target.
using ConditionalDenoiser = std::function<SoftGraph(const GraphTensor& x_t, const Condition& cond, int t)>;

struct EquivarianceProblem {
  int target_nodes = 5;
  int condition_nodes = 4;
  int steps = 10;
  int pe_dim = 4;
  bool pe_largest = true;
  Alphabet alphabet{3, 2};
  /// Plain equivariance: the mapping is not co-permuted (it is ignored).
  bool plain = false;
  bool use_pe = true;
};

struct EquivarianceReport {
  int trials = 0;
  double max_relative_deviation = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

/// Random (X, Y, M, R, Q) trials comparing D(RX, QY, RMQ^T) with R D(X, Y, M).
EquivarianceReport check_aligned_equivariance(const ConditionalDenoiser& denoiser, const EquivarianceProblem& problem,
                                              int trials, double tolerance, std::uint64_t seed);

/// Wraps a model as a ConditionalDenoiser.
ConditionalDenoiser as_conditional(const Model& model);

/// Problem description matching a model's configuration.
EquivarianceProblem problem_for(const DenoiserConfig& config, int target_nodes, int condition_nodes, int steps);

inline constexpr double kEnumerationCap = 1e6;

/// Exact p(X_0 | Y, M) over every target graph, computed by propagating the
/// reverse chain over all states. Keys are state indices (see state_graph).
/// Throws std::length_error with the size estimate when states^T exceeds the cap.
std::vector<double> exact_sample_distribution(const Model& model, const Condition& cond, int target_nodes);

/// Graph for a state index in the enumeration order of exact_sample_distribution.
Graph state_graph(std::size_t index, int n, Alphabet alphabet);
std::size_t state_index(const Graph& g);
std::size_t state_count(int n, Alphabet alphabet);

/// max_x |p(R x | QY, RMQ^T) - p(x | Y, M)|.
double check_distribution_invariance(const Model& model, const Condition& cond, int target_nodes,
                                     const Permutation& r, const Permutation& q);

/// Random labeled graph whose edges only join non-blank nodes.
Graph random_graph(int n, Alphabet alphabet, double edge_density, Rng& rng, bool allow_blank = true);
Permutation random_permutation(int n, Rng& rng);
NodeMapping random_mapping(int rows, int cols, Rng& rng);

}  // namespace diffalign
