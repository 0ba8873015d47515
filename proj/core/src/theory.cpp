#include "diffalign/theory.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace diffalign {

MarginalReport optimal_equivariant_output(const Graph& y) {
  const Alphabet a = y.alphabet();
  MarginalReport r{Eigen::RowVectorXd::Zero(a.node), Eigen::RowVectorXd::Zero(a.edge)};
  const int n = y.size();
  if (n == 0) throw std::invalid_argument("optimal_equivariant_output: empty graph");
  for (int i = 0; i < n; ++i) r.nodes(y.node_label(i)) += 1.0;
  r.nodes /= static_cast<double>(n);
  int pairs = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j, ++pairs) r.edges(y.edge_label(i, j)) += 1.0;
  if (pairs == 0) r.edges(y.none_index()) = 1.0;
  else r.edges /= static_cast<double>(pairs);
  return r;
}

Eigen::MatrixXd masked_optimal_output(std::span<const int> labels, int alphabet, std::span<const bool> masked) {
  const int n = static_cast<int>(labels.size());
  if (n == 0) throw std::invalid_argument("masked_optimal_output: empty node set");
  if (masked.size() != labels.size()) throw DimensionError("masked_optimal_output: mask length mismatch");
  Eigen::RowVectorXd marginal = Eigen::RowVectorXd::Zero(alphabet);
  int count = 0;
  for (int i = 0; i < n; ++i) {
    const int l = labels[static_cast<std::size_t>(i)];
    if (l < 0 || l >= alphabet) throw DimensionError("masked_optimal_output: label out of range");
    if (masked[static_cast<std::size_t>(i)]) {
      marginal(l) += 1.0;
      ++count;
    }
  }
  if (count > 0) marginal /= static_cast<double>(count);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, alphabet);
  for (int i = 0; i < n; ++i) {
    if (masked[static_cast<std::size_t>(i)]) out.row(i) = marginal;
    else out(i, labels[static_cast<std::size_t>(i)]) = 1.0;
  }
  return out;
}

Graph random_graph(int n, Alphabet alphabet, double edge_density, Rng& rng, bool allow_blank) {
  Graph g(n, alphabet);
  const int lo = allow_blank ? 0 : 1;
  for (int i = 0; i < n; ++i)
    g.set_node_label(i, lo + static_cast<int>(rng.below(static_cast<std::size_t>(alphabet.node - lo))));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      if (g.node_label(i) == g.blank_index() || g.node_label(j) == g.blank_index()) continue;
      if (alphabet.edge > 1 && rng.uniform() < edge_density)
        g.set_edge_label(i, j, 1 + static_cast<int>(rng.below(static_cast<std::size_t>(alphabet.edge - 1))));
    }
  return g;
}

Permutation random_permutation(int n, Rng& rng) {
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return Permutation(std::move(order));
}

NodeMapping random_mapping(int rows, int cols, Rng& rng) {
  Permutation rp = random_permutation(rows, rng);
  Permutation cp = random_permutation(cols, rng);
  const int pairs = std::min(rows, cols) == 0 ? 0 : static_cast<int>(rng.below(static_cast<std::size_t>(std::min(rows, cols)) + 1));
  NodeMapping m(rows, cols);
  for (int k = 0; k < pairs; ++k) m.add_pair(rp(k), cp(k));
  return m;
}

ConditionalDenoiser as_conditional(const Model& model) {
  return [&model](const GraphTensor& x_t, const Condition& cond, int t) {
    return forward(model.params, model.config, x_t, cond, t, model.process.steps());
  };
}

EquivarianceProblem problem_for(const DenoiserConfig& config, int target_nodes, int condition_nodes, int steps) {
  EquivarianceProblem p;
  p.target_nodes = target_nodes;
  p.condition_nodes = condition_nodes;
  p.steps = steps;
  p.pe_dim = config.pe_dim;
  p.pe_largest = config.pe_largest;
  p.alphabet = config.alphabet;
  p.plain = config.variant == Variant::unaligned;
  p.use_pe = config.uses_pe();
  return p;
}

EquivarianceReport check_aligned_equivariance(const ConditionalDenoiser& denoiser, const EquivarianceProblem& problem,
                                              int trials, double tolerance, std::uint64_t seed) {
  EquivarianceReport report{0, 0.0, tolerance, true};
  for (int trial = 0; trial < trials; ++trial) {
    Rng rng(seed, static_cast<std::uint64_t>(trial));
    const Graph x = random_graph(problem.target_nodes, problem.alphabet, 0.4, rng);
    const Graph y = random_graph(problem.condition_nodes, problem.alphabet, 0.4, rng);
    const NodeMapping m = random_mapping(problem.target_nodes, problem.condition_nodes, rng);
    const Permutation r = random_permutation(problem.target_nodes, rng);
    const Permutation q = random_permutation(problem.condition_nodes, rng);
    const int t = 1 + static_cast<int>(rng.below(static_cast<std::size_t>(problem.steps)));

    Condition cond{y, m, problem.use_pe ? laplacian_pe(y, problem.pe_dim, problem.pe_largest) : Eigen::MatrixXd()};
    Condition moved = permute_condition(cond, r, q);
    if (problem.plain) moved.mapping = m;

    const SoftGraph base = denoiser(GraphTensor::one_hot(x), cond, t);
    const SoftGraph expected = apply_permutation(r, base);
    const SoftGraph got = denoiser(GraphTensor::one_hot(apply_permutation(r, x)), moved, t);

    const double scale = std::max({expected.nodes.cwiseAbs().maxCoeff(), expected.edges.cwiseAbs().maxCoeff(), 1e-12});
    const double dev = std::max((got.nodes - expected.nodes).cwiseAbs().maxCoeff(),
                                (got.edges - expected.edges).cwiseAbs().maxCoeff()) /
                       scale;
    report.max_relative_deviation = std::max(report.max_relative_deviation, dev);
    ++report.trials;
  }
  report.pass = report.max_relative_deviation < tolerance;
  return report;
}

std::size_t state_count(int n, Alphabet alphabet) {
  double total = std::pow(static_cast<double>(alphabet.node), n) *
                 std::pow(static_cast<double>(alphabet.edge), n * (n - 1) / 2);
  if (total > 1e15) throw std::length_error("state space too large: " + std::to_string(total));
  return static_cast<std::size_t>(total);
}

Graph state_graph(std::size_t index, int n, Alphabet alphabet) {
  Graph g(n, alphabet);
  for (int i = 0; i < n; ++i) {
    g.set_node_label(i, static_cast<int>(index % static_cast<std::size_t>(alphabet.node)));
    index /= static_cast<std::size_t>(alphabet.node);
  }
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      g.set_edge_label(i, j, static_cast<int>(index % static_cast<std::size_t>(alphabet.edge)));
      index /= static_cast<std::size_t>(alphabet.edge);
    }
  return g;
}

std::size_t state_index(const Graph& g) {
  const Alphabet a = g.alphabet();
  const int n = g.size();
  std::size_t index = 0;
  std::size_t base = 1;
  for (int i = 0; i < n; ++i) {
    index += base * static_cast<std::size_t>(g.node_label(i));
    base *= static_cast<std::size_t>(a.node);
  }
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      index += base * static_cast<std::size_t>(g.edge_label(i, j));
      base *= static_cast<std::size_t>(a.edge);
    }
  return index;
}

std::vector<double> exact_sample_distribution(const Model& model, const Condition& cond, int target_nodes) {
  const Alphabet a = model.config.alphabet;
  const std::size_t states = state_count(target_nodes, a);
  const int steps = model.process.steps();
  const double trajectories = std::pow(static_cast<double>(states), steps);
  if (trajectories > kEnumerationCap) {
    throw std::length_error("enumeration refused: " + std::to_string(states) + "^" + std::to_string(steps) +
                            " trajectories exceed the cap");
  }
  std::vector<double> dist(states, 0.0);
  Rng unused(0);
  dist[state_index(sample_prior(model.process, target_nodes, a, 0, 0, unused))] = 1.0;
  if (model.process.nodes.kind() != TransitionKind::absorbing) {
    // Non-absorbing priors are products of per-component priors.
    const Eigen::RowVectorXd pn = model.process.nodes.prior();
    const Eigen::RowVectorXd pe = model.process.edges.prior();
    for (std::size_t s = 0; s < states; ++s) {
      const Graph g = state_graph(s, target_nodes, a);
      double p = 1.0;
      for (int i = 0; i < target_nodes; ++i) p *= pn(g.node_label(i));
      for (int i = 0; i < target_nodes; ++i)
        for (int j = i + 1; j < target_nodes; ++j) p *= pe(g.edge_label(i, j));
      dist[s] = p;
    }
  }
  for (int t = steps; t >= 1; --t) {
    std::vector<double> next(states, 0.0);
    for (std::size_t s = 0; s < states; ++s) {
      if (dist[s] == 0.0) continue;
      const Graph x = state_graph(s, target_nodes, a);
      const SoftGraph d = forward(model.params, model.config, x, cond, t, steps);
      const StepDistribution step = reverse_distribution(model.process, d, x, t, t - 1);
      for (std::size_t s2 = 0; s2 < states; ++s2) {
        const Graph x2 = state_graph(s2, target_nodes, a);
        double p = dist[s];
        for (int i = 0; i < target_nodes && p > 0.0; ++i) p *= step.nodes(i, x2.node_label(i));
        for (int i = 0; i < target_nodes && p > 0.0; ++i)
          for (int j = i + 1; j < target_nodes; ++j)
            p *= step.edges(static_cast<Eigen::Index>(i) * target_nodes + j, x2.edge_label(i, j));
        next[s2] += p;
      }
    }
    dist = std::move(next);
  }
  return dist;
}

double check_distribution_invariance(const Model& model, const Condition& cond, int target_nodes,
                                     const Permutation& r, const Permutation& q) {
  const std::vector<double> base = exact_sample_distribution(model, cond, target_nodes);
  const std::vector<double> moved = exact_sample_distribution(model, permute_condition(cond, r, q), target_nodes);
  double gap = 0.0;
  for (std::size_t s = 0; s < base.size(); ++s) {
    const Graph x = state_graph(s, target_nodes, model.config.alphabet);
    gap = std::max(gap, std::abs(moved[state_index(apply_permutation(r, x))] - base[s]));
  }
  return gap;
}

}  // namespace diffalign
