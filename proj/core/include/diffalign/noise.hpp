#pragma once

#include "diffalign/graph.hpp"
#include "diffalign/rng.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace diffalign {

enum class TransitionKind { absorbing, uniform, marginal };

std::string to_string(TransitionKind kind);
TransitionKind transition_kind_from_string(const std::string& s);

/// Mutual-information schedule; beta_t = 1 / (T - t + 1) for t = 1..T.
/// Returned vector is indexed from 0 (entry t-1 holds beta_t).
std::vector<double> beta_schedule(int steps, TransitionKind kind);

/// Single-step row-stochastic matrix for the given kind.
///   absorbing: (1 - beta) I + beta 1 e_absorb^T
///   uniform:   (1 - beta) I + beta 1 1^T / K
///   marginal:  (1 - beta) I + beta 1 m^T
Eigen::MatrixXd transition_matrix(double beta, TransitionKind kind, int alphabet, int absorb_index,
                                  const std::optional<Eigen::RowVectorXd>& marginals = std::nullopt);

/// Per-component categorical forward chain with precomputed Q_t and
/// cumulative Qbar_t = Q_1 ... Q_t. Immutable after construction.
class TransitionModel {
 public:
  TransitionModel() = default;
  TransitionModel(int steps, TransitionKind kind, int alphabet, int absorb_index = 0,
                  std::optional<Eigen::RowVectorXd> marginals = std::nullopt);

  int steps() const { return steps_; }
  TransitionKind kind() const { return kind_; }
  int alphabet() const { return alphabet_; }
  int absorb_index() const { return absorb_; }
  const std::optional<Eigen::RowVectorXd>& marginals() const { return marginals_; }

  double beta(int t) const;
  /// Q_t for t in [1, T].
  const Eigen::MatrixXd& step_matrix(int t) const;
  /// Qbar_t for t in [0, T]; Qbar_0 is the identity.
  const Eigen::MatrixXd& cumulative(int t) const;

  /// q(x_t | x_0) for one-hot x_0; t in [1, T].
  Eigen::RowVectorXd forward_marginal(int x0, int t) const;
  /// q(x_t | x_0) for a probability row x_0; t in [1, T].
  Eigen::RowVectorXd forward_marginal(const Eigen::RowVectorXd& x0, int t) const;

  /// q(x_{t-1} | x_t, x_0) for one-hot states. Throws std::domain_error when
  /// x_t is unreachable from x_0 in t steps.
  Eigen::RowVectorXd posterior(int xt, int x0, int t) const;
  /// Evidence q(x_t | x_0) for one-hot states.
  double evidence(int xt, int x0, int t) const { return cumulative(t)(x0, xt); }

  /// Multi-step transition Q_{s+1} ... Q_t for 0 <= s <= t <= T.
  Eigen::MatrixXd span_matrix(int s, int t) const;
  /// q(x_s | x_t, x_0) for s < t; equals posterior(xt, x0, t) when s = t - 1.
  Eigen::RowVectorXd posterior_between(int xt, int x0, int t, int s) const;

  /// Limiting distribution q(x_T); one-hot on the absorbing state for the
  /// absorbing kind.
  Eigen::RowVectorXd prior() const;

 private:
  void check_step(int t, int lo) const;

  int steps_ = 0;
  TransitionKind kind_ = TransitionKind::absorbing;
  int alphabet_ = 0;
  int absorb_ = 0;
  std::optional<Eigen::RowVectorXd> marginals_;
  std::vector<double> betas_;
  std::vector<Eigen::MatrixXd> step_;
  std::vector<Eigen::MatrixXd> cumulative_;
};

/// Posterior rows q(x_s | x_t, x_0) for one chain and a fixed (t, s), indexed
/// by the current state x_t. Rows for unreachable (x_0, x_t) pairs are zero.
class PosteriorTable {
 public:
  PosteriorTable(const TransitionModel& chain, int t, int s);

  int from() const { return t_; }
  int to() const { return s_; }
  /// K x K matrix; row x0 is q(x_s | x_t, x0) or zero when x_t is unreachable.
  const Eigen::MatrixXd& rows(int xt) const { return rows_.at(static_cast<std::size_t>(xt)); }

  /// Sum over reachable x0 of p0(x0) q(x_s | x_t, x0), renormalized.
  /// Throws NumericError when the mixture has no mass.
  Eigen::RowVectorXd mix(int xt, const Eigen::RowVectorXd& p0) const;

 private:
  int t_;
  int s_;
  std::vector<Eigen::MatrixXd> rows_;
};

/// Node and edge chains of a graph diffusion.
struct NoiseProcess {
  TransitionModel nodes;
  TransitionModel edges;

  int steps() const { return nodes.steps(); }

  static NoiseProcess make(int steps, TransitionKind kind, Alphabet alphabet, int blank_index = 0,
                           int none_index = 0,
                           std::optional<Eigen::RowVectorXd> node_marginals = std::nullopt,
                           std::optional<Eigen::RowVectorXd> edge_marginals = std::nullopt);
};

/// Samples X_t ~ q(X_t | X_0) componentwise; edges are drawn for i < j and
/// mirrored. t = 0 returns g0 unchanged.
Graph forward_sample(const NoiseProcess& process, const Graph& g0, int t, Rng& rng);

/// Draws X_T from the prior (all blank / none for absorbing chains).
Graph sample_prior(const NoiseProcess& process, int n, Alphabet alphabet, int blank_index, int none_index,
                   Rng& rng);

}  // namespace diffalign
