#pragma once

#include "diffalign/denoiser.hpp"
#include "diffalign/noise.hpp"
#include "diffalign/sampler.hpp"
#include "diffalign/serialize.hpp"

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace diffalign {

/// Denoiser as a function of a (possibly soft) X_t and the time step.
using DenoiseFn = std::function<SoftGraph(const GraphTensor& x_t, int t)>;

DenoiseFn bind_denoiser(const Model& model, const Condition& cond);

struct ElboTerms {
  /// KL(q(X_T | X_0) || p(X_T)).
  double prior = 0.0;
  /// L_{t-1} for t = 2..T (entry t - 2).
  std::vector<double> transitions;
  /// -log p(X_0 | X_1) in expectation over X_1.
  double reconstruction = 0.0;

  double loss() const;
  double elbo() const { return -loss(); }
};

/// Exact per-component terms; each t uses one denoiser call on the expected
/// input x_0 Qbar_t.
ElboTerms elbo_terms(const NoiseProcess& process, const DenoiseFn& denoise, const Graph& x0);

/// -L_vb for x0 under the model (higher is better, always <= 0).
double elbo(const Model& model, const Graph& x0, const Condition& cond);

struct Candidate {
  Graph graph;
  std::string key;
  int count = 0;
  double elbo = 0.0;
  double score = 0.0;
  /// Index of the first sample in the group.
  int representative = 0;
};

struct RankedCandidates {
  std::vector<Candidate> items;
  double lambda = 0.9;
};

inline constexpr double kDefaultRankWeight = 0.9;

/// Canonical key of a graph with blank nodes removed.
std::string candidate_key(const Graph& g);

/// Groups isomorphic samples (blank nodes ignored) in order of first appearance.
std::vector<Candidate> deduplicate(std::span<const Graph> samples);

/// score = (1 - lambda) count / sum(count) + lambda softmax(elbo); sorted by
/// score, then count, then key.
RankedCandidates rank_candidates(std::vector<Candidate> candidates, double lambda = kDefaultRankWeight);

/// Deduplicates and ranks; the group elbo is taken from its representative.
/// `elbos` may be empty when lambda is 0.
RankedCandidates dedup_and_rank(std::span<const Graph> samples, std::span<const double> elbos,
                                double lambda = kDefaultRankWeight);

/// 1-based rank of the truth among the candidates, 0 when absent.
int rank_of(const RankedCandidates& ranked, const Graph& truth);

/// Fraction of inputs whose rank lies in [1, k].
double topk_accuracy(std::span<const int> ranks, int k);

/// Reciprocal-rank estimate from top-k fractions, taking p(rank) constant
/// between consecutive known cut-offs (with top_0 = 0) and zero beyond the
/// last one. With all four values the buckets are {1}, {2,3}, {4,5}, {6..10}.
/// Throws std::invalid_argument on values outside [0, 1] or non-monotone input.
double mrr_estimate(std::optional<double> top1, std::optional<double> top3, std::optional<double> top5,
                    std::optional<double> top10);
double mrr_estimate(double top1, double top3, double top5, double top10);

int unique_count(std::span<const Graph> samples);
/// unique-count -> number of inputs with that many unique candidates.
std::map<int, int> diversity(const std::vector<std::vector<Graph>>& samples_per_input);

/// Mean squared error between binary adjacency matrices over unordered pairs.
double edge_mse(const Graph& prediction, const Graph& truth);

struct EvaluationReport {
  std::map<int, double> per_k;
  double mrr = 0.0;
  std::map<int, int> diversity_histogram;
  std::vector<int> ranks;
  /// Mean edge_mse over all samples; absent when sizes differ from the truth.
  std::optional<double> edge_mse;
};

/// Ranks every input's samples and scores them against the truths.
EvaluationReport evaluate_ranked(const std::vector<RankedCandidates>& ranked, std::span<const Graph> truths,
                                 std::span<const int> ks, const std::vector<std::vector<Graph>>& samples_per_input);

/// Mean edge_mse of every sample against its input's truth, or nullopt when
/// any sample and truth differ in size.
std::optional<double> mean_edge_mse(const std::vector<std::vector<Graph>>& samples_per_input,
                                    std::span<const Graph> truths);

Json to_json(const EvaluationReport& r);
Json to_json(const RankedCandidates& r);

}  // namespace diffalign
