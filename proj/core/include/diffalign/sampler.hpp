#pragma once

#include "diffalign/denoiser.hpp"
#include "diffalign/noise.hpp"
#include "diffalign/rng.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

namespace diffalign {

enum class MappingPolicy { identity_prefix, random };

std::string to_string(MappingPolicy p);
MappingPolicy mapping_policy_from_string(const std::string& s);

struct SampleConfig {
  /// Number of denoiser evaluations along the reverse chain (T_sample).
  int steps = 100;
  int num_samples = 1;
  std::uint64_t seed = 0;
  MappingPolicy mapping = MappingPolicy::identity_prefix;
  /// Blank nodes appended to the condition size to form the target size.
  int extra_blank_nodes = 0;
  int threads = 1;
};

struct GuidanceSpec {
  double gamma = 0.0;
  /// Offset; defaults to |S| / 2 when unset.
  std::optional<double> offset;
  /// Scale; defaults to |S| / 4 when unset.
  std::optional<double> scale;
  /// Target node indices entering the likelihood; defaults to unmapped targets.
  std::optional<std::vector<int>> nodes;
  /// Label counted by the likelihood; defaults to the blank label.
  std::optional<int> label;
};

struct InpaintMask {
  std::vector<std::pair<int, int>> nodes;                // (node, label)
  std::vector<std::tuple<int, int, int>> edges;          // (i, j, label)

  bool empty() const { return nodes.empty() && edges.empty(); }
  /// Throws std::invalid_argument on out-of-range indices or labels.
  void validate(int n, Alphabet alphabet) const;
  void apply(Graph& g) const;
  /// Copy of g with clamped components set to blank / none. Clamped labels
  /// are not reachable from the chain at t = T, so the posterior mixture is
  /// taken from this state and the clamps are reapplied after each draw.
  Graph release(const Graph& g) const;
};

/// Everything needed to run the reverse chain for one trained model.
struct Model {
  DenoiserConfig config;
  DenoiserParams params;
  NoiseProcess process;
};

/// Denoiser evaluation times for a reverse run: T_sample evenly spaced values
/// from T down to 1 (rounded), or {T} when T_sample = 1. Strictly decreasing.
std::vector<int> time_grid(int total_steps, int sample_steps);

/// Per-component categorical distributions of X_s given X_t (s < t).
/// Edge rows are filled for every ordered pair and are symmetric.
struct StepDistribution {
  Eigen::MatrixXd nodes;
  Eigen::MatrixXd edges;
};

/// Mixture of posteriors weighted by the denoised probabilities.
StepDistribution reverse_distribution(const NoiseProcess& process, const SoftGraph& denoised, const Graph& x_t, int t,
                                      int s);

/// Draws nodes, then edges on i < j (mirrored) from `dist`.
Graph sample_step(const StepDistribution& dist, const Graph& shape, Rng& rng);

/// One ancestral step from t to s with a fresh denoiser evaluation.
Graph reverse_step(const Model& model, const Graph& x_t, const Condition& cond, int t, int s, Rng& rng);

struct Guidance {
  double gamma;
  double offset;
  double scale;
  std::vector<int> nodes;
  int label;
};

/// Resolves defaults of a GuidanceSpec against a target size and mapping.
Guidance resolve_guidance(const GuidanceSpec& spec, const NodeMapping& mapping, int blank_index);

/// log sigma((sum_{i in S} p[i, label] - offset) / scale) on denoised node
/// probabilities.
double guidance_log_likelihood(const Guidance& g, const Eigen::MatrixXd& node_probs);

/// Gradient of the guidance log-likelihood with respect to the X_t node and
/// edge one-hots (edge gradients for (i, j) and (j, i) are summed).
struct InputGradient {
  SoftGraph denoised;
  Eigen::MatrixXd nodes;
  Eigen::MatrixXd edges;
  double log_likelihood = 0.0;
};
InputGradient guidance_gradient(const Model& model, const Graph& x_t, const Condition& cond, int t,
                                const Guidance& g);

/// reverse_distribution with log-probabilities shifted by gamma * gradient and
/// renormalized. gamma = 0 returns the unguided distribution unchanged.
/// `chain_state`, when given, replaces x_t in the posterior (see
/// InpaintMask::release).
StepDistribution guided_distribution(const Model& model, const Graph& x_t, const Condition& cond, int t, int s,
                                     const Guidance& g, const Graph* chain_state = nullptr);

struct Sample {
  Graph graph;
  NodeMapping mapping;
  std::uint64_t seed = 0;
  int index = 0;
  int steps = 0;
};

using ProgressFn = std::function<void(double)>;

/// Mapping for sample `index` under the configured policy.
NodeMapping sample_mapping(const SampleConfig& config, int target_size, int condition_size, Rng& rng);

std::vector<Sample> sample(const Model& model, const Graph& y, const SampleConfig& config,
                           const ProgressFn& progress = nullptr);
std::vector<Sample> guided_sample(const Model& model, const Graph& y, const SampleConfig& config,
                                  const GuidanceSpec& guidance, const ProgressFn& progress = nullptr);
std::vector<Sample> inpaint_sample(const Model& model, const Graph& y, const SampleConfig& config,
                                   const InpaintMask& mask, const ProgressFn& progress = nullptr);

/// General entry point; guidance and mask may be combined.
std::vector<Sample> run_sampler(const Model& model, const Graph& y, const SampleConfig& config,
                                const std::optional<GuidanceSpec>& guidance, const std::optional<InpaintMask>& mask,
                                const ProgressFn& progress = nullptr);

/// Single chain with an explicit mapping; used by the batch entry points.
Graph run_chain(const Model& model, const Condition& cond, int target_size, int sample_steps,
                const std::optional<Guidance>& guidance, const InpaintMask* mask, Rng& rng);

}  // namespace diffalign
