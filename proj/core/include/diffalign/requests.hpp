#pragma once

#include "diffalign/checkpoint.hpp"
#include "diffalign/evalkit.hpp"
#include "diffalign/sampler.hpp"

#include <optional>
#include <span>
#include <vector>

namespace diffalign {

/// A sampling job as accepted by both the CLI and the HTTP service.
struct SampleRequest {
  Graph condition;
  int num_samples = 10;
  int steps = 0;  // 0: the model's T
  std::uint64_t seed = 0;
  int extra_blank_nodes = -1;  // < 0: the model's max_blank_nodes
  MappingPolicy mapping = MappingPolicy::identity_prefix;
  std::optional<GuidanceSpec> guidance;
  std::optional<InpaintMask> mask;
  double lambda = kDefaultRankWeight;
  bool rank_with_elbo = true;
  int threads = 1;

  std::string kind() const;
};

Model model_from_checkpoint(const Checkpoint& c);

/// Parses a request body; unknown keys and malformed graphs throw FormatError.
/// Accepts both "condition" and "y" for the condition graph.
SampleRequest sample_request_from_json(const Json& j, const Model& model);
Json to_json(const SampleRequest& r);

Json to_json(const GuidanceSpec& g);
GuidanceSpec guidance_from_json(const Json& j);
Json to_json(const InpaintMask& m);
InpaintMask mask_from_json(const Json& j);

struct SampleOutcome {
  std::vector<Sample> samples;
  RankedCandidates ranking;
};

SampleConfig sample_config_for(const Model& model, const SampleRequest& r);

/// Samples, deduplicates and ranks. Candidate ELBOs use each group's first
/// sample and its mapping.
SampleOutcome run_sample_request(const Model& model, const SampleRequest& r, const ProgressFn& progress = nullptr);

Json to_json(const Sample& s);
Json to_json(const SampleOutcome& o);

/// Top-k report over per-input sample lists. With per-sample ELBOs the
/// ranking mixes counts and ELBOs with weight `lambda`, otherwise counts only.
EvaluationReport evaluate_samples(const std::vector<std::vector<Graph>>& samples,
                                  const std::vector<std::vector<double>>& elbos, std::span<const Graph> truths,
                                  std::span<const int> ks, double lambda = kDefaultRankWeight);

}  // namespace diffalign
