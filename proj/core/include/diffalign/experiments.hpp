#pragma once

#include "diffalign/checkpoint.hpp"
#include "diffalign/datagen.hpp"
#include "diffalign/requests.hpp"
#include "diffalign/trainer.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <vector>

namespace diffalign {

/// Trains a checkpoint on the train split with validation disabled.
Checkpoint train_checkpoint(std::span<const PairedRecord> data, const DenoiserConfig& denoiser,
                            const TrainConfig& config);

/// Mean edge MSE of one sample per record against the target in condition
/// order (identity-prefix sampling frame). Sample seeds are mix_seed(seed, i).
double sampled_edge_mse(const Model& model, std::span<const PairedRecord> records, int sample_steps,
                        std::uint64_t seed, int threads = 1);

struct GridExperimentOptions {
  int train_records = 100;
  int eval_records = 100;
  GridCopyOptions grid{};
  int layers = 2;
  int hidden = 16;
  int heads = 4;
  int batch_size = 32;
  int epochs = 10;
  double learning_rate = 0.01;
  int steps = 100;
  std::uint64_t seed = 0;
  Variant aligned = Variant::input_align;
  int threads = 1;
};

struct GridExperimentResult {
  double aligned_mse = 0.0;
  double unaligned_mse = 0.0;
  Json details = Json::object();
};

GridExperimentResult run_grid_experiment(const GridExperimentOptions& options);

struct StepAblationOptions {
  int train_records = 2000;
  int test_records = 100;
  EditOptions edit{};
  int layers = 3;
  int hidden = 32;
  int heads = 4;
  int pe_dim = 6;
  int batch_size = 32;
  int epochs = 30;
  double learning_rate = 0.003;
  int steps = 100;
  int samples = 10;
  std::vector<int> sample_steps{1, 10};
  std::vector<int> ks{1, 3, 5, 10};
  double lambda = kDefaultRankWeight;
  std::uint64_t seed = 0;
  Variant aligned = Variant::pe_skip;
  int threads = 1;
};

struct StepAblationResult {
  /// variant name -> sample steps -> report.
  std::map<std::string, std::map<int, EvaluationReport>> reports;
  std::map<std::string, Checkpoint> checkpoints;
  PairedDataset test;

  double top1(const std::string& variant, int sample_steps) const;
  Json to_json() const;
};

StepAblationResult run_step_ablation(const StepAblationOptions& options);

/// Top-k report for one model on the records' conditions, sampled and ranked
/// through run_sample_request with seeds mix_seed(seed, i).
EvaluationReport evaluate_model(const Model& model, std::span<const PairedRecord> records, int samples,
                                int sample_steps, double lambda, std::span<const int> ks, std::uint64_t seed,
                                int threads = 1);

struct PermutationTest {
  double mean_a = 0.0;
  double mean_b = 0.0;
  /// One-sided p-value for mean_a > mean_b.
  double p_value = 1.0;
  int permutations = 0;
};

/// Label-shuffling test of mean(a) > mean(b), with the add-one correction.
PermutationTest permutation_test(std::span<const double> a, std::span<const double> b, int permutations,
                                 std::uint64_t seed);

struct GuidanceExperimentOptions {
  int samples = 200;
  double gamma = 5.0;
  int sample_steps = 100;
  int permutations = 10000;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct GuidanceExperimentResult {
  std::vector<double> unguided_counts;
  std::vector<double> guided_counts;
  PermutationTest test;
  Json to_json() const;
};

/// Non-blank node counts of samples drawn with gamma = 0 and with the blank
/// likelihood tilt, cycling through the conditions. Both arms share seeds.
GuidanceExperimentResult run_guidance_experiment(const Model& model, std::span<const Graph> conditions,
                                                 const GuidanceExperimentOptions& options);

}  // namespace diffalign
