#pragma once

#include "diffalign/checkpoint.hpp"
#include "diffalign/datagen.hpp"
#include "diffalign/denoiser.hpp"
#include "diffalign/sampler.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace diffalign {

struct TrainConfig {
  int steps = 100;
  TransitionKind kind = TransitionKind::absorbing;
  int epochs = 10;
  int batch_size = 32;
  double learning_rate = 0.01;
  std::uint64_t seed = 0;
  /// Stop after this many optimizer updates (0: no limit).
  int max_updates = 0;
  double edge_weight = kEdgeLossWeight;
  /// Epoch cadence of the checkpoint callback (0: never).
  int checkpoint_every = 0;
  /// Epoch cadence of validation (0: never).
  int val_every = 1;
  int val_steps = 10;
  int val_samples = 10;
  /// Validation inputs used (0: all).
  int val_limit = 0;
  int threads = 1;

  void validate() const;
};

Json to_json(const TrainConfig& c);
/// Overrides `base` with the keys present; unknown keys throw FormatError.
TrainConfig train_config_from_json(const Json& j, TrainConfig base = {});
struct AdamOptions {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam(const DenoiserParams& like, AdamOptions options);
  void step(DenoiserParams& params, const DenoiserParams& gradient);
  int updates() const { return updates_; }

 private:
  AdamOptions options_;
  DenoiserParams m_;
  DenoiserParams v_;
  int updates_ = 0;
};

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  std::optional<double> val_mrr;
};

Json to_json(const EpochLog& e);

struct TrainResult {
  DenoiserParams params;
  std::vector<EpochLog> log;
  int best_epoch = -1;
  std::optional<double> best_val_mrr;
  int updates = 0;
};

using EpochCallback = std::function<void(const EpochLog&, const DenoiserParams&)>;

/// Diffusion chain for a dataset; marginal kinds use the label frequencies of
/// the training targets.
DiffusionSpec diffusion_for(std::span<const PairedRecord> data, const TrainConfig& config);

/// Condition for a record (positional encodings computed once).
Condition condition_for(const PairedRecord& r, const DenoiserConfig& config);

/// Mini-batch training with t ~ U{1..T} and X_t ~ q(X_t | X_0). Returns the
/// parameters with the best validation MRR when validation runs, otherwise
/// the final parameters.
TrainResult train(std::span<const PairedRecord> data, const DenoiserConfig& denoiser, const TrainConfig& config,
                  std::span<const PairedRecord> validation = {}, const EpochCallback& on_epoch = nullptr);

struct ValidationOptions {
  int steps = 10;
  int samples = 10;
  std::uint64_t seed = 0;
  int threads = 1;
};

/// Samples each validation condition at reduced steps, ranks by duplicate
/// counts and returns the estimated MRR from top-1/3/5/10.
double evaluate_validation(const Model& model, std::span<const PairedRecord> validation,
                           const ValidationOptions& options);

}  // namespace diffalign
