#pragma once

#include "diffalign/denoiser.hpp"
#include "diffalign/noise.hpp"
#include "diffalign/serialize.hpp"

#include <filesystem>
#include <optional>

namespace diffalign {

struct DiffusionSpec {
  int steps = 100;
  TransitionKind kind = TransitionKind::absorbing;
  std::optional<Eigen::RowVectorXd> node_marginals;
  std::optional<Eigen::RowVectorXd> edge_marginals;

  NoiseProcess make(Alphabet alphabet) const {
    return NoiseProcess::make(steps, kind, alphabet, 0, 0, node_marginals, edge_marginals);
  }
};

/// A trained model: architecture, diffusion chain and weights.
struct Checkpoint {
  DenoiserConfig config;
  DiffusionSpec diffusion;
  DenoiserParams params;

  NoiseProcess process() const { return diffusion.make(config.alphabet); }
};

inline constexpr int kCheckpointVersion = 1;

Json to_json(const DiffusionSpec& d);
DiffusionSpec diffusion_from_json(const Json& j);

Json to_json(const Checkpoint& c);
/// Validates format tag, version and parameter shapes against the config.
Checkpoint checkpoint_from_json(const Json& j);

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace diffalign
