#include "diffalign/checkpoint.hpp"

#include <fstream>

namespace diffalign {

namespace {
Json row_json(const std::optional<Eigen::RowVectorXd>& v) {
  if (!v) return nullptr;
  return std::vector<double>(v->data(), v->data() + v->size());
}

std::optional<Eigen::RowVectorXd> row_from_json(const Json& j) {
  if (j.is_null()) return std::nullopt;
  auto values = j.get<std::vector<double>>();
  return Eigen::Map<Eigen::RowVectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}
}  // namespace

Json to_json(const DiffusionSpec& d) {
  return Json{{"steps", d.steps},
              {"kind", to_string(d.kind)},
              {"node_marginals", row_json(d.node_marginals)},
              {"edge_marginals", row_json(d.edge_marginals)}};
}

DiffusionSpec diffusion_from_json(const Json& j) {
  reject_unknown_keys(j, {"steps", "kind", "node_marginals", "edge_marginals"}, "diffusion");
  DiffusionSpec d;
  try {
    if (j.contains("steps")) d.steps = j.at("steps").get<int>();
    if (j.contains("kind")) d.kind = transition_kind_from_string(j.at("kind").get<std::string>());
    if (j.contains("node_marginals")) d.node_marginals = row_from_json(j.at("node_marginals"));
    if (j.contains("edge_marginals")) d.edge_marginals = row_from_json(j.at("edge_marginals"));
  } catch (const std::exception& e) {
    throw FormatError(std::string("diffusion: ") + e.what());
  }
  if (d.steps < 1) throw FormatError("diffusion: steps must be positive");
  return d;
}

Json to_json(const Checkpoint& c) {
  return Json{{"format", "diffalign-checkpoint"},
              {"version", kCheckpointVersion},
              {"config", to_json(c.config)},
              {"diffusion", to_json(c.diffusion)},
              {"params", to_json(c.params)}};
}

Checkpoint checkpoint_from_json(const Json& j) {
  reject_unknown_keys(j, {"format", "version", "config", "diffusion", "params"}, "checkpoint");
  if (!j.contains("format") || j.at("format") != "diffalign-checkpoint") throw FormatError("checkpoint: wrong format tag");
  if (!j.contains("version") || j.at("version") != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version");
  if (!j.contains("config") || !j.contains("diffusion") || !j.contains("params"))
    throw FormatError("checkpoint: missing section");
  Checkpoint c{denoiser_config_from_json(j.at("config")), diffusion_from_json(j.at("diffusion")),
               params_from_json(j.at("params"))};
  try {
    c.config.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  const DenoiserParams reference = init_params(c.config, 0);
  if (reference.tensors.size() != c.params.tensors.size()) throw FormatError("checkpoint: parameter set mismatch");
  for (const auto& [name, m] : reference.tensors) {
    if (!c.params.contains(name)) throw FormatError("checkpoint: missing parameter " + name);
    const auto& got = c.params.at(name);
    if (got.rows() != m.rows() || got.cols() != m.cols()) throw FormatError("checkpoint: bad shape for " + name);
  }
  return c;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
  out << to_json(c).dump() << '\n';
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace diffalign
