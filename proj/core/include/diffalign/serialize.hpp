#pragma once

#include "diffalign/denoiser.hpp"
#include "diffalign/graph.hpp"
#include "diffalign/noise.hpp"

#include "json.hpp"

#include <optional>
#include <stdexcept>
#include <string>

namespace diffalign {

using Json = nlohmann::json;

/// Malformed or inconsistent serialized data.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// {"n", "nodes": [...], "edges": [[i, j, label], ...] (i < j, non-none only),
///  "alphabet": {"node", "edge"}}
Json to_json(const Graph& g);
Graph graph_from_json(const Json& j, std::optional<Alphabet> expected = std::nullopt);

/// {"pairs": [[target, input], ...]}
Json to_json(const NodeMapping& m);
NodeMapping mapping_from_json(const Json& j, int rows, int cols);

Json to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const Json& j);

Json to_json(const DenoiserConfig& c);
/// Missing keys keep defaults; unknown keys throw FormatError.
DenoiserConfig denoiser_config_from_json(const Json& j, DenoiserConfig base = {});

Json to_json(const DenoiserParams& p);
DenoiserParams params_from_json(const Json& j);

Json to_json(const SoftGraph& g);

/// Throws FormatError listing the first key of `j` not in `allowed`.
void reject_unknown_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where);

}  // namespace diffalign
