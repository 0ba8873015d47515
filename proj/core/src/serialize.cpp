#include "diffalign/serialize.hpp"

#include <algorithm>

namespace diffalign {

namespace {
template <class T>
T get_as(const Json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw FormatError(where + ": missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + ": bad value for '" + key + "': " + e.what());
  }
}
}  // namespace

void reject_unknown_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw FormatError(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw FormatError(where + ": unknown key '" + key + "'");
  }
}

Json to_json(const Graph& g) {
  Json edges = Json::array();
  for (int i = 0; i < g.size(); ++i)
    for (int j = i + 1; j < g.size(); ++j)
      if (g.edge_label(i, j) != g.none_index()) edges.push_back({i, j, g.edge_label(i, j)});
  Json out{{"n", g.size()},
           {"nodes", g.node_labels()},
           {"edges", std::move(edges)},
           {"alphabet", {{"node", g.alphabet().node}, {"edge", g.alphabet().edge}}}};
  if (g.blank_index() != 0) out["blank"] = g.blank_index();
  if (g.none_index() != 0) out["none"] = g.none_index();
  return out;
}

Graph graph_from_json(const Json& j, std::optional<Alphabet> expected) {
  const std::string where = "graph";
  reject_unknown_keys(j, {"n", "nodes", "edges", "alphabet", "blank", "none"}, where);
  const auto nodes = get_as<std::vector<int>>(j, "nodes", where);
  const int n = j.contains("n") ? get_as<int>(j, "n", where) : static_cast<int>(nodes.size());
  if (n != static_cast<int>(nodes.size())) throw FormatError("graph: 'n' does not match the node list");
  Alphabet alphabet{};
  if (j.contains("alphabet")) {
    const Json& a = j.at("alphabet");
    reject_unknown_keys(a, {"node", "edge"}, "graph.alphabet");
    alphabet = {get_as<int>(a, "node", "graph.alphabet"), get_as<int>(a, "edge", "graph.alphabet")};
    if (expected && !(alphabet == *expected)) throw FormatError("graph: alphabet does not match the expected one");
  } else if (expected) {
    alphabet = *expected;
  } else {
    throw FormatError("graph: missing key 'alphabet'");
  }
  const int blank = j.contains("blank") ? get_as<int>(j, "blank", where) : 0;
  const int none = j.contains("none") ? get_as<int>(j, "none", where) : 0;
  std::vector<std::tuple<int, int, int>> edges;
  if (j.contains("edges")) {
    for (const auto& e : j.at("edges")) {
      if (!e.is_array() || e.size() != 3) throw FormatError("graph: edges must be [i, j, label] triples");
      edges.emplace_back(e[0].get<int>(), e[1].get<int>(), e[2].get<int>());
    }
  }
  try {
    return Graph::from_labels(nodes, edges, alphabet, blank, none);
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("graph: ") + e.what());
  }
}

Json to_json(const NodeMapping& m) {
  Json pairs = Json::array();
  for (const auto& [t, i] : m.pairs()) pairs.push_back({t, i});
  return Json{{"pairs", std::move(pairs)}};
}

NodeMapping mapping_from_json(const Json& j, int rows, int cols) {
  reject_unknown_keys(j, {"pairs", "rows", "cols"}, "mapping");
  NodeMapping m(rows, cols);
  if (!j.contains("pairs") || !j.at("pairs").is_array()) throw FormatError("mapping: missing 'pairs' array");
  for (const auto& p : j.at("pairs")) {
    if (!p.is_array() || p.size() != 2) throw FormatError("mapping: pairs must be [target, input]");
    try {
      m.add_pair(p[0].get<int>(), p[1].get<int>());
    } catch (const std::exception& e) {
      throw FormatError(std::string("mapping: ") + e.what());
    }
  }
  return m;
}

Json to_json(const Eigen::MatrixXd& m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  return Json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Eigen::MatrixXd matrix_from_json(const Json& j) {
  const auto rows = get_as<Eigen::Index>(j, "rows", "matrix");
  const auto cols = get_as<Eigen::Index>(j, "cols", "matrix");
  const auto data = get_as<std::vector<double>>(j, "data", "matrix");
  if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(data.size()) != rows * cols)
    throw FormatError("matrix: data length does not match shape");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r * cols + c)];
  return m;
}

Json to_json(const DenoiserConfig& c) {
  return Json{{"layers", c.layers},
              {"hidden", c.hidden},
              {"heads", c.heads},
              {"pe_dim", c.pe_dim},
              {"variant", to_string(c.variant)},
              {"max_blank_nodes", c.max_blank_nodes},
              {"use_global_features", c.use_global_features},
              {"pe_largest", c.pe_largest},
              {"alphabet", {{"node", c.alphabet.node}, {"edge", c.alphabet.edge}}}};
}

DenoiserConfig denoiser_config_from_json(const Json& j, DenoiserConfig c) {
  const std::string where = "denoiser config";
  reject_unknown_keys(j, {"layers", "hidden", "heads", "pe_dim", "variant", "max_blank_nodes", "use_global_features",
                          "pe_largest", "alphabet"},
                      where);
  if (j.contains("layers")) c.layers = get_as<int>(j, "layers", where);
  if (j.contains("hidden")) c.hidden = get_as<int>(j, "hidden", where);
  if (j.contains("heads")) c.heads = get_as<int>(j, "heads", where);
  if (j.contains("pe_dim")) c.pe_dim = get_as<int>(j, "pe_dim", where);
  if (j.contains("max_blank_nodes")) c.max_blank_nodes = get_as<int>(j, "max_blank_nodes", where);
  if (j.contains("use_global_features")) c.use_global_features = get_as<bool>(j, "use_global_features", where);
  if (j.contains("pe_largest")) c.pe_largest = get_as<bool>(j, "pe_largest", where);
  if (j.contains("variant")) {
    try {
      c.variant = variant_from_string(get_as<std::string>(j, "variant", where));
    } catch (const std::invalid_argument& e) {
      throw FormatError(e.what());
    }
  }
  if (j.contains("alphabet")) {
    const Json& a = j.at("alphabet");
    reject_unknown_keys(a, {"node", "edge"}, where + ".alphabet");
    c.alphabet = {get_as<int>(a, "node", where), get_as<int>(a, "edge", where)};
  }
  return c;
}

Json to_json(const DenoiserParams& p) {
  Json out = Json::object();
  for (const auto& [name, m] : p.tensors) out[name] = to_json(m);
  return out;
}

DenoiserParams params_from_json(const Json& j) {
  if (!j.is_object()) throw FormatError("params: expected an object");
  DenoiserParams p;
  for (const auto& [name, m] : j.items()) p.tensors.emplace(name, matrix_from_json(m));
  if (!p.all_finite()) throw FormatError("params: non-finite entry");
  return p;
}

Json to_json(const SoftGraph& g) {
  return Json{{"n", g.n}, {"nodes", to_json(g.nodes)}, {"edges", to_json(g.edges)}};
}

}  // namespace diffalign
