#include "diffalign/requests.hpp"

#include <cmath>
#include <stdexcept>

namespace diffalign {

std::string SampleRequest::kind() const {
  if (mask) return "inpaint";
  if (guidance) return "guided";
  return "sample";
}

Model model_from_checkpoint(const Checkpoint& c) { return Model{c.config, c.params, c.process()}; }

Json to_json(const GuidanceSpec& g) {
  Json j{{"gamma", g.gamma}};
  if (g.offset) j["a"] = *g.offset;
  if (g.scale) j["b"] = *g.scale;
  if (g.nodes) j["nodes"] = *g.nodes;
  if (g.label) j["label"] = *g.label;
  return j;
}

GuidanceSpec guidance_from_json(const Json& j) {
  reject_unknown_keys(j, {"gamma", "a", "b", "nodes", "label"}, "guidance");
  GuidanceSpec g;
  try {
    g.gamma = j.value("gamma", 0.0);
    if (j.contains("a") && !j.at("a").is_null()) g.offset = j.at("a").get<double>();
    if (j.contains("b") && !j.at("b").is_null()) g.scale = j.at("b").get<double>();
    if (j.contains("nodes") && !j.at("nodes").is_null()) g.nodes = j.at("nodes").get<std::vector<int>>();
    if (j.contains("label") && !j.at("label").is_null()) g.label = j.at("label").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("guidance: ") + e.what());
  }
  return g;
}

Json to_json(const InpaintMask& m) {
  Json nodes = Json::array();
  for (const auto& [i, l] : m.nodes) nodes.push_back({i, l});
  Json edges = Json::array();
  for (const auto& [i, j, l] : m.edges) edges.push_back({i, j, l});
  return Json{{"nodes", nodes}, {"edges", edges}};
}

InpaintMask mask_from_json(const Json& j) {
  reject_unknown_keys(j, {"nodes", "edges"}, "mask");
  InpaintMask m;
  try {
    if (j.contains("nodes"))
      for (const auto& e : j.at("nodes")) {
        if (!e.is_array() || e.size() != 2) throw FormatError("mask: nodes must be [index, label] pairs");
        m.nodes.emplace_back(e[0].get<int>(), e[1].get<int>());
      }
    if (j.contains("edges"))
      for (const auto& e : j.at("edges")) {
        if (!e.is_array() || e.size() != 3) throw FormatError("mask: edges must be [i, j, label] triples");
        m.edges.emplace_back(e[0].get<int>(), e[1].get<int>(), e[2].get<int>());
      }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("mask: ") + e.what());
  }
  return m;
}

SampleRequest sample_request_from_json(const Json& j, const Model& model) {
  reject_unknown_keys(j, {"model_id", "condition", "y", "n", "steps", "seed", "extra_blank_nodes", "mapping", "guidance",
                          "mask", "lambda", "rank_with_elbo", "threads"},
                      "request");
  SampleRequest r;
  const char* key = j.contains("condition") ? "condition" : "y";
  if (!j.contains(key)) throw FormatError("request: missing condition graph");
  r.condition = graph_from_json(j.at(key), model.config.alphabet);
  try {
    r.num_samples = j.value("n", r.num_samples);
    r.steps = j.value("steps", 0);
    r.seed = j.value("seed", std::uint64_t{0});
    r.extra_blank_nodes = j.value("extra_blank_nodes", -1);
    r.lambda = j.value("lambda", r.lambda);
    r.rank_with_elbo = j.value("rank_with_elbo", true);
    r.threads = j.value("threads", 1);
    if (j.contains("mapping")) r.mapping = mapping_policy_from_string(j.at("mapping").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("request: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("request: ") + e.what());
  }
  if (j.contains("guidance") && !j.at("guidance").is_null()) r.guidance = guidance_from_json(j.at("guidance"));
  if (j.contains("mask") && !j.at("mask").is_null()) r.mask = mask_from_json(j.at("mask"));
  return r;
}

Json to_json(const SampleRequest& r) {
  Json j{{"condition", to_json(r.condition)},
         {"n", r.num_samples},
         {"steps", r.steps},
         {"seed", r.seed},
         {"extra_blank_nodes", r.extra_blank_nodes},
         {"mapping", to_string(r.mapping)},
         {"lambda", r.lambda},
         {"rank_with_elbo", r.rank_with_elbo}};
  if (r.guidance) j["guidance"] = to_json(*r.guidance);
  if (r.mask) j["mask"] = to_json(*r.mask);
  return j;
}

SampleConfig sample_config_for(const Model& model, const SampleRequest& r) {
  SampleConfig c;
  c.steps = r.steps > 0 ? r.steps : model.process.steps();
  c.num_samples = r.num_samples;
  c.seed = r.seed;
  c.mapping = r.mapping;
  c.extra_blank_nodes = r.extra_blank_nodes >= 0 ? r.extra_blank_nodes : model.config.max_blank_nodes;
  c.threads = r.threads;
  if (c.num_samples < 1) throw std::invalid_argument("request: n must be positive");
  if (c.steps > model.process.steps()) throw std::invalid_argument("request: steps exceed the model's T");
  if (!(r.lambda >= 0.0 && r.lambda <= 1.0)) throw std::invalid_argument("request: lambda must lie in [0, 1]");
  return c;
}

SampleOutcome run_sample_request(const Model& model, const SampleRequest& r, const ProgressFn& progress) {
  const SampleConfig config = sample_config_for(model, r);
  SampleOutcome out;
  out.samples = run_sampler(model, r.condition, config, r.guidance, r.mask, progress);
  std::vector<Graph> graphs;
  graphs.reserve(out.samples.size());
  for (const auto& s : out.samples) graphs.push_back(s.graph);
  std::vector<Candidate> candidates = deduplicate(graphs);
  const bool use_elbo = r.rank_with_elbo && r.lambda > 0.0;
  if (use_elbo) {
    const Eigen::MatrixXd pe = model.config.uses_pe()
                                   ? laplacian_pe(r.condition, model.config.pe_dim, model.config.pe_largest)
                                   : Eigen::MatrixXd();
    for (Candidate& c : candidates) {
      const Sample& s = out.samples[static_cast<std::size_t>(c.representative)];
      c.elbo = elbo(model, s.graph, Condition{r.condition, s.mapping, pe});
    }
  }
  out.ranking = rank_candidates(std::move(candidates), use_elbo ? r.lambda : 0.0);
  return out;
}

Json to_json(const Sample& s) {
  return Json{{"graph", to_json(s.graph)},
              {"mapping", to_json(s.mapping)},
              {"seed", s.seed},
              {"index", s.index},
              {"steps", s.steps}};
}

Json to_json(const SampleOutcome& o) {
  Json samples = Json::array();
  for (const auto& s : o.samples) samples.push_back(to_json(s));
  return Json{{"samples", std::move(samples)}, {"ranking", to_json(o.ranking)}};
}

EvaluationReport evaluate_samples(const std::vector<std::vector<Graph>>& samples,
                                  const std::vector<std::vector<double>>& elbos, std::span<const Graph> truths,
                                  std::span<const int> ks, double lambda) {
  if (samples.size() != truths.size()) throw std::invalid_argument("evaluate: one truth per input required");
  if (!elbos.empty() && elbos.size() != samples.size()) throw std::invalid_argument("evaluate: elbo lists mismatch");
  for (int k : ks)
    if (k < 1) throw std::invalid_argument("evaluate: k must be positive");
  std::vector<RankedCandidates> ranked;
  ranked.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const bool with_elbo = !elbos.empty() && !elbos[i].empty();
    ranked.push_back(with_elbo ? dedup_and_rank(samples[i], elbos[i], lambda) : dedup_and_rank(samples[i], {}, 0.0));
  }
  EvaluationReport report = evaluate_ranked(ranked, truths, ks, samples);
  report.edge_mse = mean_edge_mse(samples, truths);
  return report;
}

}  // namespace diffalign
