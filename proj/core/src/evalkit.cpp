#include "diffalign/evalkit.hpp"

#include "diffalign/canonical.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_map>

namespace diffalign {

DenoiseFn bind_denoiser(const Model& model, const Condition& cond) {
  return [&model, cond](const GraphTensor& x_t, int t) {
    return forward(model.params, model.config, x_t, cond, t, model.process.steps());
  };
}

double ElboTerms::loss() const {
  double total = prior + reconstruction;
  for (double v : transitions) total += v;
  return total;
}

namespace {

constexpr double kLogFloor = 1e-300;

double kl(const Eigen::RowVectorXd& p, const Eigen::RowVectorXd& q) {
  double total = 0.0;
  for (Eigen::Index k = 0; k < p.size(); ++k)
    if (p(k) > 0.0) total += p(k) * (std::log(p(k)) - std::log(std::max(q(k), kLogFloor)));
  return total;
}

GraphTensor expected_input(const NoiseProcess& process, const Graph& x0, int t) {
  const int n = x0.size();
  GraphTensor g = GraphTensor::zeros(n, process.nodes.alphabet(), process.edges.alphabet());
  for (int i = 0; i < n; ++i) g.nodes.row(i) = process.nodes.forward_marginal(x0.node_label(i), t);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const Eigen::Index r = static_cast<Eigen::Index>(i) * n + j;
      if (i == j) g.edges(r, x0.none_index()) = 1.0;
      else g.edges.row(r) = process.edges.forward_marginal(x0.edge_label(i, j), t);
    }
  return g;
}

// Expected KL between the true posterior and the model's reverse step for one
// component, averaged over x_t ~ q(x_t | x0).
double component_transition_loss(const TransitionModel& chain, const PosteriorTable& table, int x0, int t,
                                 const Eigen::RowVectorXd& p0) {
  double total = 0.0;
  const Eigen::RowVectorXd qt = chain.forward_marginal(x0, t);
  for (int xt = 0; xt < chain.alphabet(); ++xt) {
    if (qt(xt) <= 0.0) continue;
    total += qt(xt) * kl(table.rows(xt).row(x0), table.mix(xt, p0));
  }
  return total;
}

double component_reconstruction(const TransitionModel& chain, const PosteriorTable& table, int x0,
                                const Eigen::RowVectorXd& p0) {
  double total = 0.0;
  const Eigen::RowVectorXd q1 = chain.forward_marginal(x0, 1);
  for (int x1 = 0; x1 < chain.alphabet(); ++x1) {
    if (q1(x1) <= 0.0) continue;
    total -= q1(x1) * std::log(std::max(table.mix(x1, p0)(x0), kLogFloor));
  }
  return total;
}

}  // namespace

ElboTerms elbo_terms(const NoiseProcess& process, const DenoiseFn& denoise, const Graph& x0) {
  const int n = x0.size();
  const int steps = process.steps();
  ElboTerms terms;
  const Eigen::RowVectorXd node_prior = process.nodes.prior();
  const Eigen::RowVectorXd edge_prior = process.edges.prior();
  for (int i = 0; i < n; ++i) terms.prior += kl(process.nodes.forward_marginal(x0.node_label(i), steps), node_prior);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      terms.prior += kl(process.edges.forward_marginal(x0.edge_label(i, j), steps), edge_prior);

  for (int t = 1; t <= steps; ++t) {
    const SoftGraph d = denoise(expected_input(process, x0, t), t);
    const PosteriorTable node_table(process.nodes, t, t - 1);
    const PosteriorTable edge_table(process.edges, t, t - 1);
    double term = 0.0;
    for (int i = 0; i < n; ++i) {
      term += t == 1 ? component_reconstruction(process.nodes, node_table, x0.node_label(i), d.nodes.row(i))
                     : component_transition_loss(process.nodes, node_table, x0.node_label(i), t, d.nodes.row(i));
    }
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        const Eigen::RowVectorXd p0 = d.edges.row(static_cast<Eigen::Index>(i) * n + j);
        term += t == 1 ? component_reconstruction(process.edges, edge_table, x0.edge_label(i, j), p0)
                       : component_transition_loss(process.edges, edge_table, x0.edge_label(i, j), t, p0);
      }
    if (t == 1) terms.reconstruction = term;
    else terms.transitions.push_back(term);
  }
  return terms;
}

double elbo(const Model& model, const Graph& x0, const Condition& cond) {
  return elbo_terms(model.process, bind_denoiser(model, cond), x0).elbo();
}

std::string candidate_key(const Graph& g) { return canonical_form(strip_blank_nodes(g)); }

std::vector<Candidate> deduplicate(std::span<const Graph> samples) {
  std::vector<Candidate> out;
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t s = 0; s < samples.size(); ++s) {
    std::string key = candidate_key(samples[s]);
    auto [it, inserted] = index.emplace(key, out.size());
    if (inserted) {
      out.push_back(Candidate{canonical_graph(strip_blank_nodes(samples[s])), std::move(key), 1, 0.0, 0.0,
                              static_cast<int>(s)});
    } else {
      ++out[it->second].count;
    }
  }
  return out;
}

RankedCandidates rank_candidates(std::vector<Candidate> candidates, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("rank: lambda must lie in [0, 1]");
  RankedCandidates ranked{std::move(candidates), lambda};
  if (ranked.items.empty()) return ranked;
  double total = 0.0;
  double best = -std::numeric_limits<double>::infinity();
  for (const Candidate& c : ranked.items) {
    total += c.count;
    best = std::max(best, c.elbo);
  }
  double z = 0.0;
  for (const Candidate& c : ranked.items) z += std::exp(c.elbo - best);
  for (Candidate& c : ranked.items) {
    const double soft = std::isfinite(best) ? std::exp(c.elbo - best) / z : 1.0 / static_cast<double>(ranked.items.size());
    c.score = (1.0 - lambda) * c.count / total + lambda * soft;
  }
  std::stable_sort(ranked.items.begin(), ranked.items.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.count != b.count) return a.count > b.count;
    return a.key < b.key;
  });
  return ranked;
}

RankedCandidates dedup_and_rank(std::span<const Graph> samples, std::span<const double> elbos, double lambda) {
  if (!elbos.empty() && elbos.size() != samples.size())
    throw std::invalid_argument("dedup_and_rank: one elbo per sample required");
  if (elbos.empty() && lambda != 0.0) throw std::invalid_argument("dedup_and_rank: elbos required when lambda > 0");
  std::vector<Candidate> c = deduplicate(samples);
  if (!elbos.empty())
    for (Candidate& k : c) k.elbo = elbos[static_cast<std::size_t>(k.representative)];
  return rank_candidates(std::move(c), lambda);
}

int rank_of(const RankedCandidates& ranked, const Graph& truth) {
  const std::string key = candidate_key(truth);
  for (std::size_t i = 0; i < ranked.items.size(); ++i)
    if (ranked.items[i].key == key) return static_cast<int>(i) + 1;
  return 0;
}

double topk_accuracy(std::span<const int> ranks, int k) {
  if (k < 1) throw std::invalid_argument("topk_accuracy: k must be positive");
  if (ranks.empty()) return 0.0;
  const auto hits = std::count_if(ranks.begin(), ranks.end(), [k](int r) { return r >= 1 && r <= k; });
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double mrr_estimate(std::optional<double> top1, std::optional<double> top3, std::optional<double> top5,
                    std::optional<double> top10) {
  const std::pair<int, std::optional<double>> cuts[] = {{1, top1}, {3, top3}, {5, top5}, {10, top10}};
  double mrr = 0.0;
  int prev_k = 0;
  double prev_v = 0.0;
  for (const auto& [k, v] : cuts) {
    if (!v) continue;
    if (!(*v >= 0.0 && *v <= 1.0)) throw std::invalid_argument("mrr_estimate: accuracies must lie in [0, 1]");
    if (*v < prev_v) throw std::invalid_argument("mrr_estimate: accuracies must be non-decreasing in k");
    const double per_rank = (*v - prev_v) / static_cast<double>(k - prev_k);
    for (int r = prev_k + 1; r <= k; ++r) mrr += per_rank / r;
    prev_k = k;
    prev_v = *v;
  }
  return mrr;
}

double mrr_estimate(double top1, double top3, double top5, double top10) {
  return mrr_estimate(std::optional<double>(top1), std::optional<double>(top3), std::optional<double>(top5),
                      std::optional<double>(top10));
}

int unique_count(std::span<const Graph> samples) { return static_cast<int>(deduplicate(samples).size()); }

std::map<int, int> diversity(const std::vector<std::vector<Graph>>& samples_per_input) {
  std::map<int, int> hist;
  for (const auto& s : samples_per_input) ++hist[unique_count(s)];
  return hist;
}

double edge_mse(const Graph& prediction, const Graph& truth) {
  const int n = truth.size();
  if (prediction.size() != n) throw DimensionError("edge_mse: size mismatch");
  if (n < 2) return 0.0;
  double total = 0.0;
  int pairs = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j, ++pairs) {
      const double a = prediction.edge_label(i, j) != prediction.none_index() ? 1.0 : 0.0;
      const double b = truth.edge_label(i, j) != truth.none_index() ? 1.0 : 0.0;
      total += (a - b) * (a - b);
    }
  return total / pairs;
}

EvaluationReport evaluate_ranked(const std::vector<RankedCandidates>& ranked, std::span<const Graph> truths,
                                 std::span<const int> ks, const std::vector<std::vector<Graph>>& samples_per_input) {
  if (ranked.size() != truths.size()) throw std::invalid_argument("evaluate: one truth per input required");
  EvaluationReport r;
  for (std::size_t i = 0; i < ranked.size(); ++i) r.ranks.push_back(rank_of(ranked[i], truths[i]));
  for (int k : ks) r.per_k[k] = topk_accuracy(r.ranks, k);
  auto at = [&](int k) -> std::optional<double> {
    if (r.per_k.count(k)) return r.per_k.at(k);
    return std::nullopt;
  };
  r.mrr = mrr_estimate(at(1), at(3), at(5), at(10));
  r.diversity_histogram = diversity(samples_per_input);
  return r;
}

Json to_json(const EvaluationReport& r) {
  Json per_k = Json::object();
  for (const auto& [k, v] : r.per_k) per_k[std::to_string(k)] = v;
  Json hist = Json::object();
  for (const auto& [k, v] : r.diversity_histogram) hist[std::to_string(k)] = v;
  Json out{{"per_k", per_k}, {"mrr", r.mrr}, {"diversity_histogram", hist}, {"ranks", r.ranks}};
  out["edge_mse"] = r.edge_mse ? Json(*r.edge_mse) : Json(nullptr);
  return out;
}

std::optional<double> mean_edge_mse(const std::vector<std::vector<Graph>>& samples_per_input,
                                    std::span<const Graph> truths) {
  if (samples_per_input.size() != truths.size()) throw std::invalid_argument("mean_edge_mse: one truth per input");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < truths.size(); ++i)
    for (const Graph& g : samples_per_input[i]) {
      if (g.size() != truths[i].size()) return std::nullopt;
      total += edge_mse(g, truths[i]);
      ++count;
    }
  if (count == 0) return std::nullopt;
  return total / static_cast<double>(count);
}

Json to_json(const RankedCandidates& r) {
  Json items = Json::array();
  for (const Candidate& c : r.items)
    items.push_back(Json{{"graph", to_json(c.graph)},
                         {"key", c.key},
                         {"count", c.count},
                         {"elbo", c.elbo},
                         {"score", c.score},
                         {"representative", c.representative}});
  return Json{{"lambda", r.lambda}, {"candidates", std::move(items)}};
}

}  // namespace diffalign
