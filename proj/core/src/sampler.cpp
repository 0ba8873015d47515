#include "diffalign/sampler.hpp"

#include "diffalign/parallel.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace diffalign {

std::string to_string(MappingPolicy p) {
  return p == MappingPolicy::random ? "random" : "identity-prefix";
}

MappingPolicy mapping_policy_from_string(const std::string& s) {
  if (s == "identity-prefix" || s == "identity_prefix") return MappingPolicy::identity_prefix;
  if (s == "random") return MappingPolicy::random;
  throw std::invalid_argument("unknown mapping policy: " + s);
}

void InpaintMask::validate(int n, Alphabet alphabet) const {
  for (const auto& [i, label] : nodes) {
    if (i < 0 || i >= n) throw std::invalid_argument("inpaint mask: node index out of range");
    if (label < 0 || label >= alphabet.node) throw std::invalid_argument("inpaint mask: node label out of range");
  }
  for (const auto& [i, j, label] : edges) {
    if (i < 0 || i >= n || j < 0 || j >= n || i == j) throw std::invalid_argument("inpaint mask: edge index out of range");
    if (label < 0 || label >= alphabet.edge) throw std::invalid_argument("inpaint mask: edge label out of range");
  }
}

void InpaintMask::apply(Graph& g) const {
  for (const auto& [i, label] : nodes) g.set_node_label(i, label);
  for (const auto& [i, j, label] : edges) g.set_edge_label(i, j, label);
}

Graph InpaintMask::release(const Graph& g) const {
  Graph out = g;
  for (const auto& [i, label] : nodes) out.set_node_label(i, g.blank_index());
  for (const auto& [i, j, label] : edges) out.set_edge_label(i, j, g.none_index());
  return out;
}

std::vector<int> time_grid(int total_steps, int sample_steps) {
  if (total_steps < 1) throw std::invalid_argument("time_grid: T must be positive");
  if (sample_steps < 1 || sample_steps > total_steps)
    throw std::invalid_argument("time_grid: sample steps must lie in [1, T]");
  if (sample_steps == 1) return {total_steps};
  std::vector<int> grid(static_cast<std::size_t>(sample_steps));
  const double stride = static_cast<double>(total_steps - 1) / static_cast<double>(sample_steps - 1);
  for (int k = 0; k < sample_steps; ++k)
    grid[static_cast<std::size_t>(k)] = static_cast<int>(std::lround(static_cast<double>(total_steps) - k * stride));
  return grid;
}

StepDistribution reverse_distribution(const NoiseProcess& process, const SoftGraph& denoised, const Graph& x_t, int t,
                                      int s) {
  const int n = x_t.size();
  if (denoised.n != n) throw DimensionError("reverse_distribution: size mismatch");
  const PosteriorTable node_table(process.nodes, t, s);
  const PosteriorTable edge_table(process.edges, t, s);
  StepDistribution d{Eigen::MatrixXd(n, process.nodes.alphabet()),
                     Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n) * n, process.edges.alphabet())};
  for (int i = 0; i < n; ++i) d.nodes.row(i) = node_table.mix(x_t.node_label(i), denoised.nodes.row(i));
  for (int i = 0; i < n; ++i) {
    d.edges(static_cast<Eigen::Index>(i) * n + i, x_t.none_index()) = 1.0;
    for (int j = i + 1; j < n; ++j) {
      const Eigen::Index ij = static_cast<Eigen::Index>(i) * n + j;
      d.edges.row(ij) = edge_table.mix(x_t.edge_label(i, j), denoised.edges.row(ij));
      d.edges.row(static_cast<Eigen::Index>(j) * n + i) = d.edges.row(ij);
    }
  }
  return d;
}

namespace {
int draw(const Eigen::RowVectorXd& p, Rng& rng) {
  return static_cast<int>(rng.categorical(std::span<const double>(p.data(), static_cast<std::size_t>(p.size()))));
}
}  // namespace

Graph sample_step(const StepDistribution& dist, const Graph& shape, Rng& rng) {
  const int n = shape.size();
  Graph out(n, shape.alphabet(), shape.blank_index(), shape.none_index());
  for (int i = 0; i < n; ++i) out.set_node_label(i, draw(dist.nodes.row(i), rng));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) out.set_edge_label(i, j, draw(dist.edges.row(static_cast<Eigen::Index>(i) * n + j), rng));
  return out;
}

Graph reverse_step(const Model& model, const Graph& x_t, const Condition& cond, int t, int s, Rng& rng) {
  SoftGraph denoised = forward(model.params, model.config, x_t, cond, t, model.process.steps());
  return sample_step(reverse_distribution(model.process, denoised, x_t, t, s), x_t, rng);
}

Guidance resolve_guidance(const GuidanceSpec& spec, const NodeMapping& mapping, int blank_index) {
  Guidance g{spec.gamma, 0.0, 0.0, spec.nodes ? *spec.nodes : mapping.unmapped_targets(),
             spec.label.value_or(blank_index)};
  for (int i : g.nodes)
    if (i < 0 || i >= mapping.rows()) throw std::invalid_argument("guidance: node index out of range");
  const double count = static_cast<double>(g.nodes.size());
  g.offset = spec.offset.value_or(count / 2.0);
  g.scale = spec.scale.value_or(count / 4.0);
  if (g.gamma != 0.0 && !(g.scale > 0.0)) throw std::invalid_argument("guidance: scale must be positive");
  if (!std::isfinite(g.gamma) || !std::isfinite(g.offset)) throw std::invalid_argument("guidance: non-finite parameter");
  return g;
}

double guidance_log_likelihood(const Guidance& g, const Eigen::MatrixXd& node_probs) {
  double total = 0.0;
  for (int i : g.nodes) total += node_probs(i, g.label);
  const double z = (total - g.offset) / g.scale;
  return std::min(z, 0.0) - std::log1p(std::exp(-std::abs(z)));
}

InputGradient guidance_gradient(const Model& model, const Graph& x_t, const Condition& cond, int t,
                                const Guidance& g) {
  const int n = x_t.size();
  ad::Tape tape;
  ParamVars pv = bind_params(tape, model.params, false);
  GraphTensor xt = GraphTensor::one_hot(x_t);
  ad::Var xn = tape.leaf(xt.nodes, true);
  ad::Var xe = tape.leaf(xt.edges, true);
  LogitVars logits = build_logits(tape, pv, model.config, xn, xe, cond, t, model.process.steps());
  ad::Var probs = tape.row_softmax(logits.nodes);
  std::vector<std::pair<int, int>> entries;
  for (int i : g.nodes) entries.emplace_back(i, g.label);
  ad::Var z = tape.add_scalar(tape.scale(tape.select_sum(probs, std::move(entries)), 1.0 / g.scale), -g.offset / g.scale);
  ad::Var ll = tape.log_sigmoid(z);
  tape.backward(ll);

  InputGradient out;
  out.denoised = probabilities(tape.value(logits.nodes), tape.value(logits.edges), n, x_t.none_index());
  out.nodes = tape.grad(xn);
  const Eigen::MatrixXd ge = tape.grad(xe);
  out.edges = Eigen::MatrixXd::Zero(ge.rows(), ge.cols());
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const Eigen::Index ij = static_cast<Eigen::Index>(i) * n + j;
      const Eigen::Index ji = static_cast<Eigen::Index>(j) * n + i;
      out.edges.row(ij) = ge.row(ij) + ge.row(ji);
      out.edges.row(ji) = out.edges.row(ij);
    }
  out.log_likelihood = tape.value(ll)(0, 0);
  return out;
}

namespace {
void tilt(Eigen::MatrixXd& probs, const Eigen::MatrixXd& grad, double gamma) {
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    Eigen::RowVectorXd logits(probs.cols());
    double best = -std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < probs.cols(); ++k) {
      logits(k) = probs(r, k) > 0.0 ? std::log(probs(r, k)) + gamma * grad(r, k)
                                    : -std::numeric_limits<double>::infinity();
      best = std::max(best, logits(k));
    }
    if (!std::isfinite(best)) throw NumericError("guidance: row has no support");
    for (Eigen::Index k = 0; k < probs.cols(); ++k) probs(r, k) = std::exp(logits(k) - best);
    probs.row(r) /= probs.row(r).sum();
  }
}
}  // namespace

StepDistribution guided_distribution(const Model& model, const Graph& x_t, const Condition& cond, int t, int s,
                                     const Guidance& g, const Graph* chain_state) {
  const Graph& state = chain_state ? *chain_state : x_t;
  if (g.gamma == 0.0) {
    SoftGraph denoised = forward(model.params, model.config, x_t, cond, t, model.process.steps());
    return reverse_distribution(model.process, denoised, state, t, s);
  }
  InputGradient grad = guidance_gradient(model, x_t, cond, t, g);
  if (!grad.nodes.allFinite() || !grad.edges.allFinite())
    throw NumericError("guidance: non-finite gradient at step t=" + std::to_string(t));
  StepDistribution d = reverse_distribution(model.process, grad.denoised, state, t, s);
  tilt(d.nodes, grad.nodes, g.gamma);
  const int n = x_t.size();
  Eigen::MatrixXd upper(n * (n - 1) / 2, d.edges.cols());
  Eigen::MatrixXd upper_grad(upper.rows(), upper.cols());
  Eigen::Index r = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j, ++r) {
      upper.row(r) = d.edges.row(static_cast<Eigen::Index>(i) * n + j);
      upper_grad.row(r) = grad.edges.row(static_cast<Eigen::Index>(i) * n + j);
    }
  tilt(upper, upper_grad, g.gamma);
  r = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j, ++r) {
      d.edges.row(static_cast<Eigen::Index>(i) * n + j) = upper.row(r);
      d.edges.row(static_cast<Eigen::Index>(j) * n + i) = upper.row(r);
    }
  return d;
}

NodeMapping sample_mapping(const SampleConfig& config, int target_size, int condition_size, Rng& rng) {
  if (condition_size > target_size) throw DimensionError("sample: condition larger than target");
  if (config.mapping == MappingPolicy::identity_prefix) return NodeMapping::identity_prefix(target_size, condition_size);
  std::vector<int> order(static_cast<std::size_t>(target_size));
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  NodeMapping m(target_size, condition_size);
  for (int j = 0; j < condition_size; ++j) m.add_pair(order[static_cast<std::size_t>(j)], j);
  return m;
}

Graph run_chain(const Model& model, const Condition& cond, int target_size, int sample_steps,
                const std::optional<Guidance>& guidance, const InpaintMask* mask, Rng& rng) {
  const Alphabet alphabet = model.config.alphabet;
  Graph x = sample_prior(model.process, target_size, alphabet, cond.y.blank_index(), cond.y.none_index(), rng);
  if (mask) mask->apply(x);
  const std::vector<int> grid = time_grid(model.process.steps(), sample_steps);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const int t = grid[k];
    const int s = k + 1 < grid.size() ? grid[k + 1] : 0;
    std::optional<Graph> released;
    if (mask && !mask->empty()) released = mask->release(x);
    const Graph& state = released ? *released : x;
    StepDistribution d;
    if (guidance) {
      d = guided_distribution(model, x, cond, t, s, *guidance, &state);
    } else {
      SoftGraph denoised = forward(model.params, model.config, x, cond, t, model.process.steps());
      d = reverse_distribution(model.process, denoised, state, t, s);
    }
    x = sample_step(d, x, rng);
    if (mask) mask->apply(x);
  }
  x.drop_dangling_edges();
  if (mask) mask->apply(x);
  return x;
}

std::vector<Sample> run_sampler(const Model& model, const Graph& y, const SampleConfig& config,
                                const std::optional<GuidanceSpec>& guidance, const std::optional<InpaintMask>& mask,
                                const ProgressFn& progress) {
  if (y.alphabet() != model.config.alphabet) throw DimensionError("sample: condition alphabet does not match model");
  if (config.num_samples < 0) throw std::invalid_argument("sample: negative sample count");
  if (config.extra_blank_nodes < 0) throw std::invalid_argument("sample: negative blank-node count");
  const std::vector<int> grid = time_grid(model.process.steps(), config.steps);
  const int target_size = y.size() + config.extra_blank_nodes;
  if (mask) mask->validate(target_size, model.config.alphabet);
  const Eigen::MatrixXd pe =
      model.config.uses_pe() ? laplacian_pe(y, model.config.pe_dim, model.config.pe_largest) : Eigen::MatrixXd();

  std::vector<Sample> out(static_cast<std::size_t>(config.num_samples));
  std::atomic<std::size_t> done{0};
  const double total = static_cast<double>(config.num_samples);
  parallel_for(out.size(), config.threads, [&](std::size_t i) {
    Rng rng(config.seed, i);
    NodeMapping m = sample_mapping(config, target_size, y.size(), rng);
    Condition cond{y, m, pe};
    std::optional<Guidance> g;
    if (guidance) g = resolve_guidance(*guidance, m, y.blank_index());
    Graph x = run_chain(model, cond, target_size, config.steps, g, mask ? &*mask : nullptr, rng);
    out[i] = Sample{std::move(x), std::move(m), config.seed, static_cast<int>(i), config.steps};
    const std::size_t finished = ++done;
    if (progress) progress(static_cast<double>(finished) / total);
  });
  return out;
}

std::vector<Sample> sample(const Model& model, const Graph& y, const SampleConfig& config, const ProgressFn& progress) {
  return run_sampler(model, y, config, std::nullopt, std::nullopt, progress);
}

std::vector<Sample> guided_sample(const Model& model, const Graph& y, const SampleConfig& config,
                                  const GuidanceSpec& guidance, const ProgressFn& progress) {
  return run_sampler(model, y, config, guidance, std::nullopt, progress);
}

std::vector<Sample> inpaint_sample(const Model& model, const Graph& y, const SampleConfig& config,
                                   const InpaintMask& mask, const ProgressFn& progress) {
  return run_sampler(model, y, config, std::nullopt, mask, progress);
}

}  // namespace diffalign
