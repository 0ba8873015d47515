#include "diffalign/trainer.hpp"

#include "diffalign/evalkit.hpp"
#include "diffalign/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace diffalign {

void TrainConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("train: T must be positive");
  if (epochs < 0) throw std::invalid_argument("train: epochs must be non-negative");
  if (batch_size < 1) throw std::invalid_argument("train: batch size must be positive");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning rate must be positive");
  if (max_updates < 0 || checkpoint_every < 0 || val_every < 0 || val_limit < 0)
    throw std::invalid_argument("train: cadences must be non-negative");
  if (val_steps < 1 || val_steps > steps) throw std::invalid_argument("train: validation steps must lie in [1, T]");
  if (val_samples < 1) throw std::invalid_argument("train: validation samples must be positive");
  if (!(edge_weight >= 0.0)) throw std::invalid_argument("train: edge weight must be non-negative");
}

Json to_json(const TrainConfig& c) {
  return Json{{"steps", c.steps},
              {"kind", to_string(c.kind)},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"learning_rate", c.learning_rate},
              {"seed", c.seed},
              {"max_updates", c.max_updates},
              {"edge_weight", c.edge_weight},
              {"checkpoint_every", c.checkpoint_every},
              {"val_every", c.val_every},
              {"val_steps", c.val_steps},
              {"val_samples", c.val_samples},
              {"val_limit", c.val_limit},
              {"threads", c.threads}};
}

TrainConfig train_config_from_json(const Json& j, TrainConfig c) {
  if (!j.is_object()) throw FormatError("train config must be an object");
  reject_unknown_keys(j,
                      {"steps", "kind", "epochs", "batch_size", "learning_rate", "seed", "max_updates", "edge_weight",
                       "checkpoint_every", "val_every", "val_steps", "val_samples", "val_limit", "threads"},
                      "train");
  try {
    c.steps = j.value("steps", c.steps);
    if (j.contains("kind")) c.kind = transition_kind_from_string(j.at("kind").get<std::string>());
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.seed = j.value("seed", c.seed);
    c.max_updates = j.value("max_updates", c.max_updates);
    c.edge_weight = j.value("edge_weight", c.edge_weight);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.val_every = j.value("val_every", c.val_every);
    c.val_steps = j.value("val_steps", c.val_steps);
    c.val_samples = j.value("val_samples", c.val_samples);
    c.val_limit = j.value("val_limit", c.val_limit);
    c.threads = j.value("threads", c.threads);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("train: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("train: ") + e.what());
  }
  return c;
}

Json to_json(const EpochLog& e) {
  Json j{{"epoch", e.epoch}, {"loss", e.loss}};
  j["val_mrr"] = e.val_mrr ? Json(*e.val_mrr) : Json(nullptr);
  return j;
}

Adam::Adam(const DenoiserParams& like, AdamOptions options)
    : options_(options), m_(like.zeros_like()), v_(like.zeros_like()) {}

void Adam::step(DenoiserParams& params, const DenoiserParams& gradient) {
  ++updates_;
  const double c1 = 1.0 - std::pow(options_.beta1, updates_);
  const double c2 = 1.0 - std::pow(options_.beta2, updates_);
  for (auto& [name, p] : params.tensors) {
    const Eigen::MatrixXd& g = gradient.at(name);
    Eigen::MatrixXd& m = m_.at(name);
    Eigen::MatrixXd& v = v_.at(name);
    m = options_.beta1 * m + (1.0 - options_.beta1) * g;
    v = options_.beta2 * v + (1.0 - options_.beta2) * g.cwiseProduct(g);
    p.array() -= options_.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + options_.epsilon);
  }
}

DiffusionSpec diffusion_for(std::span<const PairedRecord> data, const TrainConfig& config) {
  DiffusionSpec d;
  d.steps = config.steps;
  d.kind = config.kind;
  if (config.kind != TransitionKind::marginal) return d;
  if (data.empty()) throw std::invalid_argument("train: marginal transitions need data");
  const Alphabet a = data.front().x.alphabet();
  Eigen::RowVectorXd nodes = Eigen::RowVectorXd::Zero(a.node);
  Eigen::RowVectorXd edges = Eigen::RowVectorXd::Zero(a.edge);
  for (const auto& r : data) {
    for (int i = 0; i < r.x.size(); ++i) nodes(r.x.node_label(i)) += 1.0;
    for (int i = 0; i < r.x.size(); ++i)
      for (int j = i + 1; j < r.x.size(); ++j) edges(r.x.edge_label(i, j)) += 1.0;
  }
  if (edges.sum() == 0.0) edges(0) = 1.0;
  d.node_marginals = nodes / nodes.sum();
  d.edge_marginals = edges / edges.sum();
  return d;
}

Condition condition_for(const PairedRecord& r, const DenoiserConfig& config) {
  return make_condition(r.y, r.mapping, config);
}

TrainResult train(std::span<const PairedRecord> data, const DenoiserConfig& denoiser, const TrainConfig& config,
                  std::span<const PairedRecord> validation, const EpochCallback& on_epoch) {
  denoiser.validate();
  config.validate();
  TrainResult result{init_params(denoiser, config.seed), {}, -1, std::nullopt, 0};
  if (config.epochs == 0) return result;
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  for (const auto& r : data)
    if (r.x.alphabet() != denoiser.alphabet || r.y.alphabet() != denoiser.alphabet)
      throw DimensionError("train: dataset alphabet does not match the denoiser");

  const Model model_shape{denoiser, DenoiserParams(), diffusion_for(data, config).make(denoiser.alphabet)};
  const NoiseProcess& process = model_shape.process;
  std::vector<Condition> conditions;
  conditions.reserve(data.size());
  for (const auto& r : data) conditions.push_back(condition_for(r, denoiser));

  DenoiserParams params = result.params;
  Adam adam(params, AdamOptions{config.learning_rate});
  Rng rng(config.seed, 0x7a11);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t val_count =
      config.val_limit > 0 ? std::min<std::size_t>(validation.size(), static_cast<std::size_t>(config.val_limit))
                           : validation.size();
  bool stop = false;

  for (int epoch = 0; epoch < config.epochs && !stop; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<TrainingExample> batch;
      batch.reserve(end - start);
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t idx = order[k];
        const int t = 1 + static_cast<int>(rng.below(static_cast<std::size_t>(config.steps)));
        Graph xt = forward_sample(process, data[idx].x, t, rng);
        batch.push_back(TrainingExample{data[idx].x, conditions[idx], t, std::move(xt)});
      }
      LossResult lr = loss_and_gradients(params, denoiser, batch, config.steps, config.edge_weight, config.threads);
      if (!std::isfinite(lr.loss) || !lr.gradient.all_finite()) {
        throw NumericError("training: non-finite loss at epoch " + std::to_string(epoch) + ", update " +
                           std::to_string(adam.updates() + 1));
      }
      adam.step(params, lr.gradient);
      loss_sum += lr.loss * static_cast<double>(batch.size());
      seen += batch.size();
      if (config.max_updates > 0 && adam.updates() >= config.max_updates) {
        stop = true;
        break;
      }
    }
    EpochLog entry{epoch, loss_sum / static_cast<double>(seen), std::nullopt};
    const bool validate_now = val_count > 0 && config.val_every > 0 &&
                              ((epoch + 1) % config.val_every == 0 || epoch + 1 == config.epochs || stop);
    if (validate_now) {
      const Model model{denoiser, params, process};
      entry.val_mrr = evaluate_validation(model, validation.subspan(0, val_count),
                                          ValidationOptions{config.val_steps, config.val_samples, config.seed,
                                                            config.threads});
      if (!result.best_val_mrr || *entry.val_mrr > *result.best_val_mrr) {
        result.best_val_mrr = entry.val_mrr;
        result.best_epoch = epoch;
        result.params = params;
      }
    }
    result.log.push_back(entry);
    if (on_epoch && (config.checkpoint_every == 0 || (epoch + 1) % config.checkpoint_every == 0 || stop ||
                     epoch + 1 == config.epochs)) {
      on_epoch(entry, params);
    }
  }
  result.updates = adam.updates();
  if (!result.best_val_mrr) {
    result.params = params;
    result.best_epoch = result.log.empty() ? -1 : result.log.back().epoch;
  }
  return result;
}

double evaluate_validation(const Model& model, std::span<const PairedRecord> validation,
                           const ValidationOptions& options) {
  if (validation.empty()) return 0.0;
  std::vector<int> ranks(validation.size(), 0);
  for (std::size_t i = 0; i < validation.size(); ++i) {
    const PairedRecord& r = validation[i];
    SampleConfig sc;
    sc.steps = options.steps;
    sc.num_samples = options.samples;
    sc.seed = mix_seed(options.seed, i);
    sc.extra_blank_nodes = r.x.size() - r.y.size();
    sc.threads = options.threads;
    if (sc.extra_blank_nodes < 0) throw DimensionError("validation: target smaller than condition");
    std::vector<Sample> samples = sample(model, r.y, sc);
    std::vector<Graph> graphs;
    graphs.reserve(samples.size());
    for (auto& s : samples) graphs.push_back(std::move(s.graph));
    ranks[i] = rank_of(dedup_and_rank(graphs, {}, 0.0), r.x);
  }
  return mrr_estimate(topk_accuracy(ranks, 1), topk_accuracy(ranks, 3), topk_accuracy(ranks, 5),
                      topk_accuracy(ranks, 10));
}

}  // namespace diffalign
