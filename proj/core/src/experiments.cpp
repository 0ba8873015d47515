#include "diffalign/experiments.hpp"

#include "diffalign/parallel.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace diffalign {

Checkpoint train_checkpoint(std::span<const PairedRecord> data, const DenoiserConfig& denoiser,
                            const TrainConfig& config) {
  TrainConfig c = config;
  c.val_every = 0;
  TrainResult result = train(data, denoiser, c);
  return Checkpoint{denoiser, diffusion_for(data, c), std::move(result.params)};
}

double sampled_edge_mse(const Model& model, std::span<const PairedRecord> records, int sample_steps,
                        std::uint64_t seed, int threads) {
  if (records.empty()) throw std::invalid_argument("sampled_edge_mse: no records");
  std::vector<double> mse(records.size());
  parallel_for(records.size(), threads, [&](std::size_t i) {
    const PairedRecord& r = records[i];
    const Graph truth = target_in_condition_order(r);
    SampleConfig config;
    config.steps = sample_steps;
    config.num_samples = 1;
    config.seed = mix_seed(seed, i);
    config.extra_blank_nodes = truth.size() - r.y.size();
    const std::vector<Sample> s = sample(model, r.y, config);
    mse[i] = edge_mse(s.front().graph, truth);
  });
  return std::accumulate(mse.begin(), mse.end(), 0.0) / static_cast<double>(mse.size());
}

namespace {

DenoiserConfig toy_config(Alphabet alphabet, Variant v, int layers, int hidden, int heads, int pe_dim,
                          int max_blank) {
  DenoiserConfig c;
  c.alphabet = alphabet;
  c.variant = v;
  c.layers = layers;
  c.hidden = hidden;
  c.heads = heads;
  c.pe_dim = pe_dim;
  c.max_blank_nodes = max_blank;
  return c;
}

}  // namespace

GridExperimentResult run_grid_experiment(const GridExperimentOptions& o) {
  const PairedDataset train_set = gen_grid_copy(o.train_records, o.grid, o.seed, "train");
  const PairedDataset eval_set = gen_grid_copy(o.eval_records, o.grid, mix_seed(o.seed, 1), "test");
  TrainConfig tc;
  tc.steps = o.steps;
  tc.epochs = o.epochs;
  tc.batch_size = o.batch_size;
  tc.learning_rate = o.learning_rate;
  tc.seed = o.seed;
  tc.threads = o.threads;
  const int n = o.grid.side * o.grid.side;
  GridExperimentResult result;
  Json per_variant = Json::object();
  for (Variant v : {o.aligned, Variant::unaligned}) {
    const DenoiserConfig dc = toy_config(train_set.alphabet, v, o.layers, o.hidden, o.heads, n, 0);
    const Checkpoint ckpt = train_checkpoint(train_set.records, dc, tc);
    const double mse = sampled_edge_mse(model_from_checkpoint(ckpt), eval_set.records, o.steps, o.seed, o.threads);
    per_variant[to_string(v)] = mse;
    (v == Variant::unaligned ? result.unaligned_mse : result.aligned_mse) = mse;
  }
  result.details = Json{{"edge_mse", per_variant},
                        {"aligned_variant", to_string(o.aligned)},
                        {"train_records", o.train_records},
                        {"eval_records", o.eval_records},
                        {"epochs", o.epochs},
                        {"batch_size", o.batch_size},
                        {"flip_count", grid_flip_count(n, o.grid.flip_fraction)}};
  return result;
}

EvaluationReport evaluate_model(const Model& model, std::span<const PairedRecord> records, int samples,
                                int sample_steps, double lambda, std::span<const int> ks, std::uint64_t seed,
                                int threads) {
  std::vector<RankedCandidates> ranked(records.size());
  std::vector<std::vector<Graph>> graphs(records.size());
  std::vector<Graph> truths;
  truths.reserve(records.size());
  for (const auto& r : records) truths.push_back(r.x);
  parallel_for(records.size(), threads, [&](std::size_t i) {
    SampleRequest req;
    req.condition = records[i].y;
    req.num_samples = samples;
    req.steps = sample_steps;
    req.seed = mix_seed(seed, i);
    req.extra_blank_nodes = records[i].x.size() - records[i].y.size();
    req.lambda = lambda;
    SampleOutcome out = run_sample_request(model, req);
    for (const auto& s : out.samples) graphs[i].push_back(s.graph);
    ranked[i] = std::move(out.ranking);
  });
  return evaluate_ranked(ranked, truths, ks, graphs);
}

double StepAblationResult::top1(const std::string& variant, int sample_steps) const {
  return reports.at(variant).at(sample_steps).per_k.at(1);
}

Json StepAblationResult::to_json() const {
  Json out = Json::object();
  for (const auto& [variant, by_steps] : reports)
    for (const auto& [steps, report] : by_steps) {
      Json r = diffalign::to_json(report);
      r.erase("ranks");
      out[variant][std::to_string(steps)] = r;
    }
  return out;
}

StepAblationResult run_step_ablation(const StepAblationOptions& o) {
  if (std::find(o.ks.begin(), o.ks.end(), 1) == o.ks.end()) throw std::invalid_argument("step ablation: k=1 required");
  const PairedDataset train_set = gen_edit_translation(o.train_records, o.edit, o.seed, "train");
  StepAblationResult result;
  result.test = gen_edit_translation(o.test_records, o.edit, mix_seed(o.seed, 1), "test");
  TrainConfig tc;
  tc.steps = o.steps;
  tc.epochs = o.epochs;
  tc.batch_size = o.batch_size;
  tc.learning_rate = o.learning_rate;
  tc.seed = o.seed;
  tc.threads = o.threads;
  for (Variant v : {o.aligned, Variant::unaligned}) {
    const DenoiserConfig dc =
        toy_config(train_set.alphabet, v, o.layers, o.hidden, o.heads, o.pe_dim, kEditMaxNewNodes);
    Checkpoint ckpt = train_checkpoint(train_set.records, dc, tc);
    const Model model = model_from_checkpoint(ckpt);
    for (int steps : o.sample_steps)
      result.reports[to_string(v)][steps] =
          evaluate_model(model, result.test.records, o.samples, steps, o.lambda, o.ks, o.seed, o.threads);
    result.checkpoints.emplace(to_string(v), std::move(ckpt));
  }
  return result;
}

PermutationTest permutation_test(std::span<const double> a, std::span<const double> b, int permutations,
                                 std::uint64_t seed) {
  if (a.empty() || b.empty()) throw std::invalid_argument("permutation_test: empty sample");
  if (permutations < 1) throw std::invalid_argument("permutation_test: permutations must be positive");
  const auto mean = [](std::span<const double> v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  PermutationTest out;
  out.mean_a = mean(a);
  out.mean_b = mean(b);
  out.permutations = permutations;
  const double observed = out.mean_a - out.mean_b;
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  Rng rng(seed, 0x9e7);
  int extreme = 0;
  for (int p = 0; p < permutations; ++p) {
    std::shuffle(pooled.begin(), pooled.end(), rng.engine());
    const double diff = mean(std::span<const double>(pooled).first(a.size())) -
                        mean(std::span<const double>(pooled).subspan(a.size()));
    if (diff >= observed - 1e-12) ++extreme;
  }
  out.p_value = static_cast<double>(extreme + 1) / static_cast<double>(permutations + 1);
  return out;
}

Json GuidanceExperimentResult::to_json() const {
  return Json{{"mean_non_blank_unguided", test.mean_a},
              {"mean_non_blank_guided", test.mean_b},
              {"p_value", test.p_value},
              {"permutations", test.permutations},
              {"samples", guided_counts.size()}};
}

GuidanceExperimentResult run_guidance_experiment(const Model& model, std::span<const Graph> conditions,
                                                 const GuidanceExperimentOptions& o) {
  if (conditions.empty()) throw std::invalid_argument("guidance experiment: no conditions");
  GuidanceExperimentResult result;
  result.unguided_counts.resize(static_cast<std::size_t>(o.samples));
  result.guided_counts.resize(static_cast<std::size_t>(o.samples));
  const int extra = model.config.max_blank_nodes;
  parallel_for(static_cast<std::size_t>(o.samples), o.threads, [&](std::size_t i) {
    const Graph& y = conditions[i % conditions.size()];
    const int target = y.size() + extra;
    const NodeMapping m = NodeMapping::identity_prefix(target, y.size());
    const Eigen::MatrixXd pe =
        model.config.uses_pe() ? laplacian_pe(y, model.config.pe_dim, model.config.pe_largest) : Eigen::MatrixXd();
    const Condition cond{y, m, pe};
    GuidanceSpec spec;
    spec.gamma = o.gamma;
    const Guidance g = resolve_guidance(spec, m, y.blank_index());
    Rng plain_rng(o.seed, i);
    Rng guided_rng(o.seed, i);
    result.unguided_counts[i] = run_chain(model, cond, target, o.sample_steps, std::nullopt, nullptr, plain_rng)
                                    .count_non_blank();
    result.guided_counts[i] =
        run_chain(model, cond, target, o.sample_steps, g, nullptr, guided_rng).count_non_blank();
  });
  result.test = permutation_test(result.unguided_counts, result.guided_counts, o.permutations, o.seed);
  return result;
}

}  // namespace diffalign
