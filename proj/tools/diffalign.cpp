#include "diffalign/experiments.hpp"
#include "diffalign/requests.hpp"
#include "diffalign/service.hpp"
#include "diffalign/verify.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace diffalign;

namespace {

class MissingFile : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void require_file(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw MissingFile("no such file: " + p.string());
}

Json read_json_file(const fs::path& p) {
  require_file(p);
  std::ifstream in(p);
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text << '\n';
}

void emit(const std::optional<fs::path>& out, const Json& j) {
  if (out) {
    write_text(*out, j.dump(2));
  } else {
    std::cout << j.dump(2) << '\n';
  }
}

fs::path sidecar(const fs::path& out, const std::string& suffix) { return fs::path(out.string() + suffix); }

void write_resolved(const std::optional<fs::path>& out, const Json& config) {
  if (out) write_text(sidecar(*out, ".config.json"), config.dump(2));
}

bool is_dataset_file(const fs::path& p) {
  const std::vector<std::string> lines = read_lines(p);
  if (lines.empty()) return false;
  try {
    const Json head = Json::parse(lines.front());
    return head.is_object() && head.value("format", "") == "diffalign-dataset";
  } catch (const nlohmann::json::parse_error&) {
    return false;
  }
}

struct Input {
  Graph y;
  std::optional<Graph> truth;
  int target_size = -1;
};

std::vector<Input> load_inputs(const fs::path& p, const std::string& split, int limit, std::optional<Alphabet> alphabet) {
  require_file(p);
  std::vector<Input> out;
  if (is_dataset_file(p)) {
    const PairedDataset d = load_dataset(p);
    for (const PairedRecord& r : d.split(split)) {
      if (limit > 0 && static_cast<int>(out.size()) >= limit) break;
      out.push_back(Input{r.y, target_in_condition_order(r), r.x.size()});
    }
    if (out.empty()) throw std::invalid_argument("dataset has no records in split '" + split + "'");
    return out;
  }
  const Json j = read_json_file(p);
  if (j.is_array()) {
    for (const Json& g : j) out.push_back(Input{graph_from_json(g, alphabet), std::nullopt, -1});
  } else {
    out.push_back(Input{graph_from_json(j, alphabet), std::nullopt, -1});
  }
  return out;
}

int default_threads() {
  if (const char* env = std::getenv("DIFFALIGN_THREADS")) {
    try {
      return std::max(1, std::stoi(env));
    } catch (const std::exception&) {
      throw std::invalid_argument("DIFFALIGN_THREADS must be an integer");
    }
  }
  return 1;
}

std::vector<int> parse_ks(const std::string& s) {
  std::vector<int> ks;
  std::stringstream in(s);
  std::string part;
  while (std::getline(in, part, ',')) {
    try {
      ks.push_back(std::stoi(part));
    } catch (const std::exception&) {
      throw std::invalid_argument("--k expects comma-separated integers");
    }
  }
  if (ks.empty()) throw std::invalid_argument("--k expects at least one value");
  return ks;
}

// ---- gen-data ----

struct GenDataArgs {
  std::string task;
  int train = 100;
  int val = 0;
  int test = 100;
  std::uint64_t seed = 0;
  fs::path out;
  int side = 5;
  double flip_fraction = 0.05;
  bool clean_target = false;
  bool random_new_nodes = false;
  int nodes = -1;
  int node_labels = 4;
  double edge_density = -1.0;
};

int run_gen_data(const GenDataArgs& a) {
  PairedDataset data;
  Json resolved{{"task", a.task}, {"train", a.train}, {"val", a.val}, {"test", a.test}, {"seed", a.seed}};
  const auto make = [&](int count, const std::string& split, std::uint64_t seed) {
    if (a.task == "grid") {
      GridCopyOptions o;
      o.side = a.side;
      o.flip_fraction = a.flip_fraction;
      o.noisy_target = !a.clean_target;
      resolved["side"] = o.side;
      resolved["flip_fraction"] = o.flip_fraction;
      resolved["noisy_target"] = o.noisy_target;
      return gen_grid_copy(count, o, seed, split);
    }
    if (a.task == "identity") {
      IdentityOptions o;
      if (a.nodes > 0) o.nodes = a.nodes;
      if (a.edge_density >= 0) o.edge_density = a.edge_density;
      o.alphabet.node = a.node_labels + 1;
      resolved["nodes"] = o.nodes;
      resolved["edge_density"] = o.edge_density;
      resolved["node_labels"] = a.node_labels;
      return gen_identity(count, o, seed, split);
    }
    if (a.task == "edit") {
      EditOptions o;
      if (a.nodes > 0) o.nodes = a.nodes;
      if (a.edge_density >= 0) o.extra_edge_density = a.edge_density;
      o.node_labels = a.node_labels;
      o.random_new_nodes = a.random_new_nodes;
      resolved["nodes"] = o.nodes;
      resolved["edge_density"] = o.extra_edge_density;
      resolved["random_new_nodes"] = o.random_new_nodes;
      resolved["node_labels"] = o.node_labels;
      return gen_edit_translation(count, o, seed, split);
    }
    throw std::invalid_argument("unknown task: " + a.task);
  };
  bool first = true;
  for (const auto& [split, count] : {std::pair<std::string, int>{"train", a.train}, {"val", a.val}, {"test", a.test}}) {
    if (count <= 0) continue;
    PairedDataset part = make(count, split, a.seed);
    if (first) {
      data = std::move(part);
      first = false;
    } else {
      data.append(part);
    }
  }
  if (first) throw std::invalid_argument("gen-data: all split sizes are zero");
  save_dataset(data, a.out);
  write_resolved(a.out, resolved);
  std::cout << Json{{"out", a.out.string()}, {"records", data.records.size()}}.dump() << '\n';
  return 0;
}

// ---- train ----

struct TrainArgs {
  fs::path data;
  std::optional<fs::path> config;
  fs::path out;
  std::optional<std::string> variant;
  std::optional<int> layers, hidden, heads, pe_dim, max_blank_nodes;
  std::optional<int> epochs, batch_size, steps, max_updates, val_every, checkpoint_every;
  std::optional<double> learning_rate;
  std::optional<std::string> kind;
  std::optional<std::uint64_t> seed;
  int threads = 1;
};

int run_train(const TrainArgs& a) {
  require_file(a.data);
  const PairedDataset data = load_dataset(a.data);
  const std::vector<PairedRecord> train_set = data.split("train");
  const std::vector<PairedRecord> val_set = data.split("val");
  if (train_set.empty()) throw std::invalid_argument("dataset has no train records");

  DenoiserConfig dc;
  dc.alphabet = data.alphabet;
  int max_extra = 0;
  for (const auto& r : train_set) max_extra = std::max(max_extra, r.x.size() - r.y.size());
  dc.max_blank_nodes = max_extra;
  TrainConfig tc;
  if (a.config) {
    const Json j = read_json_file(*a.config);
    reject_unknown_keys(j, {"denoiser", "train"}, "config");
    if (j.contains("denoiser")) dc = denoiser_config_from_json(j.at("denoiser"), dc);
    if (j.contains("train")) tc = train_config_from_json(j.at("train"), tc);
  }
  if (a.variant) dc.variant = variant_from_string(*a.variant);
  if (a.layers) dc.layers = *a.layers;
  if (a.hidden) dc.hidden = *a.hidden;
  if (a.heads) dc.heads = *a.heads;
  if (a.pe_dim) dc.pe_dim = *a.pe_dim;
  if (a.max_blank_nodes) dc.max_blank_nodes = *a.max_blank_nodes;
  if (a.epochs) tc.epochs = *a.epochs;
  if (a.batch_size) tc.batch_size = *a.batch_size;
  if (a.steps) tc.steps = *a.steps;
  if (a.max_updates) tc.max_updates = *a.max_updates;
  if (a.val_every) tc.val_every = *a.val_every;
  if (a.checkpoint_every) tc.checkpoint_every = *a.checkpoint_every;
  if (a.learning_rate) tc.learning_rate = *a.learning_rate;
  if (a.kind) tc.kind = transition_kind_from_string(*a.kind);
  if (a.seed) tc.seed = *a.seed;
  tc.threads = a.threads;
  tc.val_steps = std::min(tc.val_steps, tc.steps);
  if (dc.alphabet != data.alphabet) throw std::invalid_argument("config alphabet does not match the dataset");
  dc.validate();
  tc.validate();
  write_resolved(a.out, Json{{"denoiser", to_json(dc)}, {"train", to_json(tc)}, {"data", a.data.string()}});

  const DiffusionSpec diffusion = diffusion_for(train_set, tc);
  std::vector<std::string> log;
  const TrainResult result = train(train_set, dc, tc, val_set, [&](const EpochLog& e, const DenoiserParams& p) {
    log.push_back(to_json(e).dump());
    std::cerr << log.back() << '\n';
    write_lines(sidecar(a.out, ".log.jsonl"), log);
    if (tc.checkpoint_every > 0 && (e.epoch + 1) % tc.checkpoint_every == 0)
      save_checkpoint(Checkpoint{dc, diffusion, p}, sidecar(a.out, ".epoch" + std::to_string(e.epoch + 1)));
  });
  save_checkpoint(Checkpoint{dc, diffusion, result.params}, a.out);
  write_lines(sidecar(a.out, ".log.jsonl"), log);
  std::cout << Json{{"checkpoint", a.out.string()},
                    {"updates", result.updates},
                    {"best_epoch", result.best_epoch},
                    {"best_val_mrr", result.best_val_mrr ? Json(*result.best_val_mrr) : Json(nullptr)}}
                   .dump()
            << '\n';
  return 0;
}

// ---- sample ----

struct SampleArgs {
  fs::path ckpt;
  fs::path input;
  std::optional<fs::path> config;
  std::optional<fs::path> out;
  std::optional<fs::path> mask;
  std::string split = "test";
  int limit = 0;
  std::optional<int> n, steps, extra_blank;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mapping;
  std::optional<double> lambda;
  std::vector<double> guidance;
  bool no_elbo = false;
  int threads = 1;
};

int run_sample(const SampleArgs& a) {
  require_file(a.ckpt);
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  const Model model = model_from_checkpoint(ckpt);

  SampleRequest base;
  if (a.config) {
    const Json j = read_json_file(*a.config);
    reject_unknown_keys(j, {"sample", "guidance"}, "config");
    if (j.contains("sample")) {
      Json s = j.at("sample");
      reject_unknown_keys(s, {"n", "steps", "seed", "extra_blank_nodes", "mapping", "lambda", "rank_with_elbo"},
                          "sample");
      s["condition"] = to_json(Graph(1, model.config.alphabet));
      base = sample_request_from_json(s, model);
    }
    if (j.contains("guidance")) base.guidance = guidance_from_json(j.at("guidance"));
  }
  if (a.n) base.num_samples = *a.n;
  if (a.steps) base.steps = *a.steps;
  if (a.seed) base.seed = *a.seed;
  if (a.extra_blank) base.extra_blank_nodes = *a.extra_blank;
  if (a.mapping) base.mapping = mapping_policy_from_string(*a.mapping);
  if (a.lambda) base.lambda = *a.lambda;
  if (a.no_elbo) base.rank_with_elbo = false;
  if (!a.guidance.empty()) {
    GuidanceSpec g;
    g.gamma = a.guidance[0];
    if (a.guidance.size() > 1) g.offset = a.guidance[1];
    if (a.guidance.size() > 2) g.scale = a.guidance[2];
    base.guidance = g;
  }
  if (a.mask) base.mask = mask_from_json(read_json_file(*a.mask));
  base.threads = a.threads;

  const std::vector<Input> inputs = load_inputs(a.input, a.split, a.limit, model.config.alphabet);
  std::vector<std::string> lines;
  Json rankings = Json::array();
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    SampleRequest r = base;
    r.condition = inputs[i].y;
    if (inputs.size() > 1) r.seed = mix_seed(base.seed, i);
    if (!a.extra_blank && inputs[i].target_size >= 0) r.extra_blank_nodes = inputs[i].target_size - inputs[i].y.size();
    const SampleOutcome outcome = run_sample_request(model, r);
    std::map<std::string, const Candidate*> by_key;
    for (const Candidate& c : outcome.ranking.items) by_key[c.key] = &c;
    for (const Sample& s : outcome.samples) {
      Json line = to_json(s);
      const Candidate& c = *by_key.at(candidate_key(s.graph));
      line["input"] = i;
      line["key"] = c.key;
      line["elbo"] = r.rank_with_elbo && r.lambda > 0.0 ? Json(c.elbo) : Json(nullptr);
      line["score"] = c.score;
      line["lambda"] = outcome.ranking.lambda;
      lines.push_back(line.dump());
    }
    Json entry{{"input", i}, {"request", to_json(r)}, {"ranking", to_json(outcome.ranking)}};
    if (inputs[i].truth) entry["truth"] = to_json(*inputs[i].truth);
    rankings.push_back(std::move(entry));
  }
  Json resolved = to_json(base);
  resolved.erase("condition");
  resolved["ckpt"] = a.ckpt.string();
  resolved["input"] = a.input.string();
  resolved["threads"] = a.threads;
  if (a.out) {
    write_lines(*a.out, lines);
    write_resolved(a.out, resolved);
    write_text(sidecar(*a.out, ".ranking.json"), rankings.dump(2));
  } else {
    for (const auto& l : lines) std::cout << l << '\n';
  }
  return 0;
}

// ---- evaluate ----

struct EvaluateArgs {
  fs::path samples;
  std::optional<fs::path> truth;
  std::string split = "test";
  std::string k = "1,3,5,10";
  std::optional<fs::path> out;
};

int run_evaluate(const EvaluateArgs& a) {
  require_file(a.samples);
  std::map<std::size_t, std::vector<Graph>> per_input;
  std::map<std::size_t, std::vector<double>> elbos;
  double lambda = 0.0;
  bool with_elbo = true;
  std::size_t line_no = 0;
  for (const std::string& text : read_lines(a.samples)) {
    ++line_no;
    if (text.empty()) continue;
    Json j;
    try {
      j = Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(a.samples.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    const std::size_t input = j.value("input", std::size_t{0});
    per_input[input].push_back(graph_from_json(j.at("graph")));
    lambda = j.value("lambda", 0.0);
    if (j.contains("elbo") && j.at("elbo").is_number()) {
      elbos[input].push_back(j.at("elbo").get<double>());
    } else {
      with_elbo = false;
    }
  }
  if (per_input.empty()) throw FormatError(a.samples.string() + ": no samples");
  with_elbo = with_elbo && lambda > 0.0;

  std::map<std::size_t, Graph> stored_truth;
  const fs::path ranking_file = sidecar(a.samples, ".ranking.json");
  if (!a.truth && fs::is_regular_file(ranking_file))
    for (const Json& r : read_json_file(ranking_file))
      if (r.contains("truth")) stored_truth[r.at("input").get<std::size_t>()] = graph_from_json(r.at("truth"));
  std::vector<Graph> truth_pool;
  if (a.truth)
    for (Input& in : load_inputs(*a.truth, a.split, 0, std::nullopt)) truth_pool.push_back(in.truth ? *in.truth : in.y);

  std::vector<std::vector<Graph>> samples;
  std::vector<std::vector<double>> elbo_lists;
  std::vector<Graph> truths;
  for (auto& [input, graphs] : per_input) {
    if (a.truth) {
      if (input >= truth_pool.size()) throw std::invalid_argument("truth file has fewer inputs than the samples");
      truths.push_back(truth_pool[input]);
    } else if (stored_truth.count(input)) {
      truths.push_back(stored_truth.at(input));
    } else {
      throw std::invalid_argument("--truth is required for samples without stored targets");
    }
    samples.push_back(std::move(graphs));
    if (with_elbo) elbo_lists.push_back(std::move(elbos[input]));
  }
  const std::vector<int> ks = parse_ks(a.k);
  Json report = to_json(evaluate_samples(samples, elbo_lists, truths, ks, with_elbo ? lambda : 0.0));
  write_resolved(a.out, Json{{"samples", a.samples.string()},
                             {"truth", a.truth ? Json(a.truth->string()) : Json(nullptr)},
                             {"split", a.split},
                             {"k", ks},
                             {"lambda", with_elbo ? lambda : 0.0}});
  emit(a.out, report);
  return 0;
}

// ---- verify ----

int run_verify_cmd(const std::string& suite, std::uint64_t seed, const std::optional<fs::path>& out) {
  std::vector<std::string> suites = suite == "all" ? verify_suites() : std::vector<std::string>{suite};
  Json reports = Json::array();
  bool pass = true;
  for (const std::string& s : suites) {
    const VerifyReport r = run_verify(s, seed);
    pass = pass && r.pass;
    reports.push_back(to_json(r));
  }
  emit(out, suites.size() == 1 ? reports.front() : Json{{"pass", pass}, {"suites", reports}});
  return pass ? 0 : 1;
}

// ---- experiment ----

struct ExperimentArgs {
  std::string name;
  std::uint64_t seed = 0;
  std::optional<fs::path> out;
  std::optional<fs::path> ckpt;
  std::optional<fs::path> input;
  int epochs = -1;
  int threads = 1;
};

int run_experiment(const ExperimentArgs& a) {
  Json result;
  if (a.name == "grid") {
    GridExperimentOptions o;
    o.seed = a.seed;
    o.threads = a.threads;
    if (a.epochs >= 0) o.epochs = a.epochs;
    const GridExperimentResult r = run_grid_experiment(o);
    result = r.details;
  } else if (a.name == "steps") {
    StepAblationOptions o;
    o.seed = a.seed;
    o.threads = a.threads;
    if (a.epochs >= 0) o.epochs = a.epochs;
    const StepAblationResult r = run_step_ablation(o);
    result = Json{{"top_k", r.to_json()}, {"aligned_variant", to_string(o.aligned)}};
    if (a.out)
      for (const auto& [variant, ckpt] : r.checkpoints) save_checkpoint(ckpt, sidecar(*a.out, "." + variant + ".ckpt"));
  } else if (a.name == "guidance") {
    if (!a.ckpt || !a.input) throw std::invalid_argument("guidance experiment needs --ckpt and --input");
    require_file(*a.ckpt);
    const Model model = model_from_checkpoint(load_checkpoint(*a.ckpt));
    std::vector<Graph> conditions;
    for (const Input& in : load_inputs(*a.input, "test", 20, model.config.alphabet)) conditions.push_back(in.y);
    GuidanceExperimentOptions o;
    o.seed = a.seed;
    o.threads = a.threads;
    result = run_guidance_experiment(model, conditions, o).to_json();
  } else {
    throw std::invalid_argument("unknown experiment: " + a.name);
  }
  emit(a.out, result);
  return 0;
}

// ---- matrices ----

int run_matrices(int steps, const std::string& kind, int alphabet, const std::optional<fs::path>& out) {
  std::optional<Eigen::RowVectorXd> marginals;
  if (kind == "marginal") marginals = Eigen::RowVectorXd::Constant(alphabet, 1.0 / alphabet);
  const TransitionModel chain(steps, transition_kind_from_string(kind), alphabet, 0, marginals);
  Json rows = Json::array();
  for (int t = 1; t <= steps; ++t)
    rows.push_back(Json{{"t", t}, {"beta", chain.beta(t)}, {"Q", to_json(chain.step_matrix(t))},
                        {"Qbar", to_json(chain.cumulative(t))}});
  emit(out, Json{{"steps", steps}, {"kind", kind}, {"alphabet", alphabet}, {"matrices", rows}});
  return 0;
}

// ---- serve ----

Service* g_service = nullptr;

int run_serve(const std::vector<std::string>& ckpts, const std::string& host, int port, int workers, std::size_t queue) {
  ServiceOptions options;
  options.workers = workers;
  options.queue_capacity = queue;
  Service service(options);
  for (const std::string& spec : ckpts) {
    // "id=path" or a bare path whose stem becomes the id.
    const auto eq = spec.find('=');
    const fs::path path = eq == std::string::npos ? fs::path(spec) : fs::path(spec.substr(eq + 1));
    const std::string id = eq == std::string::npos ? path.stem().string() : spec.substr(0, eq);
    require_file(path);
    service.add_model(id, load_checkpoint(path));
  }
  g_service = &service;
  std::signal(SIGINT, [](int) {
    if (g_service) g_service->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_service) g_service->stop();
  });
  std::cerr << Json{{"listening", host + ":" + std::to_string(port)}, {"models", service.list_models()}}.dump() << '\n';
  service.listen(host, port);
  g_service = nullptr;
  return 0;
}

int fail(const std::string& type, const std::string& message, int code) {
  std::cerr << Json{{"error", {{"type", type}, {"message", message}}}}.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conditional discrete diffusion for graph-to-graph translation"};
  app.require_subcommand(1);
  int threads = 1;

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a paired dataset");
  gen_cmd->add_option("--task", gen.task, "grid | identity | edit")->required()->check(CLI::IsMember({"grid", "identity", "edit"}));
  gen_cmd->add_option("--train", gen.train, "Train records");
  gen_cmd->add_option("--val", gen.val, "Validation records");
  gen_cmd->add_option("--test", gen.test, "Test records");
  gen_cmd->add_option("--seed", gen.seed);
  gen_cmd->add_option("--out", gen.out, "Dataset path (.jsonl or .jsonl.gz)")->required();
  gen_cmd->add_option("--side", gen.side, "Grid side");
  gen_cmd->add_option("--flip-fraction", gen.flip_fraction, "Fraction of grid entries flipped");
  gen_cmd->add_flag("--clean-target", gen.clean_target, "Noise only the condition of grid pairs");
  gen_cmd->add_flag("--random-new-nodes", gen.random_new_nodes, "Edit pairs draw the new-node count at random");
  gen_cmd->add_option("--nodes", gen.nodes, "Condition node count");
  gen_cmd->add_option("--node-labels", gen.node_labels, "Non-blank node labels");
  gen_cmd->add_option("--edge-density", gen.edge_density);

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a denoiser");
  train_cmd->add_option("--data", tr.data)->required();
  train_cmd->add_option("--config", tr.config, "JSON with \"denoiser\" and \"train\" sections");
  train_cmd->add_option("--out", tr.out, "Checkpoint path")->required();
  train_cmd->add_option("--variant", tr.variant);
  train_cmd->add_option("--layers", tr.layers);
  train_cmd->add_option("--hidden", tr.hidden);
  train_cmd->add_option("--heads", tr.heads);
  train_cmd->add_option("--pe-dim", tr.pe_dim);
  train_cmd->add_option("--max-blank-nodes", tr.max_blank_nodes);
  train_cmd->add_option("--epochs", tr.epochs);
  train_cmd->add_option("--batch-size", tr.batch_size);
  train_cmd->add_option("--steps", tr.steps, "Diffusion steps T");
  train_cmd->add_option("--max-updates", tr.max_updates);
  train_cmd->add_option("--val-every", tr.val_every);
  train_cmd->add_option("--checkpoint-every", tr.checkpoint_every);
  train_cmd->add_option("--lr", tr.learning_rate);
  train_cmd->add_option("--kind", tr.kind, "absorbing | uniform | marginal");
  train_cmd->add_option("--seed", tr.seed);

  SampleArgs sa;
  auto* sample_cmd = app.add_subcommand("sample", "Sample targets for conditions");
  sample_cmd->add_option("--ckpt", sa.ckpt)->required();
  sample_cmd->add_option("--input", sa.input, "Graph JSON, array of graphs, or dataset")->required();
  sample_cmd->add_option("--config", sa.config, "JSON with \"sample\" and \"guidance\" sections");
  sample_cmd->add_option("--out", sa.out);
  sample_cmd->add_option("--split", sa.split);
  sample_cmd->add_option("--limit", sa.limit, "Dataset records used (0: all)");
  sample_cmd->add_option("--n", sa.n, "Samples per input");
  sample_cmd->add_option("--steps", sa.steps, "Reverse steps");
  sample_cmd->add_option("--seed", sa.seed);
  sample_cmd->add_option("--extra-blank", sa.extra_blank, "Blank nodes appended to the condition size");
  sample_cmd->add_option("--mapping", sa.mapping, "identity-prefix | random");
  sample_cmd->add_option("--lambda", sa.lambda, "Ranking weight of the ELBO");
  sample_cmd->add_option("--guidance", sa.guidance, "gamma [a [b]]")->expected(1, 3);
  sample_cmd->add_option("--mask", sa.mask, "Inpainting mask JSON");
  sample_cmd->add_flag("--no-elbo", sa.no_elbo, "Rank by counts only");

  EvaluateArgs ev;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score samples against targets");
  eval_cmd->add_option("--samples", ev.samples)->required();
  eval_cmd->add_option("--truth", ev.truth, "Dataset, graph JSON or array of graphs");
  eval_cmd->add_option("--split", ev.split);
  eval_cmd->add_option("--k", ev.k);
  eval_cmd->add_option("--out", ev.out);

  std::string suite;
  std::uint64_t verify_seed = 0;
  std::optional<fs::path> verify_out;
  auto* verify_cmd = app.add_subcommand("verify", "Run an oracle suite");
  std::vector<std::string> suite_names = verify_suites();
  suite_names.push_back("all");
  verify_cmd->add_option("--suite", suite)->required()->check(CLI::IsMember(suite_names));
  verify_cmd->add_option("--seed", verify_seed);
  verify_cmd->add_option("--out", verify_out);

  ExperimentArgs ex;
  auto* exp_cmd = app.add_subcommand("experiment", "Run a built-in experiment");
  exp_cmd->add_option("--name", ex.name, "grid | steps | guidance")->required()->check(CLI::IsMember({"grid", "steps", "guidance"}));
  exp_cmd->add_option("--seed", ex.seed);
  exp_cmd->add_option("--out", ex.out);
  exp_cmd->add_option("--ckpt", ex.ckpt);
  exp_cmd->add_option("--input", ex.input);
  exp_cmd->add_option("--epochs", ex.epochs);

  int m_steps = 10;
  std::string m_kind = "absorbing";
  int m_alphabet = 2;
  std::optional<fs::path> m_out;
  auto* matrices_cmd = app.add_subcommand("matrices", "Dump transition matrices as JSON");
  matrices_cmd->add_option("--steps", m_steps);
  matrices_cmd->add_option("--kind", m_kind)->check(CLI::IsMember({"absorbing", "uniform", "marginal"}));
  matrices_cmd->add_option("--alphabet", m_alphabet);
  matrices_cmd->add_option("--out", m_out);

  std::vector<std::string> serve_ckpts;
  std::string host = "127.0.0.1";
  int port = 8080;
  int workers = 1;
  std::size_t queue = 16;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service");
  serve_cmd->add_option("--ckpt", serve_ckpts, "Checkpoint path or id=path (repeatable)")->required();
  serve_cmd->add_option("--port", port);
  serve_cmd->add_option("--host", host);
  serve_cmd->add_option("--workers", workers);
  serve_cmd->add_option("--queue", queue);

  for (auto* cmd : {train_cmd, sample_cmd, exp_cmd})
    cmd->add_option("--threads", threads, "Worker threads (env DIFFALIGN_THREADS)");

  try {
    threads = default_threads();
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  } catch (const std::invalid_argument& e) {
    return fail("invalid_config", e.what(), 2);
  }
  tr.threads = sa.threads = ex.threads = threads;

  try {
    if (*gen_cmd) return run_gen_data(gen);
    if (*train_cmd) return run_train(tr);
    if (*sample_cmd) return run_sample(sa);
    if (*eval_cmd) return run_evaluate(ev);
    if (*verify_cmd) return run_verify_cmd(suite, verify_seed, verify_out);
    if (*exp_cmd) return run_experiment(ex);
    if (*matrices_cmd) return run_matrices(m_steps, m_kind, m_alphabet, m_out);
    if (*serve_cmd) return run_serve(serve_ckpts, host, port, workers, queue);
  } catch (const MissingFile& e) {
    return fail("missing_file", e.what(), 3);
  } catch (const FormatError& e) {
    return fail("invalid_input", e.what(), 2);
  } catch (const std::invalid_argument& e) {
    return fail("invalid_config", e.what(), 2);
  } catch (const NumericError& e) {
    return fail("numeric", e.what(), 1);
  } catch (const std::exception& e) {
    return fail("runtime", e.what(), 1);
  }
  return 0;
}
