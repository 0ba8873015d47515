#include "diffalign/service.hpp"

#include <httplib.h>

#include <cstdio>

namespace diffalign {

std::string to_string(JobState s) {
  switch (s) {
    case JobState::queued: return "queued";
    case JobState::running: return "running";
    case JobState::done: return "done";
    case JobState::failed: return "failed";
  }
  return "failed";
}

Json to_json(const JobSnapshot& j) {
  Json out{{"id", j.id},
           {"kind", j.kind},
           {"model_id", j.model_id},
           {"request", j.request},
           {"state", to_string(j.state)},
           {"progress", j.progress}};
  if (j.state == JobState::done) out["result"] = j.result;
  if (j.state == JobState::failed) out["error"] = j.error;
  return out;
}

struct Service::Job {
  JobSnapshot snapshot;
  SampleRequest request;
  std::shared_ptr<const LoadedModel> model;
};

Service::Service(ServiceOptions options) : options_(std::move(options)) {
  if (options_.workers < 1) throw std::invalid_argument("service: workers must be positive");
  if (options_.queue_capacity < 1) throw std::invalid_argument("service: queue capacity must be positive");
  for (int i = 0; i < options_.workers; ++i) workers_.emplace_back([this] { worker_loop(); });
}

Service::~Service() {
  stop();
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  queue_ready_.notify_all();
  changed_.notify_all();
  for (auto& w : workers_) w.join();
}

void Service::add_model(const std::string& id, Checkpoint checkpoint) {
  auto loaded = std::make_shared<LoadedModel>();
  loaded->model = model_from_checkpoint(checkpoint);
  loaded->checkpoint = std::move(checkpoint);
  std::lock_guard lock(mutex_);
  models_[id] = std::move(loaded);
}

Json Service::list_models() const {
  std::lock_guard lock(mutex_);
  Json out = Json::array();
  for (const auto& [id, m] : models_) {
    const auto& c = m->checkpoint;
    out.push_back(Json{{"id", id},
                       {"variant", to_string(c.config.variant)},
                       {"alphabets", {{"node", c.config.alphabet.node}, {"edge", c.config.alphabet.edge}}},
                       {"T", c.diffusion.steps},
                       {"transition", to_string(c.diffusion.kind)}});
  }
  return out;
}

std::string Service::submit(const Json& body) {
  if (!body.is_object()) throw ServiceError(400, "request body must be a JSON object");
  if (!body.contains("model_id") || !body.at("model_id").is_string())
    throw ServiceError(400, "request: missing model_id");
  const std::string model_id = body.at("model_id").get<std::string>();
  std::shared_ptr<const LoadedModel> model;
  {
    std::lock_guard lock(mutex_);
    auto it = models_.find(model_id);
    if (it == models_.end()) throw ServiceError(404, "unknown model: " + model_id);
    model = it->second;
  }
  auto job = std::make_shared<Job>();
  try {
    job->request = sample_request_from_json(body, model->model);
  } catch (const FormatError& e) {
    throw ServiceError(400, e.what());
  } catch (const std::invalid_argument& e) {
    throw ServiceError(422, e.what());
  }
  // Invariant checks happen up front so a bad mask is a 422, not a failed job.
  try {
    const SampleConfig config = sample_config_for(model->model, job->request);
    if (job->request.mask)
      job->request.mask->validate(job->request.condition.size() + config.extra_blank_nodes,
                                  model->model.config.alphabet);
    if (job->request.guidance && job->request.guidance->gamma != 0.0 && job->request.guidance->scale &&
        *job->request.guidance->scale <= 0.0)
      throw std::invalid_argument("guidance: b must be positive");
  } catch (const std::invalid_argument& e) {
    throw ServiceError(422, e.what());
  }
  job->model = model;
  job->snapshot.kind = job->request.kind();
  job->snapshot.model_id = model_id;
  job->snapshot.request = to_json(job->request);
  std::lock_guard lock(mutex_);
  if (stopping_) throw ServiceError(503, "service is shutting down");
  if (queue_.size() >= options_.queue_capacity) throw ServiceError(503, "job queue is full");
  job->snapshot.id = "job-" + std::to_string(next_id_++);
  jobs_[job->snapshot.id] = job;
  queue_.push_back(job);
  queue_ready_.notify_one();
  return job->snapshot.id;
}

JobSnapshot Service::job(const std::string& id) const {
  std::lock_guard lock(mutex_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) throw ServiceError(404, "unknown job: " + id);
  return it->second->snapshot;
}

JobSnapshot Service::wait(const std::string& id) const {
  std::unique_lock lock(mutex_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) throw ServiceError(404, "unknown job: " + id);
  const auto job = it->second;
  changed_.wait(lock, [&] {
    return job->snapshot.state == JobState::done || job->snapshot.state == JobState::failed || stopping_;
  });
  return job->snapshot;
}

void Service::worker_loop() {
  for (;;) {
    std::shared_ptr<Job> job;
    {
      std::unique_lock lock(mutex_);
      queue_ready_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      job = queue_.front();
      queue_.pop_front();
      job->snapshot.state = JobState::running;
    }
    changed_.notify_all();
    run_job(*job);
    changed_.notify_all();
  }
}

void Service::run_job(Job& job) {
  const ProgressFn progress = [&](double fraction) {
    std::lock_guard lock(mutex_);
    job.snapshot.progress = fraction;
  };
  try {
    const SampleOutcome outcome = run_sample_request(job.model->model, job.request, progress);
    Json result = to_json(outcome);
    std::lock_guard lock(mutex_);
    job.snapshot.result = std::move(result);
    job.snapshot.progress = 1.0;
    job.snapshot.state = JobState::done;
  } catch (const std::invalid_argument& e) {
    std::lock_guard lock(mutex_);
    job.snapshot.error = e.what();
    job.snapshot.state = JobState::failed;
  } catch (const NumericError& e) {
    std::lock_guard lock(mutex_);
    job.snapshot.error = e.what();
    job.snapshot.state = JobState::failed;
  } catch (const std::exception&) {
    std::lock_guard lock(mutex_);
    job.snapshot.error = "internal error";
    job.snapshot.state = JobState::failed;
  }
}

namespace {

std::vector<Graph> graphs_from(const Json& list, const char* where) {
  if (!list.is_array()) throw FormatError(std::string(where) + " must be an array");
  std::vector<Graph> out;
  for (const auto& g : list) out.push_back(graph_from_json(g.contains("graph") ? g.at("graph") : g));
  return out;
}

}  // namespace

Json Service::evaluate(const Json& body) const {
  if (!body.is_object()) throw ServiceError(400, "request body must be a JSON object");
  try {
    reject_unknown_keys(body, {"samples", "truth", "k", "elbos", "lambda"}, "evaluate");
    if (!body.contains("samples") || !body.contains("truth")) throw FormatError("evaluate: samples and truth required");
    // A single input may be given as a flat list of graphs and one truth graph.
    const Json& s = body.at("samples");
    const Json& t = body.at("truth");
    std::vector<std::vector<Graph>> samples;
    std::vector<Graph> truths;
    if (t.is_object()) {
      samples.push_back(graphs_from(s, "samples"));
      truths.push_back(graph_from_json(t));
    } else {
      truths = graphs_from(t, "truth");
      if (!s.is_array()) throw FormatError("samples must be an array");
      for (const auto& per_input : s) samples.push_back(graphs_from(per_input, "samples[i]"));
    }
    std::vector<std::vector<double>> elbos;
    if (body.contains("elbos")) {
      elbos = t.is_object() ? std::vector<std::vector<double>>{body.at("elbos").get<std::vector<double>>()}
                            : body.at("elbos").get<std::vector<std::vector<double>>>();
    }
    const std::vector<int> ks = body.value("k", std::vector<int>{1, 3, 5, 10});
    const double lambda = body.value("lambda", kDefaultRankWeight);
    try {
      return to_json(evaluate_samples(samples, elbos, truths, ks, lambda));
    } catch (const std::invalid_argument& e) {
      throw ServiceError(422, e.what());
    }
  } catch (const FormatError& e) {
    throw ServiceError(400, e.what());
  } catch (const nlohmann::json::exception& e) {
    throw ServiceError(400, std::string("evaluate: ") + e.what());
  }
}

namespace {

void reply(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <class F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const ServiceError& e) {
    reply(res, e.status(), Json{{"error", e.what()}, {"status", e.status()}});
  } catch (const std::exception&) {
    reply(res, 500, Json{{"error", "internal error"}, {"status", 500}});
  }
}

Json parse_body(const httplib::Request& req) {
  try {
    return Json::parse(req.body);
  } catch (const nlohmann::json::parse_error& e) {
    throw ServiceError(400, std::string("malformed JSON: ") + e.what());
  }
}

}  // namespace

void Service::mount(httplib::Server& server) {
  const std::string origin = options_.cors_origin;
  server.set_default_headers({{"Access-Control-Allow-Origin", origin},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"}});
  server.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  server.Get("/v1/models", [this](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, Json{{"models", list_models()}}); });
  });
  server.Post("/v1/jobs", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { reply(res, 202, Json{{"job_id", submit(parse_body(req))}}); });
  });
  server.Get(R"(/v1/jobs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, to_json(job(req.matches[1].str()))); });
  });
  server.Post("/v1/evaluate", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, evaluate(parse_body(req))); });
  });
  server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) reply(res, res.status, Json{{"error", "not found"}, {"status", res.status}});
  });
}

void Service::listen(const std::string& host, int port) {
  {
    std::lock_guard lock(mutex_);
    if (server_) throw std::logic_error("service: already listening");
    server_ = std::make_unique<httplib::Server>();
  }
  mount(*server_);
  if (!server_->listen(host, port)) throw std::runtime_error("service: cannot listen on " + host + ":" + std::to_string(port));
}

int Service::start_background(const std::string& host) {
  {
    std::lock_guard lock(mutex_);
    if (server_) throw std::logic_error("service: already listening");
    server_ = std::make_unique<httplib::Server>();
  }
  mount(*server_);
  const int port = server_->bind_to_any_port(host);
  if (port <= 0) throw std::runtime_error("service: cannot bind " + host);
  server_thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port;
}

void Service::stop() {
  if (server_) server_->stop();
  if (server_thread_.joinable()) server_thread_.join();
}

}  // namespace diffalign
