#pragma once

#include "diffalign/checkpoint.hpp"
#include "diffalign/requests.hpp"

#include <condition_variable>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace httplib {
class Server;
}

namespace diffalign {

struct ServiceOptions {
  int workers = 1;
  std::size_t queue_capacity = 16;
  std::string cors_origin = "*";
};

enum class JobState { queued, running, done, failed };
std::string to_string(JobState s);

struct JobSnapshot {
  std::string id;
  std::string kind;
  std::string model_id;
  Json request;
  JobState state = JobState::queued;
  double progress = 0.0;
  Json result;  // null until done
  std::string error;
};
Json to_json(const JobSnapshot& j);

/// Raised for requests the service refuses; carries the HTTP status.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, const std::string& message) : std::runtime_error(message), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

/// Job table, worker pool and route handlers. Models are shared read-only.
class Service {
 public:
  explicit Service(ServiceOptions options = {});
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  void add_model(const std::string& id, Checkpoint checkpoint);
  Json list_models() const;

  /// Validates and enqueues; returns the job id.
  std::string submit(const Json& body);
  JobSnapshot job(const std::string& id) const;
  /// Blocks until the job leaves queued/running.
  JobSnapshot wait(const std::string& id) const;
  Json evaluate(const Json& body) const;

  /// Registers the /v1 routes and CORS handling.
  void mount(httplib::Server& server);

  /// Serves until stop() is called from another thread.
  void listen(const std::string& host, int port);
  /// Binds to a free port and serves on a background thread; returns the port.
  int start_background(const std::string& host = "127.0.0.1");
  void stop();

 private:
  struct Job;
  struct LoadedModel {
    Checkpoint checkpoint;
    Model model;
  };

  void worker_loop();
  void run_job(Job& job);

  ServiceOptions options_;
  std::map<std::string, std::shared_ptr<const LoadedModel>> models_;
  mutable std::mutex mutex_;
  mutable std::condition_variable changed_;
  std::condition_variable queue_ready_;
  std::map<std::string, std::shared_ptr<Job>> jobs_;
  std::deque<std::shared_ptr<Job>> queue_;
  std::uint64_t next_id_ = 1;
  bool stopping_ = false;
  std::vector<std::thread> workers_;
  std::unique_ptr<httplib::Server> server_;
  std::thread server_thread_;
};

}  // namespace diffalign
