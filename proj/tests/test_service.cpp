#include "diffalign/service.hpp"
#include "diffalign/requests.hpp"
#include "httplib.h"

#include <doctest.h>

#include <chrono>
#include <thread>

using namespace diffalign;

namespace {

const Alphabet kAlphabet{3, 2};

Checkpoint small_checkpoint() {
  DenoiserConfig c;
  c.variant = Variant::pe_skip;
  c.alphabet = kAlphabet;
  c.layers = 1;
  c.hidden = 8;
  c.heads = 2;
  c.pe_dim = 3;
  c.max_blank_nodes = 2;
  return Checkpoint{c, DiffusionSpec{6, TransitionKind::absorbing, {}, {}}, init_params(c, 1)};
}

Json condition_json() { return to_json(Graph::from_labels({1, 2, 1}, {{0, 1, 1}}, kAlphabet)); }

Json poll(httplib::Client& client, const std::string& id) {
  for (int i = 0; i < 2000; ++i) {
    auto res = client.Get("/v1/jobs/" + id);
    REQUIRE(res);
    Json j = Json::parse(res->body);
    if (j.at("state") == "done" || j.at("state") == "failed") return j;
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  FAIL("job did not finish");
  return {};
}

}  // namespace

TEST_CASE("service over HTTP") {
  Service service;
  service.add_model("toy", small_checkpoint());
  const int port = service.start_background();
  httplib::Client client("127.0.0.1", port);

  SUBCASE("models are listed") {
    auto res = client.Get("/v1/models");
    REQUIRE(res);
    CHECK(res->status == 200);
    const Json j = Json::parse(res->body);
    REQUIRE(j.at("models").size() == 1);
    CHECK(j.at("models")[0].at("id") == "toy");
    CHECK(j.at("models")[0].at("variant") == "pe_skip");
    CHECK(j.at("models")[0].at("T") == 6);
    CHECK(res->get_header_value("Access-Control-Allow-Origin") == "*");
  }

  SUBCASE("a job runs to completion and repeats byte for byte") {
    const Json body{{"model_id", "toy"}, {"condition", condition_json()}, {"n", 4}, {"seed", 11}};
    auto first = client.Post("/v1/jobs", body.dump(), "application/json");
    REQUIRE(first);
    CHECK(first->status == 202);
    const std::string id1 = Json::parse(first->body).at("job_id");
    auto second = client.Post("/v1/jobs", body.dump(), "application/json");
    const std::string id2 = Json::parse(second->body).at("job_id");
    CHECK(id1 != id2);
    const Json a = poll(client, id1);
    const Json b = poll(client, id2);
    CHECK(a.at("state") == "done");
    CHECK(a.at("kind") == "sample");
    CHECK(a.at("progress") == 1.0);
    CHECK(a.at("result").dump() == b.at("result").dump());
    for (const auto& c : a.at("result").at("ranking").at("candidates")) {
      CHECK(c.contains("elbo"));
      CHECK(c.contains("score"));
    }
  }

  SUBCASE("service results equal a direct request run") {
    const Json body{{"model_id", "toy"}, {"condition", condition_json()}, {"n", 5}, {"seed", 4}, {"steps", 3}};
    auto res = client.Post("/v1/jobs", body.dump(), "application/json");
    const Json done = poll(client, Json::parse(res->body).at("job_id"));
    const Model m = model_from_checkpoint(small_checkpoint());
    Json direct = body;
    direct.erase("model_id");
    const SampleOutcome o = run_sample_request(m, sample_request_from_json(direct, m));
    CHECK(done.at("result").dump() == to_json(o).dump());
  }

  SUBCASE("full-mask job returns the mask") {
    const Graph wanted = Graph::from_labels({2, 2, 1, 0, 0}, {{0, 2, 1}}, kAlphabet);
    Json nodes = Json::array(), edges = Json::array();
    for (int i = 0; i < 5; ++i) nodes.push_back({i, wanted.node_label(i)});
    for (int i = 0; i < 5; ++i)
      for (int j = i + 1; j < 5; ++j) edges.push_back({i, j, wanted.edge_label(i, j)});
    const Json body{{"model_id", "toy"}, {"condition", condition_json()}, {"n", 3},
                    {"mask", {{"nodes", nodes}, {"edges", edges}}}};
    auto res = client.Post("/v1/jobs", body.dump(), "application/json");
    const Json done = poll(client, Json::parse(res->body).at("job_id"));
    CHECK(done.at("kind") == "inpaint");
    const Json items = done.at("result").at("ranking").at("candidates");
    REQUIRE(items.size() == 1);
    CHECK(items[0].at("key") == candidate_key(wanted));
  }

  SUBCASE("error statuses") {
    CHECK(client.Post("/v1/jobs", "{not json", "application/json")->status == 400);
    CHECK(client.Post("/v1/jobs", Json{{"condition", condition_json()}}.dump(), "application/json")->status == 400);
    CHECK(client.Post("/v1/jobs", Json{{"model_id", "nope"}, {"condition", condition_json()}}.dump(),
                      "application/json")
              ->status == 404);
    CHECK(client.Get("/v1/jobs/job-999")->status == 404);
    const Json bad_mask{{"model_id", "toy"}, {"condition", condition_json()}, {"mask", {{"nodes", {{9, 1}}}}}};
    auto res = client.Post("/v1/jobs", bad_mask.dump(), "application/json");
    CHECK(res->status == 422);
    const Json err = Json::parse(res->body);
    CHECK(err.at("status") == 422);
    CHECK(err.contains("error"));
    const Json bad_steps{{"model_id", "toy"}, {"condition", condition_json()}, {"steps", 99}};
    CHECK(client.Post("/v1/jobs", bad_steps.dump(), "application/json")->status == 422);
  }

  SUBCASE("evaluate endpoint") {
    const Graph a = Graph::from_labels({1}, {}, kAlphabet), b = Graph::from_labels({2}, {}, kAlphabet);
    const Json body{{"samples", {to_json(a), to_json(a), to_json(b)}}, {"truth", to_json(b)}, {"k", {1, 3}}};
    auto res = client.Post("/v1/evaluate", body.dump(), "application/json");
    REQUIRE(res);
    CHECK(res->status == 200);
    const Json rep = Json::parse(res->body);
    CHECK(rep.at("per_k").at("1") == 0.0);
    CHECK(rep.at("per_k").at("3") == 1.0);
    CHECK(client.Post("/v1/evaluate", "[]", "application/json")->status == 400);
  }

  SUBCASE("CORS preflight") {
    auto res = client.Options("/v1/jobs");
    REQUIRE(res);
    CHECK(res->status == 204);
    CHECK(res->has_header("Access-Control-Allow-Methods"));
  }

  service.stop();
}

TEST_CASE("bounded queue refuses work when full") {
  Service service(ServiceOptions{1, 2, "*"});
  Checkpoint ck = small_checkpoint();
  ck.diffusion.steps = 100;
  service.add_model("slow", ck);
  const Json body{{"model_id", "slow"}, {"condition", condition_json()}, {"n", 40}};
  int refused = 0;
  std::vector<std::string> ids;
  for (int i = 0; i < 6; ++i) {
    try {
      ids.push_back(service.submit(body));
    } catch (const ServiceError& e) {
      CHECK(e.status() == 503);
      ++refused;
    }
  }
  CHECK(refused > 0);
  for (const auto& id : ids) CHECK(service.wait(id).state == JobState::done);
  service.stop();
}

TEST_CASE("job states move forward only") {
  Service service;
  service.add_model("toy", small_checkpoint());
  const std::string id = service.submit(Json{{"model_id", "toy"}, {"condition", condition_json()}, {"n", 2}});
  const JobSnapshot first = service.job(id);
  CHECK((first.state == JobState::queued || first.state == JobState::running || first.state == JobState::done));
  const JobSnapshot last = service.wait(id);
  CHECK(last.state == JobState::done);
  CHECK(service.job(id).state == JobState::done);
  CHECK_THROWS_AS(service.job("job-0"), ServiceError);
  service.stop();
}
