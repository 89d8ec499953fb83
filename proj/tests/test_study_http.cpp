#include <doctest.h>

#include <httplib.h>

#include <set>
#include <sstream>
#include <thread>

#include "simpeval/study_http.hpp"
#include "support/fixtures.hpp"

using namespace simpeval;
using namespace simpeval::study;
using nlohmann::json;

namespace {

const corpus::Corpus& http_corpus() {
  static const auto c = testing::synthetic_corpus(12, 3, {"original", "elementary", "s1"});
  return c;
}

struct Running {
  StudyService service;
  StudyHttpServer server;
  std::thread thread;
  int port = -1;

  explicit Running(std::string token = "secret")
      : service(http_corpus(), [] {
          StudyConfig c;
          c.seed = 9;
          return c;
        }()),
        server(service, HttpOptions{std::move(token)}) {
    port = server.bind("127.0.0.1", 0);
    REQUIRE(port > 0);
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~Running() {
    server.stop();
    thread.join();
  }

  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(std::chrono::seconds(5));
    c.set_tcp_nodelay(true);
    return c;
  }
};

json body_of(const httplib::Result& r) {
  REQUIRE(r);
  return json::parse(r->body);
}

std::string post(const json& j) { return j.dump(); }

json answer_body(const json& passage, const json& q, int position) {
  return {{"passage", {{"article_id", passage["article_id"]}, {"paragraph_id", passage["paragraph_id"]}}},
          {"question_id", q["question_id"]},
          {"position", position},
          {"elapsed_ms", 20000}};
}

void collect_keys(const json& j, std::set<std::string>& keys) {
  if (j.is_object())
    for (const auto& [k, v] : j.items()) {
      keys.insert(k);
      collect_keys(v, keys);
    }
  else if (j.is_array())
    for (const auto& v : j) collect_keys(v, keys);
}

}  // namespace

TEST_CASE("participant flow over http") {
  Running run;
  auto cli = run.client();

  auto created = cli.Post("/sessions", post({{"participant_id", "p1"}}), "application/json");
  REQUIRE(created);
  CHECK(created->status == 201);
  const json view = json::parse(created->body);
  const std::string id = view["session_id"];
  CHECK(view["total"] == 18);
  CHECK(view["answered"] == 0);
  CHECK(view["state"] == "open");
  REQUIRE(view["passages"].size() == 6);
  for (const auto& p : view["passages"]) {
    CHECK_FALSE(p["text"].get<std::string>().empty());
    for (const auto& q : p["questions"]) CHECK(q["options"].size() == 5);
  }

  // The view never reveals which option is correct or how options are stored.
  std::set<std::string> keys;
  collect_keys(view, keys);
  for (const auto* banned : {"correct", "label", "presented_order", "condition", "selected"})
    CHECK(keys.count(banned) == 0);

  CHECK(body_of(cli.Get("/sessions/" + id))["session_id"] == id);

  // Finalizing early is refused.
  auto early = cli.Post("/sessions/" + id + "/finalize", "", "application/json");
  REQUIRE(early);
  CHECK(early->status == 409);
  CHECK(json::parse(early->body)["error"] == "incomplete_session");

  int n = 0;
  for (const auto& p : view["passages"])
    for (const auto& q : p["questions"]) {
      const int pos = n++ % 5 + 1;
      auto r = cli.Post("/sessions/" + id + "/answers", post(answer_body(p, q, pos)),
                        "application/json");
      REQUIRE(r);
      CHECK(r->status == 200);
      const auto j = json::parse(r->body);
      CHECK(j["position"] == pos);
      CHECK(j["answered"] == n);
    }

  // Same answer again is accepted, a different one conflicts.
  const auto& p0 = view["passages"][0];
  const auto& q0 = p0["questions"][0];
  CHECK(cli.Post("/sessions/" + id + "/answers", post(answer_body(p0, q0, 1)), "application/json")->status == 200);
  CHECK(cli.Post("/sessions/" + id + "/answers", post(answer_body(p0, q0, 2)), "application/json")->status == 409);

  const auto got = body_of(cli.Get("/sessions/" + id));
  CHECK(got["answered"] == 18);
  CHECK(got["passages"][0]["questions"][0]["selected_position"] == 1);

  auto fin = cli.Post("/sessions/" + id + "/finalize", "", "application/json");
  REQUIRE(fin);
  CHECK(fin->status == 200);
  const auto fj = json::parse(fin->body);
  CHECK(fj["state"] == "submitted");
  CHECK(fj.size() == 1);

  httplib::Headers admin = {{"X-Admin-Token", "secret"}};
  auto exported = cli.Get("/export", admin);
  REQUIRE(exported);
  CHECK(exported->status == 200);
  std::istringstream in(exported->body);
  const auto records = humaneval::parse_annotations(in);
  CHECK(records.size() == 18);
  CHECK(records == run.service.accepted_records());

  const auto status = body_of(cli.Get("/status", httplib::Headers{{"Authorization", "Bearer secret"}}));
  CHECK(status["accepted"] == 18);
  CHECK(status["cells"] == 108);
  CHECK(status["complete"] == false);
}

TEST_CASE("http error mapping") {
  Running run;
  auto cli = run.client();
  auto created = body_of(cli.Post("/sessions", post({{"participant_id", "p1"}}), "application/json"));
  const std::string id = created["session_id"];
  const auto& p = created["passages"][0];
  const auto& q = p["questions"][0];

  CHECK(cli.Get("/sessions/s99999")->status == 404);
  CHECK(json::parse(cli.Get("/sessions/s99999")->body)["error"] == "unknown_session");
  auto bad_q = answer_body(p, q, 1);
  bad_q["question_id"] = "zz";
  CHECK(cli.Post("/sessions/" + id + "/answers", post(bad_q), "application/json")->status == 404);
  CHECK(cli.Post("/sessions/" + id + "/answers", post(answer_body(p, q, 7)), "application/json")->status == 400);
  CHECK(cli.Post("/sessions/" + id + "/answers", "not json", "application/json")->status == 400);
  auto missing = answer_body(p, q, 1);
  missing.erase("position");
  CHECK(cli.Post("/sessions/" + id + "/answers", post(missing), "application/json")->status == 400);
  CHECK(cli.Post("/sessions", post({{"participant_id", 5}}), "application/json")->status == 400);
  CHECK(cli.Post("/sessions", "{}", "application/json")->status == 400);

  // Admin routes.
  CHECK(cli.Get("/export")->status == 401);
  CHECK(cli.Get("/export", httplib::Headers{{"X-Admin-Token", "wrong"}})->status == 401);
  httplib::Headers admin = {{"X-Admin-Token", "secret"}};
  CHECK(cli.Post("/sessions/" + id + "/approve", admin, "", "application/json")->status == 409);
  CHECK(cli.Post("/sessions/" + id + "/reject", admin, "", "application/json")->status == 200);
  CHECK(cli.Post("/sessions/" + id + "/answers", post(answer_body(p, q, 1)), "application/json")->status == 409);
  CHECK(cli.Post("/agreement-round", admin,
                 post({{"passages", {{{"article_id", "nope"}, {"paragraph_id", "p1"}}}}}),
                 "application/json")->status == 400);
  const auto round = cli.Post("/agreement-round", admin,
                              post({{"passages", {{{"article_id", p["article_id"]},
                                                   {"paragraph_id", p["paragraph_id"]}}}}}),
                              "application/json");
  CHECK(round->status == 200);
  CHECK(body_of(cli.Get("/status", admin))["cells"] == 108 + 9);
}

TEST_CASE("admin routes are off without a token") {
  Running run("");
  auto cli = run.client();
  CHECK(cli.Get("/export")->status == 403);
  CHECK(cli.Get("/status", httplib::Headers{{"X-Admin-Token", ""}})->status == 403);
}

TEST_CASE("study completion over http") {
  Running run;
  auto cli = run.client();
  for (int i = 0; i < 6; ++i) {
    auto r = cli.Post("/sessions", post({{"participant_id", "p" + std::to_string(i)}}), "application/json");
    REQUIRE(r);
    CHECK(r->status == 201);
  }
  auto full = cli.Post("/sessions", post({{"participant_id", "late"}}), "application/json");
  REQUIRE(full);
  CHECK(full->status == 409);
  CHECK(json::parse(full->body)["error"] == "study_complete");
}

TEST_CASE("status code table") {
  CHECK(http_status(StudyError::Kind::Storage) == 500);
  CHECK(http_status(StudyError::Kind::DuplicateParticipantCondition) == 409);
  CHECK(http_status(StudyError::Kind::UnknownQuestion) == 404);
}
