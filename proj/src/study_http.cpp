#include "simpeval/study_http.hpp"

#include <sstream>

#include <httplib.h>

namespace simpeval::study {

using nlohmann::json;
using Kind = StudyError::Kind;

int http_status(Kind kind) {
  switch (kind) {
    case Kind::UnknownSession:
    case Kind::UnknownQuestion: return 404;
    case Kind::PositionOutOfRange:
    case Kind::BadRequest: return 400;
    case Kind::StudyComplete:
    case Kind::DuplicateParticipantCondition:
    case Kind::AlreadyAnswered:
    case Kind::IncompleteSession:
    case Kind::SessionClosed: return 409;
    case Kind::Storage: return 500;
  }
  return 500;
}

json participant_view(const StudyService& service, const Session& s) {
  const auto& corpus = service.corpus();
  json passages = json::array();
  for (const auto& key : s.passages) {
    json questions = json::array();
    for (const auto& q : s.questions) {
      if (!(q.passage == key)) continue;
      const auto* rc = corpus.find_question(key, q.question_id);
      json options = json::array();
      for (std::size_t i = 0; i < q.presented_order.size(); ++i) {
        const Label l = q.presented_order[i];
        options.push_back({{"position", i + 1},
                           {"text", l == Label::UA ? std::string(kUnanswerableText) : rc->option(l)}});
      }
      json item = {{"question_id", q.question_id},
                   {"stem", rc->stem},
                   {"options", options},
                   {"answered", q.answer.has_value()}};
      if (q.answer) item["selected_position"] = q.answer->selected_position();
      questions.push_back(std::move(item));
    }
    passages.push_back({{"article_id", key.article_id},
                        {"paragraph_id", key.paragraph_id},
                        {"text", corpus.text(key, s.condition)},
                        {"questions", questions}});
  }
  return {{"session_id", s.session_id},
          {"participant_id", s.participant_id},
          {"state", std::string(to_string(s.state))},
          {"answered", s.answered()},
          {"total", s.questions.size()},
          {"passages", passages}};
}

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view kind, const std::string& msg) {
  send_json(res, status, {{"error", std::string(kind)}, {"message", msg}});
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  json body = json::parse(req.body, nullptr, false);
  if (body.is_discarded() || !body.is_object())
    throw StudyError(Kind::BadRequest, "request body must be a JSON object");
  return body;
}

template <typename T>
T field(const json& body, const char* key) {
  auto it = body.find(key);
  if (it == body.end()) throw StudyError(Kind::BadRequest, std::string("missing field '") + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw StudyError(Kind::BadRequest, std::string("field '") + key + "' has the wrong type");
  }
}

}  // namespace

StudyHttpServer::StudyHttpServer(StudyService& service, HttpOptions options)
    : service_(service), options_(std::move(options)), server_(std::make_unique<httplib::Server>()) {
  // Small JSON replies; without this Nagle plus delayed ACKs adds ~40 ms per request.
  server_->set_tcp_nodelay(true);
  auto guarded = [](auto handler) {
    return [handler](const httplib::Request& req, httplib::Response& res) {
      try {
        handler(req, res);
      } catch (const StudyError& e) {
        send_error(res, http_status(e.kind()), e.kind_name(), e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, "internal", e.what());
      }
    };
  };
  auto admin = [this, guarded](auto handler) {
    return guarded([this, handler](const httplib::Request& req, httplib::Response& res) {
      if (options_.admin_token.empty()) {
        send_error(res, 403, "forbidden", "admin routes are disabled");
        return;
      }
      std::string token = req.get_header_value("X-Admin-Token");
      const std::string auth = req.get_header_value("Authorization");
      if (token.empty() && auth.rfind("Bearer ", 0) == 0) token = auth.substr(7);
      if (token != options_.admin_token) {
        send_error(res, 401, "unauthorized", "admin token required");
        return;
      }
      handler(req, res);
    });
  };

  server_->Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const json body = parse_body(req);
    const auto s = service_.create_session(field<std::string>(body, "participant_id"));
    send_json(res, 201, participant_view(service_, s));
  }));

  server_->Get(R"(/sessions/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
    send_json(res, 200, participant_view(service_, service_.get_session(req.matches[1])));
  }));

  server_->Post(R"(/sessions/([^/]+)/answers)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
    const json body = parse_body(req);
    const json passage = field<json>(body, "passage");
    if (!passage.is_object()) throw StudyError(Kind::BadRequest, "passage must be an object");
    const PassageKey key{field<std::string>(passage, "article_id"),
                         field<std::string>(passage, "paragraph_id")};
    const auto rec = service_.submit_answer(req.matches[1], key,
                                            field<std::string>(body, "question_id"),
                                            field<int>(body, "position"),
                                            body.contains("elapsed_ms") ? field<std::int64_t>(body, "elapsed_ms") : 0);
    const auto s = service_.get_session(req.matches[1]);
    send_json(res, 200, {{"question_id", rec.question_id},
                         {"position", rec.selected_position()},
                         {"answered", s.answered()},
                         {"total", s.questions.size()}});
  }));

  server_->Post(R"(/sessions/([^/]+)/finalize)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
    const auto r = service_.finalize_session(req.matches[1]);
    // Quality details stay server-side; the participant only learns the outcome.
    send_json(res, 200, {{"state", std::string(to_string(r.state))}});
  }));

  server_->Post(R"(/sessions/([^/]+)/reject)", admin([this](const httplib::Request& req, httplib::Response& res) {
    service_.reject_session(req.matches[1]);
    send_json(res, 200, {{"state", "rejected"}});
  }));

  server_->Post(R"(/sessions/([^/]+)/approve)", admin([this](const httplib::Request& req, httplib::Response& res) {
    service_.approve_session(req.matches[1]);
    send_json(res, 200, {{"state", "submitted"}, {"flagged", false}});
  }));

  server_->Post("/agreement-round", admin([this](const httplib::Request& req, httplib::Response& res) {
    const json body = parse_body(req);
    std::vector<PassageKey> keys;
    for (const auto& p : field<json>(body, "passages"))
      keys.push_back({field<std::string>(p, "article_id"), field<std::string>(p, "paragraph_id")});
    service_.open_agreement_round(keys);
    send_json(res, 200, {{"passages", keys.size()}});
  }));

  server_->Get("/export", admin([this](const httplib::Request&, httplib::Response& res) {
    std::ostringstream os;
    service_.export_annotations(os);
    res.status = 200;
    res.set_content(os.str(), "application/x-ndjson");
  }));

  server_->Get("/status", admin([this](const httplib::Request&, httplib::Response& res) {
    const auto c = service_.coverage();
    json flagged = json::array();
    for (const auto& s : service_.sessions())
      if (s.flagged && s.state == SessionState::Submitted) flagged.push_back(s.session_id);
    send_json(res, 200, {{"cells", c.cells},
                         {"accepted", c.accepted},
                         {"reserved", c.reserved},
                         {"remaining", c.remaining()},
                         {"complete", service_.complete()},
                         {"flagged_sessions", flagged}});
  }));
}

StudyHttpServer::~StudyHttpServer() { stop(); }

int StudyHttpServer::bind(const std::string& host, int port) {
  if (port == 0) return server_->bind_to_any_port(host);
  return server_->bind_to_port(host, port) ? port : -1;
}

bool StudyHttpServer::listen_after_bind() { return server_->listen_after_bind(); }

void StudyHttpServer::stop() {
  if (server_) server_->stop();
}

void StudyHttpServer::wait_until_ready() const { server_->wait_until_ready(); }

}  // namespace simpeval::study
