#pragma once

#include <memory>
#include <string>

#include "simpeval/study_service.hpp"

namespace httplib {
class Server;
}

namespace simpeval::study {

struct HttpOptions {
  std::string admin_token;  // empty disables the admin routes
};

// JSON API used by the participant UI:
//   POST /sessions                     {"participant_id"}
//   GET  /sessions/{id}
//   POST /sessions/{id}/answers        {"passage":{article_id,paragraph_id},"question_id","position","elapsed_ms"}
//   POST /sessions/{id}/finalize
// Admin (X-Admin-Token or "Authorization: Bearer"):
//   POST /sessions/{id}/reject, POST /sessions/{id}/approve
//   POST /agreement-round              {"passages":[{article_id,paragraph_id}]}
//   GET  /export, GET /status
class StudyHttpServer {
 public:
  StudyHttpServer(StudyService& service, HttpOptions options = {});
  ~StudyHttpServer();

  // Returns the bound port, or -1.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  bool listen_after_bind();
  void stop();
  void wait_until_ready() const;

 private:
  StudyService& service_;
  HttpOptions options_;
  std::unique_ptr<httplib::Server> server_;
};

int http_status(StudyError::Kind kind);

// Participant view of a session: texts and options in presented order,
// without the correct label.
nlohmann::json participant_view(const StudyService& service, const Session& s);

}  // namespace simpeval::study
