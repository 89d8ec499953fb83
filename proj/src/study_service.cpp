#include "simpeval/study_service.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "simpeval/rng.hpp"

namespace simpeval::study {

using nlohmann::json;
using Kind = StudyError::Kind;

std::string_view StudyError::kind_name() const {
  switch (kind_) {
    case Kind::StudyComplete: return "study_complete";
    case Kind::DuplicateParticipantCondition: return "duplicate_participant_condition";
    case Kind::UnknownSession: return "unknown_session";
    case Kind::UnknownQuestion: return "unknown_question";
    case Kind::AlreadyAnswered: return "already_answered";
    case Kind::PositionOutOfRange: return "position_out_of_range";
    case Kind::IncompleteSession: return "incomplete_session";
    case Kind::SessionClosed: return "session_closed";
    case Kind::BadRequest: return "bad_request";
    case Kind::Storage: return "storage";
  }
  return "error";
}

std::string_view to_string(SessionState s) {
  switch (s) {
    case SessionState::Open: return "open";
    case SessionState::Submitted: return "submitted";
    case SessionState::Rejected: return "rejected";
  }
  return "open";
}

std::size_t Session::answered() const {
  return static_cast<std::size_t>(std::count_if(
      questions.begin(), questions.end(), [](const SessionQuestion& q) { return q.answer.has_value(); }));
}

namespace {

json key_json(const PassageKey& k) {
  return {{"article_id", k.article_id}, {"paragraph_id", k.paragraph_id}};
}

PassageKey key_from(const json& j) {
  return {j.at("article_id").get<std::string>(), j.at("paragraph_id").get<std::string>()};
}

json order_json(const std::array<Label, 5>& order) {
  json a = json::array();
  for (Label l : order) a.push_back(std::string(to_string(l)));
  return a;
}

std::array<Label, 5> order_from(const json& j) {
  std::array<Label, 5> out{};
  for (std::size_t i = 0; i < 5; ++i) out[i] = label_or_throw(j.at(i).get<std::string>());
  return out;
}

std::string session_name(std::uint64_t n) {
  std::ostringstream os;
  os << "s" << std::setw(5) << std::setfill('0') << n;
  return os.str();
}

}  // namespace

json session_to_json(const Session& s) {
  json qs = json::array();
  for (const auto& q : s.questions)
    qs.push_back({{"article_id", q.passage.article_id},
                  {"paragraph_id", q.passage.paragraph_id},
                  {"question_id", q.question_id},
                  {"presented_order", order_json(q.presented_order)},
                  {"round", q.round}});
  json passages = json::array();
  for (const auto& p : s.passages) passages.push_back(key_json(p));
  return {{"session_id", s.session_id},
          {"participant_id", s.participant_id},
          {"condition", s.condition},
          {"created_at", s.created_at},
          {"passages", passages},
          {"questions", qs}};
}

StudyService::StudyService(const corpus::Corpus& corpus, StudyConfig config)
    : corpus_(corpus), config_(std::move(config)) {
  if (config_.session_size == 0) throw std::invalid_argument("session size must be positive");
  for (const auto& c : corpus_.conditions())
    for (const auto& key : corpus_.passages_for(c.id)) cells_[{c.id, key}] = CellState{};
  if (!config_.log_path.empty()) {
    replay();
    log_fd_ = ::open(config_.log_path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    if (log_fd_ < 0)
      throw StudyError(Kind::Storage, "cannot open record log " + config_.log_path.string() +
                                          ": " + std::strerror(errno));
  }
}

StudyService::~StudyService() {
  if (log_fd_ >= 0) ::close(log_fd_);
}

std::int64_t StudyService::now() const {
  if (config_.clock) return config_.clock();
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

void StudyService::append(const json& event) {
  if (log_fd_ < 0) return;
  const std::string line = event.dump() + "\n";
  std::size_t written = 0;
  while (written < line.size()) {
    const ssize_t n = ::write(log_fd_, line.data() + written, line.size() - written);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw StudyError(Kind::Storage, std::string("record log write failed: ") + std::strerror(errno));
    }
    written += static_cast<std::size_t>(n);
  }
  if (config_.fsync && ::fsync(log_fd_) != 0)
    throw StudyError(Kind::Storage, std::string("record log fsync failed: ") + std::strerror(errno));
}

void StudyService::replay() {
  std::ifstream in(config_.log_path, std::ios::binary);
  if (!in) return;
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    json event = json::parse(lines[i], nullptr, false);
    if (event.is_discarded()) {
      // Only the final line may be torn by a crash mid-append.
      if (i + 1 == lines.size()) break;
      throw StudyError(Kind::Storage, "corrupt record log at line " + std::to_string(i + 1));
    }
    apply(event);
  }
}

// Applies one logged event to the in-memory state. Callers validate first.
void StudyService::apply(const json& e) {
  const std::string type = e.at("type").get<std::string>();
  if (type == "session") {
    Session s;
    s.session_id = e.at("session_id").get<std::string>();
    s.participant_id = e.at("participant_id").get<std::string>();
    s.condition = e.at("condition").get<std::string>();
    s.created_at = e.at("created_at").get<std::int64_t>();
    for (const auto& p : e.at("passages")) s.passages.push_back(key_from(p));
    for (const auto& q : e.at("questions")) {
      SessionQuestion sq;
      sq.passage = key_from(q);
      sq.question_id = q.at("question_id").get<std::string>();
      sq.presented_order = order_from(q.at("presented_order"));
      sq.round = q.at("round").get<int>();
      s.questions.push_back(std::move(sq));
    }
    for (const auto& p : s.passages) ++cells_[{s.condition, p}].assigned;
    served_[s.participant_id].insert(s.condition);
    session_counter_ = std::max(session_counter_, e.value("seq", session_counter_ + 1));
    sessions_[s.session_id] = std::move(s);
  } else if (type == "answer") {
    auto rec = humaneval::record_from_json(e.at("record"));
    auto& s = sessions_.at(rec.session_id);
    for (auto& q : s.questions)
      if (q.passage == rec.passage && q.question_id == rec.question_id) q.answer = rec;
  } else if (type == "finalize") {
    auto& s = sessions_.at(e.at("session_id").get<std::string>());
    s.state = SessionState::Submitted;
    s.submitted_at = e.at("submitted_at").get<std::int64_t>();
    s.flagged = e.at("flagged").get<bool>();
    std::vector<AnnotationRecord> recs;
    for (const auto& q : s.questions)
      if (q.answer) recs.push_back(*q.answer);
    s.quality = humaneval::assess_session(recs, config_.quality);
  } else if (type == "reject") {
    auto& s = sessions_.at(e.at("session_id").get<std::string>());
    if (s.state != SessionState::Rejected) {
      for (const auto& p : s.passages) --cells_[{s.condition, p}].assigned;
      s.state = SessionState::Rejected;
    }
  } else if (type == "approve") {
    sessions_.at(e.at("session_id").get<std::string>()).flagged = false;
  } else if (type == "agreement_round") {
    for (const auto& p : e.at("passages")) {
      const auto key = key_from(p);
      for (const auto& c : corpus_.conditions()) {
        auto it = cells_.find({c.id, key});
        if (it != cells_.end()) it->second.target = std::max(it->second.target, 2);
      }
    }
  } else {
    throw StudyError(Kind::Storage, "unknown log event '" + type + "'");
  }
}

Session& StudyService::session_or_throw(const std::string& id) {
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw StudyError(Kind::UnknownSession, "unknown session " + id);
  return it->second;
}

const Session& StudyService::session_or_throw(const std::string& id) const {
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw StudyError(Kind::UnknownSession, "unknown session " + id);
  return it->second;
}

std::size_t StudyService::uncovered_passages(const std::string& condition) const {
  std::size_t n = 0;
  for (const auto& [key, cell] : cells_)
    if (key.first == condition && cell.assigned < cell.target) ++n;
  return n;
}

Session StudyService::create_session(const std::string& participant_id) {
  if (participant_id.empty()) throw StudyError(Kind::BadRequest, "participant_id is required");
  std::unique_lock lock(mutex_);

  const std::uint64_t seq = session_counter_ + 1;
  Rng rng(derive_seed(config_.seed, seq));

  const auto& served = served_[participant_id];
  std::size_t best = 0;
  std::vector<std::string> candidates;
  bool any_uncovered = false;
  for (const auto& c : corpus_.conditions()) {
    const std::size_t n = uncovered_passages(c.id);
    if (n == 0) continue;
    any_uncovered = true;
    if (served.count(c.id)) continue;
    if (n > best) {
      best = n;
      candidates.clear();
    }
    if (n == best) candidates.push_back(c.id);
  }
  if (!any_uncovered) throw StudyError(Kind::StudyComplete, "every cell is covered");
  if (candidates.empty())
    throw StudyError(Kind::DuplicateParticipantCondition,
                     "participant " + participant_id + " already served every open condition");
  const std::string condition = candidates[rng.below(candidates.size())];

  std::vector<PassageKey> open;
  for (const auto& [key, cell] : cells_)
    if (key.first == condition && cell.assigned < cell.target) open.push_back(key.second);
  std::vector<PassageKey> chosen;
  for (std::size_t i : rng.sample_without_replacement(open.size(), config_.session_size))
    chosen.push_back(open[i]);

  Session s;
  s.session_id = session_name(seq);
  s.participant_id = participant_id;
  s.condition = condition;
  s.passages = chosen;
  s.created_at = now();
  const std::uint64_t session_seed = derive_seed(config_.seed, hash_string(s.session_id));
  std::uint64_t stream = 0;
  for (const auto& key : chosen) {
    const int round = cells_.at({condition, key}).assigned + 1;
    for (const auto* q : corpus_.questions_for(key)) {
      SessionQuestion sq;
      sq.passage = key;
      sq.question_id = q->question_id;
      sq.round = round;
      sq.presented_order = {Label::A, Label::B, Label::C, Label::D, Label::UA};
      Rng order_rng(derive_seed(session_seed, stream++));
      const std::size_t shuffled = config_.shuffle_ua ? 5 : 4;
      order_rng.shuffle(std::span<Label>(sq.presented_order.data(), shuffled));
      s.questions.push_back(sq);
    }
  }

  json event = session_to_json(s);
  event["type"] = "session";
  event["seq"] = seq;
  append(event);
  apply(event);
  return sessions_.at(s.session_id);
}

AnnotationRecord StudyService::submit_answer(const std::string& session_id,
                                             const PassageKey& passage,
                                             const std::string& question_id, int position,
                                             std::int64_t elapsed_ms) {
  std::unique_lock lock(mutex_);
  auto& s = session_or_throw(session_id);
  if (s.state != SessionState::Open)
    throw StudyError(Kind::SessionClosed, "session " + session_id + " is " +
                                              std::string(to_string(s.state)));
  auto q = std::find_if(s.questions.begin(), s.questions.end(), [&](const SessionQuestion& x) {
    return x.passage == passage && x.question_id == question_id;
  });
  if (q == s.questions.end())
    throw StudyError(Kind::UnknownQuestion,
                     "question " + passage.str() + "#" + question_id + " is not in this session");
  if (position < 1 || position > 5)
    throw StudyError(Kind::PositionOutOfRange, "position must be in 1..5");
  if (elapsed_ms < 0) throw StudyError(Kind::BadRequest, "elapsed_ms must be non-negative");

  const Label selected = q->presented_order[static_cast<std::size_t>(position - 1)];
  if (q->answer) {
    if (q->answer->selected == selected) return *q->answer;
    throw StudyError(Kind::AlreadyAnswered, "question " + question_id + " was already answered");
  }

  AnnotationRecord r;
  r.session_id = s.session_id;
  r.participant_id = s.participant_id;
  r.condition = s.condition;
  r.passage = passage;
  r.question_id = question_id;
  r.selected = selected;
  r.presented_order = q->presented_order;
  r.elapsed_ms = elapsed_ms;
  r.round = q->round;

  json event = {{"type", "answer"}, {"record", humaneval::to_json(r)}};
  append(event);
  q->answer = r;
  return r;
}

FinalizeResult StudyService::finalize_session(const std::string& session_id) {
  std::unique_lock lock(mutex_);
  auto& s = session_or_throw(session_id);
  if (s.state == SessionState::Rejected)
    throw StudyError(Kind::SessionClosed, "session " + session_id + " was rejected");
  if (s.state == SessionState::Submitted) return {s.state, *s.quality, s.flagged};
  const std::size_t answered = s.answered();
  if (answered < s.questions.size())
    throw StudyError(Kind::IncompleteSession, std::to_string(answered) + " of " +
                                                  std::to_string(s.questions.size()) +
                                                  " questions answered");
  std::vector<AnnotationRecord> recs;
  for (const auto& q : s.questions) recs.push_back(*q.answer);
  const auto quality = humaneval::assess_session(recs, config_.quality);

  json event = {{"type", "finalize"},
                {"session_id", session_id},
                {"submitted_at", now()},
                {"flagged", quality.flagged()}};
  append(event);
  apply(event);
  return {s.state, *s.quality, s.flagged};
}

void StudyService::reject_session(const std::string& session_id) {
  std::unique_lock lock(mutex_);
  const auto& s = session_or_throw(session_id);
  if (s.state == SessionState::Rejected) return;
  json event = {{"type", "reject"}, {"session_id", session_id}};
  append(event);
  apply(event);
}

void StudyService::approve_session(const std::string& session_id) {
  std::unique_lock lock(mutex_);
  const auto& s = session_or_throw(session_id);
  if (s.state != SessionState::Submitted)
    throw StudyError(Kind::SessionClosed, "only submitted sessions can be approved");
  json event = {{"type", "approve"}, {"session_id", session_id}};
  append(event);
  apply(event);
}

void StudyService::open_agreement_round(const std::vector<PassageKey>& passages) {
  std::unique_lock lock(mutex_);
  json keys = json::array();
  for (const auto& p : passages) {
    const auto& keys_all = corpus_.passage_keys();
    if (std::find(keys_all.begin(), keys_all.end(), p) == keys_all.end())
      throw StudyError(Kind::BadRequest, "unknown passage " + p.str());
    keys.push_back(key_json(p));
  }
  json event = {{"type", "agreement_round"}, {"passages", keys}};
  append(event);
  apply(event);
}

Session StudyService::get_session(const std::string& session_id) const {
  std::shared_lock lock(mutex_);
  return session_or_throw(session_id);
}

std::vector<Session> StudyService::sessions() const {
  std::shared_lock lock(mutex_);
  std::vector<Session> out;
  for (const auto& [id, s] : sessions_) out.push_back(s);
  return out;
}

Coverage StudyService::coverage() const {
  std::shared_lock lock(mutex_);
  Coverage c;
  for (const auto& [key, cell] : cells_)
    c.cells += static_cast<std::size_t>(cell.target) * corpus_.questions_for(key.second).size();
  for (const auto& [id, s] : sessions_) {
    if (s.state == SessionState::Submitted) c.accepted += s.questions.size();
    else if (s.state == SessionState::Open) c.reserved += s.questions.size();
  }
  return c;
}

bool StudyService::complete() const {
  const auto c = coverage();
  return c.reserved == 0 && c.remaining() == 0;
}

std::vector<AnnotationRecord> StudyService::accepted_records() const {
  std::shared_lock lock(mutex_);
  std::vector<AnnotationRecord> out;
  for (const auto& [id, s] : sessions_) {
    if (s.state != SessionState::Submitted) continue;
    for (const auto& q : s.questions)
      if (q.answer) out.push_back(*q.answer);
  }
  std::sort(out.begin(), out.end(), [](const AnnotationRecord& a, const AnnotationRecord& b) {
    return std::tie(a.condition, a.passage, a.question_id, a.round, a.session_id) <
           std::tie(b.condition, b.passage, b.question_id, b.round, b.session_id);
  });
  return out;
}

void StudyService::export_annotations(std::ostream& out) const {
  humaneval::write_annotations(accepted_records(), out);
}

}  // namespace simpeval::study
