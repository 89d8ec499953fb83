#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "simpeval/corpus.hpp"
#include "simpeval/humaneval.hpp"

namespace simpeval::study {

using corpus::PassageKey;
using humaneval::AnnotationRecord;

class StudyError : public std::runtime_error {
 public:
  enum class Kind {
    StudyComplete,
    DuplicateParticipantCondition,
    UnknownSession,
    UnknownQuestion,
    AlreadyAnswered,
    PositionOutOfRange,
    IncompleteSession,
    SessionClosed,
    BadRequest,
    Storage,
  };
  StudyError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }
  std::string_view kind_name() const;

 private:
  Kind kind_;
};

struct StudyConfig {
  std::size_t session_size = 6;  // passages per session
  std::uint64_t seed = 0;
  bool shuffle_ua = false;       // shuffle all five options instead of pinning UA last
  humaneval::QualityConfig quality;
  std::filesystem::path log_path;  // empty: keep records in memory only
  bool fsync = true;
  std::function<std::int64_t()> clock;  // ms since epoch; system clock when empty
};

enum class SessionState { Open, Submitted, Rejected };
std::string_view to_string(SessionState s);

struct SessionQuestion {
  PassageKey passage;
  std::string question_id;
  std::array<Label, 5> presented_order{};
  int round = 1;
  std::optional<AnnotationRecord> answer;
};

struct Session {
  std::string session_id;
  std::string participant_id;
  std::string condition;
  std::vector<PassageKey> passages;
  std::vector<SessionQuestion> questions;
  SessionState state = SessionState::Open;
  bool flagged = false;  // quality checks failed; awaiting manual review
  std::optional<humaneval::SessionQuality> quality;
  std::int64_t created_at = 0;
  std::optional<std::int64_t> submitted_at;

  std::size_t answered() const;
};

struct FinalizeResult {
  SessionState state = SessionState::Submitted;
  humaneval::SessionQuality quality;
  bool flagged = false;
};

struct Coverage {
  std::size_t cells = 0;       // (condition, passage, question) slots times their target
  std::size_t accepted = 0;    // filled by submitted, non-rejected sessions
  std::size_t reserved = 0;    // held by open sessions
  std::size_t remaining() const { return cells - accepted - reserved; }
};

// Runs the annotation study over an immutable corpus. Every state change is
// appended to the record log (and flushed) before it is applied in memory, so
// a restarted service replays the log into the same state.
class StudyService {
 public:
  StudyService(const corpus::Corpus& corpus, StudyConfig config);
  ~StudyService();
  StudyService(const StudyService&) = delete;
  StudyService& operator=(const StudyService&) = delete;

  // Assigns the condition with the most uncovered passages the participant
  // has not served yet and samples up to session_size of those passages.
  Session create_session(const std::string& participant_id);

  // position is 1-based in presented order. Resubmitting the same position
  // returns the stored record.
  AnnotationRecord submit_answer(const std::string& session_id, const PassageKey& passage,
                                 const std::string& question_id, int position,
                                 std::int64_t elapsed_ms);

  FinalizeResult finalize_session(const std::string& session_id);

  // Manual review outcomes. Rejection returns the session's passages to the
  // uncovered pool and drops its records from export.
  void reject_session(const std::string& session_id);
  void approve_session(const std::string& session_id);

  // Raises the per-cell target to 2 for these passages in every condition.
  void open_agreement_round(const std::vector<PassageKey>& passages);

  Session get_session(const std::string& session_id) const;
  std::vector<Session> sessions() const;
  Coverage coverage() const;
  bool complete() const;

  // Records of submitted, non-rejected sessions ordered by
  // (condition, passage, question, round).
  std::vector<AnnotationRecord> accepted_records() const;
  void export_annotations(std::ostream& out) const;

  const corpus::Corpus& corpus() const { return corpus_; }
  const StudyConfig& config() const { return config_; }

 private:
  struct CellState {
    int target = 1;
    int assigned = 0;  // open or submitted, non-rejected sessions holding it
  };

  void append(const nlohmann::json& event);
  void apply(const nlohmann::json& event);
  void replay();
  std::int64_t now() const;
  Session& session_or_throw(const std::string& id);
  const Session& session_or_throw(const std::string& id) const;
  std::size_t uncovered_passages(const std::string& condition) const;

  const corpus::Corpus& corpus_;
  StudyConfig config_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, Session> sessions_;
  std::map<std::pair<std::string, PassageKey>, CellState> cells_;
  std::map<std::string, std::set<std::string>> served_;  // participant -> conditions
  std::uint64_t session_counter_ = 0;
  int log_fd_ = -1;
};

nlohmann::json session_to_json(const Session& s);

}  // namespace simpeval::study
