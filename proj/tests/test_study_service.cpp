#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "simpeval/rng.hpp"
#include "simpeval/study_service.hpp"
#include "support/fixtures.hpp"

using namespace simpeval;
using namespace simpeval::study;

namespace {

StudyConfig config(std::uint64_t seed = 3) {
  StudyConfig c;
  c.seed = seed;
  c.clock = [] { return std::int64_t{1700000000000}; };
  return c;
}

int position_of(const SessionQuestion& q, Label l) {
  for (std::size_t i = 0; i < 5; ++i)
    if (q.presented_order[i] == l) return static_cast<int>(i) + 1;
  return -1;
}

// Answers every question, cycling through the labels so no session straightlines.
void answer_all(StudyService& svc, const Session& s, std::int64_t elapsed = 20000) {
  std::size_t i = 0;
  for (const auto& q : s.questions) {
    const Label l = kAllLabels[i++ % 5];
    svc.submit_answer(s.session_id, q.passage, q.question_id, position_of(q, l), elapsed);
  }
}

StudyError::Kind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const StudyError& e) {
    return e.kind();
  }
  FAIL("expected a StudyError");
  return StudyError::Kind::BadRequest;
}

std::filesystem::path tmp_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / "simpeval_study_test" / name;
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

// Drives the study to completion with one fresh participant per session.
std::size_t run_study(StudyService& svc, const std::string& prefix = "p") {
  std::size_t n = 0;
  for (;;) {
    Session s;
    try {
      s = svc.create_session(prefix + std::to_string(n));
    } catch (const StudyError& e) {
      if (e.kind() == StudyError::Kind::StudyComplete) return n;
      throw;
    }
    answer_all(svc, s);
    svc.finalize_session(s.session_id);
    ++n;
  }
}

const corpus::Corpus& study_corpus() {
  static const auto c = testing::synthetic_corpus(60, 3, testing::study_conditions());
  return c;
}

}  // namespace

TEST_CASE("session shape") {
  StudyService svc(study_corpus(), config());
  const auto s = svc.create_session("p1");
  CHECK(s.session_id == "s00001");
  CHECK(s.state == SessionState::Open);
  CHECK(s.passages.size() == 6);
  CHECK(std::set<corpus::PassageKey>(s.passages.begin(), s.passages.end()).size() == 6);
  CHECK(s.questions.size() == 18);
  CHECK(study_corpus().has_condition(s.condition));
  for (const auto& q : s.questions) {
    CHECK(q.presented_order[4] == Label::UA);
    std::set<Label> seen(q.presented_order.begin(), q.presented_order.end());
    CHECK(seen.size() == 5);
    CHECK(q.round == 1);
  }
  // The next session goes to a different, fully uncovered condition.
  const auto s2 = svc.create_session("p2");
  CHECK(s2.session_id == "s00002");
  CHECK(s2.condition != s.condition);
  CHECK(kind_of([&] { svc.create_session(""); }) == StudyError::Kind::BadRequest);
}

TEST_CASE("presented order is shuffled across questions") {
  StudyConfig c = config();
  c.shuffle_ua = true;
  StudyService svc(study_corpus(), c);
  std::set<std::array<Label, 5>> orders;
  bool ua_moved = false;
  for (int i = 0; i < 5; ++i)
    for (const auto& q : svc.create_session("p" + std::to_string(i)).questions) {
      orders.insert(q.presented_order);
      ua_moved |= q.presented_order[4] != Label::UA;
    }
  CHECK(orders.size() > 10);
  CHECK(ua_moved);
}

TEST_CASE("full study covers every cell once") {
  StudyService svc(study_corpus(), config());
  const auto before = svc.coverage();
  CHECK(before.cells == 1980);
  CHECK(before.remaining() == 1980);
  CHECK(run_study(svc) == 110);
  CHECK(svc.complete());
  const auto records = svc.accepted_records();
  CHECK(records.size() == 1980);
  std::set<std::tuple<std::string, corpus::PassageKey, std::string>> cells;
  for (const auto& r : records) cells.insert({r.condition, r.passage, r.question_id});
  CHECK(cells.size() == 1980);
  CHECK(kind_of([&] { svc.create_session("late"); }) == StudyError::Kind::StudyComplete);

  std::ostringstream out;
  svc.export_annotations(out);
  std::istringstream in(out.str());
  const auto back = humaneval::parse_annotations(in);
  CHECK(back == records);
}

TEST_CASE("a participant sees each condition at most once") {
  StudyService svc(study_corpus(), config());
  std::set<std::string> conds;
  for (int i = 0; i < 11; ++i) {
    const auto s = svc.create_session("same");
    conds.insert(s.condition);
  }
  CHECK(conds.size() == 11);
  CHECK(kind_of([&] { svc.create_session("same"); }) ==
        StudyError::Kind::DuplicateParticipantCondition);
  CHECK_NOTHROW(svc.create_session("other"));
}

TEST_CASE("assignment is reproducible from the seed") {
  auto transcript = [](std::uint64_t seed) {
    StudyService svc(study_corpus(), config(seed));
    std::string t;
    for (int i = 0; i < 20; ++i) t += session_to_json(svc.create_session("p" + std::to_string(i % 4))).dump();
    return t;
  };
  CHECK(transcript(5) == transcript(5));
  CHECK(transcript(5) != transcript(6));
}

TEST_CASE("answer positions map to stored labels") {
  StudyService svc(study_corpus(), config());
  const auto s = svc.create_session("p");
  const auto& q = s.questions[0];
  const int pos_a = position_of(q, Label::A);
  const auto r = svc.submit_answer(s.session_id, q.passage, q.question_id, pos_a, 15000);
  CHECK(r.selected == Label::A);
  CHECK(r.selected_position() == static_cast<std::size_t>(pos_a));
  CHECK(r.round == 1);
  CHECK(r.condition == s.condition);
  // Repeating the same answer is harmless; changing it is not.
  CHECK(svc.submit_answer(s.session_id, q.passage, q.question_id, pos_a, 99) == r);
  CHECK(kind_of([&] {
          svc.submit_answer(s.session_id, q.passage, q.question_id, pos_a % 5 + 1, 1);
        }) == StudyError::Kind::AlreadyAnswered);

  const auto& q2 = s.questions[1];
  CHECK(svc.submit_answer(s.session_id, q2.passage, q2.question_id, 5, 1).selected == Label::UA);
  const auto& q3 = s.questions[2];
  CHECK(kind_of([&] { svc.submit_answer(s.session_id, q3.passage, q3.question_id, 0, 1); }) ==
        StudyError::Kind::PositionOutOfRange);
  CHECK(kind_of([&] { svc.submit_answer(s.session_id, q3.passage, q3.question_id, 6, 1); }) ==
        StudyError::Kind::PositionOutOfRange);
  CHECK(kind_of([&] { svc.submit_answer(s.session_id, q3.passage, "nope", 1, 1); }) ==
        StudyError::Kind::UnknownQuestion);
  CHECK(kind_of([&] { svc.submit_answer("s99999", q3.passage, q3.question_id, 1, 1); }) ==
        StudyError::Kind::UnknownSession);
  CHECK(kind_of([&] { svc.submit_answer(s.session_id, q3.passage, q3.question_id, 1, -1); }) ==
        StudyError::Kind::BadRequest);
  CHECK(svc.get_session(s.session_id).answered() == 2);
}

TEST_CASE("finalize and review") {
  StudyService svc(study_corpus(), config());

  SUBCASE("incomplete") {
    const auto s = svc.create_session("p");
    for (std::size_t i = 0; i + 1 < s.questions.size(); ++i)
      svc.submit_answer(s.session_id, s.questions[i].passage, s.questions[i].question_id, 1, 20000);
    CHECK(kind_of([&] { svc.finalize_session(s.session_id); }) ==
          StudyError::Kind::IncompleteSession);
    CHECK(svc.accepted_records().empty());
  }
  SUBCASE("clean") {
    const auto s = svc.create_session("p");
    answer_all(svc, s);
    const auto f = svc.finalize_session(s.session_id);
    CHECK(f.state == SessionState::Submitted);
    CHECK_FALSE(f.flagged);
    CHECK(f.quality.answers == 18);
    CHECK(svc.finalize_session(s.session_id).state == SessionState::Submitted);
    CHECK(svc.accepted_records().size() == 18);
    const auto& q = s.questions[0];
    CHECK(kind_of([&] { svc.submit_answer(s.session_id, q.passage, q.question_id, 1, 1); }) ==
          StudyError::Kind::SessionClosed);
  }
  SUBCASE("straightlining is flagged but kept until rejected") {
    const auto s = svc.create_session("p");
    for (const auto& q : s.questions) svc.submit_answer(s.session_id, q.passage, q.question_id, 2, 20000);
    const auto f = svc.finalize_session(s.session_id);
    CHECK(f.flagged);
    CHECK(f.quality.straightlining);
    CHECK(svc.accepted_records().size() == 18);
    svc.approve_session(s.session_id);
    CHECK_FALSE(svc.get_session(s.session_id).flagged);
  }
  SUBCASE("too fast") {
    const auto s = svc.create_session("p");
    answer_all(svc, s, 500);
    const auto f = svc.finalize_session(s.session_id);
    CHECK(f.flagged);
    CHECK(f.quality.too_fast);
  }
  SUBCASE("rejection releases the cells") {
    const auto s = svc.create_session("p");
    answer_all(svc, s);
    svc.finalize_session(s.session_id);
    for (int i = 0; i < 10; ++i) svc.create_session("o" + std::to_string(i));
    const auto held = svc.coverage();
    svc.reject_session(s.session_id);
    CHECK(svc.accepted_records().empty());
    CHECK(svc.coverage().remaining() == held.remaining() + 18);
    CHECK(kind_of([&] { svc.finalize_session(s.session_id); }) == StudyError::Kind::SessionClosed);
    CHECK(kind_of([&] { svc.approve_session(s.session_id); }) == StudyError::Kind::SessionClosed);
    // The released condition is the most uncovered again and gets reassigned.
    CHECK(svc.create_session("q").condition == s.condition);
  }
}

TEST_CASE("export of an empty study") {
  StudyService svc(study_corpus(), config());
  std::ostringstream out;
  svc.export_annotations(out);
  CHECK(out.str().empty());
}

TEST_CASE("agreement round") {
  StudyService svc(study_corpus(), config());
  const auto keys = study_corpus().passage_keys();
  const std::vector<corpus::PassageKey> doubled(keys.begin(), keys.begin() + 6);
  svc.open_agreement_round(doubled);
  CHECK(svc.coverage().cells == 1980 + 11 * 6 * 3);
  run_study(svc);
  CHECK(svc.complete());
  const auto records = svc.accepted_records();
  CHECK(records.size() == 1980 + 11 * 6 * 3);
  std::size_t second = 0;
  for (const auto& r : records) {
    if (r.round == 2) {
      ++second;
      CHECK(std::find(doubled.begin(), doubled.end(), r.passage) != doubled.end());
    }
  }
  CHECK(second == 11 * 6 * 3);
  CHECK(kind_of([&] { svc.open_agreement_round({{"zz", "p9"}}); }) == StudyError::Kind::BadRequest);
}

TEST_CASE("coverage stays consistent under random operations") {
  Rng rng(77);
  for (int trial = 0; trial < 5; ++trial) {
    const auto corpus = testing::synthetic_corpus(12, 2, {"original", "elementary", "s1", "s2"},
                                                  static_cast<std::uint64_t>(trial));
    StudyService svc(corpus, config(static_cast<std::uint64_t>(trial)));
    std::vector<std::string> open;
    for (int step = 0; step < 200; ++step) {
      const auto op = rng.below(4);
      try {
        if (op == 0 || open.empty()) {
          open.push_back(svc.create_session("p" + std::to_string(rng.below(6))).session_id);
        } else {
          const auto id = open[rng.below(open.size())];
          const auto s = svc.get_session(id);
          if (op == 1 && s.state == SessionState::Open) {
            answer_all(svc, s);
            svc.finalize_session(id);
          } else if (op == 2) {
            svc.reject_session(id);
          }
        }
      } catch (const StudyError& e) {
        CHECK((e.kind() == StudyError::Kind::StudyComplete ||
               e.kind() == StudyError::Kind::DuplicateParticipantCondition));
      }
      const auto c = svc.coverage();
      CHECK(c.accepted + c.reserved <= c.cells);
      std::set<std::tuple<std::string, corpus::PassageKey, std::string>> seen;
      for (const auto& r : svc.accepted_records())
        CHECK(seen.insert({r.condition, r.passage, r.question_id}).second);
    }
  }
}

TEST_CASE("state survives a restart") {
  const auto dir = tmp_dir("replay");
  auto cfg = config();
  cfg.log_path = dir / "records.jsonl";
  std::vector<humaneval::AnnotationRecord> before;
  std::string half_id;
  {
    StudyService svc(study_corpus(), cfg);
    for (int i = 0; i < 4; ++i) {
      const auto s = svc.create_session("p" + std::to_string(i));
      answer_all(svc, s);
      svc.finalize_session(s.session_id);
    }
    svc.reject_session("s00002");
    const auto s = svc.create_session("p9");
    half_id = s.session_id;
    svc.submit_answer(s.session_id, s.questions[0].passage, s.questions[0].question_id, 3, 20000);
    before = svc.accepted_records();
  }
  auto check_restored = [&] {
    StudyService svc(study_corpus(), cfg);
    CHECK(svc.accepted_records() == before);
    CHECK(svc.get_session("s00002").state == SessionState::Rejected);
    const auto half = svc.get_session(half_id);
    CHECK(half.answered() == 1);
    CHECK(half.state == SessionState::Open);
    CHECK(svc.create_session("p10").session_id == "s00006");
  };
  {
    // Replaying into a fresh service gives the same state and continues the sequence.
    const auto saved = std::filesystem::path(cfg.log_path).string() + ".bak";
    std::filesystem::copy_file(cfg.log_path, saved);
    check_restored();
    std::filesystem::copy_file(saved, cfg.log_path, std::filesystem::copy_options::overwrite_existing);
  }
  {
    std::ofstream torn(cfg.log_path, std::ios::app);
    torn << R"({"type":"answer","rec)";
  }
  check_restored();

  {
    // Corruption before the last line is not silently skipped.
    std::ifstream in(cfg.log_path);
    std::stringstream all;
    all << in.rdbuf();
    std::ofstream out(cfg.log_path, std::ios::trunc);
    out << "garbage\n" << all.str() << "\n";
  }
  CHECK_THROWS_AS(StudyService(study_corpus(), cfg), StudyError);
}
