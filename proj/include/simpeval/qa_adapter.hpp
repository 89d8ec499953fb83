#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "simpeval/corpus.hpp"
#include "simpeval/humaneval.hpp"
#include "simpeval/labels.hpp"

namespace simpeval::qa {

struct PromptOptions {
  bool include_ua = false;
  bool lowercase = true;
  // When set, the A-D options are shown in a seeded random order.
  std::optional<std::uint64_t> shuffle_seed;
};

struct QAPrompt {
  std::string text;
  // Stored label shown at each presented position ((a), (b), ...).
  std::vector<Label> expected_labels;
  std::vector<std::string> warnings;
};

// "{question} \n (a) {choice 1} (b) {choice 2} ... \n {paragraph}", where
// "\n" is the literal two-character separator the QA model family was
// trained with.
QAPrompt build_prompt(const corpus::RCQuestion& question, std::string_view passage_text,
                      const PromptOptions& options = {});
QAPrompt build_prompt(const corpus::RCQuestion& question, std::string_view passage_text,
                      bool include_ua);

// Lowercase, strip punctuation, drop leading articles, collapse whitespace.
std::string normalize_answer(std::string_view s);

enum class MatchMode { None, Text, Label, LabelAndText };
std::string_view to_string(MatchMode m);

struct QAResult {
  std::string condition;
  corpus::PassageKey passage;
  std::string question_id;
  std::string raw_answer;
  std::optional<Label> matched_label;  // stored label
  bool exact_match = false;
  MatchMode mode = MatchMode::None;
  std::string error;  // non-empty when the service call failed

  nlohmann::json to_json() const;
  static QAResult from_json(const nlohmann::json& j);
};

// `presented` maps presented positions to stored labels; defaults to A-D in order.
QAResult match_answer(std::string_view raw, const corpus::RCQuestion& question,
                      std::span<const Label> presented = {}, bool include_ua = false);

// ---- Service client -----------------------------------------------------------

class ServiceError : public std::runtime_error {
 public:
  enum class Kind { Timeout, Connection, Status, MalformedResponse, BadEndpoint };
  ServiceError(Kind kind, const std::string& what, int status = 0)
      : std::runtime_error(what), kind_(kind), status_(status) {}
  Kind kind() const { return kind_; }
  int status() const { return status_; }

 private:
  Kind kind_;
  int status_;
};

class QaService {
 public:
  virtual ~QaService() = default;
  // Must be safe to call from several threads at once.
  virtual std::string answer(const std::string& input) = 0;
};

struct HttpConfig {
  std::string endpoint;  // http://host:port/path
  int timeout_ms = 30000;
  int retries = 3;       // extra attempts after the first
  int backoff_ms = 200;  // doubled after every failed attempt
};

struct Endpoint {
  std::string scheme_host_port;
  std::string path;
};
Endpoint parse_endpoint(const std::string& url);

// POST {"input": text} -> {"output": text}. Connection failures, timeouts and
// 5xx responses are retried; other failures are raised at once.
class HttpQaService : public QaService {
 public:
  explicit HttpQaService(HttpConfig config);
  std::string answer(const std::string& input) override;

 private:
  HttpConfig config_;
  Endpoint endpoint_;
};

std::string query_qa_service(const QAPrompt& prompt, const HttpConfig& config);

// ---- Model evaluation ----------------------------------------------------------

struct ModelEvalConfig {
  PromptOptions prompt;
  unsigned concurrency = 4;
  double max_error_fraction = 0.10;
  std::set<std::string> exclude;                    // second correlation drops these
  std::optional<std::filesystem::path> results_path;  // JSON lines, reused on resume
};

struct ConditionEm {
  std::string condition;
  double em = 0.0;
  std::size_t items = 0;
  std::size_t errors = 0;
  int rank = 0;
};

struct Correlation {
  std::optional<double> value;
  std::string note;  // why the value is missing
  std::size_t n_conditions = 0;
};

struct ModelEvalReport {
  std::vector<QAResult> items;  // ordered by condition, passage, question
  std::vector<ConditionEm> conditions;  // ranked by EM
  std::size_t errors = 0;
  std::size_t reused = 0;  // items taken from an earlier results file
  Correlation spearman_all;
  Correlation spearman_excluding;

  nlohmann::json to_json() const;
};

class RunFailed : public std::runtime_error {
 public:
  RunFailed(const std::string& what, ModelEvalReport report)
      : std::runtime_error(what), report(std::move(report)) {}
  ModelEvalReport report;
};

// Scores every question of every listed condition with the service. Items
// whose call fails are recorded with an error; more than max_error_fraction
// failed items raises RunFailed after the results are written.
ModelEvalReport model_eval(const corpus::Corpus& corpus, const std::vector<std::string>& conditions,
                           QaService& service, const ModelEvalConfig& config = {},
                           std::span<const humaneval::SystemReport> human = {});

}  // namespace simpeval::qa
