#include "simpeval/qa_adapter.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <fstream>
#include <mutex>
#include <thread>

#include <httplib.h>

#include "simpeval/jsonl.hpp"
#include "simpeval/metaeval.hpp"
#include "simpeval/rng.hpp"

namespace simpeval::qa {

using nlohmann::json;

namespace {

constexpr std::string_view kSeparator = " \\n ";

char letter(std::size_t position) { return static_cast<char>('a' + position); }

std::string lower_ascii(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string option_text(const corpus::RCQuestion& q, Label l) {
  return l == Label::UA ? std::string(kUnanswerableText) : q.option(l);
}

std::vector<Label> default_presented(bool include_ua) {
  std::vector<Label> out(kStoredLabels.begin(), kStoredLabels.end());
  if (include_ua) out.push_back(Label::UA);
  return out;
}

// "(b)", "b", "B)" -> position 1
std::optional<std::size_t> label_position(std::string_view s, std::size_t n_options) {
  std::string t = trim(s);
  if (t.size() >= 2 && t.front() == '(') t.erase(t.begin());
  if (!t.empty() && (t.back() == ')' || t.back() == '.')) t.pop_back();
  if (t.size() != 1) return std::nullopt;
  const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(t[0])));
  if (c < 'a' || static_cast<std::size_t>(c - 'a') >= n_options) return std::nullopt;
  return static_cast<std::size_t>(c - 'a');
}

}  // namespace

QAPrompt build_prompt(const corpus::RCQuestion& question, std::string_view passage_text,
                      const PromptOptions& options) {
  QAPrompt p;
  std::vector<Label> order(kStoredLabels.begin(), kStoredLabels.end());
  if (options.shuffle_seed) {
    Rng rng(derive_seed(*options.shuffle_seed,
                        hash_string(question.key.str() + "#" + question.question_id)));
    rng.shuffle(std::span<Label>(order));
  }
  if (options.include_ua) order.push_back(Label::UA);
  p.expected_labels = order;

  std::string text = question.stem;
  text += kSeparator;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i > 0) text += ' ';
    text += '(';
    text += options.lowercase ? letter(i) : static_cast<char>(std::toupper(letter(i)));
    text += ") ";
    text += option_text(question, order[i]);
  }
  text += kSeparator;
  text += passage_text;
  p.text = options.lowercase ? lower_ascii(text) : text;

  if (trim(question.stem).empty()) p.warnings.push_back("empty question stem");
  if (trim(passage_text).empty()) p.warnings.push_back("empty passage");
  return p;
}

QAPrompt build_prompt(const corpus::RCQuestion& question, std::string_view passage_text,
                      bool include_ua) {
  PromptOptions o;
  o.include_ua = include_ua;
  return build_prompt(question, passage_text, o);
}

std::string normalize_answer(std::string_view s) {
  std::string cleaned;
  for (char c : s) {
    const auto u = static_cast<unsigned char>(c);
    if (u < 0x80 && std::ispunct(u)) continue;
    cleaned.push_back(u < 0x80 ? static_cast<char>(std::tolower(u)) : c);
  }
  std::vector<std::string> words;
  std::string cur;
  for (char c : cleaned) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  std::size_t first = 0;
  while (first < words.size() &&
         (words[first] == "a" || words[first] == "an" || words[first] == "the"))
    ++first;
  std::string out;
  for (std::size_t i = first; i < words.size(); ++i) {
    if (!out.empty()) out += ' ';
    out += words[i];
  }
  return out;
}

std::string_view to_string(MatchMode m) {
  switch (m) {
    case MatchMode::None: return "none";
    case MatchMode::Text: return "text";
    case MatchMode::Label: return "label";
    case MatchMode::LabelAndText: return "label+text";
  }
  return "none";
}

QAResult match_answer(std::string_view raw, const corpus::RCQuestion& question,
                      std::span<const Label> presented, bool include_ua) {
  std::vector<Label> order;
  if (presented.empty()) order = default_presented(include_ua);
  else order.assign(presented.begin(), presented.end());

  QAResult r;
  r.passage = question.key;
  r.question_id = question.question_id;
  r.raw_answer = std::string(raw);

  auto finish = [&](std::optional<Label> l, MatchMode mode) {
    r.matched_label = l;
    r.mode = l ? mode : MatchMode::None;
    r.exact_match = l && *l == question.correct;
    return r;
  };

  const std::string norm = normalize_answer(raw);
  if (!norm.empty()) {
    for (Label l : order)
      if (normalize_answer(option_text(question, l)) == norm) return finish(l, MatchMode::Text);
  }
  if (auto pos = label_position(raw, order.size())) return finish(order[*pos], MatchMode::Label);

  // "(b) option text": the label and the text must agree.
  const std::string t = trim(raw);
  const auto close = t.find(')');
  if (!t.empty() && t.front() == '(' && close != std::string::npos) {
    if (auto pos = label_position(std::string_view(t).substr(0, close + 1), order.size())) {
      const std::string rest = normalize_answer(std::string_view(t).substr(close + 1));
      if (rest == normalize_answer(option_text(question, order[*pos])))
        return finish(order[*pos], MatchMode::LabelAndText);
    }
  }
  return finish(std::nullopt, MatchMode::None);
}

json QAResult::to_json() const {
  json j = {{"condition", condition},
            {"article_id", passage.article_id},
            {"paragraph_id", passage.paragraph_id},
            {"question_id", question_id},
            {"raw_answer", raw_answer},
            {"matched_label", matched_label ? json(std::string(simpeval::to_string(*matched_label)))
                                            : json(nullptr)},
            {"exact_match", exact_match},
            {"match_mode", std::string(qa::to_string(mode))}};
  if (!error.empty()) j["error"] = error;
  return j;
}

QAResult QAResult::from_json(const json& j) {
  QAResult r;
  r.condition = j.at("condition").get<std::string>();
  r.passage = {j.at("article_id").get<std::string>(), j.at("paragraph_id").get<std::string>()};
  r.question_id = j.at("question_id").get<std::string>();
  r.raw_answer = j.value("raw_answer", "");
  if (auto it = j.find("matched_label"); it != j.end() && it->is_string())
    r.matched_label = label_or_throw(it->get<std::string>());
  r.exact_match = j.value("exact_match", false);
  const std::string mode = j.value("match_mode", "none");
  r.mode = mode == "text" ? MatchMode::Text
           : mode == "label" ? MatchMode::Label
           : mode == "label+text" ? MatchMode::LabelAndText
                                  : MatchMode::None;
  r.error = j.value("error", "");
  return r;
}

// ---- Service client -----------------------------------------------------------

Endpoint parse_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos)
    throw ServiceError(ServiceError::Kind::BadEndpoint, "endpoint needs a scheme: " + url);
  const std::string scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https")
    throw ServiceError(ServiceError::Kind::BadEndpoint, "unsupported scheme: " + scheme);
  const auto path_start = url.find('/', scheme_end + 3);
  Endpoint e;
  e.scheme_host_port = url.substr(0, path_start);
  e.path = path_start == std::string::npos ? "/" : url.substr(path_start);
  if (e.scheme_host_port.size() <= scheme_end + 3)
    throw ServiceError(ServiceError::Kind::BadEndpoint, "endpoint has no host: " + url);
  return e;
}

HttpQaService::HttpQaService(HttpConfig config)
    : config_(std::move(config)), endpoint_(parse_endpoint(config_.endpoint)) {}

std::string HttpQaService::answer(const std::string& input) {
  using Kind = ServiceError::Kind;
  const std::string body = json{{"input", input}}.dump();
  int backoff = config_.backoff_ms;
  for (int attempt = 0;; ++attempt) {
    std::optional<ServiceError> failure;
    {
      httplib::Client client(endpoint_.scheme_host_port);
      const auto timeout = std::chrono::milliseconds(config_.timeout_ms);
      client.set_connection_timeout(timeout);
      client.set_read_timeout(timeout);
      client.set_write_timeout(timeout);
      client.set_tcp_nodelay(true);
      auto res = client.Post(endpoint_.path, body, "application/json");
      if (!res) {
        const auto err = res.error();
        const bool timed_out =
            err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read;
        failure.emplace(timed_out ? Kind::Timeout : Kind::Connection,
                        "request to " + config_.endpoint + " failed: " + httplib::to_string(err));
      } else if (res->status < 200 || res->status >= 300) {
        ServiceError e(Kind::Status,
                       "service returned HTTP " + std::to_string(res->status), res->status);
        if (res->status < 500) throw e;
        failure.emplace(std::move(e));
      } else {
        json parsed = json::parse(res->body, nullptr, false);
        if (parsed.is_discarded() || !parsed.is_object() || !parsed.contains("output") ||
            !parsed["output"].is_string())
          throw ServiceError(Kind::MalformedResponse, "response lacks a string 'output' field");
        return parsed["output"].get<std::string>();
      }
    }
    if (attempt >= config_.retries) throw *failure;
    std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
    backoff *= 2;
  }
}

std::string query_qa_service(const QAPrompt& prompt, const HttpConfig& config) {
  HttpQaService service(config);
  return service.answer(prompt.text);
}

// ---- Model evaluation ----------------------------------------------------------

json ModelEvalReport::to_json() const {
  json conds = json::array();
  for (const auto& c : conditions)
    conds.push_back({{"condition", c.condition},
                     {"em", c.em},
                     {"items", c.items},
                     {"errors", c.errors},
                     {"rank", c.rank}});
  auto corr = [](const Correlation& c) {
    json j = {{"n_conditions", c.n_conditions}};
    j["spearman"] = c.value ? json(*c.value) : json(nullptr);
    if (!c.note.empty()) j["note"] = c.note;
    return j;
  };
  return {{"conditions", conds},
          {"items", items.size()},
          {"errors", errors},
          {"reused", reused},
          {"spearman_all", corr(spearman_all)},
          {"spearman_excluding", corr(spearman_excluding)}};
}

namespace {

struct WorkItem {
  const corpus::RCQuestion* question;
  const corpus::PassageVariant* variant;
};

using ResultKey = std::tuple<std::string, corpus::PassageKey, std::string>;

std::map<ResultKey, QAResult> load_previous(const std::filesystem::path& path) {
  std::map<ResultKey, QAResult> out;
  std::ifstream in(path);
  if (!in) return out;
  try {
    jsonl::for_each_object(in, [&](std::size_t, const json& obj) {
      auto r = QAResult::from_json(obj);
      if (r.error.empty()) out[{r.condition, r.passage, r.question_id}] = std::move(r);
    });
  } catch (const std::exception&) {
    // A torn final line from an interrupted run; keep what parsed.
  }
  return out;
}

Correlation correlate(const std::vector<ConditionEm>& em,
                      std::span<const humaneval::SystemReport> human,
                      const std::set<std::string>& exclude) {
  Correlation c;
  std::map<std::string, double> acc;
  for (const auto& r : human) acc[r.condition] = r.acc;
  std::vector<double> x, y;
  for (const auto& e : em) {
    if (exclude.count(e.condition)) continue;
    auto it = acc.find(e.condition);
    if (it == acc.end()) continue;
    x.push_back(e.em);
    y.push_back(it->second);
  }
  c.n_conditions = x.size();
  if (human.empty()) {
    c.note = "no human scores supplied";
    return c;
  }
  try {
    c.value = metaeval::spearman(x, y);
  } catch (const metaeval::StatsError& e) {
    c.note = e.what();
  }
  return c;
}

}  // namespace

ModelEvalReport model_eval(const corpus::Corpus& corpus, const std::vector<std::string>& conditions,
                           QaService& service, const ModelEvalConfig& config,
                           std::span<const humaneval::SystemReport> human) {
  std::vector<WorkItem> work;
  for (const auto& cond : conditions) {
    if (!corpus.has_condition(cond))
      throw std::invalid_argument("unknown condition '" + cond + "'");
    for (const auto& key : corpus.passages_for(cond)) {
      const auto* variant = corpus.find_variant(key, cond);
      for (const auto* q : corpus.questions_for(key)) work.push_back({q, variant});
    }
  }

  std::map<ResultKey, QAResult> previous;
  if (config.results_path) previous = load_previous(*config.results_path);

  ModelEvalReport report;
  std::vector<QAResult> results(work.size());
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < work.size(); ++i) {
    const auto& w = work[i];
    auto it = previous.find({w.variant->condition, w.question->key, w.question->question_id});
    if (it != previous.end()) {
      results[i] = it->second;
      ++report.reused;
    } else {
      pending.push_back(i);
    }
  }

  std::ofstream log;
  if (config.results_path) {
    log.open(*config.results_path, std::ios::app);
    if (!log) throw std::runtime_error("cannot write " + config.results_path->string());
  }
  std::mutex log_mutex;
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (;;) {
      const std::size_t slot = next.fetch_add(1);
      if (slot >= pending.size()) return;
      const std::size_t i = pending[slot];
      const auto& w = work[i];
      const auto prompt = build_prompt(*w.question, w.variant->text, config.prompt);
      QAResult r;
      try {
        r = match_answer(service.answer(prompt.text), *w.question, prompt.expected_labels);
      } catch (const std::exception& e) {
        r = QAResult{};
        r.passage = w.question->key;
        r.question_id = w.question->question_id;
        r.error = e.what();
      }
      r.condition = w.variant->condition;
      if (log.is_open()) {
        std::lock_guard lock(log_mutex);
        log << r.to_json().dump() << '\n';
        log.flush();
      }
      results[i] = std::move(r);
    }
  };

  const unsigned n_threads =
      std::max(1u, std::min<unsigned>(config.concurrency, static_cast<unsigned>(pending.size())));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  if (log.is_open()) {
    log.close();
    // Rewrite in canonical order so reruns produce identical files.
    const auto tmp = config.results_path->string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      for (const auto& r : results) out << r.to_json().dump() << '\n';
    }
    std::filesystem::rename(tmp, *config.results_path);
  }

  std::map<std::string, ConditionEm> per;
  for (const auto& r : results) {
    auto& c = per[r.condition];
    c.condition = r.condition;
    ++c.items;
    if (!r.error.empty()) {
      ++c.errors;
      ++report.errors;
    } else if (r.exact_match) {
      c.em += 1.0;
    }
  }
  std::vector<ConditionEm> ems;
  for (const auto& cond : conditions) {
    auto c = per[cond];
    c.condition = cond;
    const std::size_t answered = c.items - c.errors;
    c.em = answered ? c.em / static_cast<double>(answered) : 0.0;
    ems.push_back(c);
  }
  std::sort(ems.begin(), ems.end(), [](const ConditionEm& a, const ConditionEm& b) {
    if (a.em != b.em) return a.em > b.em;
    return a.condition < b.condition;
  });
  std::vector<double> scores;
  for (const auto& c : ems) scores.push_back(c.em);
  const auto ranks = humaneval::competition_ranks(scores);
  for (std::size_t i = 0; i < ems.size(); ++i) ems[i].rank = ranks[i];

  report.conditions = ems;
  report.spearman_all = correlate(ems, human, {});
  report.spearman_excluding = correlate(ems, human, config.exclude);
  report.items = std::move(results);

  if (!work.empty() && static_cast<double>(report.errors) >
                           config.max_error_fraction * static_cast<double>(work.size()))
    throw RunFailed(std::to_string(report.errors) + " of " + std::to_string(work.size()) +
                        " items failed",
                    std::move(report));
  return report;
}

}  // namespace simpeval::qa
