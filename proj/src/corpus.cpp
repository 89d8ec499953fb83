#include "simpeval/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "simpeval/jsonl.hpp"

namespace simpeval::corpus {

using jsonl::json;

CorpusError::CorpusError(Kind kind, std::string message, std::size_t line)
    : std::runtime_error(line ? "line " + std::to_string(line) + ": " + message : message),
      kind_(kind),
      line_(line) {}

namespace {

bool blank(const std::string& s) {
  return s.find_first_not_of(" \t\r\n\f\v") == std::string::npos;
}

template <typename Fn>
void read_records(std::istream& in, Fn&& fn) {
  try {
    jsonl::for_each_object(in, [&](std::size_t line, const json& obj) {
      try {
        fn(line, obj);
      } catch (const std::invalid_argument& e) {
        throw CorpusError(CorpusError::Kind::Parse, e.what(), line);
      } catch (const json::exception& e) {
        throw CorpusError(CorpusError::Kind::Parse, e.what(), line);
      }
    });
  } catch (const jsonl::LineError& e) {
    throw CorpusError(CorpusError::Kind::Parse, e.what(), e.line);
  }
}

}  // namespace

const Condition* Corpus::find_condition(const std::string& id) const {
  auto it = std::find_if(conditions_.begin(), conditions_.end(),
                         [&](const Condition& c) { return c.id == id; });
  return it == conditions_.end() ? nullptr : &*it;
}

const Condition* Corpus::original() const {
  auto it = std::find_if(conditions_.begin(), conditions_.end(),
                         [](const Condition& c) { return c.is_original; });
  return it == conditions_.end() ? nullptr : &*it;
}

const Condition* Corpus::reference() const {
  auto it = std::find_if(conditions_.begin(), conditions_.end(),
                         [](const Condition& c) { return c.is_reference; });
  return it == conditions_.end() ? nullptr : &*it;
}

std::vector<PassageKey> Corpus::passages_for(const std::string& condition) const {
  std::vector<PassageKey> out;
  for (const auto& v : variants_)
    if (v.condition == condition) out.push_back(v.key);
  return out;
}

const PassageVariant* Corpus::find_variant(const PassageKey& key,
                                           const std::string& condition) const {
  auto it = std::lower_bound(variants_.begin(), variants_.end(), std::tie(key, condition),
                             [](const PassageVariant& v, const auto& probe) {
                               return std::tie(v.key, v.condition) < probe;
                             });
  if (it == variants_.end() || it->key != key || it->condition != condition) return nullptr;
  return &*it;
}

const std::string& Corpus::text(const PassageKey& key, const std::string& condition) const {
  const auto* v = find_variant(key, condition);
  if (!v)
    throw CorpusError(CorpusError::Kind::Invalid,
                      "no text for passage " + key.str() + " under condition '" + condition + "'");
  return v->text;
}

std::vector<const RCQuestion*> Corpus::questions_for(const PassageKey& key) const {
  std::vector<const RCQuestion*> out;
  auto it = std::lower_bound(questions_.begin(), questions_.end(), key,
                             [](const RCQuestion& q, const PassageKey& k) { return q.key < k; });
  for (; it != questions_.end() && it->key == key; ++it) out.push_back(&*it);
  return out;
}

const RCQuestion* Corpus::find_question(const PassageKey& key,
                                        const std::string& question_id) const {
  for (const auto* q : questions_for(key))
    if (q->question_id == question_id) return q;
  return nullptr;
}

Corpus build_corpus(std::vector<PassageVariant> variants, std::vector<RCQuestion> questions,
                    const LoadOptions& options) {
  using Kind = CorpusError::Kind;
  Corpus c;

  std::sort(variants.begin(), variants.end(), [](const auto& a, const auto& b) {
    return std::tie(a.key, a.condition) < std::tie(b.key, b.condition);
  });
  for (std::size_t i = 1; i < variants.size(); ++i) {
    if (variants[i].key == variants[i - 1].key &&
        variants[i].condition == variants[i - 1].condition)
      throw CorpusError(Kind::DuplicateKey, "duplicate passage " + variants[i].key.str() +
                                                " for condition '" + variants[i].condition + "'");
  }

  std::set<std::string> condition_ids;
  std::set<PassageKey> keys;
  for (const auto& v : variants) {
    if (v.condition.empty()) throw CorpusError(Kind::Invalid, "empty condition id");
    if (blank(v.text))
      throw CorpusError(Kind::Invalid, "empty text for " + v.key.str() + " / " + v.condition);
    condition_ids.insert(v.condition);
    keys.insert(v.key);
  }
  if (options.original_condition == options.reference_condition &&
      condition_ids.count(options.original_condition))
    throw CorpusError(Kind::Invalid, "a condition cannot be both original and reference");

  for (const auto& id : condition_ids) {
    c.conditions_.push_back(Condition{id, id == options.original_condition,
                                      id == options.reference_condition});
  }
  std::stable_sort(c.conditions_.begin(), c.conditions_.end(),
                   [](const Condition& a, const Condition& b) {
                     auto weight = [](const Condition& x) {
                       return x.is_original ? 0 : (x.is_reference ? 1 : 2);
                     };
                     return weight(a) < weight(b);
                   });

  std::sort(questions.begin(), questions.end(), [](const auto& a, const auto& b) {
    return std::tie(a.key, a.question_id) < std::tie(b.key, b.question_id);
  });
  std::map<PassageKey, std::size_t> per_passage;
  for (std::size_t i = 0; i < questions.size(); ++i) {
    const auto& q = questions[i];
    if (i > 0 && q.key == questions[i - 1].key && q.question_id == questions[i - 1].question_id)
      throw CorpusError(Kind::DuplicateKey,
                        "duplicate question " + q.question_id + " for passage " + q.key.str());
    if (q.correct != kCorrectLabel)
      throw CorpusError(Kind::Invalid, "stored correct label must be A (" + q.question_id + ")");
    for (std::size_t a = 0; a < 4; ++a) {
      if (blank(q.options[a]))
        throw CorpusError(Kind::OptionCount, "question " + q.question_id + " has an empty option");
      for (std::size_t b = a + 1; b < 4; ++b)
        if (q.options[a] == q.options[b])
          throw CorpusError(Kind::DuplicateOption,
                            "question " + q.question_id + " repeats an option text");
    }
    if (!keys.count(q.key))
      throw CorpusError(Kind::DanglingQuestion,
                        "question " + q.question_id + " references missing passage " + q.key.str());
    ++per_passage[q.key];
  }

  c.variants_ = std::move(variants);
  c.questions_ = std::move(questions);
  c.passage_keys_.assign(keys.begin(), keys.end());

  if (const Condition* orig = c.original()) {
    for (const auto& q : c.questions_)
      if (!c.find_variant(q.key, orig->id))
        throw CorpusError(Kind::DanglingQuestion, "question " + q.question_id +
                                                      " has no original-condition passage " +
                                                      q.key.str());
  }

  if (!c.questions_.empty()) {
    const std::size_t q_count = per_passage.begin()->second;
    for (const auto& key : c.passage_keys_) {
      auto it = per_passage.find(key);
      std::size_t n = it == per_passage.end() ? 0 : it->second;
      if (n != q_count)
        throw CorpusError(Kind::QuestionCount, "passage " + key.str() + " has " +
                                                   std::to_string(n) + " questions, expected " +
                                                   std::to_string(q_count));
    }
    c.questions_per_passage_ = q_count;
  }
  return c;
}

Corpus parse_corpus(std::istream& passages, std::istream& questions, const LoadOptions& options) {
  using Kind = CorpusError::Kind;
  std::vector<PassageVariant> variants;
  std::set<std::pair<PassageKey, std::string>> seen_variants;
  std::set<PassageKey> keys;
  read_records(passages, [&](std::size_t line, const json& obj) {
    PassageVariant v{
        {jsonl::get_string(obj, "article_id"), jsonl::get_string(obj, "paragraph_id")},
        jsonl::get_string(obj, "condition"),
        jsonl::get_string(obj, "text")};
    if (!seen_variants.emplace(v.key, v.condition).second)
      throw CorpusError(Kind::DuplicateKey,
                        "duplicate passage " + v.key.str() + " for condition '" + v.condition + "'",
                        line);
    keys.insert(v.key);
    variants.push_back(std::move(v));
  });

  std::vector<RCQuestion> qs;
  std::set<std::pair<PassageKey, std::string>> seen_questions;
  read_records(questions, [&](std::size_t line, const json& obj) {
    RCQuestion q;
    q.key = {jsonl::get_string(obj, "article_id"), jsonl::get_string(obj, "paragraph_id")};
    q.question_id = jsonl::get_string(obj, "question_id");
    if (!seen_questions.emplace(q.key, q.question_id).second)
      throw CorpusError(Kind::DuplicateKey,
                        "duplicate question " + q.question_id + " for passage " + q.key.str(), line);
    if (!keys.count(q.key))
      throw CorpusError(Kind::DanglingQuestion,
                        "question " + q.question_id + " references missing passage " + q.key.str(),
                        line);
    q.stem = jsonl::get_string(obj, "stem");
    auto opts = obj.find("options");
    if (opts == obj.end() || !opts->is_object())
      throw CorpusError(Kind::OptionCount, "missing options object", line);
    if (opts->size() != 4)
      throw CorpusError(Kind::OptionCount,
                        "expected 4 options, found " + std::to_string(opts->size()), line);
    for (Label l : kStoredLabels) {
      const std::string name(to_string(l));
      auto it = opts->find(name);
      if (it == opts->end() || !it->is_string())
        throw CorpusError(Kind::OptionCount, "missing option " + name, line);
      q.options[index_of(l)] = it->get<std::string>();
    }
    qs.push_back(std::move(q));
  });
  return build_corpus(std::move(variants), std::move(qs), options);
}

Corpus load_corpus(const std::filesystem::path& passages_file,
                   const std::filesystem::path& questions_file, const LoadOptions& options) {
  std::ifstream p(passages_file, std::ios::binary);
  if (!p) throw CorpusError(CorpusError::Kind::Io, "cannot open " + passages_file.string());
  std::ifstream q(questions_file, std::ios::binary);
  if (!q) throw CorpusError(CorpusError::Kind::Io, "cannot open " + questions_file.string());
  return parse_corpus(p, q, options);
}

void write_passages(const Corpus& corpus, std::ostream& out) {
  for (const auto& v : corpus.variants()) {
    json obj = {{"article_id", v.key.article_id},
                {"paragraph_id", v.key.paragraph_id},
                {"condition", v.condition},
                {"text", v.text}};
    out << obj.dump() << '\n';
  }
}

void write_questions(const Corpus& corpus, std::ostream& out) {
  for (const auto& q : corpus.questions()) {
    json opts = json::object();
    for (Label l : kStoredLabels) opts[std::string(to_string(l))] = q.option(l);
    json obj = {{"article_id", q.key.article_id},
                {"paragraph_id", q.key.paragraph_id},
                {"question_id", q.question_id},
                {"stem", q.stem},
                {"options", opts}};
    out << obj.dump() << '\n';
  }
}

std::vector<MetricScoreRecord> parse_metric_scores(std::istream& in, const Corpus* corpus) {
  using Kind = CorpusError::Kind;
  std::vector<MetricScoreRecord> out;
  std::set<std::pair<std::string, std::string>> corpus_level;
  read_records(in, [&](std::size_t line, const json& obj) {
    MetricScoreRecord r;
    r.condition = jsonl::get_string(obj, "condition");
    r.metric = jsonl::get_string(obj, "metric");
    if (r.condition.empty()) throw CorpusError(Kind::Parse, "empty condition", line);
    if (r.metric.empty()) throw CorpusError(Kind::Parse, "empty metric name", line);
    auto value = obj.find("value");
    if (value == obj.end() || !value->is_number())
      throw CorpusError(Kind::Parse, "field 'value' must be a number", line);
    r.value = value->get<double>();
    if (!std::isfinite(r.value)) throw CorpusError(Kind::Parse, "non-finite value", line);

    std::string gran = "corpus";
    if (auto g = obj.find("granularity"); g != obj.end()) {
      if (!g->is_string()) throw CorpusError(Kind::Parse, "granularity must be a string", line);
      gran = g->get<std::string>();
    }
    if (gran == "corpus") {
      r.granularity = Granularity::Corpus;
    } else if (gran == "paragraph") {
      r.granularity = Granularity::Paragraph;
      auto pid = obj.find("paragraph_id");
      if (pid == obj.end() || !pid->is_string())
        throw CorpusError(Kind::Parse, "paragraph-level record needs paragraph_id", line);
      std::string article;
      if (auto a = obj.find("article_id"); a != obj.end() && a->is_string())
        article = a->get<std::string>();
      r.paragraph = PassageKey{article, pid->get<std::string>()};
    } else {
      throw CorpusError(Kind::Parse, "unknown granularity '" + gran + "'", line);
    }

    if (corpus && !corpus->has_condition(r.condition))
      throw CorpusError(Kind::UnknownCondition, "unknown condition '" + r.condition + "'", line);
    if (r.granularity == Granularity::Corpus &&
        !corpus_level.emplace(r.condition, r.metric).second)
      throw CorpusError(Kind::DuplicateKey,
                        "duplicate corpus-level score " + r.metric + " for " + r.condition, line);
    out.push_back(std::move(r));
  });
  return out;
}

std::vector<MetricScoreRecord> load_metric_scores(const std::filesystem::path& file,
                                                  const Corpus* corpus) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw CorpusError(CorpusError::Kind::Io, "cannot open " + file.string());
  return parse_metric_scores(in, corpus);
}

void write_metric_scores(std::span<const MetricScoreRecord> records, std::ostream& out) {
  for (const auto& r : records) {
    json obj = {{"condition", r.condition},
                {"metric", r.metric},
                {"value", r.value},
                {"granularity", r.granularity == Granularity::Corpus ? "corpus" : "paragraph"}};
    if (r.paragraph) {
      obj["article_id"] = r.paragraph->article_id;
      obj["paragraph_id"] = r.paragraph->paragraph_id;
    }
    out << obj.dump() << '\n';
  }
}

}  // namespace simpeval::corpus
