#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "simpeval/labels.hpp"

namespace simpeval::corpus {

struct PassageKey {
  std::string article_id;
  std::string paragraph_id;

  auto operator<=>(const PassageKey&) const = default;
  bool operator==(const PassageKey&) const = default;

  std::string str() const { return article_id + "/" + paragraph_id; }
};

struct Condition {
  std::string id;
  bool is_original = false;
  bool is_reference = false;

  bool operator==(const Condition&) const = default;
};

struct PassageVariant {
  PassageKey key;
  std::string condition;
  std::string text;

  bool operator==(const PassageVariant&) const = default;
};

struct RCQuestion {
  PassageKey key;
  std::string question_id;
  std::string stem;
  std::array<std::string, 4> options;  // indexed by stored label A..D
  Label correct = kCorrectLabel;

  const std::string& option(Label l) const { return options.at(index_of(l)); }
  bool operator==(const RCQuestion&) const = default;
};

enum class Granularity { Corpus, Paragraph };

struct MetricScoreRecord {
  std::string condition;
  std::string metric;
  double value = 0.0;
  Granularity granularity = Granularity::Corpus;
  std::optional<PassageKey> paragraph;

  bool operator==(const MetricScoreRecord&) const = default;
};

class CorpusError : public std::runtime_error {
 public:
  enum class Kind {
    Io,
    Parse,
    DuplicateKey,
    DanglingQuestion,
    OptionCount,
    DuplicateOption,
    QuestionCount,
    Invalid,
    UnknownCondition,
  };

  CorpusError(Kind kind, std::string message, std::size_t line = 0);

  Kind kind() const { return kind_; }
  // 1-based line in the offending file, 0 when not tied to a line.
  std::size_t line() const { return line_; }

 private:
  Kind kind_;
  std::size_t line_;
};

struct LoadOptions {
  std::string original_condition = "original";
  std::string reference_condition = "elementary";
};

// Validated, immutable study corpus. Conditions are ordered original first,
// then the reference, then the rest by id; passages and questions are sorted
// by key, so two loads of the same records compare equal.
class Corpus {
 public:
  Corpus() = default;

  const std::vector<Condition>& conditions() const { return conditions_; }
  const Condition* find_condition(const std::string& id) const;
  bool has_condition(const std::string& id) const { return find_condition(id) != nullptr; }
  const Condition* original() const;
  const Condition* reference() const;

  // M: distinct (article_id, paragraph_id) pairs.
  std::size_t passage_count() const { return passage_keys_.size(); }
  // Q: questions per passage.
  std::size_t questions_per_passage() const { return questions_per_passage_; }
  std::size_t question_count() const { return questions_.size(); }

  const std::vector<PassageKey>& passage_keys() const { return passage_keys_; }
  std::vector<PassageKey> passages_for(const std::string& condition) const;

  const std::vector<PassageVariant>& variants() const { return variants_; }
  const PassageVariant* find_variant(const PassageKey& key, const std::string& condition) const;
  // Throws CorpusError(Invalid) when the variant is missing.
  const std::string& text(const PassageKey& key, const std::string& condition) const;

  const std::vector<RCQuestion>& questions() const { return questions_; }
  std::vector<const RCQuestion*> questions_for(const PassageKey& key) const;
  const RCQuestion* find_question(const PassageKey& key, const std::string& question_id) const;

  bool operator==(const Corpus&) const = default;

 private:
  friend Corpus build_corpus(std::vector<PassageVariant>, std::vector<RCQuestion>,
                             const LoadOptions&);

  std::vector<Condition> conditions_;
  std::vector<PassageKey> passage_keys_;
  std::vector<PassageVariant> variants_;
  std::vector<RCQuestion> questions_;
  std::size_t questions_per_passage_ = 0;
};

// Validates and normalizes already parsed records.
Corpus build_corpus(std::vector<PassageVariant> variants, std::vector<RCQuestion> questions,
                    const LoadOptions& options = {});

Corpus parse_corpus(std::istream& passages, std::istream& questions,
                    const LoadOptions& options = {});
Corpus load_corpus(const std::filesystem::path& passages_file,
                   const std::filesystem::path& questions_file, const LoadOptions& options = {});

void write_passages(const Corpus& corpus, std::ostream& out);
void write_questions(const Corpus& corpus, std::ostream& out);

// Metric scores supplied by external tools. With a corpus, records naming a
// condition the corpus does not have are rejected.
std::vector<MetricScoreRecord> parse_metric_scores(std::istream& in,
                                                   const Corpus* corpus = nullptr);
std::vector<MetricScoreRecord> load_metric_scores(const std::filesystem::path& file,
                                                  const Corpus* corpus = nullptr);
void write_metric_scores(std::span<const MetricScoreRecord> records, std::ostream& out);

}  // namespace simpeval::corpus
