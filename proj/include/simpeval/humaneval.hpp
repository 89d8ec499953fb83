#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "simpeval/corpus.hpp"
#include "simpeval/labels.hpp"

namespace simpeval::humaneval {

using corpus::PassageKey;

// One participant's answer to one question of one passage variant.
struct AnnotationRecord {
  std::string session_id;
  std::string participant_id;
  std::string condition;
  PassageKey passage;
  std::string question_id;
  Label selected = Label::A;
  std::array<Label, 5> presented_order = {Label::A, Label::B, Label::C, Label::D, Label::UA};
  std::int64_t elapsed_ms = 0;
  int round = 1;  // 1 for the main study, 2+ for agreement rounds

  // 1-based position at which the selected option was shown.
  std::size_t selected_position() const;
  bool operator==(const AnnotationRecord&) const = default;
};

class AggregationError : public std::runtime_error {
 public:
  enum class Kind { EmptyCondition, UnresolvableRecord, InvalidRecord, SubsetSize, LengthMismatch };
  AggregationError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

nlohmann::json to_json(const AnnotationRecord& r);
// Throws AggregationError(InvalidRecord) on schema violations.
AnnotationRecord record_from_json(const nlohmann::json& obj);
std::vector<AnnotationRecord> parse_annotations(std::istream& in);
std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& file);
void write_annotations(std::span<const AnnotationRecord> records, std::ostream& out);
void validate_record(const AnnotationRecord& r);

// Conditions that occur in the records, sorted.
std::vector<std::string> conditions_in(std::span<const AnnotationRecord> records);

// The single record per (condition, passage, question) that counts for
// aggregation: the lowest round wins, ties broken by session then
// participant. When a corpus is given every record must resolve against it.
std::vector<const AnnotationRecord*> primary_records(std::span<const AnnotationRecord> records,
                                                     const std::string& condition,
                                                     const corpus::Corpus* corpus = nullptr);

struct OptionRates {
  std::array<std::size_t, 5> counts{};
  std::array<double, 5> rates{};
  std::size_t total = 0;

  double operator[](Label l) const { return rates[index_of(l)]; }
  std::size_t count(Label l) const { return counts[index_of(l)]; }
};

OptionRates option_distribution(std::span<const AnnotationRecord> records,
                                const std::string& condition,
                                const corpus::Corpus* corpus = nullptr);
double accuracy(std::span<const AnnotationRecord> records, const std::string& condition,
                const corpus::Corpus* corpus = nullptr);
double answerability(std::span<const AnnotationRecord> records, const std::string& condition,
                     const corpus::Corpus* corpus = nullptr);

struct SystemReport {
  std::string condition;
  double acc = 0.0;
  double ans = 0.0;
  std::array<double, 5> option_rates{};
  std::size_t n_questions = 0;
  int rank = 0;

  double rate(Label l) const { return option_rates[index_of(l)]; }
};

SystemReport system_report(std::span<const AnnotationRecord> records, const std::string& condition,
                           const corpus::Corpus* corpus = nullptr);

// Competition ranking of scores, highest first: [0.78, 0.76, 0.76, 0.70] -> [1, 2, 2, 4].
std::vector<int> competition_ranks(std::span<const double> scores);

// Sorted by descending accuracy (condition id breaks display ties) with ranks filled in.
std::vector<SystemReport> rank_systems(std::vector<SystemReport> reports);

// Reports for every condition (or the given ones), ranked.
std::vector<SystemReport> score_conditions(std::span<const AnnotationRecord> records,
                                           const corpus::Corpus* corpus = nullptr,
                                           std::vector<std::string> conditions = {});

nlohmann::json to_json(const SystemReport& r);
// Aligned plain-text table: condition, % correct, B, C, D, UA, % answerable, rank.
std::string format_report_table(std::span<const SystemReport> reports);

// ---- Ranking stability -------------------------------------------------------

struct StabilityPoint {
  std::string condition;
  std::size_t subset_size = 0;
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation over runs
  std::size_t runs = 0;
  int rank = 0;         // competition rank of `mean` among conditions at this size
};

struct StabilityResult {
  std::vector<std::string> conditions;
  std::vector<std::size_t> subset_sizes;
  std::size_t runs = 0;
  std::uint64_t seed = 0;
  std::size_t passage_count = 0;
  std::vector<StabilityPoint> points;  // ordered by subset size, then condition

  const StabilityPoint& at(const std::string& condition, std::size_t k) const;
};

// Subsamples passages (all questions of a sampled passage included) `runs`
// times per subset size and averages per-condition accuracy. Each run draws
// from its own seed derived from (seed, size, run).
StabilityResult ranking_stability(std::span<const AnnotationRecord> records,
                                  std::span<const std::size_t> subset_sizes, std::size_t runs,
                                  std::uint64_t seed, const corpus::Corpus* corpus = nullptr);

nlohmann::json to_json(const StabilityResult& r);
std::string stability_csv(const StabilityResult& r);

// ---- Agreement ---------------------------------------------------------------

struct KappaResult {
  double kappa = 0.0;
  double p_observed = 0.0;
  double p_expected = 0.0;
  // False when chance agreement is 1 but the sequences differ; kappa is then 0.
  bool defined = true;
};

KappaResult cohens_kappa(std::span<const Label> a, std::span<const Label> b);
KappaResult cohens_kappa_codes(std::span<const int> a, std::span<const int> b);

// Doubly annotated cells: the two lowest rounds of every cell that has more than one.
struct AgreementPairs {
  std::vector<std::string> conditions;
  std::vector<PassageKey> passages;
  std::vector<std::string> question_ids;
  std::vector<Label> first;
  std::vector<Label> second;
};
AgreementPairs agreement_pairs(std::span<const AnnotationRecord> records);

// ---- UA heatmap --------------------------------------------------------------

struct UaHeatmap {
  std::vector<std::string> conditions;
  std::vector<PassageKey> passages;
  std::vector<std::vector<int>> counts;  // [condition][passage]
};

UaHeatmap ua_heatmap(std::span<const AnnotationRecord> records,
                     const corpus::Corpus* corpus = nullptr);
std::string heatmap_csv(const UaHeatmap& h);

// ---- Quality checks ----------------------------------------------------------

struct QualityConfig {
  std::int64_t too_fast_ms = 10000;  // median time per question below this is flagged
  std::size_t min_answers_for_straightlining = 2;
};

struct SessionQuality {
  std::string session_id;
  std::string participant_id;
  std::string condition;
  std::size_t answers = 0;
  double median_elapsed_ms = 0.0;
  bool straightlining = false;
  bool too_fast = false;

  bool flagged() const { return straightlining || too_fast; }
};

SessionQuality assess_session(std::span<const AnnotationRecord> session_records,
                              const QualityConfig& config = {});
// One entry per session id, sorted by session id.
std::vector<SessionQuality> quality_flags(std::span<const AnnotationRecord> records,
                                          const QualityConfig& config = {});

}  // namespace simpeval::humaneval
