#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "simpeval/corpus.hpp"
#include "simpeval/humaneval.hpp"

namespace simpeval::metaeval {

class StatsError : public std::invalid_argument {
 public:
  enum class Kind { Length, ZeroVariance, InsufficientConditions };
  StatsError(Kind kind, const std::string& what) : std::invalid_argument(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// 1-based ranks, ties get the average of the positions they span.
std::vector<double> average_ranks(std::span<const double> values);
double pearson(std::span<const double> x, std::span<const double> y);
double spearman(std::span<const double> x, std::span<const double> y);

// System-level scores aligned to `conditions`.
struct MetricTable {
  std::vector<std::string> conditions;
  std::map<std::string, std::vector<double>> metrics;
  std::vector<double> human_acc;

  void validate() const;
};

// Assembles a table from human reports and corpus-level metric records.
// Conditions lacking a human score are skipped; the original and reference
// conditions are left out unless include_human_written is set. A metric that
// is missing for any retained condition is dropped.
MetricTable build_metric_table(std::span<const humaneval::SystemReport> human,
                               std::span<const corpus::MetricScoreRecord> scores,
                               const std::set<std::string>& human_written,
                               bool include_human_written = false);

std::map<std::string, double> correlation_table(const MetricTable& table,
                                                const std::set<std::string>& exclude = {});

struct CorrelationRow {
  std::string label;
  std::size_t n_conditions = 0;
  std::map<std::string, double> values;
  std::map<std::string, std::string> undefined;  // metric -> reason
};

// Like correlation_table, but a metric whose correlation is undefined is
// reported in `undefined` instead of aborting the whole row.
CorrelationRow correlation_row(const MetricTable& table, const std::set<std::string>& exclude,
                               std::string label);

nlohmann::json to_json(const CorrelationRow& row);
std::string format_correlation_matrix(std::span<const CorrelationRow> rows);

struct BootstrapResult {
  double observed_difference = 0.0;  // mean(a - b)
  double p_value = 1.0;
  std::size_t resamples = 0;
};

// Paired bootstrap over paragraphs. p is the fraction of resamples whose mean
// difference does not share the sign of the observed one; 1 when the
// observed difference is zero. Resample i draws from derive_seed(seed, i).
BootstrapResult paired_significance(std::span<const double> scores_a,
                                    std::span<const double> scores_b, std::size_t resamples,
                                    std::uint64_t seed, unsigned threads = 1);

}  // namespace simpeval::metaeval
