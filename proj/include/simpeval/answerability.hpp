#pragma once

#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "simpeval/corpus.hpp"
#include "simpeval/humaneval.hpp"
#include "simpeval/textmetrics.hpp"

namespace simpeval::answerability {

enum class OptionAggregation { Mean, Max };

struct SupportFeatures {
  double support_q = 0.0;        // stem vs passage
  double support_a = 0.0;        // options vs passage, aggregated per configuration
  double product = 0.0;          // support_q * support_a
  double support_a_mean = 0.0;
  double support_a_max = 0.0;
  double support_correct = 0.0;  // stored correct option (A) vs passage
};

SupportFeatures compute_features(const corpus::RCQuestion& question, std::string_view passage_text,
                                 OptionAggregation aggregation = OptionAggregation::Mean,
                                 const textmetrics::Stoplist& stoplist =
                                     textmetrics::default_stoplist());

// (condition, passage, question) -> features
using FeatureKey = std::tuple<std::string, corpus::PassageKey, std::string>;
using FeatureMap = std::map<FeatureKey, SupportFeatures>;

FeatureMap compute_all_features(const corpus::Corpus& corpus,
                                OptionAggregation aggregation = OptionAggregation::Mean);

struct RocPoint {
  double threshold = 0.0;  // UA is predicted when value < threshold
  double tpr = 0.0;
  double fpr = 0.0;
};

struct ScoredItem {
  double value = 0.0;
  bool is_ua = false;
};

class DegenerateLabels : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// One point per distinct value (as threshold) plus a final point above the
// maximum, in ascending threshold order. Both rates are non-decreasing along
// the curve; the first point is (0,0) and the last is (1,1).
std::vector<RocPoint> roc_curve(std::span<const ScoredItem> items);

struct OperatingPoint {
  double tpr = 0.0;
  double achieved_fpr = 0.0;
  double threshold = 0.0;
};

// The point with the largest fpr not above target_fpr; among equal fpr the
// highest tpr. No interpolation.
OperatingPoint tpr_at_fpr(std::span<const RocPoint> curve, double target_fpr);

// Area under the step curve by the trapezoid rule.
double roc_auc(std::span<const RocPoint> curve);

class EmptySubset : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Accuracy over primary-round records whose correct option is fully
// supported by the passage (support_correct == 1).
double verbatim_answer_accuracy(std::span<const humaneval::AnnotationRecord> records,
                                const FeatureMap& features);

// Items for ROC analysis: the chosen feature per primary-round record, labeled by UA.
enum class Feature { SupportQ, SupportA, Product, SupportAMax };
std::string_view feature_name(Feature f);
double feature_value(const SupportFeatures& f, Feature which);
std::vector<ScoredItem> labeled_items(std::span<const humaneval::AnnotationRecord> records,
                                      const FeatureMap& features, Feature which);

nlohmann::json feature_dump_record(const humaneval::AnnotationRecord& record,
                                   const SupportFeatures& f);
std::string roc_table(std::span<const RocPoint> curve);

}  // namespace simpeval::answerability
