#include "simpeval/answerability.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace simpeval::answerability {

SupportFeatures compute_features(const corpus::RCQuestion& question, std::string_view passage_text,
                                 OptionAggregation aggregation,
                                 const textmetrics::Stoplist& stoplist) {
  SupportFeatures f;
  f.support_q = textmetrics::support(question.stem, passage_text, stoplist);
  double sum = 0.0;
  for (Label l : kStoredLabels) {
    const double s = textmetrics::support(question.option(l), passage_text, stoplist);
    sum += s;
    f.support_a_max = std::max(f.support_a_max, s);
    if (l == question.correct) f.support_correct = s;
  }
  f.support_a_mean = sum / static_cast<double>(kStoredLabels.size());
  f.support_a = aggregation == OptionAggregation::Mean ? f.support_a_mean : f.support_a_max;
  f.product = f.support_q * f.support_a;
  return f;
}

FeatureMap compute_all_features(const corpus::Corpus& corpus, OptionAggregation aggregation) {
  FeatureMap out;
  for (const auto& v : corpus.variants())
    for (const auto* q : corpus.questions_for(v.key))
      out[{v.condition, v.key, q->question_id}] = compute_features(*q, v.text, aggregation);
  return out;
}

std::vector<RocPoint> roc_curve(std::span<const ScoredItem> items) {
  std::size_t positives = 0;
  for (const auto& it : items) positives += it.is_ua ? 1 : 0;
  const std::size_t negatives = items.size() - positives;
  if (positives == 0 || negatives == 0)
    throw DegenerateLabels("ROC needs both UA and answered items");

  std::vector<ScoredItem> sorted(items.begin(), items.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const ScoredItem& a, const ScoredItem& b) { return a.value < b.value; });

  std::vector<RocPoint> curve;
  std::size_t tp = 0, fp = 0, i = 0;
  while (i < sorted.size()) {
    // Threshold at this distinct value: everything strictly below is predicted UA.
    const double v = sorted[i].value;
    curve.push_back({v, static_cast<double>(tp) / positives, static_cast<double>(fp) / negatives});
    while (i < sorted.size() && sorted[i].value == v) {
      (sorted[i].is_ua ? tp : fp) += 1;
      ++i;
    }
  }
  const double above = std::nextafter(sorted.back().value, std::numeric_limits<double>::infinity());
  curve.push_back({above, 1.0, 1.0});
  return curve;
}

OperatingPoint tpr_at_fpr(std::span<const RocPoint> curve, double target_fpr) {
  if (curve.empty()) throw std::invalid_argument("empty ROC curve");
  const RocPoint* best = nullptr;
  for (const auto& p : curve) {
    if (p.fpr > target_fpr) continue;
    if (!best || p.fpr > best->fpr || (p.fpr == best->fpr && p.tpr > best->tpr)) best = &p;
  }
  if (!best) best = &curve.front();
  return {best->tpr, best->fpr, best->threshold};
}

double roc_auc(std::span<const RocPoint> curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i)
    area += (curve[i].fpr - curve[i - 1].fpr) * (curve[i].tpr + curve[i - 1].tpr) / 2.0;
  return area;
}

double verbatim_answer_accuracy(std::span<const humaneval::AnnotationRecord> records,
                                const FeatureMap& features) {
  std::size_t n = 0, correct = 0;
  for (const auto& condition : humaneval::conditions_in(records)) {
    for (const auto* r : humaneval::primary_records(records, condition)) {
      auto it = features.find({r->condition, r->passage, r->question_id});
      if (it == features.end())
        throw std::invalid_argument("no features for " + r->condition + " " + r->passage.str() +
                                    "#" + r->question_id);
      if (it->second.support_correct < 1.0) continue;
      ++n;
      if (r->selected == kCorrectLabel) ++correct;
    }
  }
  if (n == 0) throw EmptySubset("no record has a fully supported correct answer");
  return static_cast<double>(correct) / static_cast<double>(n);
}

std::string_view feature_name(Feature f) {
  switch (f) {
    case Feature::SupportQ: return "support_q";
    case Feature::SupportA: return "support_a";
    case Feature::Product: return "product";
    case Feature::SupportAMax: return "support_a_max";
  }
  return "?";
}

double feature_value(const SupportFeatures& f, Feature which) {
  switch (which) {
    case Feature::SupportQ: return f.support_q;
    case Feature::SupportA: return f.support_a;
    case Feature::Product: return f.product;
    case Feature::SupportAMax: return f.support_a_max;
  }
  return 0.0;
}

std::vector<ScoredItem> labeled_items(std::span<const humaneval::AnnotationRecord> records,
                                      const FeatureMap& features, Feature which) {
  std::vector<ScoredItem> out;
  for (const auto& condition : humaneval::conditions_in(records)) {
    for (const auto* r : humaneval::primary_records(records, condition)) {
      auto it = features.find({r->condition, r->passage, r->question_id});
      if (it == features.end()) continue;
      out.push_back({feature_value(it->second, which), r->selected == Label::UA});
    }
  }
  return out;
}

nlohmann::json feature_dump_record(const humaneval::AnnotationRecord& r, const SupportFeatures& f) {
  return {{"condition", r.condition},
          {"article_id", r.passage.article_id},
          {"paragraph_id", r.passage.paragraph_id},
          {"question_id", r.question_id},
          {"support_q", f.support_q},
          {"support_a", f.support_a},
          {"support_a_mean", f.support_a_mean},
          {"support_a_max", f.support_a_max},
          {"product", f.product},
          {"support_correct", f.support_correct},
          {"selected", std::string(to_string(r.selected))},
          {"ua", r.selected == Label::UA}};
}

std::string roc_table(std::span<const RocPoint> curve) {
  std::ostringstream os;
  os << "fpr,tpr\n";
  os.precision(10);
  for (const auto& p : curve) os << p.fpr << ',' << p.tpr << '\n';
  return os.str();
}

}  // namespace simpeval::answerability
