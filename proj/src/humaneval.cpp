#include "simpeval/humaneval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "simpeval/jsonl.hpp"
#include "simpeval/rng.hpp"

namespace simpeval::humaneval {

using nlohmann::json;
using Kind = AggregationError::Kind;

std::size_t AnnotationRecord::selected_position() const {
  for (std::size_t i = 0; i < presented_order.size(); ++i)
    if (presented_order[i] == selected) return i + 1;
  return 0;
}

void validate_record(const AnnotationRecord& r) {
  if (r.condition.empty()) throw AggregationError(Kind::InvalidRecord, "record without condition");
  if (r.question_id.empty()) throw AggregationError(Kind::InvalidRecord, "record without question_id");
  std::array<int, 5> seen{};
  for (Label l : r.presented_order) ++seen[index_of(l)];
  for (int s : seen)
    if (s != 1)
      throw AggregationError(Kind::InvalidRecord,
                             "presented_order is not a permutation of A,B,C,D,UA (" +
                                 r.question_id + ")");
  if (r.elapsed_ms < 0) throw AggregationError(Kind::InvalidRecord, "negative elapsed_ms");
  if (r.round < 1) throw AggregationError(Kind::InvalidRecord, "round must be >= 1");
}

json to_json(const AnnotationRecord& r) {
  json order = json::array();
  for (Label l : r.presented_order) order.push_back(std::string(to_string(l)));
  return json{{"session_id", r.session_id},
              {"participant_id", r.participant_id},
              {"condition", r.condition},
              {"article_id", r.passage.article_id},
              {"paragraph_id", r.passage.paragraph_id},
              {"question_id", r.question_id},
              {"selected", std::string(to_string(r.selected))},
              {"presented_order", order},
              {"elapsed_ms", r.elapsed_ms},
              {"round", r.round}};
}

AnnotationRecord record_from_json(const json& obj) {
  try {
    AnnotationRecord r;
    r.session_id = jsonl::get_string(obj, "session_id");
    r.participant_id = jsonl::get_string(obj, "participant_id");
    r.condition = jsonl::get_string(obj, "condition");
    r.passage = {jsonl::get_string(obj, "article_id"), jsonl::get_string(obj, "paragraph_id")};
    r.question_id = jsonl::get_string(obj, "question_id");
    r.selected = label_or_throw(jsonl::get_string(obj, "selected"));
    const auto& order = obj.at("presented_order");
    if (!order.is_array() || order.size() != 5)
      throw std::invalid_argument("presented_order must list 5 labels");
    for (std::size_t i = 0; i < 5; ++i) r.presented_order[i] = label_or_throw(order[i].get<std::string>());
    r.elapsed_ms = obj.at("elapsed_ms").get<std::int64_t>();
    if (auto it = obj.find("round"); it != obj.end()) r.round = it->get<int>();
    validate_record(r);
    return r;
  } catch (const std::invalid_argument& e) {
    throw AggregationError(Kind::InvalidRecord, e.what());
  } catch (const json::exception& e) {
    throw AggregationError(Kind::InvalidRecord, e.what());
  }
}

std::vector<AnnotationRecord> parse_annotations(std::istream& in) {
  std::vector<AnnotationRecord> out;
  try {
    jsonl::for_each_object(in, [&](std::size_t line, const json& obj) {
      try {
        out.push_back(record_from_json(obj));
      } catch (const AggregationError& e) {
        throw AggregationError(e.kind(), "line " + std::to_string(line) + ": " + e.what());
      }
    });
  } catch (const jsonl::LineError& e) {
    throw AggregationError(Kind::InvalidRecord, e.what());
  }
  return out;
}

std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& file) {
  auto in = jsonl::open_input(file);
  return parse_annotations(in);
}

void write_annotations(std::span<const AnnotationRecord> records, std::ostream& out) {
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

std::vector<std::string> conditions_in(std::span<const AnnotationRecord> records) {
  std::set<std::string> s;
  for (const auto& r : records) s.insert(r.condition);
  return {s.begin(), s.end()};
}

namespace {

using CellKey = std::tuple<std::string, PassageKey, std::string>;

CellKey cell_of(const AnnotationRecord& r) { return {r.condition, r.passage, r.question_id}; }

bool precedes(const AnnotationRecord& a, const AnnotationRecord& b) {
  return std::tie(a.round, a.session_id, a.participant_id) <
         std::tie(b.round, b.session_id, b.participant_id);
}

void resolve(const AnnotationRecord& r, const corpus::Corpus& c) {
  if (!c.has_condition(r.condition))
    throw AggregationError(Kind::UnresolvableRecord, "unknown condition '" + r.condition + "'");
  if (!c.find_question(r.passage, r.question_id))
    throw AggregationError(Kind::UnresolvableRecord,
                           "unknown question " + r.passage.str() + "#" + r.question_id);
  if (!c.find_variant(r.passage, r.condition))
    throw AggregationError(Kind::UnresolvableRecord,
                           "no passage " + r.passage.str() + " under " + r.condition);
}

}  // namespace

std::vector<const AnnotationRecord*> primary_records(std::span<const AnnotationRecord> records,
                                                     const std::string& condition,
                                                     const corpus::Corpus* corpus) {
  std::map<CellKey, const AnnotationRecord*> best;
  std::set<std::tuple<CellKey, std::string, int>> seen;
  for (const auto& r : records) {
    if (r.condition != condition) continue;
    if (corpus) resolve(r, *corpus);
    auto cell = cell_of(r);
    if (!seen.emplace(cell, r.participant_id, r.round).second)
      throw AggregationError(Kind::InvalidRecord, "participant " + r.participant_id +
                                                      " answered " + r.passage.str() + "#" +
                                                      r.question_id + " twice in one round");
    auto [it, inserted] = best.emplace(cell, &r);
    if (!inserted && precedes(r, *it->second)) it->second = &r;
  }
  std::vector<const AnnotationRecord*> out;
  out.reserve(best.size());
  for (const auto& [cell, rec] : best) out.push_back(rec);
  return out;
}

OptionRates option_distribution(std::span<const AnnotationRecord> records,
                                const std::string& condition, const corpus::Corpus* corpus) {
  const auto primary = primary_records(records, condition, corpus);
  if (primary.empty())
    throw AggregationError(Kind::EmptyCondition, "no records for condition '" + condition + "'");
  OptionRates out;
  for (const auto* r : primary) ++out.counts[index_of(r->selected)];
  out.total = primary.size();
  for (std::size_t i = 0; i < 5; ++i)
    out.rates[i] = static_cast<double>(out.counts[i]) / static_cast<double>(out.total);
  return out;
}

double accuracy(std::span<const AnnotationRecord> records, const std::string& condition,
                const corpus::Corpus* corpus) {
  return option_distribution(records, condition, corpus)[kCorrectLabel];
}

double answerability(std::span<const AnnotationRecord> records, const std::string& condition,
                     const corpus::Corpus* corpus) {
  const auto d = option_distribution(records, condition, corpus);
  return static_cast<double>(d.total - d.count(Label::UA)) / static_cast<double>(d.total);
}

SystemReport system_report(std::span<const AnnotationRecord> records, const std::string& condition,
                           const corpus::Corpus* corpus) {
  const auto d = option_distribution(records, condition, corpus);
  SystemReport r;
  r.condition = condition;
  r.option_rates = d.rates;
  r.acc = d[kCorrectLabel];
  r.ans = static_cast<double>(d.total - d.count(Label::UA)) / static_cast<double>(d.total);
  r.n_questions = d.total;
  return r;
}

std::vector<int> competition_ranks(std::span<const double> scores) {
  std::vector<int> ranks(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    int better = 0;
    for (double s : scores)
      if (s > scores[i]) ++better;
    ranks[i] = better + 1;
  }
  return ranks;
}

std::vector<SystemReport> rank_systems(std::vector<SystemReport> reports) {
  std::sort(reports.begin(), reports.end(), [](const SystemReport& a, const SystemReport& b) {
    if (a.acc != b.acc) return a.acc > b.acc;
    return a.condition < b.condition;
  });
  std::vector<double> accs;
  for (const auto& r : reports) accs.push_back(r.acc);
  const auto ranks = competition_ranks(accs);
  for (std::size_t i = 0; i < reports.size(); ++i) reports[i].rank = ranks[i];
  return reports;
}

std::vector<SystemReport> score_conditions(std::span<const AnnotationRecord> records,
                                           const corpus::Corpus* corpus,
                                           std::vector<std::string> conditions) {
  if (records.empty()) throw AggregationError(Kind::EmptyCondition, "no records");
  if (conditions.empty()) conditions = conditions_in(records);
  std::vector<SystemReport> reports;
  for (const auto& c : conditions) reports.push_back(system_report(records, c, corpus));
  return rank_systems(std::move(reports));
}

json to_json(const SystemReport& r) {
  json rates = json::object();
  for (Label l : kAllLabels) rates[std::string(to_string(l))] = r.rate(l);
  return json{{"condition", r.condition}, {"acc", r.acc},
              {"ans", r.ans},             {"option_rates", rates},
              {"n_questions", r.n_questions}, {"rank", r.rank}};
}

std::string format_report_table(std::span<const SystemReport> reports) {
  std::size_t width = 9;
  for (const auto& r : reports) width = std::max(width, r.condition.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(width)) << "Condition" << std::right
     << std::setw(10) << "% Correct" << std::setw(8) << "B" << std::setw(8) << "C"
     << std::setw(8) << "D" << std::setw(8) << "UA" << std::setw(8) << "% Ans" << std::setw(6)
     << "N" << std::setw(6) << "Rank" << '\n';
  os << std::fixed << std::setprecision(2);
  for (const auto& r : reports) {
    os << std::left << std::setw(static_cast<int>(width)) << r.condition << std::right
       << std::setw(10) << 100.0 * r.acc << std::setw(8) << 100.0 * r.rate(Label::B)
       << std::setw(8) << 100.0 * r.rate(Label::C) << std::setw(8) << 100.0 * r.rate(Label::D)
       << std::setw(8) << 100.0 * r.rate(Label::UA) << std::setw(8) << 100.0 * r.ans
       << std::setw(6) << r.n_questions << std::setw(6) << r.rank << '\n';
  }
  return os.str();
}

// ---- Ranking stability -------------------------------------------------------

const StabilityPoint& StabilityResult::at(const std::string& condition, std::size_t k) const {
  for (const auto& p : points)
    if (p.condition == condition && p.subset_size == k) return p;
  throw std::out_of_range("no stability point for " + condition + " at k=" + std::to_string(k));
}

StabilityResult ranking_stability(std::span<const AnnotationRecord> records,
                                  std::span<const std::size_t> subset_sizes, std::size_t runs,
                                  std::uint64_t seed, const corpus::Corpus* corpus) {
  if (runs == 0) throw std::invalid_argument("runs must be >= 1");
  StabilityResult out;
  out.conditions = conditions_in(records);
  out.subset_sizes.assign(subset_sizes.begin(), subset_sizes.end());
  out.runs = runs;
  out.seed = seed;

  std::vector<PassageKey> passages;
  if (corpus) {
    passages = corpus->passage_keys();
  } else {
    std::set<PassageKey> s;
    for (const auto& r : records) s.insert(r.passage);
    passages.assign(s.begin(), s.end());
  }
  out.passage_count = passages.size();
  for (std::size_t k : subset_sizes)
    if (k == 0 || k > passages.size())
      throw AggregationError(Kind::SubsetSize, "subset size " + std::to_string(k) +
                                                   " outside [1, " +
                                                   std::to_string(passages.size()) + "]");

  std::map<PassageKey, std::size_t> passage_index;
  for (std::size_t i = 0; i < passages.size(); ++i) passage_index[passages[i]] = i;

  // Per condition and passage: correct and total question counts.
  const std::size_t n_cond = out.conditions.size();
  std::vector<std::vector<std::size_t>> correct(n_cond, std::vector<std::size_t>(passages.size()));
  std::vector<std::vector<std::size_t>> total(n_cond, std::vector<std::size_t>(passages.size()));
  for (std::size_t c = 0; c < n_cond; ++c) {
    for (const auto* r : primary_records(records, out.conditions[c], corpus)) {
      auto it = passage_index.find(r->passage);
      if (it == passage_index.end()) continue;
      ++total[c][it->second];
      if (r->selected == kCorrectLabel) ++correct[c][it->second];
    }
  }

  for (std::size_t ki = 0; ki < subset_sizes.size(); ++ki) {
    const std::size_t k = subset_sizes[ki];
    std::vector<std::vector<double>> samples(n_cond);
    for (std::size_t run = 0; run < runs; ++run) {
      Rng rng(derive_seed(seed, (static_cast<std::uint64_t>(k) << 32) | run));
      const auto subset = rng.sample_without_replacement(passages.size(), k);
      for (std::size_t c = 0; c < n_cond; ++c) {
        std::size_t hit = 0, n = 0;
        for (std::size_t p : subset) {
          hit += correct[c][p];
          n += total[c][p];
        }
        if (n > 0) samples[c].push_back(static_cast<double>(hit) / static_cast<double>(n));
      }
    }
    std::vector<StabilityPoint> level;
    for (std::size_t c = 0; c < n_cond; ++c) {
      StabilityPoint p;
      p.condition = out.conditions[c];
      p.subset_size = k;
      p.runs = samples[c].size();
      const auto& v = samples[c];
      if (!v.empty() && std::all_of(v.begin(), v.end(), [&](double x) { return x == v[0]; })) {
        // Summation would leave rounding residue where the spread is exactly zero.
        p.mean = v[0];
      } else if (!v.empty()) {
        double sum = 0;
        for (double v : samples[c]) sum += v;
        p.mean = sum / static_cast<double>(samples[c].size());
        double ss = 0;
        for (double v : samples[c]) ss += (v - p.mean) * (v - p.mean);
        p.stddev = std::sqrt(ss / static_cast<double>(samples[c].size()));
      }
      level.push_back(p);
    }
    std::vector<double> means;
    for (const auto& p : level) means.push_back(p.mean);
    const auto ranks = competition_ranks(means);
    for (std::size_t c = 0; c < n_cond; ++c) {
      level[c].rank = ranks[c];
      out.points.push_back(level[c]);
    }
  }
  return out;
}

json to_json(const StabilityResult& r) {
  json points = json::array();
  for (const auto& p : r.points)
    points.push_back({{"condition", p.condition},
                      {"k", p.subset_size},
                      {"mean", p.mean},
                      {"std", p.stddev},
                      {"runs", p.runs},
                      {"rank", p.rank}});
  return json{{"seed", r.seed},
              {"runs", r.runs},
              {"passages", r.passage_count},
              {"subset_sizes", r.subset_sizes},
              {"conditions", r.conditions},
              {"points", points}};
}

std::string stability_csv(const StabilityResult& r) {
  std::ostringstream os;
  os << "condition,k,mean,std,runs,rank\n";
  os << std::setprecision(10);
  for (const auto& p : r.points)
    os << p.condition << ',' << p.subset_size << ',' << p.mean << ',' << p.stddev << ','
       << p.runs << ',' << p.rank << '\n';
  return os.str();
}

// ---- Agreement ---------------------------------------------------------------

KappaResult cohens_kappa_codes(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size())
    throw AggregationError(Kind::LengthMismatch, "kappa inputs differ in length");
  if (a.empty()) throw AggregationError(Kind::LengthMismatch, "kappa needs at least one pair");
  const double n = static_cast<double>(a.size());
  std::map<int, double> ma, mb;
  double agree = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma[a[i]] += 1;
    mb[b[i]] += 1;
    if (a[i] == b[i]) agree += 1;
  }
  KappaResult r;
  r.p_observed = agree / n;
  for (const auto& [code, count] : ma) {
    auto it = mb.find(code);
    if (it != mb.end()) r.p_expected += (count / n) * (it->second / n);
  }
  if (r.p_expected >= 1.0) {
    r.defined = r.p_observed >= 1.0;
    r.kappa = r.defined ? 1.0 : 0.0;
    return r;
  }
  r.kappa = (r.p_observed - r.p_expected) / (1.0 - r.p_expected);
  return r;
}

KappaResult cohens_kappa(std::span<const Label> a, std::span<const Label> b) {
  std::vector<int> x, y;
  for (Label l : a) x.push_back(static_cast<int>(l));
  for (Label l : b) y.push_back(static_cast<int>(l));
  return cohens_kappa_codes(x, y);
}

AgreementPairs agreement_pairs(std::span<const AnnotationRecord> records) {
  std::map<CellKey, std::vector<const AnnotationRecord*>> cells;
  for (const auto& r : records) cells[cell_of(r)].push_back(&r);
  AgreementPairs out;
  for (auto& [cell, recs] : cells) {
    if (recs.size() < 2) continue;
    std::sort(recs.begin(), recs.end(),
              [](const AnnotationRecord* a, const AnnotationRecord* b) { return precedes(*a, *b); });
    out.conditions.push_back(std::get<0>(cell));
    out.passages.push_back(std::get<1>(cell));
    out.question_ids.push_back(std::get<2>(cell));
    out.first.push_back(recs[0]->selected);
    out.second.push_back(recs[1]->selected);
  }
  return out;
}

// ---- UA heatmap --------------------------------------------------------------

UaHeatmap ua_heatmap(std::span<const AnnotationRecord> records, const corpus::Corpus* corpus) {
  UaHeatmap h;
  h.conditions = conditions_in(records);
  if (corpus) {
    h.passages = corpus->passage_keys();
  } else {
    std::set<PassageKey> s;
    for (const auto& r : records) s.insert(r.passage);
    h.passages.assign(s.begin(), s.end());
  }
  std::map<PassageKey, std::size_t> col;
  for (std::size_t i = 0; i < h.passages.size(); ++i) col[h.passages[i]] = i;
  h.counts.assign(h.conditions.size(), std::vector<int>(h.passages.size(), 0));
  for (std::size_t c = 0; c < h.conditions.size(); ++c)
    for (const auto* r : primary_records(records, h.conditions[c], corpus))
      if (r->selected == Label::UA) ++h.counts[c][col.at(r->passage)];
  return h;
}

std::string heatmap_csv(const UaHeatmap& h) {
  std::ostringstream os;
  os << "condition";
  for (const auto& p : h.passages) os << ',' << p.str();
  os << '\n';
  for (std::size_t c = 0; c < h.conditions.size(); ++c) {
    os << h.conditions[c];
    for (int v : h.counts[c]) os << ',' << v;
    os << '\n';
  }
  return os.str();
}

// ---- Quality checks ----------------------------------------------------------

SessionQuality assess_session(std::span<const AnnotationRecord> session_records,
                              const QualityConfig& config) {
  SessionQuality q;
  q.answers = session_records.size();
  if (session_records.empty()) return q;
  q.session_id = session_records.front().session_id;
  q.participant_id = session_records.front().participant_id;
  q.condition = session_records.front().condition;

  std::vector<std::int64_t> times;
  std::set<std::size_t> positions;
  for (const auto& r : session_records) {
    times.push_back(r.elapsed_ms);
    positions.insert(r.selected_position());
  }
  std::sort(times.begin(), times.end());
  const std::size_t n = times.size();
  q.median_elapsed_ms = n % 2 ? static_cast<double>(times[n / 2])
                              : (static_cast<double>(times[n / 2 - 1]) +
                                 static_cast<double>(times[n / 2])) / 2.0;
  q.straightlining = n >= config.min_answers_for_straightlining && positions.size() == 1;
  q.too_fast = q.median_elapsed_ms < static_cast<double>(config.too_fast_ms);
  return q;
}

std::vector<SessionQuality> quality_flags(std::span<const AnnotationRecord> records,
                                          const QualityConfig& config) {
  std::map<std::string, std::vector<AnnotationRecord>> sessions;
  for (const auto& r : records) sessions[r.session_id].push_back(r);
  std::vector<SessionQuality> out;
  for (const auto& [id, recs] : sessions) out.push_back(assess_session(recs, config));
  return out;
}

}  // namespace simpeval::humaneval
