#include "simpeval/cli.hpp"

#include <pthread.h>
#include <signal.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "simpeval/answerability.hpp"
#include "simpeval/corpus.hpp"
#include "simpeval/humaneval.hpp"
#include "simpeval/metaeval.hpp"
#include "simpeval/qa_adapter.hpp"
#include "simpeval/study_http.hpp"
#include "simpeval/study_service.hpp"
#include "simpeval/textmetrics.hpp"

namespace simpeval::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::string corpus;
  std::string questions;
  std::string annotations;
  std::string out = "out";
  std::uint64_t seed = 0;
  std::vector<std::string> exclude;
  std::string config;
  std::string original_condition = "original";
  std::string reference_condition = "elementary";
};

struct MetricsOpts {
  bool per_paragraph = false;
};

struct MetaevalOpts {
  std::vector<std::string> scores;
  bool include_human_written = false;
  std::string compare_metric;
  std::vector<std::string> compare;
  std::size_t resamples = 1000;
  unsigned threads = 1;
};

struct AnswerabilityOpts {
  std::string aggregation = "mean";
  double target_fpr = 0.1;
};

struct StabilityOpts {
  std::vector<std::size_t> sizes;
  std::size_t runs = 100;
};

struct QaOpts {
  std::string endpoint;
  int timeout_ms = 30000;
  int retries = 3;
  unsigned concurrency = 4;
  bool include_ua = false;
  bool shuffle_options = false;
  std::vector<std::string> conditions;
  std::string results;
  double max_error_fraction = 0.10;
};

struct ServeOpts {
  std::string listen = "127.0.0.1:8080";
  std::size_t session_size = 6;
  std::string log;
  std::string admin_token;
  std::int64_t too_fast_ms = 10000;
  bool shuffle_ua = false;
};

struct ValidateOpts {
  std::vector<std::string> scores;
};

std::string join(const std::vector<std::string>& items, const std::string& sep) {
  std::string s;
  for (std::size_t i = 0; i < items.size(); ++i) s += (i ? sep : "") + items[i];
  return s;
}

std::string scalar_string(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number() || v.is_null()) return v.dump();
  throw UsageError("config values must be scalars or arrays of scalars");
}

// Values from the config file replace whatever was given on the command line.
void apply_config(CLI::App& app, CLI::App* sub, const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw UsageError("cannot read config file " + file.string());
  json cfg = json::parse(in, nullptr, false);
  if (cfg.is_discarded() || !cfg.is_object())
    throw UsageError("config file " + file.string() + " must hold a JSON object");
  for (const auto& [key, value] : cfg.items()) {
    std::string name = key;
    std::replace(name.begin(), name.end(), '_', '-');
    if (name == "config") continue;
    CLI::Option* opt = nullptr;
    for (CLI::App* scope : {sub, &app}) {
      if (!scope || opt) continue;
      try {
        opt = scope->get_option("--" + name);
      } catch (const CLI::OptionNotFound&) {
      }
    }
    if (!opt) throw UsageError("unknown config key '" + key + "'");
    opt->clear();
    if (value.is_array()) {
      for (const auto& v : value) opt->add_result(scalar_string(v));
    } else {
      opt->add_result(scalar_string(value));
    }
    opt->run_callback();
  }
}

void require_file(const std::string& path, const std::string& flag) {
  if (path.empty()) throw UsageError(flag + " is required");
  if (!fs::is_regular_file(path)) throw UsageError(flag + ": no such file " + path);
}

void check_optional_file(const std::string& path, const std::string& flag) {
  if (!path.empty()) require_file(path, flag);
}

corpus::LoadOptions load_options(const Globals& g) {
  return {g.original_condition, g.reference_condition};
}

corpus::Corpus load_corpus(const Globals& g) {
  return corpus::load_corpus(g.corpus, g.questions, load_options(g));
}

fs::path prepare_out(const Globals& g) {
  fs::path dir(g.out);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << content;
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::set<std::string> exclusion(const Globals& g) { return {g.exclude.begin(), g.exclude.end()}; }

// ---- score --------------------------------------------------------------------

int cmd_score(const Globals& g, std::ostream& out) {
  require_file(g.annotations, "--annotations");
  const bool with_corpus = !g.corpus.empty() || !g.questions.empty();
  if (with_corpus) {
    require_file(g.corpus, "--corpus");
    require_file(g.questions, "--questions");
  }
  std::optional<corpus::Corpus> c;
  if (with_corpus) c = load_corpus(g);
  const corpus::Corpus* cp = c ? &*c : nullptr;

  const auto records = humaneval::load_annotations(g.annotations);
  const auto reports = humaneval::score_conditions(records, cp);
  const auto dir = prepare_out(g);

  json rows = json::array();
  for (const auto& r : reports) rows.push_back(humaneval::to_json(r));
  const std::string table = humaneval::format_report_table(reports);
  write_file(dir / "system_report.json", rows.dump(2) + "\n");
  write_file(dir / "system_report.txt", table);

  std::ostringstream chart;
  chart << "condition,answerable,ua_rate,accuracy\n";
  for (const auto& r : reports)
    chart << r.condition << ',' << fixed(r.ans, 6) << ',' << fixed(r.rate(Label::UA), 6) << ','
          << fixed(r.acc, 6) << '\n';
  write_file(dir / "answerability_chart.csv", chart.str());
  write_file(dir / "ua_heatmap.csv", humaneval::heatmap_csv(humaneval::ua_heatmap(records, cp)));

  json quality = json::array();
  for (const auto& q : humaneval::quality_flags(records))
    quality.push_back({{"session_id", q.session_id},
                       {"participant_id", q.participant_id},
                       {"condition", q.condition},
                       {"answers", q.answers},
                       {"median_elapsed_ms", q.median_elapsed_ms},
                       {"straightlining", q.straightlining},
                       {"too_fast", q.too_fast}});
  write_file(dir / "quality_flags.json", quality.dump(2) + "\n");

  out << table;
  return 0;
}

// ---- metrics ------------------------------------------------------------------

int cmd_metrics(const Globals& g, const MetricsOpts& o, std::ostream& out) {
  require_file(g.corpus, "--corpus");
  require_file(g.questions, "--questions");
  const auto c = load_corpus(g);
  if (!c.reference())
    throw UsageError("missing reference condition '" + g.reference_condition +
                     "': reference-based metrics need it");
  if (!c.original())
    throw UsageError("missing original condition '" + g.original_condition + "'");
  const std::string ref_id = c.reference()->id;
  const std::string src_id = c.original()->id;

  std::vector<corpus::MetricScoreRecord> scores;
  json summary = json::array();
  std::ostringstream table;
  table << std::left << std::setw(20) << "condition" << std::right << std::setw(8) << "words"
        << std::setw(7) << "sents" << std::setw(7) << "FKGL" << std::setw(8) << "SARI"
        << std::setw(8) << "add" << std::setw(8) << "keep" << std::setw(8) << "del"
        << std::setw(8) << "BLEU" << std::setw(9) << "Lev-ref" << std::setw(9) << "Lev-src"
        << '\n';

  for (const auto& cond : c.conditions()) {
    const auto keys = c.passages_for(cond.id);
    std::vector<textmetrics::SariSegment> segments;
    std::vector<std::pair<std::string, std::string>> pairs;
    double words = 0, sents = 0, fk = 0, lev_ref = 0, lev_src = 0;
    std::size_t fk_n = 0;
    for (const auto& key : keys) {
      const auto& text = c.text(key, cond.id);
      const auto* ref = c.find_variant(key, ref_id);
      const auto* src = c.find_variant(key, src_id);
      if (!ref) throw UsageError("missing reference text for " + key.str());
      if (!src) throw UsageError("missing original text for " + key.str());
      const auto t = textmetrics::tokenize(text);
      std::size_t w = 0;
      for (const auto& tok : t.tokens) w += textmetrics::is_word(tok) ? 1 : 0;
      std::optional<textmetrics::TextStats> stats;
      try {
        stats = textmetrics::text_stats(text);
      } catch (const textmetrics::DegenerateInput&) {
      }
      words += static_cast<double>(w);
      if (stats) {
        sents += static_cast<double>(stats->sentences);
        fk += stats->fkgl;
        ++fk_n;
      }
      const auto lr = textmetrics::levenshtein(text, ref->text).normalized;
      const auto ls = textmetrics::levenshtein(text, src->text).normalized;
      lev_ref += lr;
      lev_src += ls;
      segments.push_back({src->text, text, {ref->text}});
      pairs.emplace_back(text, ref->text);
      if (o.per_paragraph) {
        const auto s = textmetrics::sari(src->text, text, segments.back().references);
        auto add = [&](const std::string& metric, double v) {
          scores.push_back({cond.id, metric, v, corpus::Granularity::Paragraph, key});
        };
        add("sari", s.average);
        add("bleu", textmetrics::bleu(text, ref->text));
        if (stats) add("fkgl", stats->fkgl);
        add("levdist_ref", lr);
        add("levdist_src", ls);
      }
    }
    const double n = static_cast<double>(keys.size());
    const auto sari = textmetrics::corpus_sari(segments);
    const double bleu = textmetrics::corpus_bleu(pairs);
    std::map<std::string, double> values = {
        {"words", words / n},        {"sentences", sents / n},
        {"fkgl", fk_n ? fk / static_cast<double>(fk_n) : 0.0},
        {"sari", sari.average},      {"sari_add", sari.add},
        {"sari_keep", sari.keep},    {"sari_del", sari.del},
        {"bleu", bleu},              {"levdist_ref", lev_ref / n},
        {"levdist_src", lev_src / n}};
    for (const auto& [metric, v] : values)
      scores.push_back({cond.id, metric, v, corpus::Granularity::Corpus, std::nullopt});
    json row = values;
    row["condition"] = cond.id;
    summary.push_back(row);
    table << std::left << std::setw(20) << cond.id << std::right << std::setw(8)
          << fixed(values["words"], 1) << std::setw(7) << fixed(values["sentences"], 1)
          << std::setw(7) << fixed(values["fkgl"], 1) << std::setw(8) << fixed(sari.average, 2)
          << std::setw(8) << fixed(sari.add, 2) << std::setw(8) << fixed(sari.keep, 2)
          << std::setw(8) << fixed(sari.del, 2) << std::setw(8) << fixed(bleu, 2) << std::setw(9)
          << fixed(values["levdist_ref"], 3) << std::setw(9) << fixed(values["levdist_src"], 3)
          << '\n';
  }

  std::stable_sort(scores.begin(), scores.end(), [](const auto& a, const auto& b) {
    return std::tie(a.granularity, a.condition, a.paragraph, a.metric) <
           std::tie(b.granularity, b.condition, b.paragraph, b.metric);
  });
  const auto dir = prepare_out(g);
  std::ostringstream jsonl;
  corpus::write_metric_scores(scores, jsonl);
  write_file(dir / "metric_scores.jsonl", jsonl.str());
  write_file(dir / "metrics.json", summary.dump(2) + "\n");
  write_file(dir / "metrics_table.txt", table.str());
  out << table.str();
  return 0;
}

// ---- metaeval -----------------------------------------------------------------

int cmd_metaeval(const Globals& g, const MetaevalOpts& o, std::ostream& out) {
  if (o.scores.empty()) throw UsageError("--scores is required");
  for (const auto& s : o.scores) require_file(s, "--scores");
  check_optional_file(g.annotations, "--annotations");
  const bool with_corpus = !g.corpus.empty();
  if (with_corpus) {
    require_file(g.corpus, "--corpus");
    require_file(g.questions, "--questions");
  }
  if (!o.compare.empty() && (o.compare.size() != 2 || o.compare_metric.empty()))
    throw UsageError("--compare takes two conditions and needs --compare-metric");

  std::optional<corpus::Corpus> c;
  if (with_corpus) c = load_corpus(g);
  const corpus::Corpus* cp = c ? &*c : nullptr;

  std::vector<corpus::MetricScoreRecord> scores;
  for (const auto& s : o.scores) {
    auto part = corpus::load_metric_scores(s, cp);
    scores.insert(scores.end(), part.begin(), part.end());
  }

  std::vector<humaneval::SystemReport> human;
  std::vector<corpus::MetricScoreRecord> metric_scores;
  for (const auto& r : scores) {
    if (r.metric == "human_acc") {
      if (r.granularity == corpus::Granularity::Corpus && g.annotations.empty()) {
        humaneval::SystemReport rep;
        rep.condition = r.condition;
        rep.acc = r.value;
        human.push_back(rep);
      }
    } else {
      metric_scores.push_back(r);
    }
  }
  if (!g.annotations.empty()) {
    const auto records = humaneval::load_annotations(g.annotations);
    human = humaneval::score_conditions(records, cp);
  }
  if (human.empty()) throw UsageError("no human accuracy: give --annotations or a human_acc metric");

  std::set<std::string> human_written = {g.original_condition, g.reference_condition};
  const auto table =
      metaeval::build_metric_table(human, metric_scores, human_written, o.include_human_written);
  table.validate();

  std::vector<metaeval::CorrelationRow> rows;
  rows.push_back(metaeval::correlation_row(table, {}, "All"));
  const auto excl = exclusion(g);
  if (!excl.empty()) rows.push_back(metaeval::correlation_row(table, excl, "All - " + join(g.exclude, ", ")));

  json result;
  result["conditions"] = table.conditions;
  result["human_acc"] = table.human_acc;
  result["rows"] = json::array();
  for (const auto& r : rows) result["rows"].push_back(metaeval::to_json(r));

  if (!o.compare.empty()) {
    std::map<corpus::PassageKey, double> a, b;
    for (const auto& r : metric_scores) {
      if (r.metric != o.compare_metric || r.granularity != corpus::Granularity::Paragraph) continue;
      if (r.condition == o.compare[0]) a[*r.paragraph] = r.value;
      if (r.condition == o.compare[1]) b[*r.paragraph] = r.value;
    }
    std::vector<double> va, vb;
    for (const auto& [key, v] : a) {
      auto it = b.find(key);
      if (it == b.end()) continue;
      va.push_back(v);
      vb.push_back(it->second);
    }
    if (va.empty())
      throw UsageError("no paragraph-level '" + o.compare_metric + "' scores shared by " +
                       o.compare[0] + " and " + o.compare[1]);
    const auto sig = metaeval::paired_significance(va, vb, o.resamples, g.seed, o.threads);
    result["significance"] = {{"metric", o.compare_metric},
                              {"a", o.compare[0]},
                              {"b", o.compare[1]},
                              {"paragraphs", va.size()},
                              {"observed_difference", sig.observed_difference},
                              {"p_value", sig.p_value},
                              {"resamples", sig.resamples}};
  }

  const auto dir = prepare_out(g);
  const std::string matrix = metaeval::format_correlation_matrix(rows);
  write_file(dir / "metaeval.json", result.dump(2) + "\n");
  write_file(dir / "correlation.txt", matrix);
  out << matrix;
  if (result.contains("significance"))
    out << "paired bootstrap " << o.compare[0] << " vs " << o.compare[1] << " on "
        << o.compare_metric << ": diff " << fixed(result["significance"]["observed_difference"], 4)
        << ", p = " << fixed(result["significance"]["p_value"], 4) << '\n';
  return 0;
}

// ---- answerability ------------------------------------------------------------

int cmd_answerability(const Globals& g, const AnswerabilityOpts& o, std::ostream& out) {
  require_file(g.corpus, "--corpus");
  require_file(g.questions, "--questions");
  require_file(g.annotations, "--annotations");
  answerability::OptionAggregation agg;
  if (o.aggregation == "mean") agg = answerability::OptionAggregation::Mean;
  else if (o.aggregation == "max") agg = answerability::OptionAggregation::Max;
  else throw UsageError("--aggregation must be mean or max");

  const auto c = load_corpus(g);
  const auto records = humaneval::load_annotations(g.annotations);
  const auto features = answerability::compute_all_features(c, agg);
  const auto dir = prepare_out(g);

  std::ostringstream dump;
  for (const auto& cond : humaneval::conditions_in(records))
    for (const auto* r : humaneval::primary_records(records, cond, &c)) {
      const auto& f = features.at({r->condition, r->passage, r->question_id});
      dump << answerability::feature_dump_record(*r, f).dump() << '\n';
    }
  write_file(dir / "features.jsonl", dump.str());

  json result;
  result["aggregation"] = o.aggregation;
  result["target_fpr"] = o.target_fpr;
  std::ostringstream summary;
  for (auto f : {answerability::Feature::SupportQ, answerability::Feature::SupportA,
                 answerability::Feature::Product, answerability::Feature::SupportAMax}) {
    const std::string name(answerability::feature_name(f));
    const auto items = answerability::labeled_items(records, features, f);
    try {
      const auto curve = answerability::roc_curve(items);
      const auto op = answerability::tpr_at_fpr(curve, o.target_fpr);
      const double auc = answerability::roc_auc(curve);
      write_file(dir / ("roc_" + name + ".csv"), answerability::roc_table(curve));
      result["features"][name] = {{"auc", auc},
                                  {"tpr", op.tpr},
                                  {"achieved_fpr", op.achieved_fpr},
                                  {"threshold", op.threshold},
                                  {"points", curve.size()}};
      summary << std::left << std::setw(14) << name << " AUC " << fixed(auc, 3) << "  TPR "
              << fixed(op.tpr, 3) << " at FPR " << fixed(op.achieved_fpr, 3) << '\n';
    } catch (const answerability::DegenerateLabels& e) {
      result["features"][name] = {{"undefined", e.what()}};
      summary << std::left << std::setw(14) << name << " undefined: " << e.what() << '\n';
    }
  }
  try {
    const double v = answerability::verbatim_answer_accuracy(records, features);
    result["verbatim_answer_accuracy"] = v;
    summary << "accuracy when the correct option appears verbatim: " << fixed(v, 4) << '\n';
  } catch (const answerability::EmptySubset& e) {
    result["verbatim_answer_accuracy"] = nullptr;
    summary << "no question has a fully supported correct option\n";
  }
  write_file(dir / "answerability.json", result.dump(2) + "\n");
  write_file(dir / "answerability.txt", summary.str());
  out << summary.str();
  return 0;
}

// ---- stability ----------------------------------------------------------------

int cmd_stability(const Globals& g, const StabilityOpts& o, std::ostream& out) {
  require_file(g.annotations, "--annotations");
  const bool with_corpus = !g.corpus.empty();
  if (with_corpus) {
    require_file(g.corpus, "--corpus");
    require_file(g.questions, "--questions");
  }
  std::optional<corpus::Corpus> c;
  if (with_corpus) c = load_corpus(g);
  const auto records = humaneval::load_annotations(g.annotations);

  std::vector<std::size_t> sizes = o.sizes;
  if (sizes.empty()) {
    std::size_t m = 0;
    if (c) {
      m = c->passage_count();
    } else {
      std::set<corpus::PassageKey> keys;
      for (const auto& r : records) keys.insert(r.passage);
      m = keys.size();
    }
    for (std::size_t k = 5; k < m; k += 5) sizes.push_back(k);
    if (m > 0) sizes.push_back(m);
  }
  const auto result = humaneval::ranking_stability(records, sizes, o.runs, g.seed, c ? &*c : nullptr);
  const auto dir = prepare_out(g);
  write_file(dir / "stability.csv", humaneval::stability_csv(result));
  write_file(dir / "stability.json", humaneval::to_json(result).dump(2) + "\n");

  out << "ranking stability over " << result.runs << " runs, seed " << result.seed << '\n';
  for (std::size_t k : result.subset_sizes) {
    out << "  k=" << std::setw(3) << k << ':';
    std::vector<const humaneval::StabilityPoint*> pts;
    for (const auto& p : result.points)
      if (p.subset_size == k) pts.push_back(&p);
    std::stable_sort(pts.begin(), pts.end(), [](auto* a, auto* b) { return a->rank < b->rank; });
    for (const auto* p : pts) out << ' ' << p->condition << '(' << p->rank << ')';
    out << '\n';
  }
  return 0;
}

// ---- iaa ----------------------------------------------------------------------

int cmd_iaa(const Globals& g, std::ostream& out) {
  require_file(g.annotations, "--annotations");
  const auto records = humaneval::load_annotations(g.annotations);
  const auto pairs = humaneval::agreement_pairs(records);
  if (pairs.first.empty()) throw std::runtime_error("no doubly annotated cells");

  const auto k5 = humaneval::cohens_kappa(pairs.first, pairs.second);
  std::vector<int> a, b;
  for (std::size_t i = 0; i < pairs.first.size(); ++i) {
    a.push_back(pairs.first[i] == kCorrectLabel ? 1 : 0);
    b.push_back(pairs.second[i] == kCorrectLabel ? 1 : 0);
  }
  const auto k2 = humaneval::cohens_kappa_codes(a, b);
  auto kappa_json = [](const humaneval::KappaResult& k) {
    return json{{"kappa", k.kappa},
                {"p_observed", k.p_observed},
                {"p_expected", k.p_expected},
                {"defined", k.defined}};
  };
  std::set<std::string> conds(pairs.conditions.begin(), pairs.conditions.end());
  std::set<corpus::PassageKey> passages(pairs.passages.begin(), pairs.passages.end());
  json result = {{"pairs", pairs.first.size()},
                 {"conditions", conds.size()},
                 {"passages", passages.size()},
                 {"options", kappa_json(k5)},
                 {"correctness", kappa_json(k2)}};
  const auto dir = prepare_out(g);
  write_file(dir / "iaa.json", result.dump(2) + "\n");
  out << pairs.first.size() << " doubly annotated questions over " << passages.size()
      << " passages and " << conds.size() << " conditions\n"
      << "kappa (selected option): " << fixed(k5.kappa, 3) << (k5.defined ? "" : " (undefined)")
      << "\nkappa (correct vs not):  " << fixed(k2.kappa, 3) << (k2.defined ? "" : " (undefined)")
      << '\n';
  return 0;
}

// ---- qa -----------------------------------------------------------------------

int cmd_qa(const Globals& g, const QaOpts& o, std::ostream& out, std::ostream& err) {
  require_file(g.corpus, "--corpus");
  require_file(g.questions, "--questions");
  check_optional_file(g.annotations, "--annotations");
  if (o.endpoint.empty()) throw UsageError("--endpoint is required");
  try {
    qa::parse_endpoint(o.endpoint);
  } catch (const qa::ServiceError& e) {
    throw UsageError(e.what());
  }

  const auto c = load_corpus(g);
  std::vector<std::string> conditions = o.conditions;
  if (conditions.empty())
    for (const auto& cond : c.conditions()) conditions.push_back(cond.id);
  for (const auto& id : conditions)
    if (!c.has_condition(id)) throw UsageError("unknown condition " + id);

  std::vector<humaneval::SystemReport> human;
  if (!g.annotations.empty()) {
    const auto records = humaneval::load_annotations(g.annotations);
    human = humaneval::score_conditions(records, &c);
  }

  const auto dir = prepare_out(g);
  qa::ModelEvalConfig config;
  config.prompt.include_ua = o.include_ua;
  if (o.shuffle_options) config.prompt.shuffle_seed = g.seed;
  config.concurrency = o.concurrency;
  config.max_error_fraction = o.max_error_fraction;
  config.exclude = exclusion(g);
  config.results_path = o.results.empty() ? dir / "qa_results.jsonl" : fs::path(o.results);

  qa::HttpQaService service({o.endpoint, o.timeout_ms, o.retries, 200});
  auto finish = [&](const qa::ModelEvalReport& report) {
    write_file(dir / "qa_report.json", report.to_json().dump(2) + "\n");
    std::ostringstream s;
    for (const auto& ce : report.conditions)
      s << std::left << std::setw(20) << ce.condition << std::right << " EM " << fixed(ce.em, 4)
        << "  rank " << ce.rank << "  errors " << ce.errors << '\n';
    auto corr = [&](const char* label, const qa::Correlation& cr) {
      s << label << ": " << (cr.value ? fixed(*cr.value, 3) : "n/a")
        << (cr.note.empty() ? "" : " (" + cr.note + ")") << '\n';
    };
    if (!human.empty()) {
      corr("spearman vs human (all)", report.spearman_all);
      if (!config.exclude.empty()) corr("spearman vs human (excluding)", report.spearman_excluding);
    }
    write_file(dir / "qa_summary.txt", s.str());
    out << s.str();
  };
  try {
    finish(qa::model_eval(c, conditions, service, config, human));
  } catch (const qa::RunFailed& e) {
    finish(e.report);
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

// ---- serve --------------------------------------------------------------------

int cmd_serve(const Globals& g, const ServeOpts& o, std::ostream& out) {
  require_file(g.corpus, "--corpus");
  require_file(g.questions, "--questions");
  const auto colon = o.listen.rfind(':');
  if (colon == std::string::npos) throw UsageError("--listen must be host:port");
  const std::string host = o.listen.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(o.listen.substr(colon + 1));
  } catch (const std::exception&) {
    throw UsageError("--listen must be host:port");
  }

  const auto c = load_corpus(g);
  study::StudyConfig config;
  config.session_size = o.session_size;
  config.seed = g.seed;
  config.shuffle_ua = o.shuffle_ua;
  config.quality.too_fast_ms = o.too_fast_ms;
  if (o.log.empty()) {
    config.log_path = prepare_out(g) / "study_log.jsonl";
  } else {
    config.log_path = o.log;
  }
  study::StudyService service(c, config);
  study::StudyHttpServer server(service, {o.admin_token});
  const int bound = server.bind(host, port);
  if (bound < 0) throw std::runtime_error("cannot listen on " + o.listen);

  // Stop cleanly on SIGINT/SIGTERM: the signals are blocked here and picked
  // up by a dedicated thread.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&set, &sig);
    server.stop();
  });
  out << "serving " << c.conditions().size() << " conditions x " << c.passage_count()
      << " passages on " << host << ':' << bound << ", log " << config.log_path.string()
      << std::endl;
  server.listen_after_bind();
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  const auto cov = service.coverage();
  out << "stopped; " << cov.accepted << " of " << cov.cells << " cells annotated\n";
  return 0;
}

// ---- validate -----------------------------------------------------------------

int cmd_validate(const Globals& g, const ValidateOpts& o, std::ostream& out) {
  require_file(g.corpus, "--corpus");
  require_file(g.questions, "--questions");
  check_optional_file(g.annotations, "--annotations");
  for (const auto& s : o.scores) require_file(s, "--scores");

  const auto c = load_corpus(g);
  out << "corpus: " << c.conditions().size() << " conditions, " << c.passage_count()
      << " passages, " << c.questions_per_passage() << " questions per passage\n";
  if (!g.annotations.empty()) {
    const auto records = humaneval::load_annotations(g.annotations);
    std::size_t primary = 0;
    for (const auto& cond : humaneval::conditions_in(records))
      primary += humaneval::primary_records(records, cond, &c).size();
    out << "annotations: " << records.size() << " records, " << primary << " primary cells of "
        << c.conditions().size() * c.question_count() << '\n';
  }
  for (const auto& s : o.scores) {
    const auto scores = corpus::load_metric_scores(s, &c);
    out << "scores " << s << ": " << scores.size() << " records\n";
  }
  out << "ok\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Evaluation toolkit for text simplification via reading comprehension", "simpeval"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--corpus", g.corpus, "Passages file (JSON lines)");
  app.add_option("--questions", g.questions, "Questions file (JSON lines)");
  app.add_option("--annotations", g.annotations, "Annotation records (JSON lines)");
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app.add_option("--exclude", g.exclude, "Conditions left out of the second correlation row")
      ->delimiter(',');
  app.add_option("--config", g.config, "JSON file whose values override the flags");
  app.add_option("--original-condition", g.original_condition, "Id of the unsimplified condition")
      ->capture_default_str();
  app.add_option("--reference-condition", g.reference_condition,
                 "Id of the human reference simplification")
      ->capture_default_str();

  auto* score = app.add_subcommand("score", "Accuracy and answerability per condition");

  MetricsOpts mo;
  auto* metrics = app.add_subcommand("metrics", "Automatic metrics per condition");
  metrics->add_flag("--per-paragraph", mo.per_paragraph, "Also write paragraph-level scores");

  MetaevalOpts meo;
  auto* meta = app.add_subcommand("metaeval", "Correlate metrics with human accuracy");
  meta->add_option("--scores", meo.scores, "Metric score files (JSON lines)")->delimiter(',');
  meta->add_flag("--include-human-written", meo.include_human_written,
                 "Keep the original and reference conditions in the correlation");
  meta->add_option("--compare-metric", meo.compare_metric, "Metric for the paired bootstrap");
  meta->add_option("--compare", meo.compare, "Two conditions for the paired bootstrap")
      ->delimiter(',');
  meta->add_option("--resamples", meo.resamples, "Bootstrap resamples")->capture_default_str();
  meta->add_option("--threads", meo.threads, "Bootstrap worker threads")->capture_default_str();

  AnswerabilityOpts ao;
  auto* ans = app.add_subcommand("answerability", "Support features and ROC analysis");
  ans->add_option("--aggregation", ao.aggregation, "Option support aggregation: mean or max")
      ->capture_default_str();
  ans->add_option("--target-fpr", ao.target_fpr, "False positive rate for the operating point")
      ->capture_default_str();

  StabilityOpts so;
  auto* stab = app.add_subcommand("stability", "Ranking stability under passage subsampling");
  stab->add_option("--sizes", so.sizes, "Subset sizes (default: steps of 5 up to all)")
      ->delimiter(',');
  stab->add_option("--runs", so.runs, "Runs per subset size")->capture_default_str();

  auto* iaa = app.add_subcommand("iaa", "Inter-annotator agreement on doubly annotated cells");

  QaOpts qo;
  auto* qa_cmd = app.add_subcommand("qa", "Score conditions with an external QA model");
  qa_cmd->add_option("--endpoint", qo.endpoint, "QA service URL");
  qa_cmd->add_option("--timeout-ms", qo.timeout_ms, "Per-request timeout")->capture_default_str();
  qa_cmd->add_option("--retries", qo.retries, "Retries after a failed request")->capture_default_str();
  qa_cmd->add_option("--concurrency", qo.concurrency, "Requests in flight")->capture_default_str();
  qa_cmd->add_flag("--include-ua", qo.include_ua, "Offer the unanswerable option to the model");
  qa_cmd->add_flag("--shuffle-options", qo.shuffle_options, "Shuffle options with --seed");
  qa_cmd->add_option("--conditions", qo.conditions, "Conditions to score (default: all)")
      ->delimiter(',');
  qa_cmd->add_option("--results", qo.results, "Per-item results file, reused on resume");
  qa_cmd->add_option("--max-error-fraction", qo.max_error_fraction,
                     "Fail the run above this fraction of failed items")
      ->capture_default_str();

  ServeOpts sv;
  auto* serve = app.add_subcommand("serve", "Run the annotation study service");
  serve->add_option("--listen", sv.listen, "host:port")->envname("SIMPEVAL_LISTEN")->capture_default_str();
  serve->add_option("--session-size", sv.session_size, "Passages per session")
      ->envname("SIMPEVAL_SESSION_SIZE")
      ->capture_default_str();
  serve->add_option("--log", sv.log, "Record log (default: <out>/study_log.jsonl)")
      ->envname("SIMPEVAL_LOG");
  serve->add_option("--admin-token", sv.admin_token, "Token for the admin routes")
      ->envname("SIMPEVAL_ADMIN_TOKEN");
  serve->add_option("--too-fast-ms", sv.too_fast_ms, "Median answer time flagged as too fast")
      ->envname("SIMPEVAL_TOO_FAST_MS")
      ->capture_default_str();
  serve->add_flag("--shuffle-ua", sv.shuffle_ua, "Shuffle the unanswerable option too");

  ValidateOpts vo;
  auto* validate = app.add_subcommand("validate", "Check corpus, annotation and score files");
  validate->add_option("--scores", vo.scores, "Metric score files")->delimiter(',');

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    if (!g.config.empty()) apply_config(app, sub, g.config);
    if (sub == score) return cmd_score(g, out);
    if (sub == metrics) return cmd_metrics(g, mo, out);
    if (sub == meta) return cmd_metaeval(g, meo, out);
    if (sub == ans) return cmd_answerability(g, ao, out);
    if (sub == stab) return cmd_stability(g, so, out);
    if (sub == iaa) return cmd_iaa(g, out);
    if (sub == qa_cmd) return cmd_qa(g, qo, out, err);
    if (sub == serve) return cmd_serve(g, sv, out);
    if (sub == validate) return cmd_validate(g, vo, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const corpus::CorpusError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace simpeval::cli
