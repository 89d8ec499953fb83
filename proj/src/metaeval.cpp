#include "simpeval/metaeval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <thread>

#include "simpeval/rng.hpp"

namespace simpeval::metaeval {

using Kind = StatsError::Kind;

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw StatsError(Kind::Length, "vectors differ in length");
  if (x.size() < 2) throw StatsError(Kind::Length, "need at least two points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) throw StatsError(Kind::ZeroVariance, "a vector has zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw StatsError(Kind::Length, "vectors differ in length");
  if (x.size() < 2) throw StatsError(Kind::Length, "need at least two points");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

void MetricTable::validate() const {
  if (human_acc.size() != conditions.size())
    throw StatsError(Kind::Length, "human accuracy vector does not match conditions");
  for (const auto& [name, values] : metrics)
    if (values.size() != conditions.size())
      throw StatsError(Kind::Length, "metric " + name + " does not match conditions");
}

MetricTable build_metric_table(std::span<const humaneval::SystemReport> human,
                               std::span<const corpus::MetricScoreRecord> scores,
                               const std::set<std::string>& human_written,
                               bool include_human_written) {
  MetricTable t;
  std::map<std::string, double> acc;
  for (const auto& r : human) acc[r.condition] = r.acc;
  for (const auto& [cond, a] : acc) {
    if (!include_human_written && human_written.count(cond)) continue;
    t.conditions.push_back(cond);
    t.human_acc.push_back(a);
  }

  std::map<std::string, std::map<std::string, double>> by_metric;
  for (const auto& s : scores)
    if (s.granularity == corpus::Granularity::Corpus) by_metric[s.metric][s.condition] = s.value;
  for (const auto& [metric, values] : by_metric) {
    std::vector<double> column;
    for (const auto& c : t.conditions) {
      auto it = values.find(c);
      if (it == values.end()) break;
      column.push_back(it->second);
    }
    if (column.size() == t.conditions.size()) t.metrics[metric] = std::move(column);
  }
  return t;
}

namespace {

struct Retained {
  std::vector<std::size_t> index;
  std::vector<double> human;
};

Retained retain(const MetricTable& table, const std::set<std::string>& exclude) {
  table.validate();
  Retained r;
  for (std::size_t i = 0; i < table.conditions.size(); ++i) {
    if (exclude.count(table.conditions[i])) continue;
    r.index.push_back(i);
    r.human.push_back(table.human_acc[i]);
  }
  if (r.index.size() < 3)
    throw StatsError(Kind::InsufficientConditions,
                     "need at least 3 conditions, have " + std::to_string(r.index.size()));
  return r;
}

std::vector<double> column_of(const std::vector<double>& values, const Retained& r) {
  std::vector<double> out;
  for (std::size_t i : r.index) out.push_back(values[i]);
  return out;
}

}  // namespace

std::map<std::string, double> correlation_table(const MetricTable& table,
                                                const std::set<std::string>& exclude) {
  const auto kept = retain(table, exclude);
  std::map<std::string, double> out;
  for (const auto& [name, values] : table.metrics) out[name] = spearman(column_of(values, kept), kept.human);
  return out;
}

CorrelationRow correlation_row(const MetricTable& table, const std::set<std::string>& exclude,
                               std::string label) {
  const auto kept = retain(table, exclude);
  CorrelationRow row;
  row.label = std::move(label);
  row.n_conditions = kept.index.size();
  for (const auto& [name, values] : table.metrics) {
    try {
      row.values[name] = spearman(column_of(values, kept), kept.human);
    } catch (const StatsError& e) {
      row.undefined[name] = e.what();
    }
  }
  return row;
}

nlohmann::json to_json(const CorrelationRow& row) {
  nlohmann::json values = nlohmann::json::object();
  for (const auto& [k, v] : row.values) values[k] = v;
  for (const auto& [k, why] : row.undefined) values[k] = nullptr;
  return {{"label", row.label}, {"n_conditions", row.n_conditions}, {"spearman", values}};
}

std::string format_correlation_matrix(std::span<const CorrelationRow> rows) {
  std::set<std::string> metrics;
  std::size_t label_width = 6;
  for (const auto& r : rows) {
    label_width = std::max(label_width, r.label.size());
    for (const auto& [k, v] : r.values) metrics.insert(k);
    for (const auto& [k, v] : r.undefined) metrics.insert(k);
  }
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(label_width)) << "metric";
  for (const auto& r : rows) os << "  " << std::right << std::setw(static_cast<int>(std::max<std::size_t>(r.label.size(), 8))) << r.label;
  os << '\n' << std::fixed << std::setprecision(3);
  for (const auto& m : metrics) {
    os << std::left << std::setw(static_cast<int>(label_width)) << m;
    for (const auto& r : rows) {
      const int w = static_cast<int>(std::max<std::size_t>(r.label.size(), 8));
      os << "  " << std::right << std::setw(w);
      if (auto it = r.values.find(m); it != r.values.end()) os << it->second;
      else os << "n/a";
    }
    os << '\n';
  }
  return os.str();
}

BootstrapResult paired_significance(std::span<const double> scores_a,
                                    std::span<const double> scores_b, std::size_t resamples,
                                    std::uint64_t seed, unsigned threads) {
  if (scores_a.size() != scores_b.size())
    throw StatsError(Kind::Length, "score vectors differ in length");
  if (scores_a.size() < 2) throw StatsError(Kind::Length, "need at least two paragraphs");
  if (resamples < 100) throw std::invalid_argument("need at least 100 resamples");

  const std::size_t n = scores_a.size();
  std::vector<double> diff(n);
  for (std::size_t i = 0; i < n; ++i) diff[i] = scores_a[i] - scores_b[i];

  BootstrapResult result;
  result.resamples = resamples;
  result.observed_difference = std::accumulate(diff.begin(), diff.end(), 0.0) / static_cast<double>(n);
  if (result.observed_difference == 0.0) {
    result.p_value = 1.0;
    return result;
  }
  const double sign = result.observed_difference > 0 ? 1.0 : -1.0;

  auto flips_in = [&](std::size_t begin, std::size_t end) {
    std::size_t flips = 0;
    for (std::size_t s = begin; s < end; ++s) {
      Rng rng(derive_seed(seed, s));
      double sum = 0;
      for (std::size_t i = 0; i < n; ++i) sum += diff[rng.below(n)];
      if (sign * sum <= 0.0) ++flips;
    }
    return flips;
  };

  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(resamples)));
  std::size_t flips = 0;
  if (threads == 1) {
    flips = flips_in(0, resamples);
  } else {
    std::vector<std::size_t> partial(threads, 0);
    std::vector<std::thread> pool;
    const std::size_t chunk = (resamples + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t begin = t * chunk;
      const std::size_t end = std::min(resamples, begin + chunk);
      pool.emplace_back([&, t, begin, end] { partial[t] = begin < end ? flips_in(begin, end) : 0; });
    }
    for (auto& th : pool) th.join();
    flips = std::accumulate(partial.begin(), partial.end(), std::size_t{0});
  }
  result.p_value = static_cast<double>(flips) / static_cast<double>(resamples);
  return result;
}

}  // namespace simpeval::metaeval
