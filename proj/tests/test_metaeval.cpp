#include <doctest.h>

#include <cmath>

#include "simpeval/metaeval.hpp"
#include "simpeval/rng.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace simpeval;
using namespace simpeval::metaeval;

TEST_CASE("spearman on permutations of nine") {
  const std::vector<double> x = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  const std::vector<double> rev = {9, 8, 7, 6, 5, 4, 3, 2, 1};
  const std::vector<double> swap = {1, 2, 3, 5, 4, 6, 7, 8, 9};
  CHECK(spearman(x, x) == doctest::Approx(1.0));
  CHECK(spearman(x, rev) == doctest::Approx(-1.0));
  // 1 - 6 * 2 / (9 * 80)
  CHECK(spearman(x, swap) == doctest::Approx(1.0 - 12.0 / 720.0));
}

TEST_CASE("spearman matches the closed form on random tie-free data") {
  Rng rng(13);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 3 + rng.below(15);
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = static_cast<double>(i) + rng.uniform() * 0.5;
      y[i] = rng.uniform();
    }
    rng.shuffle(std::span<double>(x));
    CHECK(spearman(x, y) == doctest::Approx(oracle::spearman_no_ties(x, y)).epsilon(1e-12));
    CHECK(spearman(x, y) == doctest::Approx(spearman(y, x)));
    std::vector<double> tx(n);
    for (std::size_t i = 0; i < n; ++i) tx[i] = std::exp(x[i]) * 3 + 1;
    CHECK(spearman(tx, y) == doctest::Approx(spearman(x, y)));
  }
}

TEST_CASE("average ranks and errors") {
  CHECK(average_ranks(std::vector<double>{10, 20, 20, 30}) == std::vector<double>{1, 2.5, 2.5, 4});
  CHECK_THROWS_AS(spearman(std::vector<double>{1, 2}, std::vector<double>{1}), StatsError);
  try {
    spearman(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3});
    FAIL("expected zero variance");
  } catch (const StatsError& e) {
    CHECK(e.kind() == StatsError::Kind::ZeroVariance);
  }
  CHECK(pearson(std::vector<double>{1, 2, 3}, std::vector<double>{2, 4, 6}) == doctest::Approx(1.0));
}

TEST_CASE("correlation table") {
  MetricTable t;
  t.conditions = {"s1", "s2", "s3", "s4", "kis"};
  t.human_acc = {0.7, 0.6, 0.8, 0.65, 0.2};
  t.metrics["same"] = t.human_acc;
  t.metrics["dist"] = {0.3, 0.4, 0.2, 0.35, 0.8};
  const auto all = correlation_table(t);
  CHECK(all.at("same") == doctest::Approx(1.0));
  CHECK(all.at("dist") == doctest::Approx(-1.0));
  const auto excl = correlation_table(t, {"kis"});
  CHECK(excl.at("same") == doctest::Approx(1.0));

  MetricTable two;
  two.conditions = {"a", "b"};
  two.human_acc = {0.1, 0.2};
  two.metrics["m"] = {1, 2};
  try {
    correlation_table(two);
    FAIL("expected insufficient conditions");
  } catch (const StatsError& e) {
    CHECK(e.kind() == StatsError::Kind::InsufficientConditions);
  }
  CHECK_THROWS_AS(correlation_table(t, {"s1", "s2", "s3"}), StatsError);

  t.metrics["flat"] = {1, 1, 1, 1, 1};
  const auto row = correlation_row(t, {}, "All");
  CHECK(row.values.count("same") == 1);
  CHECK(row.undefined.count("flat") == 1);
  CHECK(row.n_conditions == 5);
  const auto text = format_correlation_matrix(std::vector<CorrelationRow>{row});
  CHECK(text.find("same") != std::string::npos);
}

TEST_CASE("metric table assembly") {
  std::vector<humaneval::SystemReport> human;
  for (const auto& [id, acc] : std::vector<std::pair<std::string, double>>{
           {"original", 0.78}, {"elementary", 0.77}, {"a", 0.7}, {"b", 0.6}, {"c", 0.5}}) {
    humaneval::SystemReport r;
    r.condition = id;
    r.acc = acc;
    human.push_back(r);
  }
  std::vector<corpus::MetricScoreRecord> scores;
  for (const auto& id : {"original", "elementary", "a", "b", "c"})
    scores.push_back({id, "m", 1.0, corpus::Granularity::Corpus, std::nullopt});
  scores.push_back({"a", "partial", 1.0, corpus::Granularity::Corpus, std::nullopt});
  const auto t = build_metric_table(human, scores, {"original", "elementary"});
  CHECK(t.conditions == std::vector<std::string>{"a", "b", "c"});
  CHECK(t.metrics.count("m") == 1);
  CHECK(t.metrics.count("partial") == 0);
  const auto with_humans = build_metric_table(human, scores, {"original", "elementary"}, true);
  CHECK(with_humans.conditions.size() == 5);
}

TEST_CASE("paired bootstrap") {
  std::vector<double> a(40), b(40);
  Rng rng(2);
  for (std::size_t i = 0; i < 40; ++i) a[i] = b[i] = rng.uniform();
  const auto same = paired_significance(a, b, 500, 1);
  CHECK(same.observed_difference == 0.0);
  CHECK(same.p_value == 1.0);

  for (std::size_t i = 0; i < 40; ++i) a[i] = b[i] + 10;
  CHECK(paired_significance(a, b, 500, 1).p_value == 0.0);

  // Symmetric noise around a vanishing offset: either sign is equally likely.
  for (std::size_t i = 0; i < 40; i += 2) {
    const double e = rng.uniform();
    a[i] = b[i] + e + 1e-9;
    a[i + 1] = b[i + 1] - e + 1e-9;
  }
  const auto noisy = paired_significance(a, b, 2000, 5);
  CHECK(noisy.p_value > 0.2);
  CHECK(noisy.p_value < 0.8);

  const auto again = paired_significance(a, b, 2000, 5);
  const auto threaded = paired_significance(a, b, 2000, 5, 3);
  CHECK(again.p_value == noisy.p_value);
  CHECK(threaded.p_value == noisy.p_value);
  CHECK_THROWS(paired_significance(a, std::vector<double>{1.0}, 500, 1));
  CHECK_THROWS(paired_significance(a, b, 50, 1));
}

TEST_CASE("published system vectors are well formed") {
  std::vector<double> acc, sari, bert;
  for (const auto& s : testing::published_systems()) {
    acc.push_back(s.acc);
    sari.push_back(s.sari);
    bert.push_back(s.bertscore);
  }
  CHECK(acc.size() == 9);
  const double all = spearman(sari, acc);
  CHECK(all >= -1.0);
  CHECK(all <= 1.0);
  // Dropping the outlier system raises the SARI agreement.
  std::vector<double> acc8(acc.begin(), acc.end() - 1), sari8(sari.begin(), sari.end() - 1);
  CHECK(spearman(sari8, acc8) > all);
}
