#include "support/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace simpeval::oracle {

namespace {

std::vector<std::string> grams(const Tokens& t, std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) {
    std::string g;
    for (std::size_t k = 0; k < n; ++k) g += t[i + k] + '\x1f';
    out.push_back(g);
  }
  return out;
}

double count(const std::vector<std::string>& list, const std::string& g) {
  return static_cast<double>(std::count(list.begin(), list.end(), g));
}

std::vector<std::string> distinct(std::vector<std::string> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

double f1(double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; }

}  // namespace

Sari sari(const Tokens& source, const Tokens& output, const std::vector<Tokens>& references) {
  const double k = static_cast<double>(references.size());
  double add_sum = 0, keep_sum = 0, del_sum = 0;
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto S = grams(source, n);
    const auto C = grams(output, n);
    std::vector<std::string> R;
    for (const auto& r : references) {
      auto g = grams(r, n);
      R.insert(R.end(), g.begin(), g.end());
    }
    std::vector<std::string> everything = S;
    everything.insert(everything.end(), C.begin(), C.end());
    everything.insert(everything.end(), R.begin(), R.end());
    const auto universe = distinct(everything);

    double keep_p_num = 0, keep_p_den = 0, keep_r_num = 0, keep_r_den = 0;
    double del_num = 0, del_den = 0;
    double added = 0, added_good = 0, added_all = 0;
    for (const auto& g : universe) {
      const double s = count(S, g) * k, c = count(C, g) * k, r = count(R, g);
      const double kept = std::min(s, c);
      const double kept_good = std::min(kept, r);
      const double keep_all = std::min(s, r);
      if (kept > 0) {
        keep_p_den += 1;
        keep_p_num += kept_good / kept;
      }
      if (keep_all > 0) {
        keep_r_den += 1;
        if (kept_good > 0) keep_r_num += kept_good / keep_all;
      }
      const double deleted = s - c;
      if (deleted > 0) {
        del_den += 1;
        if (deleted - r > 0) del_num += (deleted - r) / deleted;
      }
      if (s == 0 && c > 0) {
        added += 1;
        if (r > 0) added_good += 1;
      }
      if (s == 0 && r > 0) added_all += 1;
    }
    const double keep_p = keep_p_den ? keep_p_num / keep_p_den : 1.0;
    const double keep_r = keep_r_den ? keep_r_num / keep_r_den : 1.0;
    keep_sum += f1(keep_p, keep_r);
    del_sum += del_den ? del_num / del_den : 1.0;
    const double add_p = added ? added_good / added : 1.0;
    const double add_r = added_all ? added_good / added_all : 1.0;
    add_sum += f1(add_p, add_r);
  }
  Sari out{};
  out.add = 25.0 * add_sum;
  out.keep = 25.0 * keep_sum;
  out.del = 25.0 * del_sum;
  out.average = (out.add + out.keep + out.del) / 3.0;
  return out;
}

double bleu(const std::vector<std::pair<Tokens, Tokens>>& pairs) {
  double hyp_len = 0, ref_len = 0;
  double matches[4] = {0, 0, 0, 0}, totals[4] = {0, 0, 0, 0};
  for (const auto& [hyp, ref] : pairs) {
    hyp_len += static_cast<double>(hyp.size());
    ref_len += static_cast<double>(ref.size());
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto H = grams(hyp, n);
      const auto Rg = grams(ref, n);
      totals[n - 1] += static_cast<double>(H.size());
      for (const auto& g : distinct(H)) matches[n - 1] += std::min(count(H, g), count(Rg, g));
    }
  }
  if (hyp_len == 0 || matches[0] == 0) return 0.0;
  double log_p = 0;
  for (int n = 0; n < 4; ++n) {
    double m = matches[n], t = totals[n];
    if (n > 0 && m == 0) {
      m = 1;
      t += 1;
    }
    log_p += std::log(m / t) / 4.0;
  }
  const double bp = hyp_len < ref_len ? std::exp(1.0 - ref_len / hyp_len) : 1.0;
  return 100.0 * bp * std::exp(log_p);
}

std::size_t levenshtein(const std::string& a, const std::string& b) {
  std::vector<std::vector<std::size_t>> d(a.size() + 1, std::vector<std::size_t>(b.size() + 1));
  for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i)
    for (std::size_t j = 1; j <= b.size(); ++j)
      d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1,
                          d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
  return d[a.size()][b.size()];
}

double spearman_no_ties(const std::vector<double>& x, const std::vector<double>& y) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i)
      r[i] = 1.0 + static_cast<double>(std::count_if(v.begin(), v.end(), [&](double w) { return w < v[i]; }));
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  double d2 = 0;
  for (std::size_t i = 0; i < x.size(); ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
  const double n = static_cast<double>(x.size());
  return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

}  // namespace simpeval::oracle
