#include "simpeval/textmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

namespace simpeval::textmetrics {

extern const char* const kStopwordData;  // generated from resources/stopwords_en.txt

namespace {

bool is_space(char32_t c) {
  switch (c) {
    case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D: case 0x20:
    case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029:
    case 0x202F: case 0x205F: case 0x3000:
      return true;
    default:
      return c >= 0x2000 && c <= 0x200A;
  }
}

bool is_punct(char32_t c) {
  if (c < 0x80) return (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) ||
                       (c >= 0x5B && c <= 0x60) || (c >= 0x7B && c <= 0x7E);
  switch (c) {
    case 0xA1: case 0xA7: case 0xAB: case 0xB6: case 0xB7: case 0xBB: case 0xBF:
      return true;
    default:
      return (c >= 0x2010 && c <= 0x2027) || (c >= 0x2030 && c <= 0x205E) ||
             (c >= 0x3001 && c <= 0x303F);
  }
}

bool is_terminal(char32_t c) { return c == '.' || c == '!' || c == '?'; }

char32_t to_lower(char32_t c) {
  if (c >= 'A' && c <= 'Z') return c + 32;
  if (c >= 0xC0 && c <= 0xDE && c != 0xD7) return c + 32;
  return c;
}

void append_utf8(std::string& out, char32_t c) {
  if (c < 0x80) {
    out.push_back(static_cast<char>(c));
  } else if (c < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (c >> 6)));
    out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
  } else if (c < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (c >> 12)));
    out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (c >> 18)));
    out.push_back(static_cast<char>(0x80 | ((c >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
  }
}

std::vector<std::string> word_tokens(std::string_view text) {
  auto t = tokenize(text);
  std::vector<std::string> out;
  for (auto& tok : t.tokens)
    if (is_word(tok)) out.push_back(std::move(tok));
  return out;
}

using NgramCounts = std::unordered_map<std::string, long>;

NgramCounts count_ngrams(std::span<const std::string> tokens, int n) {
  NgramCounts counts;
  const std::size_t len = static_cast<std::size_t>(n);
  if (tokens.size() < len) return counts;
  for (std::size_t i = 0; i + len <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (std::size_t j = 1; j < len; ++j) {
      key.push_back('\x1f');
      key += tokens[i + j];
    }
    ++counts[key];
  }
  return counts;
}

long count_of(const NgramCounts& m, const std::string& key) {
  auto it = m.find(key);
  return it == m.end() ? 0 : it->second;
}

double f1(double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; }

struct SariOrder {
  double keep = 0, del = 0, add = 0;
};

// One n-gram order of SARI, following the reference-weighted count
// formulation: source and output counts are scaled by the number of
// references before being compared with the pooled reference counts.
SariOrder sari_order(const NgramCounts& source, const NgramCounts& output,
                     const NgramCounts& refs, long num_refs) {
  NgramCounts keep_rep, keep_good, keep_all, del_rep, del_good;
  for (const auto& [g, c] : source) {
    const long c_rep = c * num_refs;
    const long s_rep = count_of(output, g) * num_refs;
    const long r = count_of(refs, g);
    const long kept = std::min(c_rep, s_rep);
    if (kept > 0) {
      keep_rep[g] = kept;
      if (long good = std::min(kept, r); good > 0) keep_good[g] = good;
    }
    if (long all = std::min(c_rep, r); all > 0) keep_all[g] = all;
    if (long deleted = c_rep - s_rep; deleted > 0) {
      del_rep[g] = deleted;
      if (long good = deleted - r; good > 0) del_good[g] = good;
    }
  }

  double keep_p_num = 0, keep_r_num = 0;
  for (const auto& [g, good] : keep_good) {
    keep_p_num += static_cast<double>(good) / static_cast<double>(keep_rep.at(g));
    keep_r_num += static_cast<double>(good) / static_cast<double>(keep_all.at(g));
  }
  const double keep_p = keep_rep.empty() ? 1.0 : keep_p_num / static_cast<double>(keep_rep.size());
  const double keep_r = keep_all.empty() ? 1.0 : keep_r_num / static_cast<double>(keep_all.size());

  double del_p_num = 0;
  for (const auto& [g, good] : del_good)
    del_p_num += static_cast<double>(good) / static_cast<double>(del_rep.at(g));
  const double del_p = del_rep.empty() ? 1.0 : del_p_num / static_cast<double>(del_rep.size());

  std::size_t added = 0, added_good = 0, added_all = 0;
  for (const auto& [g, c] : output) {
    if (source.count(g)) continue;
    ++added;
    if (refs.count(g)) ++added_good;
  }
  for (const auto& [g, c] : refs)
    if (!source.count(g)) ++added_all;
  const double add_p = added == 0 ? 1.0 : static_cast<double>(added_good) / added;
  const double add_r = added_all == 0 ? 1.0 : static_cast<double>(added_good) / added_all;

  return {f1(keep_p, keep_r), del_p, f1(add_p, add_r)};
}

}  // namespace

std::vector<char32_t> decode_utf8(std::string_view s) {
  std::vector<char32_t> out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    int extra = 0;
    char32_t cp = 0;
    if (b0 < 0x80) {
      cp = b0;
    } else if ((b0 & 0xE0) == 0xC0) {
      extra = 1;
      cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
      extra = 2;
      cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
      extra = 3;
      cp = b0 & 0x07;
    } else {
      out.push_back(0xFFFD);
      ++i;
      continue;
    }
    bool ok = i + static_cast<std::size_t>(extra) < s.size();
    for (int k = 1; ok && k <= extra; ++k) {
      const auto b = static_cast<unsigned char>(s[i + k]);
      if ((b & 0xC0) != 0x80) ok = false;
      else cp = (cp << 6) | (b & 0x3F);
    }
    if (!ok) {
      out.push_back(0xFFFD);
      ++i;
      continue;
    }
    out.push_back(cp);
    i += 1 + extra;
  }
  return out;
}

TokenizedText tokenize(std::string_view text) {
  TokenizedText result;
  result.raw = std::string(text);
  const auto cps = decode_utf8(text);

  std::size_t sentence_start = 0;
  auto emit_char = [&](char32_t c) {
    std::string tok;
    append_utf8(tok, c);
    result.tokens.push_back(std::move(tok));
  };

  std::size_t i = 0;
  while (i < cps.size()) {
    while (i < cps.size() && is_space(cps[i])) ++i;
    if (i == cps.size()) break;
    std::size_t end = i;
    while (end < cps.size() && !is_space(cps[end])) ++end;

    std::size_t lead = i;
    while (lead < end && is_punct(cps[lead])) ++lead;
    std::size_t trail = end;
    while (trail > lead && is_punct(cps[trail - 1])) --trail;

    bool terminal = false;
    for (std::size_t k = i; k < lead; ++k) emit_char(cps[k]);
    if (lead == end) {
      for (std::size_t k = i; k < end; ++k) terminal = terminal || is_terminal(cps[k]);
    } else {
      std::string core;
      for (std::size_t k = lead; k < trail; ++k) append_utf8(core, to_lower(cps[k]));
      result.tokens.push_back(std::move(core));
      for (std::size_t k = trail; k < end; ++k) {
        emit_char(cps[k]);
        terminal = terminal || is_terminal(cps[k]);
      }
    }
    if (terminal) {
      result.sentences.push_back({sentence_start, result.tokens.size()});
      sentence_start = result.tokens.size();
    }
    i = end;
  }
  if (sentence_start < result.tokens.size())
    result.sentences.push_back({sentence_start, result.tokens.size()});
  return result;
}

bool is_word(std::string_view token) {
  for (char32_t c : decode_utf8(token)) {
    if (c < 0x80) {
      if ((c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z')) return true;
    } else if (!is_punct(c) && !is_space(c) && c != 0xFFFD) {
      return true;
    }
  }
  return false;
}

int syllables(std::string_view word) {
  std::string w;
  for (char ch : word) {
    if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch + 32);
    if (ch >= 'a' && ch <= 'z') w.push_back(ch);
  }
  auto vowel = [](char c) {
    return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u' || c == 'y';
  };
  int groups = 0;
  bool prev = false;
  for (char c : w) {
    const bool v = vowel(c);
    if (v && !prev) ++groups;
    prev = v;
  }
  const std::size_t n = w.size();
  if (n >= 2 && w[n - 1] == 'e' && groups > 1) {
    const bool consonant_le = n >= 3 && w[n - 2] == 'l' && !vowel(w[n - 3]);
    if (!consonant_le) --groups;
  }
  return std::max(groups, 1);
}

double fkgl_from_counts(std::size_t words, std::size_t sentences, std::size_t syllable_count) {
  if (words == 0) throw DegenerateInput("FKGL needs at least one word");
  if (sentences == 0) throw DegenerateInput("FKGL needs at least one sentence");
  const double w = static_cast<double>(words);
  return 0.39 * (w / static_cast<double>(sentences)) +
         11.8 * (static_cast<double>(syllable_count) / w) - 15.59;
}

TextStats text_stats(std::string_view text) {
  const auto t = tokenize(text);
  TextStats s;
  for (const auto& range : t.sentences) {
    bool has_word = false;
    for (std::size_t k = range.begin; k < range.end; ++k) {
      if (!is_word(t.tokens[k])) continue;
      has_word = true;
      ++s.words;
      s.syllables += static_cast<std::size_t>(syllables(t.tokens[k]));
    }
    if (has_word) ++s.sentences;
  }
  s.fkgl = fkgl_from_counts(s.words, s.sentences, s.syllables);
  return s;
}

double fkgl(std::string_view text) { return text_stats(text).fkgl; }

BleuStats& BleuStats::operator+=(const BleuStats& o) {
  hyp_length += o.hyp_length;
  ref_length += o.ref_length;
  for (int n = 0; n < kMaxOrder; ++n) {
    matches[n] += o.matches[n];
    totals[n] += o.totals[n];
  }
  return *this;
}

double BleuStats::score() const {
  if (hyp_length == 0 || matches[0] == 0) return 0.0;
  double log_sum = 0.0;
  for (int n = 0; n < kMaxOrder; ++n) {
    double m = static_cast<double>(matches[n]);
    double t = static_cast<double>(totals[n]);
    if (n > 0 && matches[n] == 0) {
      m += 1.0;
      t += 1.0;
    }
    log_sum += std::log(m / t);
  }
  double bp = 1.0;
  if (hyp_length < ref_length)
    bp = std::exp(1.0 - static_cast<double>(ref_length) / static_cast<double>(hyp_length));
  return 100.0 * bp * std::exp(log_sum / kMaxOrder);
}

BleuStats bleu_stats(std::span<const std::string> output, std::span<const std::string> reference) {
  BleuStats s;
  s.hyp_length = output.size();
  s.ref_length = reference.size();
  for (int n = 1; n <= kMaxOrder; ++n) {
    const auto hyp = count_ngrams(output, n);
    const auto ref = count_ngrams(reference, n);
    std::size_t total = 0, matched = 0;
    for (const auto& [g, c] : hyp) {
      total += static_cast<std::size_t>(c);
      matched += static_cast<std::size_t>(std::min(c, count_of(ref, g)));
    }
    s.totals[n - 1] = total;
    s.matches[n - 1] = matched;
  }
  return s;
}

double bleu(std::string_view output, std::string_view reference) {
  const auto hyp = tokenize(output).tokens;
  const auto ref = tokenize(reference).tokens;
  return bleu_stats(hyp, ref).score();
}

double corpus_bleu(std::span<const std::pair<std::string, std::string>> pairs) {
  BleuStats total;
  for (const auto& [out, ref] : pairs) total += bleu_stats(tokenize(out).tokens, tokenize(ref).tokens);
  return total.score();
}

SariBreakdown sari_tokens(std::span<const std::string> source, std::span<const std::string> output,
                          std::span<const std::vector<std::string>> references) {
  if (references.empty()) throw std::invalid_argument("SARI needs at least one reference");
  const long num_refs = static_cast<long>(references.size());
  double keep = 0, del = 0, add = 0;
  for (int n = 1; n <= kMaxOrder; ++n) {
    NgramCounts refs;
    for (const auto& r : references)
      for (const auto& [g, c] : count_ngrams(r, n)) refs[g] += c;
    const auto o = sari_order(count_ngrams(source, n), count_ngrams(output, n), refs, num_refs);
    keep += o.keep;
    del += o.del;
    add += o.add;
  }
  SariBreakdown b;
  b.add = 100.0 * add / kMaxOrder;
  b.keep = 100.0 * keep / kMaxOrder;
  b.del = 100.0 * del / kMaxOrder;
  b.average = (b.add + b.keep + b.del) / 3.0;
  return b;
}

SariBreakdown sari(std::string_view source, std::string_view output,
                   std::span<const std::string> references) {
  std::vector<std::vector<std::string>> refs;
  for (const auto& r : references) refs.push_back(tokenize(r).tokens);
  return sari_tokens(tokenize(source).tokens, tokenize(output).tokens, refs);
}

SariBreakdown corpus_sari(std::span<const SariSegment> segments) {
  SariBreakdown mean;
  if (segments.empty()) return mean;
  for (const auto& s : segments) {
    const auto b = sari(s.source, s.output, s.references);
    mean.add += b.add;
    mean.keep += b.keep;
    mean.del += b.del;
  }
  const double n = static_cast<double>(segments.size());
  mean.add /= n;
  mean.keep /= n;
  mean.del /= n;
  mean.average = (mean.add + mean.keep + mean.del) / 3.0;
  return mean;
}

EditDistance levenshtein(std::string_view a, std::string_view b) {
  const auto x = decode_utf8(a);
  const auto y = decode_utf8(b);
  std::vector<std::size_t> prev(y.size() + 1), cur(y.size() + 1);
  for (std::size_t j = 0; j <= y.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= x.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= y.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (x[i - 1] == y[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  EditDistance d;
  d.distance = prev[y.size()];
  const std::size_t longest = std::max(x.size(), y.size());
  d.normalized = longest == 0 ? 0.0 : static_cast<double>(d.distance) / static_cast<double>(longest);
  return d;
}

Stoplist parse_stoplist(std::string_view contents) {
  Stoplist out;
  std::size_t pos = 0;
  while (pos <= contents.size()) {
    std::size_t nl = contents.find('\n', pos);
    if (nl == std::string_view::npos) nl = contents.size();
    std::string_view line = contents.substr(pos, nl - pos);
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t'))
      line.remove_suffix(1);
    while (!line.empty() && (line.front() == ' ' || line.front() == '\t')) line.remove_prefix(1);
    if (!line.empty() && line.front() != '#') {
      std::string w(line);
      for (auto& ch : w)
        if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch + 32);
      out.insert(std::move(w));
    }
    pos = nl + 1;
  }
  return out;
}

const Stoplist& default_stoplist() {
  static const Stoplist list = parse_stoplist(kStopwordData);
  return list;
}

double support(std::string_view query, std::string_view passage, const Stoplist& stoplist) {
  std::unordered_set<std::string> wanted;
  for (auto& w : word_tokens(query))
    if (!stoplist.count(w)) wanted.insert(std::move(w));
  if (wanted.empty()) return 1.0;
  std::unordered_set<std::string> present;
  for (auto& w : word_tokens(passage)) present.insert(std::move(w));
  std::size_t hit = 0;
  for (const auto& w : wanted)
    if (present.count(w)) ++hit;
  return static_cast<double>(hit) / static_cast<double>(wanted.size());
}

}  // namespace simpeval::textmetrics
