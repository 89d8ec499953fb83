#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

namespace simpeval::textmetrics {

struct SentenceRange {
  std::size_t begin = 0;  // token index, inclusive
  std::size_t end = 0;    // token index, exclusive

  bool operator==(const SentenceRange&) const = default;
};

struct TokenizedText {
  std::vector<std::string> tokens;
  std::vector<SentenceRange> sentences;
  std::string raw;
};

// Lowercases (ASCII), splits on Unicode whitespace and peels leading and
// trailing punctuation off every chunk into single-character tokens. A
// sentence ends after a chunk whose trailing punctuation holds '.', '!' or '?'.
TokenizedText tokenize(std::string_view text);

// True when the token has at least one letter or digit.
bool is_word(std::string_view token);

// Vowel-group count with a silent final 'e' (but not consonant + "le").
int syllables(std::string_view word);

class DegenerateInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TextStats {
  std::size_t words = 0;
  std::size_t sentences = 0;
  std::size_t syllables = 0;
  double fkgl = 0.0;
};

// Flesch-Kincaid grade level; throws DegenerateInput on zero words/sentences.
double fkgl(std::string_view text);
double fkgl_from_counts(std::size_t words, std::size_t sentences, std::size_t syllables);
TextStats text_stats(std::string_view text);

// ---- BLEU -------------------------------------------------------------------

inline constexpr int kMaxOrder = 4;

// Sufficient statistics for BLEU; add() them up for a corpus score.
struct BleuStats {
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;
  std::size_t matches[kMaxOrder] = {0, 0, 0, 0};
  std::size_t totals[kMaxOrder] = {0, 0, 0, 0};

  BleuStats& operator+=(const BleuStats& o);
  // 0-100. Orders >= 2 with zero matches are smoothed to (m+1)/(t+1).
  double score() const;
};

BleuStats bleu_stats(std::span<const std::string> output, std::span<const std::string> reference);
double bleu(std::string_view output, std::string_view reference);
// Counts are pooled over all pairs before the score is taken.
double corpus_bleu(std::span<const std::pair<std::string, std::string>> output_reference_pairs);

// ---- SARI -------------------------------------------------------------------

struct SariBreakdown {
  double add = 0.0;
  double keep = 0.0;
  double del = 0.0;
  double average = 0.0;
};

SariBreakdown sari_tokens(std::span<const std::string> source, std::span<const std::string> output,
                          std::span<const std::vector<std::string>> references);
SariBreakdown sari(std::string_view source, std::string_view output,
                   std::span<const std::string> references);

struct SariSegment {
  std::string source;
  std::string output;
  std::vector<std::string> references;
};
// Mean of per-paragraph breakdowns.
SariBreakdown corpus_sari(std::span<const SariSegment> segments);

// ---- Edit distance ----------------------------------------------------------

struct EditDistance {
  std::size_t distance = 0;
  double normalized = 0.0;  // distance / max(|a|, |b|), 0 for two empty strings
};

// Unit-cost edit distance over Unicode code points.
EditDistance levenshtein(std::string_view a, std::string_view b);

// ---- Support ----------------------------------------------------------------

using Stoplist = std::unordered_set<std::string>;

// The stopword list bundled with the library.
const Stoplist& default_stoplist();
Stoplist parse_stoplist(std::string_view contents);

// Fraction of distinct non-stopword word unigrams of `query` found in
// `passage`; 1 when the filtered query is empty.
double support(std::string_view query, std::string_view passage,
               const Stoplist& stoplist = default_stoplist());

// UTF-8 helpers shared with the other modules.
std::vector<char32_t> decode_utf8(std::string_view s);

}  // namespace simpeval::textmetrics
