#include "support/fixtures.hpp"

#include <cmath>
#include <sstream>

#include "simpeval/rng.hpp"

namespace simpeval::testing {

namespace {

const char* const kVocab[] = {
    "river",  "city",    "market", "doctor", "winter", "farmers", "school", "energy",
    "signal", "planet",  "forest", "coffee", "bridge", "museum",  "storm",  "island",
    "policy", "language", "vaccine", "harbor", "orchestra", "desert", "rocket", "library",
    "garden", "election", "glacier", "village", "factory", "painter", "festival", "engine",
};
constexpr std::size_t kVocabSize = sizeof(kVocab) / sizeof(kVocab[0]);

const char* const kFiller[] = {"the", "a", "was", "were", "near", "after", "with", "of", "and", "in"};
constexpr std::size_t kFillerSize = sizeof(kFiller) / sizeof(kFiller[0]);

std::string make_text(Rng& rng, std::size_t sentences) {
  std::ostringstream os;
  for (std::size_t s = 0; s < sentences; ++s) {
    const std::size_t words = 5 + rng.below(8);
    for (std::size_t w = 0; w < words; ++w) {
      std::string word = rng.below(3) == 0 ? kFiller[rng.below(kFillerSize)]
                                           : kVocab[rng.below(kVocabSize)];
      if (w == 0) word[0] = static_cast<char>(word[0] - 'a' + 'A');
      os << (w ? " " : "") << word;
    }
    os << (rng.below(6) == 0 ? "?" : ".") << (s + 1 < sentences ? " " : "");
  }
  return os.str();
}

}  // namespace

const std::vector<std::string>& study_conditions() {
  static const std::vector<std::string> ids = {
      "original",      "elementary",    "muss-sup",          "controlt5-wiki",
      "chatgpt",       "muss-unsup",    "controlsup-grade7", "editcl-grade7",
      "editcl-grade5", "controlsup-grade5", "kis"};
  return ids;
}

corpus::Corpus synthetic_corpus(std::size_t passages, std::size_t q, const std::vector<std::string>& conditions,
                                std::uint64_t seed) {
  std::vector<corpus::PassageVariant> variants;
  std::vector<corpus::RCQuestion> questions;
  for (std::size_t p = 0; p < passages; ++p) {
    corpus::PassageKey key{"art" + std::to_string(100 + p / 2), "p" + std::to_string(p % 2 + 1)};
    for (const auto& c : conditions) {
      Rng rng(derive_seed(seed, hash_string(c + "|" + key.str())));
      variants.push_back({key, c, make_text(rng, 2 + rng.below(4))});
    }
    Rng qrng(derive_seed(seed, hash_string("q|" + key.str())));
    for (std::size_t j = 0; j < q; ++j) {
      corpus::RCQuestion question;
      question.key = key;
      question.question_id = "q" + std::to_string(j + 1);
      question.stem = std::string("What happened to the ") + kVocab[qrng.below(kVocabSize)] + "?";
      for (std::size_t o = 0; o < 4; ++o)
        question.options[o] = std::string("The ") + kVocab[qrng.below(kVocabSize)] + " option " +
                              std::to_string(o + 1) + " of " + key.str() + "#" + question.question_id;
      questions.push_back(std::move(question));
    }
  }
  return corpus::build_corpus(std::move(variants), std::move(questions));
}

const std::vector<ConditionRow>& condition_rows() {
  static const std::vector<ConditionRow> rows = {
      {"original", 78.33, 6.11, 2.22, 1.11, 1},
      {"elementary", 77.22, 5.56, 2.78, 0.00, 2},
      {"muss-sup", 76.11, 6.67, 1.67, 1.67, 3},
      {"controlt5-wiki", 74.44, 6.11, 2.78, 1.67, 4},
      {"chatgpt", 74.44, 9.44, 1.11, 0.00, 4},
      {"muss-unsup", 73.33, 6.67, 2.78, 1.11, 6},
      {"controlsup-grade7", 70.56, 3.89, 2.78, 2.78, 7},
      {"editcl-grade7", 69.44, 10.56, 2.22, 0.56, 8},
      {"editcl-grade5", 69.44, 10.00, 2.22, 0.00, 8},
      {"controlsup-grade5", 67.78, 11.11, 3.89, 0.00, 10},
      {"kis", 20.50, 7.22, 3.89, 3.89, 11},
  };
  return rows;
}

std::array<std::size_t, 5> condition_counts(const ConditionRow& row) {
  auto count = [](double pct) { return static_cast<std::size_t>(std::lround(pct * 1.8)); };
  std::array<std::size_t, 5> c{count(row.acc_pct), count(row.b_pct), count(row.c_pct),
                               count(row.d_pct), 0};
  c[4] = 180 - c[0] - c[1] - c[2] - c[3];
  return c;
}

std::vector<humaneval::AnnotationRecord> condition_records(const corpus::Corpus& corpus,
                                                        std::uint64_t seed) {
  std::vector<humaneval::AnnotationRecord> out;
  for (const auto& row : condition_rows()) {
    const auto counts = condition_counts(row);
    std::vector<Label> labels;
    for (std::size_t l = 0; l < 5; ++l) labels.insert(labels.end(), counts[l], kAllLabels[l]);
    Rng rng(derive_seed(seed, hash_string(row.condition)));
    rng.shuffle(std::span<Label>(labels));
    std::size_t i = 0;
    for (const auto& q : corpus.questions()) {
      humaneval::AnnotationRecord r;
      const std::size_t passage_index = i / corpus.questions_per_passage();
      r.session_id = row.condition + "-s" + std::to_string(passage_index / 6);
      r.participant_id = row.condition + "-p" + std::to_string(passage_index / 6);
      r.condition = row.condition;
      r.passage = q.key;
      r.question_id = q.question_id;
      r.selected = labels.at(i);
      r.presented_order = {Label::A, Label::B, Label::C, Label::D, Label::UA};
      r.elapsed_ms = 30000;
      out.push_back(std::move(r));
      ++i;
    }
  }
  return out;
}

std::vector<humaneval::AnnotationRecord> random_records(const corpus::Corpus& corpus,
                                                        std::uint64_t seed) {
  Rng rng(seed);
  std::vector<humaneval::AnnotationRecord> out;
  for (const auto& c : corpus.conditions()) {
    for (const auto& q : corpus.questions()) {
      humaneval::AnnotationRecord r;
      r.session_id = "s-" + c.id + "-" + q.key.str();
      r.participant_id = "p-" + c.id + "-" + q.key.str();
      r.condition = c.id;
      r.passage = q.key;
      r.question_id = q.question_id;
      r.presented_order = {Label::A, Label::B, Label::C, Label::D, Label::UA};
      rng.shuffle(std::span<Label>(r.presented_order.data(), 4));
      r.selected = kAllLabels[rng.below(5)];
      r.elapsed_ms = static_cast<std::int64_t>(rng.below(120000));
      out.push_back(std::move(r));
    }
  }
  return out;
}

const std::vector<PublishedSystem>& published_systems() {
  static const std::vector<PublishedSystem> systems = {
      {"muss-sup", 0.7611, 45.07, 0.940},
      {"controlt5-wiki", 0.7444, 44.76, 0.938},
      {"controlsup-grade7", 0.7056, 29.27, 0.946},
      {"controlsup-grade5", 0.6778, 38.35, 0.939},
      {"editcl-grade7", 0.6944, 30.49, 0.939},
      {"editcl-grade5", 0.6944, 39.69, 0.929},
      {"chatgpt", 0.7444, 41.41, 0.927},
      {"muss-unsup", 0.7333, 40.67, 0.937},
      {"kis", 0.2050, 33.06, 0.893},
  };
  return systems;
}

}  // namespace simpeval::testing
