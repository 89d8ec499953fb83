#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "simpeval/corpus.hpp"
#include "simpeval/humaneval.hpp"

namespace simpeval::testing {

// The eleven study conditions, original and reference first.
const std::vector<std::string>& study_conditions();

// M passages (two paragraphs per article), Q questions each, one variant per
// condition. Texts are generated from a small vocabulary and differ per
// condition; question option A is always the correct one.
corpus::Corpus synthetic_corpus(std::size_t passages, std::size_t questions_per_passage,
                                const std::vector<std::string>& conditions,
                                std::uint64_t seed = 7);

struct ConditionRow {
  std::string condition;
  double acc_pct;
  double b_pct;
  double c_pct;
  double d_pct;
  int rank;
};

// Percentages as printed in the human evaluation table.
const std::vector<ConditionRow>& condition_rows();

// Selection counts out of 180 for one row: round(pct * 1.8) for A-D, UA takes the rest.
std::array<std::size_t, 5> condition_counts(const ConditionRow& row);

// One record per (condition, passage, question) of a 60x3 corpus, reproducing
// the table's counts. Which cell gets which label is shuffled by `seed`.
std::vector<humaneval::AnnotationRecord> condition_records(const corpus::Corpus& corpus,
                                                        std::uint64_t seed = 11);

// Random record set over `corpus`: every cell annotated once with a random label.
std::vector<humaneval::AnnotationRecord> random_records(const corpus::Corpus& corpus,
                                                        std::uint64_t seed);

struct PublishedSystem {
  std::string condition;
  double acc;        // human accuracy, fraction
  double sari;       // corpus SARI
  double bertscore;  // corpus BERTScore
};

// The nine automatic systems with their human accuracy and reported metrics.
const std::vector<PublishedSystem>& published_systems();

}  // namespace simpeval::testing
