#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace simpeval {

// Answer option labels. A-D follow the STARC severity order (A is the correct
// answer in storage); UA is the added "unanswerable" option.
enum class Label { A = 0, B = 1, C = 2, D = 3, UA = 4 };

inline constexpr std::array<Label, 5> kAllLabels = {Label::A, Label::B, Label::C,
                                                    Label::D, Label::UA};
inline constexpr std::array<Label, 4> kStoredLabels = {Label::A, Label::B, Label::C,
                                                       Label::D};
inline constexpr Label kCorrectLabel = Label::A;

inline constexpr std::size_t index_of(Label l) { return static_cast<std::size_t>(l); }

inline std::string_view to_string(Label l) {
  switch (l) {
    case Label::A: return "A";
    case Label::B: return "B";
    case Label::C: return "C";
    case Label::D: return "D";
    case Label::UA: return "UA";
  }
  return "?";
}

inline std::optional<Label> parse_label(std::string_view s) {
  if (s == "A" || s == "a") return Label::A;
  if (s == "B" || s == "b") return Label::B;
  if (s == "C" || s == "c") return Label::C;
  if (s == "D" || s == "d") return Label::D;
  if (s == "UA" || s == "ua" || s == "E" || s == "e") return Label::UA;
  return std::nullopt;
}

inline Label label_or_throw(std::string_view s) {
  auto l = parse_label(s);
  if (!l) throw std::invalid_argument("unknown option label '" + std::string(s) + "'");
  return *l;
}

// Wording of the unanswerable option shown to participants.
inline constexpr std::string_view kUnanswerableText =
    "The questions or the answer options are not supported by the passage.";

}  // namespace simpeval
