#pragma once

#include <string>
#include <string_view>

namespace normprior {

enum class Label { kNormative, kNonNormative };

inline std::string_view to_string(Label l) {
  return l == Label::kNormative ? "normative" : "non_normative";
}

// Returns false on an unknown label string.
inline bool parse_label(std::string_view s, Label& out) {
  if (s == "normative") {
    out = Label::kNormative;
    return true;
  }
  if (s == "non_normative") {
    out = Label::kNonNormative;
    return true;
  }
  return false;
}

inline Label opposite(Label l) {
  return l == Label::kNormative ? Label::kNonNormative : Label::kNormative;
}

}  // namespace normprior
