#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "normprior/labels.hpp"

namespace normprior::metrics {

// Normative is the positive class.
struct ConfusionMatrix {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
  bool operator==(const ConfusionMatrix&) const = default;
};

// Treats non-normative as the positive class instead.
ConfusionMatrix swap_classes(const ConfusionMatrix& cm);

enum class Averaging { kPositiveClass, kMacro };

std::string to_string(Averaging a);
Averaging averaging_from_string(const std::string& s);

struct EvalReport {
  double accuracy = 0;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  double mcc = 0;
  Averaging averaging = Averaging::kPositiveClass;
  std::uint64_t n = 0;
  // Names of metrics whose denominator was zero; those are reported as 0.
  std::vector<std::string> undefined;
};

struct Prediction {
  Label predicted;
  Label gold;
};

// Throws ValidationError on an empty list.
ConfusionMatrix confusion(std::span<const Prediction> pairs);

// Throws ValidationError on a zero-total matrix.
EvalReport compute_metrics(const ConfusionMatrix& cm,
                           Averaging averaging = Averaging::kPositiveClass);

// Column order: model,test_acc,f1,precision,recall,mcc
std::string csv_header();
std::string to_csv_row(const std::string& model, const EvalReport& r);
std::string to_json(const std::string& model, const EvalReport& r);

}  // namespace normprior::metrics
