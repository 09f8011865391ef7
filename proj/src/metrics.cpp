#include "normprior/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "json.hpp"
#include "normprior/error.hpp"

namespace normprior::metrics {

namespace {

using u128 = unsigned __int128;

u128 gcd128(u128 a, u128 b) {
  while (b != 0) {
    const u128 t = a % b;
    a = b;
    b = t;
  }
  return a;
}

constexpr u128 kExactLimit = u128{1} << 53;

// Correctly rounded num/den when both fit a double mantissa after reduction.
double ratio_to_double(u128 num, u128 den) {
  const u128 g = gcd128(num, den);
  if (g > 1) {
    num /= g;
    den /= g;
  }
  if (num < kExactLimit && den < kExactLimit) {
    return static_cast<double>(static_cast<std::uint64_t>(num)) /
           static_cast<double>(static_cast<std::uint64_t>(den));
  }
  return static_cast<double>(static_cast<long double>(num) /
                             static_cast<long double>(den));
}

struct Ratio {
  u128 num = 0;
  u128 den = 1;
  bool defined = true;
};

Ratio ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return {0, 1, false};
  return {num, den, true};
}

double value(const Ratio& r) { return ratio_to_double(r.num, r.den); }

// (a + b) / 2 evaluated exactly before the final rounding.
double mean(const Ratio& a, const Ratio& b) {
  return ratio_to_double(a.num * b.den + b.num * a.den, 2 * a.den * b.den);
}

struct ClassScores {
  Ratio precision;
  Ratio recall;
  Ratio f1;
};

ClassScores class_scores(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn) {
  // 2PR/(P+R) reduces to 2TP/(2TP+FP+FN) wherever P+R > 0.
  return {ratio(tp, tp + fp), ratio(tp, tp + fn), ratio(2 * tp, 2 * tp + fp + fn)};
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

}  // namespace

ConfusionMatrix swap_classes(const ConfusionMatrix& cm) {
  return {cm.tn, cm.fn, cm.tp, cm.fp};
}

std::string to_string(Averaging a) {
  return a == Averaging::kMacro ? "macro" : "positive_class";
}

Averaging averaging_from_string(const std::string& s) {
  if (s == "positive_class") return Averaging::kPositiveClass;
  if (s == "macro") return Averaging::kMacro;
  throw ValidationError("unknown averaging mode: " + s);
}

ConfusionMatrix confusion(std::span<const Prediction> pairs) {
  if (pairs.empty()) throw ValidationError("confusion: empty prediction list");
  ConfusionMatrix cm;
  for (const auto& p : pairs) {
    const bool pred_pos = p.predicted == Label::kNormative;
    const bool gold_pos = p.gold == Label::kNormative;
    if (pred_pos && gold_pos) {
      ++cm.tp;
    } else if (pred_pos) {
      ++cm.fp;
    } else if (gold_pos) {
      ++cm.fn;
    } else {
      ++cm.tn;
    }
  }
  return cm;
}

EvalReport compute_metrics(const ConfusionMatrix& cm, Averaging averaging) {
  if (cm.total() == 0) throw ValidationError("compute_metrics: empty matrix");

  EvalReport r;
  r.averaging = averaging;
  r.n = cm.total();
  r.accuracy = value(ratio(cm.tp + cm.tn, cm.total()));

  const ClassScores pos = class_scores(cm.tp, cm.fp, cm.fn);
  if (averaging == Averaging::kPositiveClass) {
    r.precision = value(pos.precision);
    r.recall = value(pos.recall);
    r.f1 = value(pos.f1);
    if (!pos.precision.defined) r.undefined.push_back("precision");
    if (!pos.recall.defined) r.undefined.push_back("recall");
    if (!pos.f1.defined) r.undefined.push_back("f1");
  } else {
    const ClassScores neg = class_scores(cm.tn, cm.fn, cm.fp);
    r.precision = mean(pos.precision, neg.precision);
    r.recall = mean(pos.recall, neg.recall);
    r.f1 = mean(pos.f1, neg.f1);
    auto flag = [&](const Ratio& x, const char* name) {
      if (!x.defined) r.undefined.push_back(name);
    };
    flag(pos.precision, "precision:normative");
    flag(neg.precision, "precision:non_normative");
    flag(pos.recall, "recall:normative");
    flag(neg.recall, "recall:non_normative");
    flag(pos.f1, "f1:normative");
    flag(neg.f1, "f1:non_normative");
  }

  const long double denom = static_cast<long double>(cm.tp + cm.fp) *
                            static_cast<long double>(cm.tp + cm.fn) *
                            static_cast<long double>(cm.tn + cm.fp) *
                            static_cast<long double>(cm.tn + cm.fn);
  if (denom == 0) {
    r.mcc = 0;
    r.undefined.push_back("mcc");
  } else {
    const long double num =
        static_cast<long double>(cm.tp) * static_cast<long double>(cm.tn) -
        static_cast<long double>(cm.fp) * static_cast<long double>(cm.fn);
    r.mcc = std::clamp(static_cast<double>(num / std::sqrt(denom)), -1.0, 1.0);
  }
  return r;
}

std::string csv_header() { return "model,test_acc,f1,precision,recall,mcc"; }

std::string to_csv_row(const std::string& model, const EvalReport& r) {
  std::string quoted = model;
  if (quoted.find_first_of(",\"\n") != std::string::npos) {
    std::string esc = "\"";
    for (char c : model) {
      if (c == '"') esc += '"';
      esc += c;
    }
    quoted = esc + "\"";
  }
  return quoted + "," + format_double(r.accuracy) + "," + format_double(r.f1) +
         "," + format_double(r.precision) + "," + format_double(r.recall) +
         "," + format_double(r.mcc);
}

std::string to_json(const std::string& model, const EvalReport& r) {
  nlohmann::ordered_json j;
  j["model"] = model;
  j["test_acc"] = r.accuracy;
  j["f1"] = r.f1;
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["mcc"] = r.mcc;
  j["averaging"] = to_string(r.averaging);
  j["n"] = r.n;
  j["undefined"] = r.undefined;
  return j.dump();
}

}  // namespace normprior::metrics
