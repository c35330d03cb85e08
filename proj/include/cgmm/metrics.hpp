#pragma once

#include <array>
#include <cstdio>
#include <string>
#include <vector>

#include "cgmm/common.hpp"
#include "cgmm/data.hpp"

namespace cgmm {

/// Per-class precision/recall/F1 with explicit zero conventions:
/// precision is 0 when the class was never predicted, recall is 0 when it
/// has no support, F1 is 0 when P + R = 0. The macro average runs over the
/// classes that appear at all (support or predictions); classes absent from
/// both ground truth and predictions are skipped rather than counted as 0.
struct MetricsReport {
  struct ClassMetrics {
    double precision = 0.0, recall = 0.0, f1 = 0.0;
    long long support = 0, predicted = 0, true_positive = 0;
  };

  std::array<std::array<long long, kNumClasses>, kNumClasses> confusion{};  // [truth][pred]
  std::array<ClassMetrics, kNumClasses> per_class{};
  double macro_precision = 0.0, macro_recall = 0.0, macro_f1 = 0.0;
  double micro_f1 = 0.0;  // == accuracy for single-label classification
  int classes_in_macro = 0;
  long long total = 0;
  std::string split_name;
};

inline MetricsReport compute_metrics(const std::vector<int>& truth, const std::vector<int>& pred,
                                     std::string split_name) {
  if (truth.size() != pred.size()) {
    throw validation_error("metrics: truth and prediction counts differ");
  }
  MetricsReport r;
  r.split_name = std::move(split_name);
  r.total = static_cast<long long>(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= kNumClasses || pred[i] < 0 || pred[i] >= kNumClasses) {
      throw validation_error("metrics: class index out of range at record " + std::to_string(i));
    }
    r.confusion[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(pred[i])] += 1;
  }
  long long correct = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    auto& m = r.per_class[static_cast<std::size_t>(c)];
    for (int o = 0; o < kNumClasses; ++o) {
      m.support += r.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(o)];
      m.predicted += r.confusion[static_cast<std::size_t>(o)][static_cast<std::size_t>(c)];
    }
    m.true_positive = r.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
    correct += m.true_positive;
    m.precision = m.predicted > 0 ? static_cast<double>(m.true_positive) / static_cast<double>(m.predicted) : 0.0;
    m.recall = m.support > 0 ? static_cast<double>(m.true_positive) / static_cast<double>(m.support) : 0.0;
    m.f1 = (m.precision + m.recall) > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    if (m.support > 0 || m.predicted > 0) {
      r.macro_precision += m.precision;
      r.macro_recall += m.recall;
      r.macro_f1 += m.f1;
      r.classes_in_macro += 1;
    }
  }
  if (r.classes_in_macro > 0) {
    r.macro_precision /= r.classes_in_macro;
    r.macro_recall /= r.classes_in_macro;
    r.macro_f1 /= r.classes_in_macro;
  }
  r.micro_f1 = r.total > 0 ? static_cast<double>(correct) / static_cast<double>(r.total) : 0.0;
  return r;
}

inline const char* metrics_csv_header() {
  return "run_id,split,ablation,class,precision,recall,f1,support";
}

/// One row per class plus the macro summary row, matching the documented
/// column layout.
inline std::vector<std::string> metrics_csv_rows(const MetricsReport& r, const std::string& run_id,
                                                 const std::string& ablation) {
  std::vector<std::string> rows;
  char buf[256];
  for (int c = 0; c < kNumClasses; ++c) {
    const auto& m = r.per_class[static_cast<std::size_t>(c)];
    std::snprintf(buf, sizeof(buf), "%s,%s,%s,%s,%.6f,%.6f,%.6f,%lld", run_id.c_str(),
                  r.split_name.c_str(), ablation.c_str(),
                  label_to_string(static_cast<TextClass>(c)), m.precision, m.recall, m.f1,
                  m.support);
    rows.emplace_back(buf);
  }
  std::snprintf(buf, sizeof(buf), "%s,%s,%s,macro,%.6f,%.6f,%.6f,%lld", run_id.c_str(),
                r.split_name.c_str(), ablation.c_str(), r.macro_precision, r.macro_recall,
                r.macro_f1, r.total);
  rows.emplace_back(buf);
  return rows;
}

}  // namespace cgmm
