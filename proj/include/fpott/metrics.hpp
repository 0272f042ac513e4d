#pragma once

// Confusion-matrix classification metrics with macro averaging.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace fpott {

struct ConfusionMatrix {
  std::size_t n_classes = 0;
  std::vector<std::size_t> counts;  // row = true class, column = predicted

  std::size_t at(std::size_t truth, std::size_t pred) const { return counts[truth * n_classes + pred]; }
  std::size_t total() const;
};

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

struct MetricsReport {
  double precision_macro = 0.0;
  double recall_macro = 0.0;
  double f1_macro = 0.0;
  double accuracy = 0.0;
  std::vector<ClassMetrics> per_class;
};

// Throws "LengthMismatch" (including empty input) or "LabelOutOfRange".
ConfusionMatrix confusion(std::span<const std::size_t> truths,
                          std::span<const std::size_t> predictions, std::size_t n_classes);

// 0/0 is taken as 0 for precision, recall and F1. Throws "EmptyMatrix".
MetricsReport report(const ConfusionMatrix& cm);

inline constexpr const char* kMetricsCsvHeader = "model,dataset,precision,recall,f1,accuracy";
// One row in the header's layout, metrics with 4 decimals, no trailing newline.
std::string metrics_csv_row(const std::string& model, const std::string& dataset,
                            const MetricsReport& r);

}  // namespace fpott
