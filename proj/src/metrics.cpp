#include "fpott/metrics.hpp"

#include <numeric>

#include "fpott/error.hpp"
#include "fpott/trajectory_data.hpp"

namespace fpott {

namespace {

double safe_div(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

}  // namespace

std::size_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
}

ConfusionMatrix confusion(std::span<const std::size_t> truths,
                          std::span<const std::size_t> predictions, std::size_t n_classes) {
  if (truths.size() != predictions.size() || truths.empty()) {
    throw Error("LengthMismatch", std::to_string(truths.size()) + " truths vs " +
                                      std::to_string(predictions.size()) + " predictions");
  }
  ConfusionMatrix cm{n_classes, std::vector<std::size_t>(n_classes * n_classes, 0)};
  for (std::size_t i = 0; i < truths.size(); ++i) {
    if (truths[i] >= n_classes || predictions[i] >= n_classes) {
      throw Error("LabelOutOfRange", "label at position " + std::to_string(i));
    }
    ++cm.counts[truths[i] * n_classes + predictions[i]];
  }
  return cm;
}

MetricsReport report(const ConfusionMatrix& cm) {
  const std::size_t n = cm.n_classes;
  const std::size_t total = cm.total();
  if (n == 0 || total == 0) throw Error("EmptyMatrix", "confusion matrix has no counts");

  MetricsReport r;
  r.per_class.resize(n);
  std::size_t trace = 0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t row = 0, col = 0;
    for (std::size_t j = 0; j < n; ++j) {
      row += cm.at(c, j);
      col += cm.at(j, c);
    }
    const auto tp = static_cast<double>(cm.at(c, c));
    trace += cm.at(c, c);
    ClassMetrics& m = r.per_class[c];
    m.support = row;
    m.precision = safe_div(tp, static_cast<double>(col));
    m.recall = safe_div(tp, static_cast<double>(row));
    m.f1 = safe_div(2.0 * m.precision * m.recall, m.precision + m.recall);
    r.precision_macro += m.precision;
    r.recall_macro += m.recall;
    r.f1_macro += m.f1;
  }
  r.precision_macro /= static_cast<double>(n);
  r.recall_macro /= static_cast<double>(n);
  r.f1_macro /= static_cast<double>(n);
  r.accuracy = static_cast<double>(trace) / static_cast<double>(total);
  return r;
}

std::string metrics_csv_row(const std::string& model, const std::string& dataset,
                            const MetricsReport& r) {
  return model + "," + dataset + "," + format_fixed(r.precision_macro, 4) + "," +
         format_fixed(r.recall_macro, 4) + "," + format_fixed(r.f1_macro, 4) + "," +
         format_fixed(r.accuracy, 4);
}

}  // namespace fpott
