#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <json.hpp>

namespace lpgnet {

using ConfusionMatrix = std::vector<std::vector<std::size_t>>;  // [true][predicted]

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  /// One-vs-all accuracy: (TP + TN) / total with this class as positive.
  double binary_accuracy = 0.0;
  std::size_t support = 0;
};

/// All rates are fractions in [0, 1]. A 0/0 precision, recall or F1 counts as 0.
struct MetricsReport {
  std::size_t num_classes = 0;
  std::size_t total = 0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double weighted_f1 = 0.0;
  /// Mean over classes of the one-vs-all binary accuracy.
  double ova_binary_accuracy = 0.0;
  std::vector<ClassMetrics> per_class;
  ConfusionMatrix confusion;

  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
};

/// Counts (label, prediction) pairs; entries with a negative label are skipped.
ConfusionMatrix confusion_matrix(std::span<const int> predicted, std::span<const int> labels, std::size_t num_classes);
void merge_into(ConfusionMatrix& into, const ConfusionMatrix& other);

/// ContractError when the matrix is empty (no counted utterances).
MetricsReport metrics_from_confusion(const ConfusionMatrix& confusion);

}  // namespace lpgnet
