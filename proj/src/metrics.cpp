#include "lpgnet/metrics.hpp"

#include <string>

#include "lpgnet/errors.hpp"

namespace lpgnet {

using nlohmann::json;

ConfusionMatrix confusion_matrix(std::span<const int> predicted, std::span<const int> labels, std::size_t num_classes) {
  if (predicted.size() != labels.size()) throw DimensionError("confusion_matrix: prediction/label count mismatch");
  ConfusionMatrix cm(num_classes, std::vector<std::size_t>(num_classes, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) continue;
    const auto y = static_cast<std::size_t>(labels[i]);
    const auto p = static_cast<std::size_t>(predicted[i]);
    if (y >= num_classes || predicted[i] < 0 || p >= num_classes) {
      throw SchemaError("class id outside [0, " + std::to_string(num_classes) + ")");
    }
    ++cm[y][p];
  }
  return cm;
}

void merge_into(ConfusionMatrix& into, const ConfusionMatrix& other) {
  if (into.size() != other.size()) throw DimensionError("cannot merge confusion matrices of different size");
  for (std::size_t i = 0; i < into.size(); ++i)
    for (std::size_t j = 0; j < into.size(); ++j) into[i][j] += other[i][j];
}

MetricsReport metrics_from_confusion(const ConfusionMatrix& cm) {
  const std::size_t c = cm.size();
  MetricsReport r;
  r.num_classes = c;
  r.confusion = cm;
  std::size_t correct = 0;
  std::vector<std::size_t> row(c, 0), col(c, 0);
  for (std::size_t i = 0; i < c; ++i) {
    if (cm[i].size() != c) throw DimensionError("confusion matrix must be square");
    for (std::size_t j = 0; j < c; ++j) {
      r.total += cm[i][j];
      row[i] += cm[i][j];
      col[j] += cm[i][j];
    }
    correct += cm[i][i];
  }
  if (r.total == 0) throw ContractError("cannot compute metrics over zero utterances");

  auto ratio = [](double num, double den) { return den > 0 ? num / den : 0.0; };
  const double total = static_cast<double>(r.total);
  r.accuracy = static_cast<double>(correct) / total;
  for (std::size_t k = 0; k < c; ++k) {
    const double tp = static_cast<double>(cm[k][k]);
    const double fp = static_cast<double>(col[k]) - tp;
    const double fn = static_cast<double>(row[k]) - tp;
    const double tn = total - tp - fp - fn;
    ClassMetrics m;
    m.support = row[k];
    m.precision = ratio(tp, tp + fp);
    m.recall = ratio(tp, tp + fn);
    m.f1 = ratio(2.0 * tp, 2.0 * tp + fp + fn);
    m.binary_accuracy = (tp + tn) / total;
    r.macro_f1 += m.f1;
    r.weighted_f1 += m.f1 * static_cast<double>(m.support);
    r.ova_binary_accuracy += m.binary_accuracy;
    r.per_class.push_back(m);
  }
  r.macro_f1 /= static_cast<double>(c);
  r.weighted_f1 /= total;
  r.ova_binary_accuracy /= static_cast<double>(c);
  return r;
}

json MetricsReport::to_json() const {
  json classes = json::array();
  for (const auto& m : per_class) {
    classes.push_back({{"precision", m.precision},
                       {"recall", m.recall},
                       {"f1", m.f1},
                       {"binary_accuracy", m.binary_accuracy},
                       {"support", m.support}});
  }
  return {{"num_classes", num_classes},
          {"total", total},
          {"accuracy", accuracy},
          {"macro_f1", macro_f1},
          {"weighted_f1", weighted_f1},
          {"ova_binary_accuracy", ova_binary_accuracy},
          {"per_class", classes},
          {"confusion", confusion}};
}

MetricsReport MetricsReport::from_json(const json& j) {
  return metrics_from_confusion(j.at("confusion").get<ConfusionMatrix>());
}

}  // namespace lpgnet
