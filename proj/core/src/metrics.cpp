#include "emoformer/metrics.hpp"

#include <algorithm>
#include <fstream>

#include "emoformer/errors.hpp"

namespace emoformer {

Metrics compute_metrics(const std::vector<int>& truth,
                        const std::vector<int>& predicted, int num_classes) {
  if (truth.empty())
    throw ValidationError("compute_metrics: no samples to score");
  if (truth.size() != predicted.size())
    throw ValidationError("compute_metrics: " + std::to_string(truth.size()) +
                          " labels vs " + std::to_string(predicted.size()) +
                          " predictions");
  if (num_classes < 2)
    throw ValidationError("compute_metrics: need at least 2 classes");

  Metrics m;
  m.num_classes = num_classes;
  m.confusion.assign(static_cast<size_t>(num_classes) * num_classes, 0);
  m.support.assign(num_classes, 0);
  for (size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= num_classes || predicted[i] < 0 ||
        predicted[i] >= num_classes)
      throw ValidationError("compute_metrics: class id outside [0, " +
                            std::to_string(num_classes) + ") at sample " +
                            std::to_string(i));
    m.confusion[static_cast<size_t>(truth[i]) * num_classes + predicted[i]]++;
    m.support[truth[i]]++;
  }

  int64_t correct = 0;
  for (int k = 0; k < num_classes; ++k) correct += m.confusion_at(k, k);
  m.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());

  m.precision.resize(num_classes);
  m.recall.resize(num_classes);
  m.f1.resize(num_classes);
  for (int k = 0; k < num_classes; ++k) {
    int64_t tp = m.confusion_at(k, k);
    int64_t fp = 0, fn = 0;
    for (int j = 0; j < num_classes; ++j) {
      if (j == k) continue;
      fp += m.confusion_at(j, k);
      fn += m.confusion_at(k, j);
    }
    m.precision[k] =
        tp + fp == 0 ? 0.0
                     : static_cast<double>(tp) / static_cast<double>(tp + fp);
    m.recall[k] =
        tp + fn == 0 ? 0.0
                     : static_cast<double>(tp) / static_cast<double>(tp + fn);
    m.f1[k] = m.precision[k] + m.recall[k] == 0.0
                  ? 0.0
                  : 2.0 * m.precision[k] * m.recall[k] /
                        (m.precision[k] + m.recall[k]);
    m.macro_precision += m.precision[k];
    m.macro_recall += m.recall[k];
    m.macro_f1 += m.f1[k];
  }
  m.macro_precision /= num_classes;
  m.macro_recall /= num_classes;
  m.macro_f1 /= num_classes;
  return m;
}

nlohmann::json Metrics::to_json(const std::vector<std::string>& labels) const {
  nlohmann::json per_class = nlohmann::json::array();
  for (int k = 0; k < num_classes; ++k) {
    nlohmann::json entry{{"precision", precision[k]},
                         {"recall", recall[k]},
                         {"f1", f1[k]},
                         {"support", support[k]}};
    if (k < static_cast<int>(labels.size())) entry["label"] = labels[k];
    per_class.push_back(std::move(entry));
  }
  nlohmann::json confusion_rows = nlohmann::json::array();
  for (int k = 0; k < num_classes; ++k) {
    nlohmann::json row = nlohmann::json::array();
    for (int j = 0; j < num_classes; ++j) row.push_back(confusion_at(k, j));
    confusion_rows.push_back(std::move(row));
  }
  return nlohmann::json{{"accuracy", accuracy},
                        {"macro_precision", macro_precision},
                        {"macro_recall", macro_recall},
                        {"macro_f1", macro_f1},
                        {"per_class", per_class},
                        {"confusion", confusion_rows}};
}

void write_confusion_csv(const Metrics& metrics, const EmotionSet& set,
                         const std::string& path) {
  if (set.size() != metrics.num_classes)
    throw ValidationError("confusion CSV: emotion set has " +
                          std::to_string(set.size()) + " labels but metrics " +
                          std::to_string(metrics.num_classes) + " classes");
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "true\\predicted";
  for (const std::string& label : set.labels()) out << ',' << label;
  out << '\n';
  for (int k = 0; k < metrics.num_classes; ++k) {
    out << set.labels()[k];
    for (int j = 0; j < metrics.num_classes; ++j)
      out << ',' << metrics.confusion_at(k, j);
    out << '\n';
  }
  if (!out) throw IoError("failed while writing " + path);
}

void write_confusion_pgm(const Metrics& metrics, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  const int64_t peak =
      *std::max_element(metrics.confusion.begin(), metrics.confusion.end());
  out << "P2\n" << metrics.num_classes << ' ' << metrics.num_classes
      << "\n255\n";
  for (int k = 0; k < metrics.num_classes; ++k) {
    for (int j = 0; j < metrics.num_classes; ++j) {
      const int64_t count = metrics.confusion_at(k, j);
      const int gray =
          peak == 0 ? 255
                    : 255 - static_cast<int>((255 * count + peak / 2) / peak);
      out << gray << (j + 1 == metrics.num_classes ? '\n' : ' ');
    }
  }
  if (!out) throw IoError("failed while writing " + path);
}

}  // namespace emoformer
