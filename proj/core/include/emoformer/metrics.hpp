#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emoformer/dataset.hpp"

namespace emoformer {

// Classification quality summary. Confusion rows are true labels, columns
// predictions; per-class F1 is 0 when precision and recall are both 0.
struct Metrics {
  int num_classes = 0;
  double accuracy = 0.0;
  std::vector<double> precision;   // per class
  std::vector<double> recall;
  std::vector<double> f1;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  std::vector<int64_t> confusion;  // row-major [K x K]
  std::vector<int64_t> support;    // true-label counts per class

  int64_t confusion_at(int truth, int predicted) const {
    return confusion[static_cast<size_t>(truth) * num_classes + predicted];
  }

  nlohmann::json to_json(const std::vector<std::string>& labels) const;
};

Metrics compute_metrics(const std::vector<int>& truth,
                        const std::vector<int>& predicted, int num_classes);

// K+1 rows: a header of predicted labels, then one row per true label.
void write_confusion_csv(const Metrics& metrics, const EmotionSet& set,
                         const std::string& path);

// Plain (P2) grayscale image, one pixel per cell, darker = more samples.
void write_confusion_pgm(const Metrics& metrics, const std::string& path);

}  // namespace emoformer
