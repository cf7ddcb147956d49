#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace emoformer {

// Ordered label inventory; a label's class id is its position in the list.
class EmotionSet {
 public:
  // Presets of 5, 7, 10 or 23 emotions. The smaller sets nest: each extends
  // the previous one, and 23 is the full recording-corpus inventory.
  static EmotionSet preset(int count);
  static EmotionSet custom(std::vector<std::string> labels);

  const std::vector<std::string>& labels() const { return labels_; }
  int size() const { return static_cast<int>(labels_.size()); }

  // Throws naming both the label and the active set.
  int index_of(const std::string& label) const;
  bool contains(const std::string& label) const;

 private:
  explicit EmotionSet(std::vector<std::string> labels);
  std::vector<std::string> labels_;
};

struct ManifestEntry {
  std::string path;
  std::string label;
  std::string speaker;
  double duration = 0.0;  // seconds
};

// CSV-backed list of labelled clips, header `path,label,speaker,duration`.
struct Manifest {
  std::vector<ManifestEntry> entries;

  static Manifest load_csv(const std::string& path);
  void save_csv(const std::string& path) const;

  // Paths unique, labels drawn from the set, durations non-negative.
  void validate(const EmotionSet& set) const;
};

// Stratified split: per class, floor(n_c * ratio) plus largest-remainder
// rounding so the global train count is floor(total * ratio); every class
// keeps at least one sample on each side. Deterministic under seed.
std::pair<Manifest, Manifest> split(const Manifest& manifest, double ratio,
                                    uint64_t seed);

// Class ids in emotion-set order; unknown labels throw.
std::vector<int> label_encode(const std::vector<std::string>& labels,
                              const EmotionSet& set);

// Row r is the one-hot encoding of ids[r].
std::vector<float> one_hot(const std::vector<int>& ids, int num_classes);

}  // namespace emoformer
