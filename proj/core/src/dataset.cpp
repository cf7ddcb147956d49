#include "emoformer/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "emoformer/errors.hpp"
#include "emoformer/rng.hpp"

namespace emoformer {

namespace {

const std::vector<std::string>& full_inventory() {
  static const std::vector<std::string> kAll = {
      "adoration",  "amazement",      "amusement", "anger",       "confusion",
      "contentment", "cuteness",      "desire",    "disappointment",
      "disgust",    "distress",       "embarrassment", "extreme", "fear",
      "guilt",      "interest",       "neutral",   "pain",        "pride",
      "realization", "relief",        "sadness",   "serenity"};
  return kAll;
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) out += ", ";
    out += parts[i];
  }
  return out;
}

// Splits one CSV line on commas; fields in this format never contain commas
// or quotes, so no quoting rules are needed.
std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

}  // namespace

EmotionSet::EmotionSet(std::vector<std::string> labels)
    : labels_(std::move(labels)) {}

EmotionSet EmotionSet::preset(int count) {
  std::vector<std::string> labels = {"adoration", "anger", "fear", "neutral",
                                     "sadness"};
  switch (count) {
    case 5:
      break;
    case 7:
      labels.insert(labels.end(), {"disappointment", "pain"});
      break;
    case 10:
      labels.insert(labels.end(),
                    {"disappointment", "pain", "guilt", "disgust", "distress"});
      break;
    case 23:
      labels = full_inventory();
      break;
    default:
      throw ValidationError("emotion preset must be 5, 7, 10 or 23, got " +
                            std::to_string(count));
  }
  return EmotionSet(std::move(labels));
}

EmotionSet EmotionSet::custom(std::vector<std::string> labels) {
  if (labels.size() < 2)
    throw ValidationError("an emotion set needs at least 2 labels");
  std::set<std::string> seen;
  for (const std::string& label : labels) {
    if (label.empty())
      throw ValidationError("emotion labels must be non-empty");
    if (!seen.insert(label).second)
      throw ValidationError("duplicate emotion label '" + label + "'");
  }
  return EmotionSet(std::move(labels));
}

int EmotionSet::index_of(const std::string& label) const {
  for (size_t i = 0; i < labels_.size(); ++i)
    if (labels_[i] == label) return static_cast<int>(i);
  throw ValidationError("label '" + label + "' is not in the emotion set {" +
                        join(labels_) + "}");
}

bool EmotionSet::contains(const std::string& label) const {
  return std::find(labels_.begin(), labels_.end(), label) != labels_.end();
}

Manifest Manifest::load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path);
  std::string line;
  if (!std::getline(in, line))
    throw FormatError("manifest " + path + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "path,label,speaker,duration")
    throw FormatError("manifest " + path +
                      ": first line must be 'path,label,speaker,duration'");
  Manifest manifest;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_fields(line);
    if (fields.size() != 4)
      throw FormatError("manifest " + path + " line " +
                        std::to_string(line_no) + ": expected 4 fields, got " +
                        std::to_string(fields.size()));
    ManifestEntry entry;
    entry.path = fields[0];
    entry.label = fields[1];
    entry.speaker = fields[2];
    try {
      entry.duration = std::stod(fields[3]);
    } catch (const std::exception&) {
      throw FormatError("manifest " + path + " line " +
                        std::to_string(line_no) + ": bad duration '" +
                        fields[3] + "'");
    }
    manifest.entries.push_back(std::move(entry));
  }
  return manifest;
}

void Manifest::save_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path);
  out << "path,label,speaker,duration\n";
  for (const ManifestEntry& e : entries)
    out << e.path << ',' << e.label << ',' << e.speaker << ',' << e.duration
        << '\n';
  if (!out) throw IoError("failed while writing manifest " + path);
}

void Manifest::validate(const EmotionSet& set) const {
  std::set<std::string> paths;
  for (const ManifestEntry& e : entries) {
    if (!paths.insert(e.path).second)
      throw ValidationError("manifest: duplicate path " + e.path);
    if (!set.contains(e.label))
      throw ValidationError("manifest: " + e.path + " has label '" + e.label +
                            "' outside the emotion set {" +
                            join(set.labels()) + "}");
    if (e.duration < 0.0)
      throw ValidationError("manifest: " + e.path + " has negative duration");
  }
}

std::pair<Manifest, Manifest> split(const Manifest& manifest, double ratio,
                                    uint64_t seed) {
  if (ratio <= 0.0 || ratio >= 1.0)
    throw ValidationError("split: ratio must lie in (0, 1), got " +
                          std::to_string(ratio));
  if (manifest.entries.empty())
    throw ValidationError("split: manifest is empty");

  // Group entry indices by label, label order = first appearance.
  std::vector<std::string> order;
  std::map<std::string, std::vector<size_t>> by_label;
  for (size_t i = 0; i < manifest.entries.size(); ++i) {
    const std::string& label = manifest.entries[i].label;
    auto [it, inserted] = by_label.try_emplace(label);
    if (inserted) order.push_back(label);
    it->second.push_back(i);
  }
  for (const std::string& label : order)
    if (by_label[label].size() < 2)
      throw ValidationError("split: class '" + label + "' has only " +
                            std::to_string(by_label[label].size()) +
                            " sample(s); stratification needs at least 2");

  const size_t total = manifest.entries.size();
  const auto target_train =
      static_cast<size_t>(std::floor(static_cast<double>(total) * ratio));

  // Per-class floor counts, then hand out the remaining seats to the classes
  // with the largest fractional remainders (ties broken by label order).
  struct ClassPlan {
    std::string label;
    size_t train_count;
    double remainder;
    size_t order_index;
  };
  std::vector<ClassPlan> plans;
  size_t assigned = 0;
  for (size_t idx = 0; idx < order.size(); ++idx) {
    const std::string& label = order[idx];
    const double exact =
        static_cast<double>(by_label[label].size()) * ratio;
    ClassPlan plan{label, static_cast<size_t>(std::floor(exact)),
                   exact - std::floor(exact), idx};
    assigned += plan.train_count;
    plans.push_back(plan);
  }
  std::vector<size_t> by_remainder(plans.size());
  for (size_t i = 0; i < plans.size(); ++i) by_remainder[i] = i;
  std::sort(by_remainder.begin(), by_remainder.end(),
            [&plans](size_t a, size_t b) {
              if (plans[a].remainder != plans[b].remainder)
                return plans[a].remainder > plans[b].remainder;
              return plans[a].order_index < plans[b].order_index;
            });
  bool progressed = true;
  while (assigned < target_train && progressed) {
    progressed = false;
    for (size_t i = 0; assigned < target_train && i < by_remainder.size();
         ++i) {
      ClassPlan& plan = plans[by_remainder[i]];
      if (plan.train_count + 1 < by_label[plan.label].size()) {
        ++plan.train_count;
        ++assigned;
        progressed = true;
      }
    }
  }
  // Every class keeps at least one sample on each side.
  for (ClassPlan& plan : plans) {
    const size_t n = by_label[plan.label].size();
    if (plan.train_count == 0) plan.train_count = 1;
    if (plan.train_count >= n) plan.train_count = n - 1;
  }

  Rng rng(seed);
  std::vector<bool> in_train(total, false);
  for (const ClassPlan& plan : plans) {
    std::vector<size_t> indices = by_label[plan.label];
    seeded_shuffle(indices, rng);
    for (size_t i = 0; i < plan.train_count; ++i) in_train[indices[i]] = true;
  }

  Manifest train, test;
  for (size_t i = 0; i < total; ++i)
    (in_train[i] ? train : test).entries.push_back(manifest.entries[i]);
  return {std::move(train), std::move(test)};
}

std::vector<int> label_encode(const std::vector<std::string>& labels,
                              const EmotionSet& set) {
  std::vector<int> ids;
  ids.reserve(labels.size());
  for (const std::string& label : labels) ids.push_back(set.index_of(label));
  return ids;
}

std::vector<float> one_hot(const std::vector<int>& ids, int num_classes) {
  if (num_classes < 2)
    throw ValidationError("one_hot: need at least 2 classes");
  std::vector<float> out(ids.size() * static_cast<size_t>(num_classes), 0.0f);
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= num_classes)
      throw ValidationError("one_hot: class id " + std::to_string(ids[i]) +
                            " outside [0, " + std::to_string(num_classes) +
                            ")");
    out[i * num_classes + ids[i]] = 1.0f;
  }
  return out;
}

}  // namespace emoformer
