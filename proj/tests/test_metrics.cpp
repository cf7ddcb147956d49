#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <doctest.h>

#include "emoformer/errors.hpp"
#include "emoformer/metrics.hpp"
#include "emoformer/rng.hpp"
#include "support/test_support.hpp"

using namespace emoformer;

namespace {

// Straight tallying oracle: every figure is recomputed from first principles
// with integer counters, independent of the implementation under test.
struct OracleCounts {
  std::vector<int64_t> tp, fp, fn;
  int64_t correct = 0;
};

OracleCounts tally(const std::vector<int>& truth,
                   const std::vector<int>& predicted, int k) {
  OracleCounts c;
  c.tp.assign(k, 0);
  c.fp.assign(k, 0);
  c.fn.assign(k, 0);
  for (size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == predicted[i]) {
      ++c.correct;
      ++c.tp[truth[i]];
    } else {
      ++c.fp[predicted[i]];
      ++c.fn[truth[i]];
    }
  }
  return c;
}

double safe_div(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

}  // namespace

TEST_CASE("compute_metrics matches the counting oracle on random label "
          "vectors") {
  Rng rng(2024);
  for (int k : {5, 7, 10, 23}) {
    for (int trial = 0; trial < 4; ++trial) {
      std::vector<int> truth(50), predicted(50);
      for (int i = 0; i < 50; ++i) {
        truth[i] = static_cast<int>(rng.below(static_cast<uint64_t>(k)));
        predicted[i] = static_cast<int>(rng.below(static_cast<uint64_t>(k)));
      }
      Metrics m = compute_metrics(truth, predicted, k);
      OracleCounts c = tally(truth, predicted, k);

      CHECK(m.accuracy == static_cast<double>(c.correct) / 50.0);
      double macro_p = 0.0, macro_r = 0.0, macro_f = 0.0;
      for (int cls = 0; cls < k; ++cls) {
        const double p = safe_div(static_cast<double>(c.tp[cls]),
                                  static_cast<double>(c.tp[cls] + c.fp[cls]));
        const double r = safe_div(static_cast<double>(c.tp[cls]),
                                  static_cast<double>(c.tp[cls] + c.fn[cls]));
        const double f = safe_div(2.0 * p * r, p + r);
        CHECK(m.precision[cls] == p);
        CHECK(m.recall[cls] == r);
        CHECK(m.f1[cls] == f);
        CHECK(m.support[cls] ==
              static_cast<int64_t>(c.tp[cls] + c.fn[cls]));
        macro_p += p;
        macro_r += r;
        macro_f += f;
      }
      CHECK(m.macro_precision == macro_p / k);
      CHECK(m.macro_recall == macro_r / k);
      CHECK(m.macro_f1 == macro_f / k);

      // The confusion matrix tallies every pair exactly once.
      int64_t total = 0;
      for (int t = 0; t < k; ++t)
        for (int p = 0; p < k; ++p) total += m.confusion_at(t, p);
      CHECK(total == 50);
      for (size_t i = 0; i < truth.size(); ++i)
        CHECK(m.confusion_at(truth[i], predicted[i]) >= 1);
    }
  }
}

TEST_CASE("hand-checked three-class example") {
  // truth:     0 0 1 1 2 2
  // predicted: 0 1 1 1 2 0
  const std::vector<int> truth = {0, 0, 1, 1, 2, 2};
  const std::vector<int> predicted = {0, 1, 1, 1, 2, 0};
  Metrics m = compute_metrics(truth, predicted, 3);

  CHECK(m.accuracy == doctest::Approx(4.0 / 6.0));
  CHECK(m.confusion_at(0, 0) == 1);
  CHECK(m.confusion_at(0, 1) == 1);
  CHECK(m.confusion_at(1, 1) == 2);
  CHECK(m.confusion_at(2, 2) == 1);
  CHECK(m.confusion_at(2, 0) == 1);

  CHECK(m.precision[0] == doctest::Approx(0.5));
  CHECK(m.recall[0] == doctest::Approx(0.5));
  CHECK(m.f1[0] == doctest::Approx(0.5));
  CHECK(m.precision[1] == doctest::Approx(2.0 / 3.0));
  CHECK(m.recall[1] == doctest::Approx(1.0));
  CHECK(m.f1[1] == doctest::Approx(0.8));
  CHECK(m.precision[2] == doctest::Approx(1.0));
  CHECK(m.recall[2] == doctest::Approx(0.5));
  CHECK(m.f1[2] == doctest::Approx(2.0 / 3.0));
  CHECK(m.support == std::vector<int64_t>{2, 2, 2});
}

TEST_CASE("a class never predicted and never true gets zero F1, not NaN") {
  Metrics m = compute_metrics({0, 0, 1}, {0, 0, 1}, 4);
  CHECK(m.precision[3] == 0.0);
  CHECK(m.recall[3] == 0.0);
  CHECK(m.f1[3] == 0.0);
  CHECK(std::isfinite(m.macro_f1));
  CHECK(m.accuracy == 1.0);
}

TEST_CASE("compute_metrics input validation") {
  CHECK_THROWS_AS(compute_metrics({}, {}, 3), ValidationError);
  CHECK_THROWS_AS(compute_metrics({0, 1}, {0}, 3), ValidationError);
  CHECK_THROWS_AS(compute_metrics({0, 3}, {0, 1}, 3), ValidationError);
  CHECK_THROWS_AS(compute_metrics({0, -1}, {0, 1}, 3), ValidationError);
  CHECK_THROWS_AS(compute_metrics({0, 1}, {0, 5}, 3), ValidationError);
  CHECK_THROWS_AS(compute_metrics({0, 1}, {0, 1}, 1), ValidationError);
}

TEST_CASE("json summary carries labelled per-class entries") {
  EmotionSet set = EmotionSet::preset(5);
  Metrics m = compute_metrics({0, 1, 2, 3, 4}, {0, 1, 2, 3, 0}, 5);
  nlohmann::json j = m.to_json(set.labels());
  CHECK(j.at("accuracy").get<double>() == doctest::Approx(0.8));
  CHECK(j.at("per_class").size() == 5);
  CHECK(j.at("per_class").at(0).at("label") == "adoration");
  CHECK(j.at("confusion").size() == 5);
  CHECK(j.at("macro_f1").is_number());
}

TEST_CASE("confusion CSV has a header row and one row per true label") {
  testing::TempDir dir("metrics_csv");
  EmotionSet set = EmotionSet::custom({"calm", "tense", "flat"});
  Metrics m = compute_metrics({0, 1, 2, 0}, {0, 1, 0, 2}, 3);
  const std::string path = dir.file("confusion.csv");
  write_confusion_csv(m, set, path);

  std::ifstream in(path);
  REQUIRE(in.good());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  REQUIRE(lines.size() == 4);
  CHECK(lines[0] == "true\\predicted,calm,tense,flat");
  CHECK(lines[1] == "calm,1,0,1");
  CHECK(lines[2] == "tense,0,1,0");
  CHECK(lines[3] == "flat,1,0,0");
}

TEST_CASE("confusion PGM is a valid P2 image with one pixel per cell") {
  testing::TempDir dir("metrics_pgm");
  Metrics m = compute_metrics({0, 1, 2, 0, 0}, {0, 1, 2, 0, 1}, 3);
  const std::string path = dir.file("confusion.pgm");
  write_confusion_pgm(m, path);

  std::ifstream in(path);
  REQUIRE(in.good());
  std::string magic;
  int width = 0, height = 0, maxval = 0;
  in >> magic >> width >> height >> maxval;
  CHECK(magic == "P2");
  CHECK(width == 3);
  CHECK(height == 3);
  CHECK(maxval == 255);
  std::vector<int> pixels;
  int v;
  while (in >> v) pixels.push_back(v);
  REQUIRE(pixels.size() == 9);
  for (int p : pixels) {
    CHECK(p >= 0);
    CHECK(p <= 255);
  }
  // Darker = more samples: the (0,0) cell holds the most and must be darker
  // than the empty (0,2) cell.
  CHECK(pixels[0] < pixels[2]);
}
