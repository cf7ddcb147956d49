#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <doctest.h>

#include "emoformer/dataset.hpp"
#include "emoformer/errors.hpp"
#include "support/test_support.hpp"

using namespace emoformer;

namespace {

// In-memory manifest with `count` entries per listed class, no files needed.
Manifest synthetic_manifest(const std::vector<std::pair<std::string, int>>&
                                class_sizes) {
  Manifest manifest;
  int serial = 0;
  for (const auto& [label, count] : class_sizes)
    for (int i = 0; i < count; ++i) {
      ManifestEntry e;
      e.path = "clips/" + label + "_" + std::to_string(i) + ".wav";
      e.label = label;
      e.speaker = "spk" + std::to_string(serial++ % 4);
      e.duration = 2.5;
      manifest.entries.push_back(e);
    }
  return manifest;
}

std::map<std::string, size_t> count_by_label(const Manifest& m) {
  std::map<std::string, size_t> counts;
  for (const auto& e : m.entries) ++counts[e.label];
  return counts;
}

}  // namespace

TEST_CASE("emotion presets nest and keep a stable order") {
  EmotionSet five = EmotionSet::preset(5);
  EmotionSet seven = EmotionSet::preset(7);
  EmotionSet ten = EmotionSet::preset(10);
  EmotionSet full = EmotionSet::preset(23);

  CHECK(five.labels() == std::vector<std::string>{"adoration", "anger",
                                                  "fear", "neutral",
                                                  "sadness"});
  CHECK(seven.size() == 7);
  CHECK(ten.size() == 10);
  CHECK(full.size() == 23);

  // Each preset extends the previous one.
  for (int i = 0; i < five.size(); ++i) {
    CHECK(seven.labels()[i] == five.labels()[i]);
    CHECK(ten.labels()[i] == five.labels()[i]);
  }
  for (int i = 0; i < seven.size(); ++i)
    CHECK(ten.labels()[i] == seven.labels()[i]);

  // The full inventory contains every smaller preset's labels.
  for (const std::string& label : ten.labels()) CHECK(full.contains(label));

  // 23 labels, sorted and unique.
  std::set<std::string> unique(full.labels().begin(), full.labels().end());
  CHECK(unique.size() == 23);

  CHECK_THROWS_AS(EmotionSet::preset(6), ValidationError);
}

TEST_CASE("index_of maps labels to their position and rejects strangers") {
  EmotionSet set = EmotionSet::preset(7);
  CHECK(set.index_of("adoration") == 0);
  CHECK(set.index_of("pain") == 6);
  CHECK(set.contains("fear"));
  CHECK(!set.contains("boredom"));
  try {
    set.index_of("boredom");
    FAIL("expected a ValidationError");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("boredom") != std::string::npos);
    CHECK(msg.find("adoration") != std::string::npos);
  }
}

TEST_CASE("custom emotion sets validate their labels") {
  CHECK_NOTHROW(EmotionSet::custom({"calm", "tense"}));
  CHECK_THROWS_AS(EmotionSet::custom({"solo"}), ValidationError);
  CHECK_THROWS_AS(EmotionSet::custom({"a", "a"}), ValidationError);
  CHECK_THROWS_AS(EmotionSet::custom({"a", ""}), ValidationError);
}

TEST_CASE("manifest CSV round trip preserves every field") {
  testing::TempDir dir("manifest");
  Manifest manifest = synthetic_manifest({{"anger", 2}, {"fear", 3}});
  manifest.entries[0].duration = 1.25;
  const std::string path = dir.file("clips.csv");
  manifest.save_csv(path);

  Manifest loaded = Manifest::load_csv(path);
  REQUIRE(loaded.entries.size() == manifest.entries.size());
  for (size_t i = 0; i < loaded.entries.size(); ++i) {
    CHECK(loaded.entries[i].path == manifest.entries[i].path);
    CHECK(loaded.entries[i].label == manifest.entries[i].label);
    CHECK(loaded.entries[i].speaker == manifest.entries[i].speaker);
    CHECK(loaded.entries[i].duration ==
          doctest::Approx(manifest.entries[i].duration));
  }
}

TEST_CASE("manifest loader reports malformed files with line numbers") {
  testing::TempDir dir("manifest_bad");

  SUBCASE("missing file") {
    CHECK_THROWS_AS(Manifest::load_csv(dir.file("nope.csv")), IoError);
  }
  SUBCASE("empty file") {
    const std::string path = dir.file("empty.csv");
    std::ofstream(path).flush();
    CHECK_THROWS_AS(Manifest::load_csv(path), FormatError);
  }
  SUBCASE("wrong header") {
    const std::string path = dir.file("header.csv");
    std::ofstream(path) << "file,emotion\na.wav,anger\n";
    CHECK_THROWS_AS(Manifest::load_csv(path), FormatError);
  }
  SUBCASE("wrong field count names the line") {
    const std::string path = dir.file("fields.csv");
    std::ofstream(path) << "path,label,speaker,duration\n"
                        << "a.wav,anger,spk0,1.0\n"
                        << "b.wav,anger,spk0\n";
    try {
      Manifest::load_csv(path);
      FAIL("expected a FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
  }
  SUBCASE("unparseable duration names the line") {
    const std::string path = dir.file("duration.csv");
    std::ofstream(path) << "path,label,speaker,duration\n"
                        << "a.wav,anger,spk0,soon\n";
    try {
      Manifest::load_csv(path);
      FAIL("expected a FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }
  SUBCASE("windows line endings and blank lines are tolerated") {
    const std::string path = dir.file("crlf.csv");
    std::ofstream(path) << "path,label,speaker,duration\r\n"
                        << "a.wav,anger,spk0,1.0\r\n"
                        << "\r\n"
                        << "b.wav,fear,spk1,2.0\r\n";
    Manifest m = Manifest::load_csv(path);
    REQUIRE(m.entries.size() == 2);
    CHECK(m.entries[0].path == "a.wav");
    CHECK(m.entries[1].label == "fear");
    CHECK(m.entries[1].duration == doctest::Approx(2.0));
  }
}

TEST_CASE("manifest validation catches duplicates and foreign labels") {
  EmotionSet set = EmotionSet::preset(5);
  Manifest manifest = synthetic_manifest({{"anger", 2}, {"fear", 2}});
  CHECK_NOTHROW(manifest.validate(set));

  SUBCASE("duplicate path") {
    manifest.entries[1].path = manifest.entries[0].path;
    CHECK_THROWS_AS(manifest.validate(set), ValidationError);
  }
  SUBCASE("label outside the set") {
    manifest.entries[2].label = "boredom";
    CHECK_THROWS_AS(manifest.validate(set), ValidationError);
  }
  SUBCASE("negative duration") {
    manifest.entries[0].duration = -1.0;
    CHECK_THROWS_AS(manifest.validate(set), ValidationError);
  }
}

TEST_CASE("split hands out largest-remainder seats after per-class floors") {
  // Classes of 5, 5 and 4 at ratio 0.7: target floor(14*0.7) = 9 train rows.
  // Floors give 3+3+2 = 8; the class with remainder .8 gets the spare seat.
  Manifest manifest =
      synthetic_manifest({{"anger", 5}, {"fear", 5}, {"neutral", 4}});
  auto [train, test] = split(manifest, 0.7, 123);

  CHECK(train.entries.size() == 9);
  CHECK(test.entries.size() == 5);
  auto train_counts = count_by_label(train);
  auto test_counts = count_by_label(test);
  CHECK(train_counts["anger"] == 3);
  CHECK(train_counts["fear"] == 3);
  CHECK(train_counts["neutral"] == 3);
  CHECK(test_counts["anger"] == 2);
  CHECK(test_counts["fear"] == 2);
  CHECK(test_counts["neutral"] == 1);
}

TEST_CASE("split of a large corpus lands exactly on the floored target") {
  // 23 classes, 3745 clips in total; floor(3745 * 0.7) = 2621.
  std::vector<std::pair<std::string, int>> sizes;
  const EmotionSet full = EmotionSet::preset(23);
  for (int c = 0; c < 23; ++c)
    sizes.push_back({full.labels()[c], 162 + (c < 19 ? 1 : 0)});
  Manifest manifest = synthetic_manifest(sizes);
  REQUIRE(manifest.entries.size() == 3745);

  auto [train, test] = split(manifest, 0.7, 9);
  CHECK(train.entries.size() == 2621);
  CHECK(test.entries.size() == 1124);

  auto train_counts = count_by_label(train);
  auto test_counts = count_by_label(test);
  for (const auto& [label, n] : sizes) {
    const size_t floor_c =
        static_cast<size_t>(std::floor(static_cast<double>(n) * 0.7));
    CHECK(train_counts[label] >= floor_c);
    CHECK(train_counts[label] <= floor_c + 1);
    CHECK(test_counts[label] >= 1);
  }
}

TEST_CASE("split keeps one sample per class on each side even at extreme "
          "ratios") {
  Manifest manifest = synthetic_manifest({{"anger", 2}, {"fear", 8}});

  auto [lo_train, lo_test] = split(manifest, 0.05, 3);
  auto lo_counts = count_by_label(lo_train);
  CHECK(lo_counts["anger"] == 1);
  CHECK(lo_counts["fear"] >= 1);

  auto [hi_train, hi_test] = split(manifest, 0.95, 3);
  auto hi_counts = count_by_label(hi_test);
  CHECK(hi_counts["anger"] == 1);
  CHECK(hi_counts["fear"] >= 1);
}

TEST_CASE("split is deterministic in the seed and preserves manifest order") {
  Manifest manifest = synthetic_manifest({{"anger", 10}, {"fear", 12}});
  auto [a_train, a_test] = split(manifest, 0.7, 42);
  auto [b_train, b_test] = split(manifest, 0.7, 42);

  auto paths = [](const Manifest& m) {
    std::vector<std::string> out;
    for (const auto& e : m.entries) out.push_back(e.path);
    return out;
  };
  CHECK(paths(a_train) == paths(b_train));
  CHECK(paths(a_test) == paths(b_test));

  auto [c_train, c_test] = split(manifest, 0.7, 43);
  CHECK(paths(a_train) != paths(c_train));

  // Each side preserves the original manifest order.
  std::map<std::string, size_t> position;
  for (size_t i = 0; i < manifest.entries.size(); ++i)
    position[manifest.entries[i].path] = i;
  for (const Manifest* side : {&a_train, &a_test}) {
    size_t last = 0;
    bool first = true;
    for (const auto& e : side->entries) {
      if (!first) CHECK(position[e.path] > last);
      last = position[e.path];
      first = false;
    }
  }

  // No clip is lost or duplicated.
  std::set<std::string> seen;
  for (const auto& e : a_train.entries) seen.insert(e.path);
  for (const auto& e : a_test.entries) seen.insert(e.path);
  CHECK(seen.size() == manifest.entries.size());
}

TEST_CASE("split input validation") {
  Manifest manifest = synthetic_manifest({{"anger", 4}, {"fear", 1}});
  CHECK_THROWS_AS(split(manifest, 0.7, 1), ValidationError);

  Manifest ok = synthetic_manifest({{"anger", 4}, {"fear", 4}});
  CHECK_THROWS_AS(split(ok, 0.0, 1), ValidationError);
  CHECK_THROWS_AS(split(ok, 1.0, 1), ValidationError);
  CHECK_THROWS_AS(split(Manifest{}, 0.7, 1), ValidationError);
}

TEST_CASE("label_encode and one_hot") {
  EmotionSet set = EmotionSet::preset(5);
  std::vector<int> ids = label_encode({"fear", "adoration", "sadness"}, set);
  CHECK(ids == std::vector<int>{2, 0, 4});
  CHECK_THROWS_AS(label_encode({"boredom"}, set), ValidationError);

  std::vector<float> hot = one_hot(ids, 5);
  REQUIRE(hot.size() == 15);
  for (size_t r = 0; r < 3; ++r)
    for (int c = 0; c < 5; ++c)
      CHECK(hot[r * 5 + c] == (c == ids[r] ? 1.0f : 0.0f));

  CHECK_THROWS_AS(one_hot({5}, 5), ValidationError);
  CHECK_THROWS_AS(one_hot({-1}, 5), ValidationError);
  CHECK_THROWS_AS(one_hot({0}, 1), ValidationError);
}
