#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include <doctest.h>

#include "emoformer/emof.hpp"
#include "emoformer/errors.hpp"
#include "emoformer/mfcc.hpp"
#include "emoformer/rng.hpp"
#include "emoformer/xvector.hpp"
#include "support/test_support.hpp"

using namespace emoformer;
using testing::make_tone;

namespace {

MfccMatrix tone_features(double seconds, uint64_t seed) {
  AudioClip clip = make_tone(320.0, seconds, 16000, 0.05, seed);
  return extract_mfcc(clip, MfccConfig{});
}

}  // namespace

TEST_CASE("seeded model has the stock dimension chain") {
  XVectorModel model = XVectorModel::seeded(13, 5);
  REQUIRE(model.frame_layers.size() == 2);
  REQUIRE(model.segment_layers.size() == 1);
  CHECK(model.input_dim() == 13);
  CHECK(model.embedding_dim() == 512);
  CHECK(model.frame_layers[0].in == 13);
  CHECK(model.frame_layers[0].out == 512);
  CHECK(model.frame_layers[1].in == 512);
  CHECK(model.frame_layers[1].out == 512);
  CHECK(model.segment_layers[0].in == 1024);
  CHECK(model.segment_layers[0].out == 512);
  CHECK_NOTHROW(model.validate());
}

TEST_CASE("validate rejects a broken dimension chain") {
  XVectorModel model = XVectorModel::seeded(13, 5);

  SUBCASE("frame layer chain break") {
    model.frame_layers[1].in = 100;
    CHECK_THROWS_AS(model.validate(), ShapeError);
  }
  SUBCASE("segment layer must start at twice the frame output") {
    model.segment_layers[0].in = 512;
    CHECK_THROWS_AS(model.validate(), ShapeError);
  }
  SUBCASE("no frame layers") {
    model.frame_layers.clear();
    CHECK_THROWS_AS(model.validate(), ValidationError);
  }
  SUBCASE("no segment layers") {
    model.segment_layers.clear();
    CHECK_THROWS_AS(model.validate(), ValidationError);
  }
  SUBCASE("weight buffer size mismatch") {
    model.frame_layers[0].weight.pop_back();
    CHECK_THROWS_AS(model.validate(), ShapeError);
  }
}

TEST_CASE("frame_embed applies the affine map and ReLU per frame") {
  // Two frames of dimension 2 through a single hand-built 2 -> 3 layer:
  // y = max(0, x W + b).
  XVectorModel model;
  XVectorLayer layer;
  layer.in = 2;
  layer.out = 3;
  layer.weight = {1, 0, 2,
                  0, 1, -1};
  layer.bias = {0.5f, -4.0f, 0.0f};
  model.frame_layers.push_back(layer);
  XVectorLayer segment;
  segment.in = 6;  // pooled width: 2 x frame output
  segment.out = 1;
  segment.weight.assign(6, 0.0f);
  segment.bias.assign(1, 0.0f);
  model.segment_layers.push_back(segment);

  const std::vector<float> features = {1, 2,
                                       3, -1};
  std::vector<float> out = frame_embed(features, 2, 2, model);
  REQUIRE(out.size() == 6);
  // Frame 0: (1*1+2*0+0.5, 1*0+2*1-4, 1*2+2*(-1)+0) = (1.5, -2, 0) -> relu.
  CHECK(out[0] == doctest::Approx(1.5));
  CHECK(out[1] == 0.0f);
  CHECK(out[2] == 0.0f);
  // Frame 1: (3.5, -5, 7) -> (3.5, 0, 7).
  CHECK(out[3] == doctest::Approx(3.5));
  CHECK(out[4] == 0.0f);
  CHECK(out[5] == doctest::Approx(7.0));
}

TEST_CASE("frame_embed input validation") {
  XVectorModel model = XVectorModel::seeded(13, 1);
  std::vector<float> one_frame(13, 0.0f);
  CHECK_THROWS_AS(frame_embed(one_frame, 1, 13, model), ValidationError);
  std::vector<float> wrong_dim(2 * 12, 0.0f);
  CHECK_THROWS_AS(frame_embed(wrong_dim, 2, 12, model), ShapeError);
  std::vector<float> short_buffer(13, 0.0f);
  CHECK_THROWS_AS(frame_embed(short_buffer, 2, 13, model), ShapeError);
}

TEST_CASE("stats_pool computes per-dimension mean and population deviation") {
  // Three frames of dimension 2.
  const std::vector<float> rows = {1, 10,
                                   2, 20,
                                   3, 30};
  std::vector<float> z = stats_pool(rows, 3, 2);
  REQUIRE(z.size() == 4);
  CHECK(z[0] == doctest::Approx(2.0));
  CHECK(z[1] == doctest::Approx(20.0));
  CHECK(z[2] == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-6));
  CHECK(z[3] == doctest::Approx(std::sqrt(200.0 / 3.0)).epsilon(1e-6));
}

TEST_CASE("stats_pool is invariant to frame permutation and tiling") {
  Rng rng(99);
  const int64_t t = 24, d = 7;
  std::vector<float> rows(static_cast<size_t>(t * d));
  for (float& v : rows) v = static_cast<float>(rng.uniform(-2.0, 2.0));
  std::vector<float> base = stats_pool(rows, t, d);

  SUBCASE("shuffling the frames leaves the statistics unchanged") {
    std::vector<int64_t> order(t);
    std::iota(order.begin(), order.end(), 0);
    seeded_shuffle(order, rng);
    std::vector<float> shuffled(rows.size());
    for (int64_t i = 0; i < t; ++i)
      std::copy_n(rows.begin() + order[i] * d, d, shuffled.begin() + i * d);
    std::vector<float> z = stats_pool(shuffled, t, d);
    for (size_t i = 0; i < z.size(); ++i)
      CHECK(std::abs(static_cast<double>(z[i]) -
                     static_cast<double>(base[i])) < 1e-9);
  }
  SUBCASE("repeating every frame three times leaves them unchanged") {
    std::vector<float> tiled;
    for (int rep = 0; rep < 3; ++rep)
      tiled.insert(tiled.end(), rows.begin(), rows.end());
    std::vector<float> z = stats_pool(tiled, 3 * t, d);
    for (size_t i = 0; i < z.size(); ++i)
      CHECK(std::abs(static_cast<double>(z[i]) -
                     static_cast<double>(base[i])) < 1e-9);
  }
}

TEST_CASE("stats_pool rejects fewer than two frames") {
  std::vector<float> one(5, 1.0f);
  CHECK_THROWS_AS(stats_pool(one, 1, 5), ValidationError);
  std::vector<float> bad(9, 1.0f);
  CHECK_THROWS_AS(stats_pool(bad, 2, 5), ShapeError);
}

TEST_CASE("extract_xvector yields a 512-dimensional embedding regardless of "
          "utterance length") {
  XVectorModel model = XVectorModel::seeded(13, 42);
  for (double seconds : {1.0, 5.0, 15.0}) {
    MfccMatrix features = tone_features(seconds, 7);
    XVector xv = extract_xvector(features, model);
    CHECK(xv.values.size() == 512);
    CHECK(xv.source_id == features.source_id);
    bool any_nonzero = false;
    for (float v : xv.values) {
      CHECK(std::isfinite(v));
      if (v != 0.0f) any_nonzero = true;
    }
    CHECK(any_nonzero);
  }
}

TEST_CASE("extract_xvector is deterministic for a fixed model and input") {
  XVectorModel model = XVectorModel::seeded(13, 42);
  MfccMatrix features = tone_features(2.0, 11);
  XVector a = extract_xvector(features, model);
  XVector b = extract_xvector(features, model);
  CHECK(a.values == b.values);

  XVectorModel other = XVectorModel::seeded(13, 43);
  XVector c = extract_xvector(features, other);
  CHECK(a.values != c.values);
}

TEST_CASE("model weights survive a save/load round trip") {
  testing::TempDir dir("xvec");
  XVectorModel model = XVectorModel::seeded(13, 17);
  const std::string path = dir.file("model.emof");
  model.save(path);
  XVectorModel loaded = XVectorModel::load(path);

  REQUIRE(loaded.frame_layers.size() == model.frame_layers.size());
  REQUIRE(loaded.segment_layers.size() == model.segment_layers.size());
  for (size_t i = 0; i < model.frame_layers.size(); ++i) {
    CHECK(loaded.frame_layers[i].weight == model.frame_layers[i].weight);
    CHECK(loaded.frame_layers[i].bias == model.frame_layers[i].bias);
  }
  CHECK(loaded.segment_layers[0].weight == model.segment_layers[0].weight);

  MfccMatrix features = tone_features(1.5, 23);
  CHECK(extract_xvector(features, model).values ==
        extract_xvector(features, loaded).values);
}

TEST_CASE("load rejects corrupt weight files") {
  testing::TempDir dir("xvec_bad");
  const std::string path = dir.file("garbage.emof");
  {
    std::vector<float> noise(16, 1.0f);
    emof::write_array(path, emof::Array{{4, 4}, noise});
  }
  CHECK_THROWS_AS(XVectorModel::load(path), FormatError);
  CHECK_THROWS_AS(XVectorModel::load(dir.file("missing.emof")), IoError);
}
