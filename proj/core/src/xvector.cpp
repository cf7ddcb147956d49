#include "emoformer/xvector.hpp"

#include <cmath>

#include "emoformer/emof.hpp"
#include "emoformer/errors.hpp"
#include "emoformer/gemm.hpp"
#include "emoformer/rng.hpp"

#include <nlohmann/json.hpp>

namespace emoformer {

namespace {

void validate_layer(const XVectorLayer& layer, const std::string& name) {
  if (layer.in < 1 || layer.out < 1)
    throw ValidationError("x-vector layer " + name +
                          ": dimensions must be positive");
  if (layer.weight.size() != static_cast<size_t>(layer.in * layer.out))
    throw ShapeError("x-vector layer " + name + ": weight has " +
                     std::to_string(layer.weight.size()) +
                     " values, expected " +
                     std::to_string(layer.in * layer.out));
  if (layer.bias.size() != static_cast<size_t>(layer.out))
    throw ShapeError("x-vector layer " + name + ": bias has " +
                     std::to_string(layer.bias.size()) + " values, expected " +
                     std::to_string(layer.out));
}

// y[rows, out] = relu(x[rows, in] * W + b)
std::vector<float> affine_relu(const std::vector<float>& x, int64_t rows,
                               const XVectorLayer& layer) {
  std::vector<float> y(static_cast<size_t>(rows * layer.out));
  nn::gemm_nn(rows, layer.out, layer.in, x.data(), layer.weight.data(),
              y.data());
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < layer.out; ++j) {
      float& v = y[r * layer.out + j];
      v += layer.bias[j];
      if (v < 0.0f) v = 0.0f;
    }
  return y;
}

XVectorLayer glorot_layer(int64_t in, int64_t out, Rng& rng) {
  XVectorLayer layer;
  layer.in = in;
  layer.out = out;
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  layer.weight.resize(static_cast<size_t>(in * out));
  for (float& w : layer.weight)
    w = static_cast<float>(rng.uniform(-limit, limit));
  layer.bias.assign(static_cast<size_t>(out), 0.0f);
  return layer;
}

}  // namespace

int64_t XVectorModel::input_dim() const {
  if (frame_layers.empty())
    throw ValidationError("x-vector model has no frame layers");
  return frame_layers.front().in;
}

int64_t XVectorModel::embedding_dim() const {
  if (segment_layers.empty())
    throw ValidationError("x-vector model has no segment layers");
  return segment_layers.back().out;
}

void XVectorModel::validate() const {
  if (frame_layers.empty() || segment_layers.empty())
    throw ValidationError(
        "x-vector model needs at least one frame and one segment layer");
  for (size_t i = 0; i < frame_layers.size(); ++i) {
    validate_layer(frame_layers[i], "frame" + std::to_string(i));
    if (i > 0 && frame_layers[i].in != frame_layers[i - 1].out)
      throw ShapeError("x-vector frame layer " + std::to_string(i) +
                       " expects input " + std::to_string(frame_layers[i].in) +
                       " but previous layer outputs " +
                       std::to_string(frame_layers[i - 1].out));
  }
  const int64_t pooled = 2 * frame_layers.back().out;
  for (size_t i = 0; i < segment_layers.size(); ++i) {
    validate_layer(segment_layers[i], "segment" + std::to_string(i));
    const int64_t expected =
        i == 0 ? pooled : segment_layers[i - 1].out;
    if (segment_layers[i].in != expected)
      throw ShapeError("x-vector segment layer " + std::to_string(i) +
                       " expects input " +
                       std::to_string(segment_layers[i].in) + " but receives " +
                       std::to_string(expected));
  }
}

XVectorModel XVectorModel::seeded(int64_t input_dim, uint64_t seed) {
  if (input_dim < 1)
    throw ValidationError("x-vector input dimension must be positive");
  Rng rng(seed);
  XVectorModel model;
  model.frame_layers.push_back(glorot_layer(input_dim, 512, rng));
  model.frame_layers.push_back(glorot_layer(512, 512, rng));
  model.segment_layers.push_back(glorot_layer(1024, 512, rng));
  model.validate();
  return model;
}

void XVectorModel::save(const std::string& path) const {
  validate();
  emof::NamedArrays table;
  nlohmann::json header;
  header["kind"] = "xvector";
  header["frame_layers"] = frame_layers.size();
  header["segment_layers"] = segment_layers.size();
  auto add_layer = [&table](const std::string& name,
                            const XVectorLayer& layer) {
    table.add(name + ".weight",
              emof::Array{{static_cast<uint32_t>(layer.in),
                           static_cast<uint32_t>(layer.out)},
                          layer.weight});
    table.add(name + ".bias",
              emof::Array{{static_cast<uint32_t>(layer.out)}, layer.bias});
  };
  for (size_t i = 0; i < frame_layers.size(); ++i)
    add_layer("frame" + std::to_string(i), frame_layers[i]);
  for (size_t i = 0; i < segment_layers.size(); ++i)
    add_layer("segment" + std::to_string(i), segment_layers[i]);
  table.json_header = header.dump();
  emof::write_named(path, table);
}

XVectorModel XVectorModel::load(const std::string& path) {
  emof::NamedArrays table = emof::read_named(path);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(table.json_header);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("x-vector weights " + path + ": bad JSON header: " +
                      e.what());
  }
  if (header.value("kind", "") != "xvector")
    throw FormatError("x-vector weights " + path +
                      ": header kind is not 'xvector'");
  auto read_layer = [&table, &path](const std::string& name) {
    const emof::Array& w = table.at(name + ".weight");
    const emof::Array& b = table.at(name + ".bias");
    if (w.dims.size() != 2 || b.dims.size() != 1)
      throw FormatError("x-vector weights " + path + ": array " + name +
                        " has unexpected rank");
    XVectorLayer layer;
    layer.in = w.dims[0];
    layer.out = w.dims[1];
    layer.weight = w.data;
    layer.bias = b.data;
    return layer;
  };
  XVectorModel model;
  const size_t n_frame = header.value("frame_layers", size_t{0});
  const size_t n_segment = header.value("segment_layers", size_t{0});
  for (size_t i = 0; i < n_frame; ++i)
    model.frame_layers.push_back(read_layer("frame" + std::to_string(i)));
  for (size_t i = 0; i < n_segment; ++i)
    model.segment_layers.push_back(read_layer("segment" + std::to_string(i)));
  model.validate();
  return model;
}

std::vector<float> frame_embed(const std::vector<float>& features, int64_t t,
                               int64_t d, const XVectorModel& model) {
  model.validate();
  if (t < 2)
    throw ValidationError("frame_embed: needs at least 2 frames, got " +
                          std::to_string(t));
  if (d != model.input_dim())
    throw ShapeError("frame_embed: features have dimension " +
                     std::to_string(d) + " but the model expects " +
                     std::to_string(model.input_dim()));
  if (features.size() != static_cast<size_t>(t * d))
    throw ShapeError("frame_embed: feature buffer size does not match t*d");
  std::vector<float> h = affine_relu(features, t, model.frame_layers[0]);
  for (size_t i = 1; i < model.frame_layers.size(); ++i)
    h = affine_relu(h, t, model.frame_layers[i]);
  return h;
}

std::vector<float> stats_pool(const std::vector<float>& embeddings, int64_t t,
                              int64_t d) {
  if (t < 2)
    throw ValidationError(
        "stats_pool: standard deviation needs at least 2 frames, got " +
        std::to_string(t));
  if (embeddings.size() != static_cast<size_t>(t * d))
    throw ShapeError("stats_pool: embedding buffer size does not match t*d");
  std::vector<float> z(static_cast<size_t>(2 * d));
  for (int64_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (int64_t r = 0; r < t; ++r)
      mean += static_cast<double>(embeddings[r * d + j]);
    mean /= static_cast<double>(t);
    double var = 0.0;
    for (int64_t r = 0; r < t; ++r) {
      const double c = static_cast<double>(embeddings[r * d + j]) - mean;
      var += c * c;
    }
    var /= static_cast<double>(t);
    z[j] = static_cast<float>(mean);
    z[d + j] = static_cast<float>(std::sqrt(var));
  }
  return z;
}

XVector extract_xvector(const MfccMatrix& features, const XVectorModel& model) {
  const int64_t t = features.num_frames;
  const int64_t d = features.n_coeffs;
  // MfccMatrix stores coefficient-major rows; frames become rows here.
  std::vector<float> frames(static_cast<size_t>(t * d));
  for (int64_t c = 0; c < d; ++c)
    for (int64_t i = 0; i < t; ++i)
      frames[i * d + c] = static_cast<float>(features.at(c, i));
  std::vector<float> h = frame_embed(frames, t, d, model);
  std::vector<float> z = stats_pool(h, t, model.frame_layers.back().out);
  std::vector<float> e = z;
  int64_t rows = 1;
  for (const XVectorLayer& layer : model.segment_layers) {
    if (static_cast<int64_t>(e.size()) != layer.in)
      throw ShapeError("extract_xvector: pooled vector length " +
                       std::to_string(e.size()) +
                       " does not match segment layer input " +
                       std::to_string(layer.in));
    std::vector<float> next(static_cast<size_t>(layer.out));
    nn::gemm_nn(rows, layer.out, layer.in, e.data(), layer.weight.data(),
                next.data());
    for (int64_t j = 0; j < layer.out; ++j) {
      next[j] += layer.bias[j];
      if (next[j] < 0.0f) next[j] = 0.0f;
    }
    e = std::move(next);
  }
  XVector out;
  out.values = std::move(e);
  out.source_id = features.source_id;
  return out;
}

}  // namespace emoformer
