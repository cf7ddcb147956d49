#include "emoformer/model.hpp"

#include <utility>

#include "emoformer/emof.hpp"
#include "emoformer/errors.hpp"

namespace emoformer {

namespace {

constexpr int kModelDim = 64;
constexpr int kXVectorDim = 512;

// Kernel sizes and output channels of the six-stage convolutional trunk;
// stages 2, 3 and 4 are followed by max pooling.
struct ConvSpec {
  int64_t kh, kw, cout;
};
constexpr ConvSpec kTrunk[6] = {{5, 5, 16}, {3, 3, 32}, {3, 3, 32},
                                {3, 3, 64}, {3, 3, 64}, {3, 3, 64}};
constexpr bool kPoolAfter[6] = {false, false, true, true, true, false};

std::pair<int64_t, int64_t> pool_window(const EmoFormerConfig& config) {
  // The 13x469 map halves in both directions; the 512x1 branch can only
  // halve along its single spatial axis.
  return config.input_kind == InputKind::mfcc
             ? std::pair<int64_t, int64_t>{2, 2}
             : std::pair<int64_t, int64_t>{2, 1};
}

}  // namespace

std::string to_string(InputKind kind) {
  return kind == InputKind::mfcc ? "mfcc" : "xvector";
}

std::string to_string(SequenceMode mode) {
  return mode == SequenceMode::pooled1 ? "pooled1" : "tokens58";
}

InputKind input_kind_from_string(const std::string& s) {
  if (s == "mfcc") return InputKind::mfcc;
  if (s == "xvector") return InputKind::xvector;
  throw ValidationError("unknown input kind '" + s +
                        "' (expected mfcc or xvector)");
}

SequenceMode sequence_mode_from_string(const std::string& s) {
  if (s == "pooled1") return SequenceMode::pooled1;
  if (s == "tokens58") return SequenceMode::tokens58;
  throw ValidationError("unknown sequence mode '" + s +
                        "' (expected pooled1 or tokens58)");
}

void EmoFormerConfig::validate() const {
  if (num_classes < 2 || num_classes > 23)
    throw ValidationError("config: num_classes must lie in [2, 23], got " +
                          std::to_string(num_classes));
  if (heads < 1 || kModelDim % heads != 0)
    throw ValidationError("config: encoder dim " +
                          std::to_string(kModelDim) +
                          " is not divisible by " + std::to_string(heads) +
                          " heads");
  if (ff_dim < 1)
    throw ValidationError("config: ff_dim must be positive");
  if (dropout < 0.0 || dropout >= 1.0)
    throw ValidationError("config: dropout must lie in [0, 1), got " +
                          std::to_string(dropout));
  if (ln_eps <= 0.0)
    throw ValidationError("config: ln_eps must be positive");
}

nlohmann::json EmoFormerConfig::to_json() const {
  return nlohmann::json{{"num_classes", num_classes},
                        {"input_kind", to_string(input_kind)},
                        {"heads", heads},
                        {"ff_dim", ff_dim},
                        {"dropout", dropout},
                        {"ln_eps", ln_eps},
                        {"sequence_mode", to_string(sequence_mode)},
                        {"fuse_xvector", fuse_xvector},
                        {"init_seed", init_seed}};
}

EmoFormerConfig EmoFormerConfig::from_json(const nlohmann::json& j) {
  EmoFormerConfig c;
  c.num_classes = j.value("num_classes", c.num_classes);
  if (j.contains("input_kind"))
    c.input_kind = input_kind_from_string(j.at("input_kind").get<std::string>());
  c.heads = j.value("heads", c.heads);
  c.ff_dim = j.value("ff_dim", c.ff_dim);
  c.dropout = j.value("dropout", c.dropout);
  c.ln_eps = j.value("ln_eps", c.ln_eps);
  if (j.contains("sequence_mode"))
    c.sequence_mode =
        sequence_mode_from_string(j.at("sequence_mode").get<std::string>());
  c.fuse_xvector = j.value("fuse_xvector", c.fuse_xvector);
  c.init_seed = j.value("init_seed", c.init_seed);
  c.validate();
  return c;
}

std::vector<std::string> EmoFormerConfig::diff(
    const EmoFormerConfig& other) const {
  std::vector<std::string> fields;
  auto compare = [&fields](const std::string& name, const auto& a,
                           const auto& b) {
    if (!(a == b)) fields.push_back(name);
  };
  compare("num_classes", num_classes, other.num_classes);
  compare("input_kind", input_kind, other.input_kind);
  compare("heads", heads, other.heads);
  compare("ff_dim", ff_dim, other.ff_dim);
  compare("dropout", dropout, other.dropout);
  compare("ln_eps", ln_eps, other.ln_eps);
  compare("sequence_mode", sequence_mode, other.sequence_mode);
  compare("fuse_xvector", fuse_xvector, other.fuse_xvector);
  return fields;
}

nn::Shape EmoFormerConfig::input_shape() const {
  return input_kind == InputKind::mfcc ? nn::Shape{13, 469, 1}
                                       : nn::Shape{kXVectorDim, 1, 1};
}

nlohmann::json MacReport::to_json() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& [name, macs] : per_layer)
    layers.push_back({{"layer", name}, {"macs", macs}});
  return nlohmann::json{
      {"per_layer", layers},
      {"total", total},
      {"reference_total", reference_total},
      {"ratio_vs_reference",
       static_cast<double>(total) / static_cast<double>(reference_total)}};
}

EmoFormer::EmoFormer(EmoFormerConfig config) : config_(std::move(config)) {
  config_.validate();
  Rng rng(config_.init_seed);
  const nn::Shape in = config_.input_shape();
  int64_t cin = in[2];
  convs_.reserve(6);
  bns_.reserve(6);
  for (const ConvSpec& spec : kTrunk) {
    convs_.emplace_back(spec.kh, spec.kw, cin, spec.cout, rng);
    bns_.emplace_back(spec.cout);
    cin = spec.cout;
  }
  embed_ = nn::DenseLayer(kModelDim, kModelDim, rng);
  encoder_.ln1 = nn::LayerNormLayer(kModelDim, config_.ln_eps);
  encoder_.attention = nn::MhaLayer(kModelDim, config_.heads, rng);
  encoder_.ln2 = nn::LayerNormLayer(kModelDim, config_.ln_eps);
  encoder_.ff1 = nn::DenseLayer(kModelDim, config_.ff_dim, rng);
  encoder_.ff2 = nn::DenseLayer(config_.ff_dim, kModelDim, rng);

  // The flatten entry already accounts for a fused x-vector.
  const auto shapes = activation_shapes();
  const int64_t head_in = shapes[shapes.size() - 2].second[0];
  head_ = nn::DenseLayer(head_in, config_.num_classes, rng);
}

uint64_t EmoFormer::dropout_salt(int layer_id) const {
  return (static_cast<uint64_t>(layer_id) << 48) ^
         static_cast<uint64_t>(dropout_step_);
}

nn::Tensor EmoFormer::trunk(const nn::Tensor& batch, nn::Mode mode) {
  const nn::Shape expected = config_.input_shape();
  if (batch.rank() != 4 || batch.dim(1) != expected[0] ||
      batch.dim(2) != expected[1] || batch.dim(3) != expected[2])
    throw ShapeError("forward: batch must be [N, " +
                     std::to_string(expected[0]) + ", " +
                     std::to_string(expected[1]) + ", " +
                     std::to_string(expected[2]) + "], got " +
                     nn::shape_str(batch.shape()));
  const auto [ph, pw] = pool_window(config_);
  nn::Tensor x = batch;
  for (size_t i = 0; i < convs_.size(); ++i) {
    x = convs_[i].forward(x);
    x = nn::relu(x);
    x = bns_[i].forward(x, mode);
    if (kPoolAfter[i]) x = nn::max_pool2d(x, ph, pw);
  }
  return x;
}

// Trunk, token embedding and transformer encoder; returns the flattened
// pre-classifier representation [N, S * 64].
nn::Tensor EmoFormer::encode(const nn::Tensor& batch, nn::Mode mode) {
  nn::Tensor map = trunk(batch, mode);
  const int64_t n = map.dim(0);
  nn::Tensor tokens;
  if (config_.sequence_mode == SequenceMode::pooled1) {
    nn::Tensor pooled = nn::global_avg_pool(map);
    tokens = nn::reshape(embed_.forward(pooled), {n, 1, kModelDim});
  } else {
    const int64_t s = map.dim(1) * map.dim(2);
    tokens = embed_.forward(nn::reshape(map, {n, s, kModelDim}));
  }
  nn::Tensor normed = encoder_.ln1.forward(tokens);
  nn::Tensor attended = encoder_.attention.forward(normed, normed, normed);
  attended = nn::dropout(attended, config_.dropout, mode, config_.init_seed,
                         dropout_salt(0));
  nn::Tensor residual = nn::add(tokens, attended);
  nn::Tensor ff_in = encoder_.ln2.forward(residual);
  nn::Tensor hidden = nn::relu(encoder_.ff1.forward(ff_in));
  hidden = nn::dropout(hidden, config_.dropout, mode, config_.init_seed,
                       dropout_salt(1));
  return nn::flatten(encoder_.ff2.forward(hidden));
}

nn::Tensor EmoFormer::forward(const nn::Tensor& batch, nn::Mode mode) {
  if (config_.fuse_xvector)
    throw ValidationError(
        "forward: this model fuses x-vectors; pass them alongside the batch");
  return nn::softmax(head_.forward(encode(batch, mode)));
}

nn::Tensor EmoFormer::forward(const nn::Tensor& batch,
                              const nn::Tensor& xvectors, nn::Mode mode) {
  if (!config_.fuse_xvector)
    throw ValidationError(
        "forward: this model does not fuse x-vectors; configure fuse_xvector");
  if (xvectors.rank() != 2 || xvectors.dim(0) != batch.dim(0) ||
      xvectors.dim(1) != kXVectorDim)
    throw ShapeError("forward: x-vectors must be [N, " +
                     std::to_string(kXVectorDim) + "], got " +
                     nn::shape_str(xvectors.shape()));
  return nn::softmax(
      head_.forward(nn::concat_cols(encode(batch, mode), xvectors)));
}

nn::ParamList EmoFormer::named_parameters() const {
  nn::ParamList out;
  for (size_t i = 0; i < convs_.size(); ++i) {
    convs_[i].collect("conv" + std::to_string(i + 1), out);
    bns_[i].collect("bn" + std::to_string(i + 1), out);
  }
  embed_.collect("embed", out);
  encoder_.ln1.collect("encoder.ln1", out);
  encoder_.attention.collect("encoder.attention", out);
  encoder_.ln2.collect("encoder.ln2", out);
  encoder_.ff1.collect("encoder.ff1", out);
  encoder_.ff2.collect("encoder.ff2", out);
  head_.collect("head", out);
  return out;
}

std::vector<nn::Tensor> EmoFormer::parameters() const {
  std::vector<nn::Tensor> out;
  for (auto& [name, tensor] : named_parameters()) out.push_back(tensor);
  return out;
}

int64_t EmoFormer::parameter_count() const {
  int64_t n = 0;
  for (const auto& [name, tensor] : named_parameters()) n += tensor.numel();
  return n;
}

std::vector<std::pair<std::string, nn::Shape>> EmoFormer::activation_shapes()
    const {
  std::vector<std::pair<std::string, nn::Shape>> out;
  const auto [ph, pw] = pool_window(config_);
  nn::Shape shape = config_.input_shape();
  out.emplace_back("input", shape);
  for (size_t i = 0; i < 6; ++i) {
    shape[2] = kTrunk[i].cout;
    out.emplace_back("conv" + std::to_string(i + 1), shape);
    if (kPoolAfter[i]) {
      shape[0] /= ph;
      shape[1] /= pw;
      out.emplace_back("pool" + std::to_string(i + 1), shape);
    }
  }
  const int64_t s = config_.sequence_mode == SequenceMode::pooled1
                        ? 1
                        : shape[0] * shape[1];
  if (config_.sequence_mode == SequenceMode::pooled1) {
    out.emplace_back("global_avg_pool", nn::Shape{kModelDim});
    out.emplace_back("embed", nn::Shape{kModelDim});
    out.emplace_back("encoder", nn::Shape{kModelDim});
  } else {
    out.emplace_back("embed", nn::Shape{s, kModelDim});
    out.emplace_back("encoder", nn::Shape{s, kModelDim});
  }
  int64_t flat = s * kModelDim;
  if (config_.fuse_xvector) flat += kXVectorDim;
  out.emplace_back("flatten", nn::Shape{flat});
  out.emplace_back("head", nn::Shape{config_.num_classes});
  return out;
}

MacReport EmoFormer::count_macs() const {
  MacReport report;
  const auto [ph, pw] = pool_window(config_);
  nn::Shape shape = config_.input_shape();
  int64_t cin = shape[2];
  for (size_t i = 0; i < 6; ++i) {
    // Stride-1 `same` convolution: output spatial dims equal input dims.
    const int64_t macs =
        shape[0] * shape[1] * kTrunk[i].cout * kTrunk[i].kh * kTrunk[i].kw *
        cin;
    report.per_layer.emplace_back("conv" + std::to_string(i + 1), macs);
    cin = kTrunk[i].cout;
    shape[2] = cin;
    if (kPoolAfter[i]) {
      shape[0] /= ph;
      shape[1] /= pw;
    }
  }
  const int64_t d = kModelDim;
  const int64_t s = config_.sequence_mode == SequenceMode::pooled1
                        ? 1
                        : shape[0] * shape[1];
  report.per_layer.emplace_back("embed", s * d * d);
  report.per_layer.emplace_back("attention.qkv", 3 * s * d * d);
  report.per_layer.emplace_back("attention.scores", s * s * d);
  report.per_layer.emplace_back("attention.context", s * s * d);
  report.per_layer.emplace_back("attention.out", s * d * d);
  report.per_layer.emplace_back(
      "feed_forward", s * (d * config_.ff_dim + config_.ff_dim * d));
  int64_t head_in = s * d;
  if (config_.fuse_xvector) head_in += kXVectorDim;
  report.per_layer.emplace_back("head", head_in * config_.num_classes);
  for (const auto& [name, macs] : report.per_layer) report.total += macs;
  return report;
}

void EmoFormer::save_weights(const std::string& path) const {
  emof::NamedArrays table;
  nlohmann::json header;
  header["kind"] = "emoformer";
  header["config"] = config_.to_json();
  header["bn_momentum"] = bns_.empty() ? 0.99 : bns_[0].momentum;
  header["bn_eps"] = bns_.empty() ? 1e-3 : bns_[0].eps;
  table.json_header = header.dump();
  for (const auto& [name, tensor] : named_parameters()) {
    emof::Array array;
    for (int64_t dim : tensor.shape())
      array.dims.push_back(static_cast<uint32_t>(dim));
    array.data = tensor.data();
    table.add(name, std::move(array));
  }
  for (size_t i = 0; i < bns_.size(); ++i) {
    const std::string prefix = "bn" + std::to_string(i + 1);
    table.add(prefix + ".running_mean",
              emof::Array{{static_cast<uint32_t>(
                              bns_[i].state.running_mean.size())},
                          bns_[i].state.running_mean});
    table.add(prefix + ".running_var",
              emof::Array{{static_cast<uint32_t>(
                              bns_[i].state.running_var.size())},
                          bns_[i].state.running_var});
  }
  emof::write_named(path, table);
}

EmoFormer EmoFormer::load_weights(const std::string& path) {
  emof::NamedArrays table = emof::read_named(path);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(table.json_header);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("weights " + path + ": bad JSON header: " + e.what());
  }
  if (header.value("kind", "") != "emoformer")
    throw FormatError("weights " + path + ": header kind is not 'emoformer'");
  if (!header.contains("config"))
    throw FormatError("weights " + path + ": header has no config");
  EmoFormer model(EmoFormerConfig::from_json(header["config"]));
  for (auto& [name, tensor] : model.named_parameters()) {
    const emof::Array& stored = table.at(name);
    if (static_cast<int64_t>(stored.numel()) != tensor.numel())
      throw FormatError("weights " + path + ": array " + name + " has " +
                        std::to_string(stored.numel()) +
                        " values, model expects " +
                        std::to_string(tensor.numel()));
    std::copy(stored.data.begin(), stored.data.end(),
              tensor.mutable_data().begin());
  }
  for (size_t i = 0; i < model.bns_.size(); ++i) {
    const std::string prefix = "bn" + std::to_string(i + 1);
    const emof::Array& mean = table.at(prefix + ".running_mean");
    const emof::Array& var = table.at(prefix + ".running_var");
    if (mean.data.size() != model.bns_[i].state.running_mean.size() ||
        var.data.size() != model.bns_[i].state.running_var.size())
      throw FormatError("weights " + path + ": running stats of " + prefix +
                        " have the wrong length");
    model.bns_[i].state.running_mean = mean.data;
    model.bns_[i].state.running_var = var.data;
  }
  return model;
}

EmoFormer EmoFormer::load_weights(const std::string& path,
                                  const EmoFormerConfig& expected) {
  EmoFormer model = load_weights(path);
  const std::vector<std::string> fields = expected.diff(model.config_);
  if (!fields.empty()) {
    std::string joined;
    for (size_t i = 0; i < fields.size(); ++i) {
      if (i) joined += ", ";
      joined += fields[i];
    }
    throw ValidationError("weights " + path +
                          " were built for a different configuration; "
                          "mismatched fields: " + joined);
  }
  return model;
}

std::vector<std::vector<float>> EmoFormer::state_snapshot() const {
  std::vector<std::vector<float>> out;
  for (const auto& [name, tensor] : named_parameters())
    out.push_back(tensor.data());
  for (const auto& bn : bns_) {
    out.push_back(bn.state.running_mean);
    out.push_back(bn.state.running_var);
  }
  return out;
}

void EmoFormer::state_restore(const std::vector<std::vector<float>>& snapshot) {
  nn::ParamList params = named_parameters();
  if (snapshot.size() != params.size() + 2 * bns_.size())
    throw ValidationError("state_restore: snapshot has " +
                          std::to_string(snapshot.size()) +
                          " buffers, expected " +
                          std::to_string(params.size() + 2 * bns_.size()));
  size_t idx = 0;
  for (auto& [name, tensor] : params) {
    if (snapshot[idx].size() != tensor.data().size())
      throw ValidationError("state_restore: buffer size mismatch at " + name);
    tensor.mutable_data() = snapshot[idx++];
  }
  for (auto& bn : bns_) {
    bn.state.running_mean = snapshot[idx++];
    bn.state.running_var = snapshot[idx++];
  }
}

}  // namespace emoformer
