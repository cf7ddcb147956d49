#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "emoformer/ops.hpp"
#include "emoformer/rng.hpp"
#include "emoformer/tensor.hpp"

namespace emoformer::nn {

// Glorot-uniform initialization: limit = sqrt(6 / (fan_in + fan_out)).
inline Tensor glorot_uniform(Shape shape, int64_t fan_in, int64_t fan_out,
                             Rng& rng) {
  const double limit =
      std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<float> data(static_cast<size_t>(shape_numel(shape)));
  for (float& v : data) v = static_cast<float>(rng.uniform(-limit, limit));
  return Tensor::from_data(std::move(shape), std::move(data), true);
}

// Named parameter list used for optimizers and weight files; insertion
// order defines the file layout.
using ParamList = std::vector<std::pair<std::string, Tensor>>;

struct DenseLayer {
  Tensor w, b;

  DenseLayer() = default;
  DenseLayer(int64_t in, int64_t out, Rng& rng)
      : w(glorot_uniform({in, out}, in, out, rng)),
        b(Tensor::zeros({out}, true)) {}

  Tensor forward(const Tensor& x) const { return dense(x, w, b); }

  void collect(const std::string& prefix, ParamList& out) const {
    out.emplace_back(prefix + ".weight", w);
    out.emplace_back(prefix + ".bias", b);
  }
};

struct Conv2dLayer {
  Tensor kernel;
  int64_t stride = 1;
  Padding padding = Padding::same;

  Conv2dLayer() = default;
  Conv2dLayer(int64_t kh, int64_t kw, int64_t cin, int64_t cout, Rng& rng)
      : kernel(glorot_uniform({kh, kw, cin, cout}, kh * kw * cin,
                              kh * kw * cout, rng)) {}

  Tensor forward(const Tensor& x) const {
    return conv2d(x, kernel, stride, padding);
  }

  void collect(const std::string& prefix, ParamList& out) const {
    out.emplace_back(prefix + ".kernel", kernel);
  }
};

struct BatchNormLayer {
  Tensor gamma, beta;
  BatchNormState<float> state;
  double momentum = 0.99;
  double eps = 1e-3;

  BatchNormLayer() = default;
  explicit BatchNormLayer(int64_t channels)
      : gamma(Tensor::filled({channels}, 1.0f, true)),
        beta(Tensor::zeros({channels}, true)) {
    state.running_mean.assign(static_cast<size_t>(channels), 0.0f);
    state.running_var.assign(static_cast<size_t>(channels), 1.0f);
  }

  Tensor forward(const Tensor& x, Mode mode) {
    return batch_norm(x, gamma, beta, state, mode, momentum, eps);
  }

  void collect(const std::string& prefix, ParamList& out) const {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
  }
};

struct LayerNormLayer {
  Tensor gamma, beta;
  double eps = 1e-6;

  LayerNormLayer() = default;
  LayerNormLayer(int64_t dim, double eps_in)
      : gamma(Tensor::filled({dim}, 1.0f, true)),
        beta(Tensor::zeros({dim}, true)), eps(eps_in) {}

  Tensor forward(const Tensor& x) const {
    return layer_norm(x, gamma, beta, eps);
  }

  void collect(const std::string& prefix, ParamList& out) const {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
  }
};

struct MhaLayer {
  MhaParams params;
  int64_t heads = 8;

  MhaLayer() = default;
  MhaLayer(int64_t dim, int64_t heads_in, Rng& rng) : heads(heads_in) {
    params.wq = glorot_uniform({dim, dim}, dim, dim, rng);
    params.bq = Tensor::zeros({dim}, true);
    params.wk = glorot_uniform({dim, dim}, dim, dim, rng);
    params.bk = Tensor::zeros({dim}, true);
    params.wv = glorot_uniform({dim, dim}, dim, dim, rng);
    params.bv = Tensor::zeros({dim}, true);
    params.wo = glorot_uniform({dim, dim}, dim, dim, rng);
    params.bo = Tensor::zeros({dim}, true);
  }

  Tensor forward(const Tensor& q, const Tensor& k, const Tensor& v) const {
    return multi_head_attention(q, k, v, params, heads);
  }

  void collect(const std::string& prefix, ParamList& out) const {
    out.emplace_back(prefix + ".wq", params.wq);
    out.emplace_back(prefix + ".bq", params.bq);
    out.emplace_back(prefix + ".wk", params.wk);
    out.emplace_back(prefix + ".bk", params.bk);
    out.emplace_back(prefix + ".wv", params.wv);
    out.emplace_back(prefix + ".bv", params.bv);
    out.emplace_back(prefix + ".wo", params.wo);
    out.emplace_back(prefix + ".bo", params.bo);
  }
};

}  // namespace emoformer::nn
