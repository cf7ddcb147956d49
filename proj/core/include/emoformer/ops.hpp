#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "emoformer/errors.hpp"
#include "emoformer/gemm.hpp"
#include "emoformer/rng.hpp"
#include "emoformer/tensor.hpp"

namespace emoformer::nn {

enum class Padding { same, valid };
enum class Mode { train, infer };

namespace detail {

template <class S>
void accumulate_grad(const std::shared_ptr<Node<S>>& parent,
                     const std::vector<S>& delta) {
  if (!parent->requires_grad) return;
  parent->ensure_grad();
  for (size_t i = 0; i < delta.size(); ++i) parent->grad[i] += delta[i];
}

template <class S>
void require_same_shape(const char* op, const TensorT<S>& a,
                        const TensorT<S>& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and structural ops
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  detail::require_same_shape("add", a, b);
  std::vector<S> out(a.data());
  const auto& bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  return make_op_result<S>(
      "add", a.shape(), std::move(out), {a.node(), b.node()},
      [](Node<S>& self) {
        for (const auto& parent : self.parents)
          detail::accumulate_grad(parent, self.grad);
      });
}

template <class S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
  detail::require_same_shape("mul", a, b);
  std::vector<S> out(a.data());
  const auto& bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  return make_op_result<S>(
      "mul", a.shape(), std::move(out), {a.node(), b.node()},
      [](Node<S>& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (pa->requires_grad) {
          pa->ensure_grad();
          for (size_t i = 0; i < self.grad.size(); ++i)
            pa->grad[i] += self.grad[i] * pb->data[i];
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          for (size_t i = 0; i < self.grad.size(); ++i)
            pb->grad[i] += self.grad[i] * pa->data[i];
        }
      });
}

template <class S>
TensorT<S> scale(const TensorT<S>& x, S factor) {
  std::vector<S> out(x.data());
  for (S& v : out) v *= factor;
  return make_op_result<S>(
      "scale", x.shape(), std::move(out), {x.node()},
      [factor](Node<S>& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
          p->grad[i] += self.grad[i] * factor;
      });
}

// x has any rank >= 1; bias length must equal the last dimension.
template <class S>
TensorT<S> add_bias(const TensorT<S>& x, const TensorT<S>& bias) {
  if (bias.rank() != 1 || x.rank() < 1 ||
      x.dim(x.rank() - 1) != bias.dim(0))
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) +
                     " does not match last dim of " + shape_str(x.shape()));
  const int64_t d = bias.dim(0);
  const int64_t rows = x.numel() / d;
  std::vector<S> out(x.data());
  const auto& bd = bias.data();
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < d; ++j) out[r * d + j] += bd[j];
  return make_op_result<S>(
      "add_bias", x.shape(), std::move(out), {x.node(), bias.node()},
      [d, rows](Node<S>& self) {
        auto& px = self.parents[0];
        auto& pb = self.parents[1];
        detail::accumulate_grad(px, self.grad);
        if (!pb->requires_grad) return;
        pb->ensure_grad();
        for (int64_t j = 0; j < d; ++j) {
          double acc = 0.0;
          for (int64_t r = 0; r < rows; ++r)
            acc += static_cast<double>(self.grad[r * d + j]);
          pb->grad[j] += static_cast<S>(acc);
        }
      });
}

template <class S>
TensorT<S> reshape(const TensorT<S>& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(new_shape));
  return make_op_result<S>(
      "reshape", std::move(new_shape), std::vector<S>(x.data()), {x.node()},
      [](Node<S>& self) {
        detail::accumulate_grad(self.parents[0], self.grad);
      });
}

// Collapses all trailing dims into one: [N, ...] -> [N, rest].
template <class S>
TensorT<S> flatten(const TensorT<S>& x) {
  if (x.rank() < 1) throw ShapeError("flatten: rank-0 tensor");
  return reshape(x, Shape{x.dim(0), x.numel() / x.dim(0)});
}

// Concatenation along the last axis of two rank-2 tensors (fusion path).
template <class S>
TensorT<S> concat_cols(const TensorT<S>& a, const TensorT<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0))
    throw ShapeError("concat_cols: need matching row counts, got " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const int64_t n = a.dim(0), da = a.dim(1), db = b.dim(1);
  std::vector<S> out(static_cast<size_t>(n * (da + db)));
  for (int64_t r = 0; r < n; ++r) {
    std::copy_n(a.data().data() + r * da, da, out.data() + r * (da + db));
    std::copy_n(b.data().data() + r * db, db, out.data() + r * (da + db) + da);
  }
  return make_op_result<S>(
      "concat_cols", Shape{n, da + db}, std::move(out), {a.node(), b.node()},
      [n, da, db](Node<S>& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (pa->requires_grad) {
          pa->ensure_grad();
          for (int64_t r = 0; r < n; ++r)
            for (int64_t j = 0; j < da; ++j)
              pa->grad[r * da + j] += self.grad[r * (da + db) + j];
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          for (int64_t r = 0; r < n; ++r)
            for (int64_t j = 0; j < db; ++j)
              pb->grad[r * db + j] += self.grad[r * (da + db) + da + j];
        }
      });
}

template <class S>
TensorT<S> relu(const TensorT<S>& x) {
  std::vector<S> out(x.data());
  for (S& v : out) v = v > S(0) ? v : S(0);
  return make_op_result<S>(
      "relu", x.shape(), std::move(out), {x.node()},
      [](Node<S>& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
          if (p->data[i] > S(0)) p->grad[i] += self.grad[i];
      });
}

// Softmax over the last axis. Rows are shifted by their max before
// exponentiation, so outputs are strictly positive and sum to 1.
template <class S>
TensorT<S> softmax(const TensorT<S>& x) {
  if (x.rank() < 1) throw ShapeError("softmax: rank-0 tensor");
  const int64_t d = x.dim(x.rank() - 1);
  const int64_t rows = x.numel() / d;
  std::vector<S> out(x.data().size());
  const auto& xd = x.data();
  for (int64_t r = 0; r < rows; ++r) {
    const S* in = xd.data() + r * d;
    S* o = out.data() + r * d;
    S mx = in[0];
    for (int64_t j = 1; j < d; ++j) mx = std::max(mx, in[j]);
    double sum = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      const double e = std::exp(static_cast<double>(in[j] - mx));
      o[j] = static_cast<S>(e);
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (int64_t j = 0; j < d; ++j)
      o[j] = static_cast<S>(static_cast<double>(o[j]) * inv);
  }
  return make_op_result<S>(
      "softmax", x.shape(), std::move(out), {x.node()},
      [d, rows](Node<S>& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
          const S* y = self.data.data() + r * d;
          const S* dy = self.grad.data() + r * d;
          double dot = 0.0;
          for (int64_t j = 0; j < d; ++j)
            dot += static_cast<double>(dy[j]) * static_cast<double>(y[j]);
          for (int64_t j = 0; j < d; ++j)
            p->grad[r * d + j] += static_cast<S>(
                static_cast<double>(y[j]) *
                (static_cast<double>(dy[j]) - dot));
        }
      });
}

// Inverted-scaling dropout with a counter-based mask: element i is kept iff
// mix_double(seed, salt, i) >= rate, making the mask independent of any
// shared RNG stream. Identity in infer mode and at rate 0.
template <class S>
TensorT<S> dropout(const TensorT<S>& x, double rate, Mode mode, uint64_t seed,
                   uint64_t salt) {
  if (rate < 0.0 || rate >= 1.0)
    throw ValidationError("dropout: rate must lie in [0, 1), got " +
                          std::to_string(rate));
  if (mode == Mode::infer || rate == 0.0) return x;
  const S inv_keep = static_cast<S>(1.0 / (1.0 - rate));
  std::vector<S> out(x.data());
  std::vector<uint8_t> kept(out.size());
  for (size_t i = 0; i < out.size(); ++i) {
    const bool keep = Rng::mix_double(seed, salt, i) >= rate;
    kept[i] = keep ? 1 : 0;
    out[i] = keep ? out[i] * inv_keep : S(0);
  }
  return make_op_result<S>(
      "dropout", x.shape(), std::move(out), {x.node()},
      [kept = std::move(kept), inv_keep](Node<S>& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
          if (kept[i]) p->grad[i] += self.grad[i] * inv_keep;
      });
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<S> out(static_cast<size_t>(m * n));
  gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data());
  return make_op_result<S>(
      "matmul", Shape{m, n}, std::move(out), {a.node(), b.node()},
      [m, k, n](Node<S>& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (pa->requires_grad) {
          pa->ensure_grad();
          gemm_nt(m, k, n, self.grad.data(), pb->data.data(),
                  pa->grad.data(), true);
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          gemm_tn(k, n, m, pa->data.data(), self.grad.data(),
                  pb->grad.data(), true);
        }
      });
}

// Batched matmul: [B,M,K] x [B,K,N] -> [B,M,N].
template <class S>
TensorT<S> bmm(const TensorT<S>& a, const TensorT<S>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) ||
      a.dim(2) != b.dim(1))
    throw ShapeError("bmm: incompatible shapes " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  const int64_t bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<S> out(static_cast<size_t>(bs * m * n));
  for (int64_t i = 0; i < bs; ++i)
    gemm_nn(m, n, k, a.data().data() + i * m * k, b.data().data() + i * k * n,
            out.data() + i * m * n);
  return make_op_result<S>(
      "bmm", Shape{bs, m, n}, std::move(out), {a.node(), b.node()},
      [bs, m, k, n](Node<S>& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        for (int64_t i = 0; i < bs; ++i) {
          const S* dy = self.grad.data() + i * m * n;
          if (pa->requires_grad) {
            pa->ensure_grad();
            gemm_nt(m, k, n, dy, pb->data.data() + i * k * n,
                    pa->grad.data() + i * m * k, true);
          }
          if (pb->requires_grad) {
            pb->ensure_grad();
            gemm_tn(k, n, m, pa->data.data() + i * m * k, dy,
                    pb->grad.data() + i * k * n, true);
          }
        }
      });
}

// Batched matmul against transposed right factor: [B,M,K] x [B,N,K] -> [B,M,N].
template <class S>
TensorT<S> bmm_nt(const TensorT<S>& a, const TensorT<S>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) ||
      a.dim(2) != b.dim(2))
    throw ShapeError("bmm_nt: incompatible shapes " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  const int64_t bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
  std::vector<S> out(static_cast<size_t>(bs * m * n));
  for (int64_t i = 0; i < bs; ++i)
    gemm_nt(m, n, k, a.data().data() + i * m * k, b.data().data() + i * n * k,
            out.data() + i * m * n);
  return make_op_result<S>(
      "bmm_nt", Shape{bs, m, n}, std::move(out), {a.node(), b.node()},
      [bs, m, k, n](Node<S>& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        for (int64_t i = 0; i < bs; ++i) {
          const S* dy = self.grad.data() + i * m * n;
          if (pa->requires_grad) {
            pa->ensure_grad();
            gemm_nn(m, k, n, dy, pb->data.data() + i * n * k,
                    pa->grad.data() + i * m * k, true);
          }
          if (pb->requires_grad) {
            pb->ensure_grad();
            gemm_tn(n, k, m, dy, pa->data.data() + i * m * k,
                    pb->grad.data() + i * n * k, true);
          }
        }
      });
}

// Affine map over the last axis: x [..., in] * W [in, out] + b [out].
template <class S>
TensorT<S> dense(const TensorT<S>& x, const TensorT<S>& w,
                 const TensorT<S>& b) {
  if (w.rank() != 2)
    throw ShapeError("dense: weight must be rank 2, got " +
                     shape_str(w.shape()));
  if (x.rank() < 2 || x.dim(x.rank() - 1) != w.dim(0))
    throw ShapeError("dense: input " + shape_str(x.shape()) +
                     " incompatible with weight " + shape_str(w.shape()));
  Shape out_shape = x.shape();
  out_shape.back() = w.dim(1);
  const int64_t rows = x.numel() / x.dim(x.rank() - 1);
  TensorT<S> flat = x.rank() == 2 ? x : reshape(x, {rows, x.dim(x.rank() - 1)});
  TensorT<S> y = add_bias(matmul(flat, w), b);
  return y.shape() == out_shape ? y : reshape(y, out_shape);
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

// Normalizes the last axis to zero mean, unit variance (population), then
// applies the per-feature affine gamma/beta.
template <class S>
TensorT<S> layer_norm(const TensorT<S>& x, const TensorT<S>& gamma,
                      const TensorT<S>& beta, double eps) {
  const int64_t d = x.dim(x.rank() - 1);
  if (gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != d ||
      beta.dim(0) != d)
    throw ShapeError("layer_norm: gamma/beta must have length " +
                     std::to_string(d));
  const int64_t rows = x.numel() / d;
  std::vector<S> out(x.data().size());
  std::vector<S> xhat(x.data().size());
  std::vector<S> inv_std(static_cast<size_t>(rows));
  const auto& xd = x.data();
  const auto& gd = gamma.data();
  const auto& bd = beta.data();
  for (int64_t r = 0; r < rows; ++r) {
    const S* in = xd.data() + r * d;
    double mean = 0.0;
    for (int64_t j = 0; j < d; ++j) mean += static_cast<double>(in[j]);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      const double c = static_cast<double>(in[j]) - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double istd = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(r)] = static_cast<S>(istd);
    for (int64_t j = 0; j < d; ++j) {
      const double h = (static_cast<double>(in[j]) - mean) * istd;
      xhat[r * d + j] = static_cast<S>(h);
      out[r * d + j] = static_cast<S>(h * static_cast<double>(gd[j]) +
                                      static_cast<double>(bd[j]));
    }
  }
  return make_op_result<S>(
      "layer_norm", x.shape(), std::move(out),
      {x.node(), gamma.node(), beta.node()},
      [d, rows, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Node<S>& self) {
        auto& px = self.parents[0];
        auto& pg = self.parents[1];
        auto& pb = self.parents[2];
        if (pg->requires_grad) pg->ensure_grad();
        if (pb->requires_grad) pb->ensure_grad();
        if (px->requires_grad) px->ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
          const S* dy = self.grad.data() + r * d;
          const S* h = xhat.data() + r * d;
          if (pg->requires_grad || pb->requires_grad) {
            for (int64_t j = 0; j < d; ++j) {
              if (pg->requires_grad) pg->grad[j] += dy[j] * h[j];
              if (pb->requires_grad) pb->grad[j] += dy[j];
            }
          }
          if (!px->requires_grad) continue;
          double sum_g = 0.0, sum_gh = 0.0;
          for (int64_t j = 0; j < d; ++j) {
            const double g = static_cast<double>(dy[j]) *
                             static_cast<double>(pg->data[j]);
            sum_g += g;
            sum_gh += g * static_cast<double>(h[j]);
          }
          const double istd =
              static_cast<double>(inv_std[static_cast<size_t>(r)]);
          const double inv_d = 1.0 / static_cast<double>(d);
          for (int64_t j = 0; j < d; ++j) {
            const double g = static_cast<double>(dy[j]) *
                             static_cast<double>(pg->data[j]);
            px->grad[r * d + j] += static_cast<S>(
                istd * (g - sum_g * inv_d -
                        static_cast<double>(h[j]) * sum_gh * inv_d));
          }
        }
      });
}

// Running statistics owned by the enclosing layer; the op updates them in
// train mode (running = momentum * running + (1 - momentum) * batch).
template <class S>
struct BatchNormState {
  std::vector<S> running_mean;
  std::vector<S> running_var;
};

// Channels-last batch norm over all leading axes. Train mode uses batch
// statistics (population variance) and refuses batches of size 1, whose
// statistics are degenerate; infer mode uses the running statistics.
template <class S>
TensorT<S> batch_norm(const TensorT<S>& x, const TensorT<S>& gamma,
                      const TensorT<S>& beta, BatchNormState<S>& state,
                      Mode mode, double momentum = 0.99, double eps = 1e-3) {
  if (x.rank() < 2) throw ShapeError("batch_norm: input must have rank >= 2");
  const int64_t c = x.dim(x.rank() - 1);
  if (gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != c ||
      beta.dim(0) != c)
    throw ShapeError("batch_norm: gamma/beta must have length " +
                     std::to_string(c));
  if (state.running_mean.size() != static_cast<size_t>(c) ||
      state.running_var.size() != static_cast<size_t>(c))
    throw ShapeError("batch_norm: running stats must have length " +
                     std::to_string(c));
  const int64_t rows = x.numel() / c;
  const auto& xd = x.data();
  const auto& gd = gamma.data();
  const auto& bd = beta.data();

  if (mode == Mode::infer) {
    std::vector<S> out(xd.size());
    std::vector<double> mean_c(static_cast<size_t>(c)),
        istd_c(static_cast<size_t>(c));
    for (int64_t j = 0; j < c; ++j) {
      mean_c[j] = static_cast<double>(state.running_mean[j]);
      istd_c[j] =
          1.0 / std::sqrt(static_cast<double>(state.running_var[j]) + eps);
    }
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t j = 0; j < c; ++j)
        out[r * c + j] = static_cast<S>(
            (static_cast<double>(xd[r * c + j]) - mean_c[j]) * istd_c[j] *
                static_cast<double>(gd[j]) +
            static_cast<double>(bd[j]));
    return make_op_result<S>(
        "batch_norm", x.shape(), std::move(out),
        {x.node(), gamma.node(), beta.node()},
        [c, rows, mean_c = std::move(mean_c),
         istd_c = std::move(istd_c)](Node<S>& self) {
          auto& px = self.parents[0];
          auto& pg = self.parents[1];
          auto& pb = self.parents[2];
          if (px->requires_grad) {
            px->ensure_grad();
            for (int64_t r = 0; r < rows; ++r)
              for (int64_t j = 0; j < c; ++j)
                px->grad[r * c + j] += static_cast<S>(
                    static_cast<double>(self.grad[r * c + j]) * istd_c[j] *
                    static_cast<double>(pg->data[j]));
          }
          if (pg->requires_grad || pb->requires_grad) {
            if (pg->requires_grad) pg->ensure_grad();
            if (pb->requires_grad) pb->ensure_grad();
            for (int64_t j = 0; j < c; ++j) {
              double dgamma = 0.0, dbeta = 0.0;
              for (int64_t r = 0; r < rows; ++r) {
                const double dy = static_cast<double>(self.grad[r * c + j]);
                dgamma += dy *
                          (static_cast<double>(px->data[r * c + j]) -
                           mean_c[j]) *
                          istd_c[j];
                dbeta += dy;
              }
              if (pg->requires_grad) pg->grad[j] += static_cast<S>(dgamma);
              if (pb->requires_grad) pb->grad[j] += static_cast<S>(dbeta);
            }
          }
        });
  }

  if (x.dim(0) == 1)
    throw ValidationError(
        "batch_norm: training on a batch of size 1 gives degenerate "
        "statistics; use a larger batch or infer mode");

  std::vector<double> mean_c(static_cast<size_t>(c), 0.0),
      var_c(static_cast<size_t>(c), 0.0);
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < c; ++j)
      mean_c[j] += static_cast<double>(xd[r * c + j]);
  for (int64_t j = 0; j < c; ++j) mean_c[j] /= static_cast<double>(rows);
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < c; ++j) {
      const double d = static_cast<double>(xd[r * c + j]) - mean_c[j];
      var_c[j] += d * d;
    }
  for (int64_t j = 0; j < c; ++j) var_c[j] /= static_cast<double>(rows);

  for (int64_t j = 0; j < c; ++j) {
    state.running_mean[j] = static_cast<S>(
        momentum * static_cast<double>(state.running_mean[j]) +
        (1.0 - momentum) * mean_c[j]);
    state.running_var[j] = static_cast<S>(
        momentum * static_cast<double>(state.running_var[j]) +
        (1.0 - momentum) * var_c[j]);
  }

  std::vector<S> out(xd.size());
  std::vector<S> xhat(xd.size());
  std::vector<S> inv_std(static_cast<size_t>(c));
  for (int64_t j = 0; j < c; ++j)
    inv_std[j] = static_cast<S>(1.0 / std::sqrt(var_c[j] + eps));
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < c; ++j) {
      const double h = (static_cast<double>(xd[r * c + j]) - mean_c[j]) *
                       static_cast<double>(inv_std[j]);
      xhat[r * c + j] = static_cast<S>(h);
      out[r * c + j] = static_cast<S>(h * static_cast<double>(gd[j]) +
                                      static_cast<double>(bd[j]));
    }
  return make_op_result<S>(
      "batch_norm", x.shape(), std::move(out),
      {x.node(), gamma.node(), beta.node()},
      [c, rows, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Node<S>& self) {
        auto& px = self.parents[0];
        auto& pg = self.parents[1];
        auto& pb = self.parents[2];
        std::vector<double> sum_g(static_cast<size_t>(c), 0.0),
            sum_gh(static_cast<size_t>(c), 0.0);
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t j = 0; j < c; ++j) {
            const double g = static_cast<double>(self.grad[r * c + j]) *
                             static_cast<double>(pg->data[j]);
            sum_g[j] += g;
            sum_gh[j] += g * static_cast<double>(xhat[r * c + j]);
          }
        if (pg->requires_grad || pb->requires_grad) {
          if (pg->requires_grad) pg->ensure_grad();
          if (pb->requires_grad) pb->ensure_grad();
          for (int64_t j = 0; j < c; ++j) {
            double dgamma = 0.0, dbeta = 0.0;
            for (int64_t r = 0; r < rows; ++r) {
              const double dy = static_cast<double>(self.grad[r * c + j]);
              dgamma += dy * static_cast<double>(xhat[r * c + j]);
              dbeta += dy;
            }
            if (pg->requires_grad) pg->grad[j] += static_cast<S>(dgamma);
            if (pb->requires_grad) pb->grad[j] += static_cast<S>(dbeta);
          }
        }
        if (!px->requires_grad) return;
        px->ensure_grad();
        const double inv_r = 1.0 / static_cast<double>(rows);
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t j = 0; j < c; ++j) {
            const double g = static_cast<double>(self.grad[r * c + j]) *
                             static_cast<double>(pg->data[j]);
            px->grad[r * c + j] += static_cast<S>(
                static_cast<double>(inv_std[j]) *
                (g - sum_g[j] * inv_r -
                 static_cast<double>(xhat[r * c + j]) * sum_gh[j] * inv_r));
          }
      });
}

// ---------------------------------------------------------------------------
// Convolution and pooling (channels-last)
// ---------------------------------------------------------------------------

namespace detail {

// Patch extraction for one sample: col is [Ho*Wo, kh*kw*C], padded region
// reads as zero. The column index ((ih*kw + iw)*C + ci) matches a kernel
// stored as [kh, kw, C_in, C_out] flattened to [kh*kw*C_in, C_out].
template <class S>
void im2col(const S* x, int64_t h, int64_t w, int64_t c, int64_t kh,
            int64_t kw, int64_t pad_top, int64_t pad_left, int64_t ho,
            int64_t wo, int64_t stride, S* col) {
  const int64_t patch = kh * kw * c;
  for (int64_t oy = 0; oy < ho; ++oy) {
    for (int64_t ox = 0; ox < wo; ++ox) {
      S* dst = col + (oy * wo + ox) * patch;
      for (int64_t iy = 0; iy < kh; ++iy) {
        const int64_t y = oy * stride - pad_top + iy;
        for (int64_t ix = 0; ix < kw; ++ix) {
          const int64_t xx = ox * stride - pad_left + ix;
          S* cell = dst + (iy * kw + ix) * c;
          if (y < 0 || y >= h || xx < 0 || xx >= w) {
            std::fill_n(cell, c, S(0));
          } else {
            std::copy_n(x + (y * w + xx) * c, c, cell);
          }
        }
      }
    }
  }
}

// Scatter-add inverse of im2col, used for the input gradient.
template <class S>
void col2im_add(const S* col, int64_t h, int64_t w, int64_t c, int64_t kh,
                int64_t kw, int64_t pad_top, int64_t pad_left, int64_t ho,
                int64_t wo, int64_t stride, S* x) {
  const int64_t patch = kh * kw * c;
  for (int64_t oy = 0; oy < ho; ++oy) {
    for (int64_t ox = 0; ox < wo; ++ox) {
      const S* src = col + (oy * wo + ox) * patch;
      for (int64_t iy = 0; iy < kh; ++iy) {
        const int64_t y = oy * stride - pad_top + iy;
        if (y < 0 || y >= h) continue;
        for (int64_t ix = 0; ix < kw; ++ix) {
          const int64_t xx = ox * stride - pad_left + ix;
          if (xx < 0 || xx >= w) continue;
          const S* cell = src + (iy * kw + ix) * c;
          S* dst = x + (y * w + xx) * c;
          for (int64_t ci = 0; ci < c; ++ci) dst[ci] += cell[ci];
        }
      }
    }
  }
}

}  // namespace detail

// 2-D cross-correlation, x [N,H,W,C_in] with kernel [kh,kw,C_in,C_out].
// `same` keeps H,W at stride 1 (asymmetric padding goes to the bottom/right
// when the total is odd); `valid` takes only fully covered positions.
// Realized as per-sample im2col + GEMM; patches are rebuilt in backward
// rather than saved, trading FLOPs for a batch-independent memory ceiling.
template <class S>
TensorT<S> conv2d(const TensorT<S>& x, const TensorT<S>& kernel,
                  int64_t stride, Padding padding) {
  if (x.rank() != 4 || kernel.rank() != 4)
    throw ShapeError("conv2d: need input [N,H,W,C] and kernel [kh,kw,C,F]");
  if (x.dim(3) != kernel.dim(2))
    throw ShapeError("conv2d: input channels " + std::to_string(x.dim(3)) +
                     " != kernel channels " + std::to_string(kernel.dim(2)));
  if (stride < 1) throw ValidationError("conv2d: stride must be >= 1");
  const int64_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const int64_t kh = kernel.dim(0), kw = kernel.dim(1), f = kernel.dim(3);
  int64_t ho, wo, pad_top, pad_left;
  if (padding == Padding::same) {
    ho = (h + stride - 1) / stride;
    wo = (w + stride - 1) / stride;
    pad_top = std::max<int64_t>((ho - 1) * stride + kh - h, 0) / 2;
    pad_left = std::max<int64_t>((wo - 1) * stride + kw - w, 0) / 2;
  } else {
    if (kh > h || kw > w)
      throw ShapeError("conv2d: kernel " + std::to_string(kh) + "x" +
                       std::to_string(kw) + " exceeds input " +
                       std::to_string(h) + "x" + std::to_string(w));
    ho = (h - kh) / stride + 1;
    wo = (w - kw) / stride + 1;
    pad_top = pad_left = 0;
  }
  const int64_t patch = kh * kw * c;
  std::vector<S> out(static_cast<size_t>(n * ho * wo * f));
  std::vector<S> col(static_cast<size_t>(ho * wo * patch));
  for (int64_t i = 0; i < n; ++i) {
    detail::im2col(x.data().data() + i * h * w * c, h, w, c, kh, kw, pad_top,
                   pad_left, ho, wo, stride, col.data());
    gemm_nn(ho * wo, f, patch, col.data(), kernel.data().data(),
            out.data() + i * ho * wo * f);
  }
  return make_op_result<S>(
      "conv2d", Shape{n, ho, wo, f}, std::move(out),
      {x.node(), kernel.node()},
      [n, h, w, c, kh, kw, f, ho, wo, pad_top, pad_left, stride,
       patch](Node<S>& self) {
        auto& px = self.parents[0];
        auto& pk = self.parents[1];
        std::vector<S> col(static_cast<size_t>(ho * wo * patch));
        std::vector<S> kt;
        if (px->requires_grad) {
          px->ensure_grad();
          // Transposed kernel [F, patch] so the dcol product runs as NN.
          kt.resize(static_cast<size_t>(f * patch));
          for (int64_t p = 0; p < patch; ++p)
            for (int64_t o = 0; o < f; ++o)
              kt[o * patch + p] = pk->data[p * f + o];
        }
        if (pk->requires_grad) pk->ensure_grad();
        std::vector<S> dcol(static_cast<size_t>(ho * wo * patch));
        for (int64_t i = 0; i < n; ++i) {
          const S* dy = self.grad.data() + i * ho * wo * f;
          if (pk->requires_grad) {
            detail::im2col(px->data.data() + i * h * w * c, h, w, c, kh, kw,
                           pad_top, pad_left, ho, wo, stride, col.data());
            gemm_tn(patch, f, ho * wo, col.data(), dy, pk->grad.data(), true);
          }
          if (px->requires_grad) {
            gemm_nn(ho * wo, patch, f, dy, kt.data(), dcol.data());
            detail::col2im_add(dcol.data(), h, w, c, kh, kw, pad_top,
                               pad_left, ho, wo, stride,
                               px->grad.data() + i * h * w * c);
          }
        }
      });
}

// Non-overlapping max pooling with window (ph, pw) and equal stride. Floor
// division drops partial windows; the gradient routes to the first occurrence
// of the maximum in each window.
template <class S>
TensorT<S> max_pool2d(const TensorT<S>& x, int64_t ph, int64_t pw) {
  if (x.rank() != 4) throw ShapeError("max_pool2d: input must be [N,H,W,C]");
  if (ph < 1 || pw < 1)
    throw ValidationError("max_pool2d: window must be >= 1");
  const int64_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  if (ph > h || pw > w)
    throw ShapeError("max_pool2d: window " + std::to_string(ph) + "x" +
                     std::to_string(pw) + " exceeds input " +
                     std::to_string(h) + "x" + std::to_string(w));
  const int64_t ho = h / ph, wo = w / pw;
  std::vector<S> out(static_cast<size_t>(n * ho * wo * c));
  std::vector<int64_t> argmax(out.size());
  const auto& xd = x.data();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t oy = 0; oy < ho; ++oy)
      for (int64_t ox = 0; ox < wo; ++ox)
        for (int64_t ci = 0; ci < c; ++ci) {
          S best{};
          int64_t best_idx = -1;
          for (int64_t iy = 0; iy < ph; ++iy)
            for (int64_t ix = 0; ix < pw; ++ix) {
              const int64_t idx =
                  ((i * h + oy * ph + iy) * w + ox * pw + ix) * c + ci;
              if (best_idx < 0 || xd[idx] > best) {
                best = xd[idx];
                best_idx = idx;
              }
            }
          const int64_t o = ((i * ho + oy) * wo + ox) * c + ci;
          out[o] = best;
          argmax[o] = best_idx;
        }
  return make_op_result<S>(
      "max_pool2d", Shape{n, ho, wo, c}, std::move(out), {x.node()},
      [argmax = std::move(argmax)](Node<S>& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
          p->grad[argmax[i]] += self.grad[i];
      });
}

// [N,H,W,C] -> [N,C], mean over the spatial axes.
template <class S>
TensorT<S> global_avg_pool(const TensorT<S>& x) {
  if (x.rank() != 4)
    throw ShapeError("global_avg_pool: input must be [N,H,W,C]");
  const int64_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const int64_t area = h * w;
  std::vector<S> out(static_cast<size_t>(n * c));
  const auto& xd = x.data();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t ci = 0; ci < c; ++ci) {
      double acc = 0.0;
      for (int64_t s = 0; s < area; ++s)
        acc += static_cast<double>(xd[(i * area + s) * c + ci]);
      out[i * c + ci] = static_cast<S>(acc / static_cast<double>(area));
    }
  return make_op_result<S>(
      "global_avg_pool", Shape{n, c}, std::move(out), {x.node()},
      [n, area, c](Node<S>& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        const S inv = static_cast<S>(1.0 / static_cast<double>(area));
        for (int64_t i = 0; i < n; ++i)
          for (int64_t ci = 0; ci < c; ++ci) {
            const S g = self.grad[i * c + ci] * inv;
            for (int64_t s = 0; s < area; ++s)
              p->grad[(i * area + s) * c + ci] += g;
          }
      });
}

// ---------------------------------------------------------------------------
// Attention
// ---------------------------------------------------------------------------

// [N,S,D] -> [N*heads, S, D/heads]: each head becomes its own batch entry.
template <class S>
TensorT<S> split_heads(const TensorT<S>& x, int64_t heads) {
  if (x.rank() != 3) throw ShapeError("split_heads: input must be [N,S,D]");
  const int64_t n = x.dim(0), s = x.dim(1), d = x.dim(2);
  if (heads < 1 || d % heads != 0)
    throw ValidationError("split_heads: model dim " + std::to_string(d) +
                          " not divisible by " + std::to_string(heads) +
                          " heads");
  const int64_t dh = d / heads;
  std::vector<S> out(x.data().size());
  const auto& xd = x.data();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t hd = 0; hd < heads; ++hd)
      for (int64_t t = 0; t < s; ++t)
        std::copy_n(xd.data() + (i * s + t) * d + hd * dh, dh,
                    out.data() + ((i * heads + hd) * s + t) * dh);
  return make_op_result<S>(
      "split_heads", Shape{n * heads, s, dh}, std::move(out), {x.node()},
      [n, heads, s, d, dh](Node<S>& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (int64_t i = 0; i < n; ++i)
          for (int64_t hd = 0; hd < heads; ++hd)
            for (int64_t t = 0; t < s; ++t)
              for (int64_t j = 0; j < dh; ++j)
                p->grad[(i * s + t) * d + hd * dh + j] +=
                    self.grad[((i * heads + hd) * s + t) * dh + j];
      });
}

// Inverse of split_heads: [N*heads, S, D/heads] -> [N,S,D].
template <class S>
TensorT<S> merge_heads(const TensorT<S>& x, int64_t heads) {
  if (x.rank() != 3)
    throw ShapeError("merge_heads: input must be [N*heads,S,Dh]");
  if (heads < 1 || x.dim(0) % heads != 0)
    throw ValidationError("merge_heads: batch " + std::to_string(x.dim(0)) +
                          " not divisible by " + std::to_string(heads) +
                          " heads");
  const int64_t n = x.dim(0) / heads, s = x.dim(1), dh = x.dim(2);
  const int64_t d = dh * heads;
  std::vector<S> out(x.data().size());
  const auto& xd = x.data();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t hd = 0; hd < heads; ++hd)
      for (int64_t t = 0; t < s; ++t)
        std::copy_n(xd.data() + ((i * heads + hd) * s + t) * dh, dh,
                    out.data() + (i * s + t) * d + hd * dh);
  return make_op_result<S>(
      "merge_heads", Shape{n, s, d}, std::move(out), {x.node()},
      [n, heads, s, d, dh](Node<S>& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (int64_t i = 0; i < n; ++i)
          for (int64_t hd = 0; hd < heads; ++hd)
            for (int64_t t = 0; t < s; ++t)
              for (int64_t j = 0; j < dh; ++j)
                p->grad[((i * heads + hd) * s + t) * dh + j] +=
                    self.grad[(i * s + t) * d + hd * dh + j];
      });
}

// Projection weights for one attention block; all maps are D -> D.
template <class S>
struct MhaParamsT {
  TensorT<S> wq, bq, wk, bk, wv, bv, wo, bo;
};

// Scaled dot-product attention with per-head score scale 1/sqrt(D/heads),
// composed from taped primitives so backward needs no extra code. Heads are
// split after the Q/K/V projections and concatenated before the output map.
template <class S>
TensorT<S> multi_head_attention(const TensorT<S>& q, const TensorT<S>& k,
                                const TensorT<S>& v,
                                const MhaParamsT<S>& params, int64_t heads) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3)
    throw ShapeError("multi_head_attention: inputs must be [N,S,D]");
  const int64_t d = q.dim(2);
  if (k.dim(2) != d || v.dim(2) != d || k.dim(0) != q.dim(0) ||
      v.dim(0) != q.dim(0) || k.dim(1) != v.dim(1))
    throw ShapeError("multi_head_attention: inconsistent q/k/v shapes");
  if (heads < 1 || d % heads != 0)
    throw ValidationError("multi_head_attention: model dim " +
                          std::to_string(d) + " not divisible by " +
                          std::to_string(heads) + " heads");
  const S inv_sqrt_dh =
      static_cast<S>(1.0 / std::sqrt(static_cast<double>(d / heads)));
  TensorT<S> qh = split_heads(dense(q, params.wq, params.bq), heads);
  TensorT<S> kh = split_heads(dense(k, params.wk, params.bk), heads);
  TensorT<S> vh = split_heads(dense(v, params.wv, params.bv), heads);
  TensorT<S> scores = scale(bmm_nt(qh, kh), inv_sqrt_dh);
  TensorT<S> weights = softmax(scores);
  TensorT<S> context = merge_heads(bmm(weights, vh), heads);
  return dense(context, params.wo, params.bo);
}

// ---------------------------------------------------------------------------
// Loss and reductions
// ---------------------------------------------------------------------------

// -mean over rows of sum(targets * log(probs + 1e-12)). Targets are assumed
// one-hot (or at least non-negative rows); the epsilon keeps log finite at
// exactly-zero probabilities.
template <class S>
TensorT<S> cross_entropy(const TensorT<S>& probs, const TensorT<S>& targets) {
  detail::require_same_shape("cross_entropy", probs, targets);
  if (probs.rank() != 2)
    throw ShapeError("cross_entropy: inputs must be [N,K]");
  const int64_t n = probs.dim(0), k = probs.dim(1);
  constexpr double kEps = 1e-12;
  const auto& pd = probs.data();
  const auto& td = targets.data();
  double loss = 0.0;
  for (int64_t i = 0; i < n * k; ++i)
    loss -= static_cast<double>(td[i]) *
            std::log(static_cast<double>(pd[i]) + kEps);
  loss /= static_cast<double>(n);
  return make_op_result<S>(
      "cross_entropy", Shape{}, {static_cast<S>(loss)},
      {probs.node(), targets.node()},
      [n, k](Node<S>& self) {
        auto& pp = self.parents[0];
        auto& pt = self.parents[1];
        if (!pp->requires_grad) return;
        pp->ensure_grad();
        const double g = static_cast<double>(self.grad[0]) /
                         static_cast<double>(n);
        for (int64_t i = 0; i < n * k; ++i)
          pp->grad[i] -= static_cast<S>(
              g * static_cast<double>(pt->data[i]) /
              (static_cast<double>(pp->data[i]) + kEps));
      });
}

// Scalar sum of all elements, the reduction used to build test losses.
template <class S>
TensorT<S> sum_all(const TensorT<S>& x) {
  double acc = 0.0;
  for (const S& v : x.data()) acc += static_cast<double>(v);
  return make_op_result<S>(
      "sum_all", Shape{}, {static_cast<S>(acc)}, {x.node()},
      [](Node<S>& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (S& g : p->grad) g += self.grad[0];
      });
}

using MhaParams = MhaParamsT<float>;

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

// One bias-corrected Adam update on raw buffers. `step` is the 1-based step
// count after this update.
template <class S>
void adam_step(std::vector<S>& param, const std::vector<S>& grad,
               std::vector<S>& m, std::vector<S>& v, int64_t step,
               double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8) {
  if (param.size() != grad.size() || m.size() != param.size() ||
      v.size() != param.size())
    throw ShapeError("adam_step: parameter/gradient/state size mismatch");
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (size_t i = 0; i < param.size(); ++i) {
    const double g = static_cast<double>(grad[i]);
    const double mi = beta1 * static_cast<double>(m[i]) + (1.0 - beta1) * g;
    const double vi =
        beta2 * static_cast<double>(v[i]) + (1.0 - beta2) * g * g;
    m[i] = static_cast<S>(mi);
    v[i] = static_cast<S>(vi);
    param[i] = static_cast<S>(static_cast<double>(param[i]) -
                              lr * (mi / bc1) /
                                  (std::sqrt(vi / bc2) + eps));
  }
}

// Owns first/second moment state for a fixed parameter list.
template <class S>
class AdamT {
 public:
  explicit AdamT(std::vector<TensorT<S>> params, double lr = 1e-3,
                 double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2),
        eps_(eps) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
      m_.emplace_back(p.data().size(), S(0));
      v_.emplace_back(p.data().size(), S(0));
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step() {
    ++step_count_;
    for (size_t i = 0; i < params_.size(); ++i)
      adam_step(params_[i].mutable_data(), params_[i].grad(), m_[i], v_[i],
                step_count_, lr_, beta1_, beta2_, eps_);
  }

  int64_t step_count() const { return step_count_; }

 private:
  std::vector<TensorT<S>> params_;
  std::vector<std::vector<S>> m_;
  std::vector<std::vector<S>> v_;
  int64_t step_count_ = 0;
  double lr_, beta1_, beta2_, eps_;
};

using Adam = AdamT<float>;

}  // namespace emoformer::nn
