#include "emoformer/gradcheck.hpp"

#include <array>
#include <cmath>
#include <functional>
#include <sstream>

#include "emoformer/ops.hpp"
#include "emoformer/rng.hpp"
#include "emoformer/tensor.hpp"

namespace emoformer {

namespace {

using nn::Tensor64;

constexpr double kStep = 1e-6;
constexpr double kTolerance = 1e-5;

using Forward = std::function<Tensor64(std::vector<Tensor64>&)>;

Tensor64 random_tensor(nn::Shape shape, Rng& rng, double lo = -1.0,
                       double hi = 1.0) {
  std::vector<double> values(static_cast<size_t>(nn::shape_numel(shape)));
  for (double& v : values) v = rng.uniform(lo, hi);
  return Tensor64::from_data(std::move(shape), std::move(values));
}

// Keeps every value at least `margin` away from zero so relu probes never
// cross the kink within the finite-difference step.
void push_from_zero(Tensor64& t, double margin) {
  for (double& v : t.mutable_data())
    if (std::abs(v) < margin) v = v < 0.0 ? -margin : margin;
}

std::string shape_list(const std::vector<Tensor64>& inputs) {
  std::ostringstream out;
  for (size_t i = 0; i < inputs.size(); ++i) {
    if (i) out << ", ";
    out << nn::shape_str(inputs[i].shape());
  }
  return out.str();
}

// Projects the op output to a scalar with a fixed random weighting so the
// whole Jacobian is exercised, then compares d(loss)/d(input) element by
// element against central differences.
GradCheckCase check_op(const std::string& op, const std::string& variant,
                       std::vector<Tensor64> inputs,
                       const std::vector<size_t>& checked, const Forward& fn,
                       Rng& rng) {
  GradCheckCase result;
  result.op = op;
  result.detail = variant.empty() ? shape_list(inputs)
                                  : variant + "; " + shape_list(inputs);

  for (size_t idx : checked) inputs[idx].set_requires_grad(true);
  Tensor64 output = fn(inputs);
  Tensor64 projection = random_tensor(output.shape(), rng);
  projection.set_requires_grad(false);
  auto project = [&projection](const Tensor64& out) {
    return nn::sum_all(nn::mul(out, projection));
  };

  nn::backward(project(output));
  std::vector<std::vector<double>> analytic;
  analytic.reserve(checked.size());
  for (size_t idx : checked) analytic.push_back(inputs[idx].grad());

  double worst = 0.0;
  {
    nn::NoGradGuard no_grad;
    for (size_t c = 0; c < checked.size(); ++c) {
      Tensor64& input = inputs[checked[c]];
      for (size_t i = 0; i < input.data().size(); ++i) {
        const double saved = input.data()[i];
        input.mutable_data()[i] = saved + kStep;
        const double up = project(fn(inputs)).scalar();
        input.mutable_data()[i] = saved - kStep;
        const double down = project(fn(inputs)).scalar();
        input.mutable_data()[i] = saved;
        const double numeric = (up - down) / (2.0 * kStep);
        const double exact = analytic[c][i];
        const double scale =
            std::max(1.0, std::max(std::abs(exact), std::abs(numeric)));
        worst = std::max(worst, std::abs(exact - numeric) / scale);
      }
    }
  }
  result.max_rel_error = worst;
  result.passed = worst <= kTolerance;
  return result;
}

void check_elementwise(std::vector<GradCheckCase>& cases, Rng& rng) {
  const std::vector<nn::Shape> shapes = {
      {3}, {2, 5}, {4, 3, 2}, {1, 7}, {2, 2, 2, 2}};
  for (const nn::Shape& shape : shapes) {
    {
      std::vector<Tensor64> in = {random_tensor(shape, rng),
                                  random_tensor(shape, rng)};
      cases.push_back(check_op(
          "add", "", in, {0, 1},
          [](std::vector<Tensor64>& v) { return nn::add(v[0], v[1]); }, rng));
    }
    {
      std::vector<Tensor64> in = {random_tensor(shape, rng),
                                  random_tensor(shape, rng)};
      cases.push_back(check_op(
          "mul", "", in, {0, 1},
          [](std::vector<Tensor64>& v) { return nn::mul(v[0], v[1]); }, rng));
    }
    {
      Tensor64 x = random_tensor(shape, rng);
      push_from_zero(x, 0.05);
      cases.push_back(check_op(
          "relu", "", {x}, {0},
          [](std::vector<Tensor64>& v) { return nn::relu(v[0]); }, rng));
    }
    {
      std::vector<Tensor64> in = {random_tensor(shape, rng)};
      cases.push_back(check_op(
          "scale", "factor 2.5", in, {0},
          [](std::vector<Tensor64>& v) { return nn::scale(v[0], 2.5); },
          rng));
    }
  }
}

void check_dense(std::vector<GradCheckCase>& cases, Rng& rng) {
  const std::vector<std::pair<int64_t, std::pair<int64_t, int64_t>>> dims = {
      {1, {3, 2}}, {4, {5, 3}}, {2, {7, 7}}, {3, {2, 6}}, {5, {4, 1}}};
  for (const auto& [n, io] : dims) {
    std::vector<Tensor64> in = {random_tensor({n, io.first}, rng),
                                random_tensor({io.first, io.second}, rng),
                                random_tensor({io.second}, rng)};
    cases.push_back(check_op(
        "dense", "", in, {0, 1, 2},
        [](std::vector<Tensor64>& v) { return nn::dense(v[0], v[1], v[2]); },
        rng));
  }
  for (const auto& [n, io] : dims) {
    std::vector<Tensor64> in = {random_tensor({n, io.first}, rng),
                                random_tensor({io.first, io.second}, rng)};
    cases.push_back(check_op(
        "matmul", "", in, {0, 1},
        [](std::vector<Tensor64>& v) { return nn::matmul(v[0], v[1]); },
        rng));
  }
}

void check_bmm(std::vector<GradCheckCase>& cases, Rng& rng) {
  const std::vector<std::array<int64_t, 4>> dims = {
      {1, 2, 3, 2}, {2, 4, 2, 3}, {3, 1, 5, 1}, {2, 3, 3, 3}, {1, 6, 2, 4}};
  for (const auto& [b, m, k, n] : dims) {
    {
      std::vector<Tensor64> in = {random_tensor({b, m, k}, rng),
                                  random_tensor({b, k, n}, rng)};
      cases.push_back(check_op(
          "bmm", "", in, {0, 1},
          [](std::vector<Tensor64>& v) { return nn::bmm(v[0], v[1]); }, rng));
    }
    {
      std::vector<Tensor64> in = {random_tensor({b, m, k}, rng),
                                  random_tensor({b, n, k}, rng)};
      cases.push_back(check_op(
          "bmm_nt", "", in, {0, 1},
          [](std::vector<Tensor64>& v) { return nn::bmm_nt(v[0], v[1]); },
          rng));
    }
  }
}

void check_softmax(std::vector<GradCheckCase>& cases, Rng& rng) {
  const std::vector<nn::Shape> shapes = {
      {1, 3}, {4, 5}, {2, 3, 4}, {3, 1}, {2, 2, 2, 3}};
  for (const nn::Shape& shape : shapes) {
    std::vector<Tensor64> in = {random_tensor(shape, rng, -2.0, 2.0)};
    cases.push_back(check_op(
        "softmax", "", in, {0},
        [](std::vector<Tensor64>& v) { return nn::softmax(v[0]); }, rng));
  }
}

void check_norms(std::vector<GradCheckCase>& cases, Rng& rng) {
  const std::vector<nn::Shape> shapes = {
      {2, 4}, {3, 5}, {2, 3, 4}, {4, 2, 6}, {2, 2, 3, 4}};
  for (const nn::Shape& shape : shapes) {
    const int64_t c = shape.back();
    {
      std::vector<Tensor64> in = {random_tensor(shape, rng),
                                  random_tensor({c}, rng, 0.5, 1.5),
                                  random_tensor({c}, rng)};
      cases.push_back(check_op(
          "layer_norm", "", in, {0, 1, 2},
          [](std::vector<Tensor64>& v) {
            return nn::layer_norm(v[0], v[1], v[2], 1e-6);
          },
          rng));
    }
    {
      std::vector<Tensor64> in = {random_tensor(shape, rng),
                                  random_tensor({c}, rng, 0.5, 1.5),
                                  random_tensor({c}, rng)};
      cases.push_back(check_op(
          "batch_norm", "train", in, {0, 1, 2},
          [](std::vector<Tensor64>& v) {
            const auto c =
                static_cast<size_t>(v[0].dim(v[0].rank() - 1));
            nn::BatchNormState<double> state;
            state.running_mean.assign(c, 0.0);
            state.running_var.assign(c, 1.0);
            return nn::batch_norm(v[0], v[1], v[2], state, nn::Mode::train);
          },
          rng));
    }
    {
      std::vector<Tensor64> in = {random_tensor(shape, rng),
                                  random_tensor({c}, rng, 0.5, 1.5),
                                  random_tensor({c}, rng)};
      nn::BatchNormState<double> state;
      state.running_mean.resize(static_cast<size_t>(c));
      state.running_var.resize(static_cast<size_t>(c));
      for (double& v : state.running_mean) v = rng.uniform(-0.5, 0.5);
      for (double& v : state.running_var) v = rng.uniform(0.5, 1.5);
      cases.push_back(check_op(
          "batch_norm", "infer", in, {0, 1, 2},
          [state](std::vector<Tensor64>& v) mutable {
            return nn::batch_norm(v[0], v[1], v[2], state, nn::Mode::infer);
          },
          rng));
    }
  }
}

void check_conv(std::vector<GradCheckCase>& cases, Rng& rng) {
  struct Setup {
    int64_t n, h, w, c, kh, kw, f, stride;
    nn::Padding padding;
    const char* variant;
  };
  const std::vector<Setup> setups = {
      {1, 5, 5, 1, 3, 3, 2, 1, nn::Padding::same, "same stride 1"},
      {2, 4, 6, 2, 3, 3, 3, 1, nn::Padding::valid, "valid stride 1"},
      {1, 6, 6, 2, 5, 5, 1, 1, nn::Padding::same, "same 5x5"},
      {2, 7, 5, 1, 3, 3, 2, 2, nn::Padding::same, "same stride 2"},
      {1, 5, 4, 3, 2, 2, 2, 2, nn::Padding::valid, "valid stride 2"}};
  for (const Setup& s : setups) {
    std::vector<Tensor64> in = {
        random_tensor({s.n, s.h, s.w, s.c}, rng),
        random_tensor({s.kh, s.kw, s.c, s.f}, rng)};
    const int64_t stride = s.stride;
    const nn::Padding padding = s.padding;
    cases.push_back(check_op(
        "conv2d", s.variant, in, {0, 1},
        [stride, padding](std::vector<Tensor64>& v) {
          return nn::conv2d(v[0], v[1], stride, padding);
        },
        rng));
  }
}

void check_pooling(std::vector<GradCheckCase>& cases, Rng& rng) {
  struct Setup {
    int64_t n, h, w, c, ph, pw;
  };
  const std::vector<Setup> setups = {{1, 4, 4, 1, 2, 2},
                                     {2, 6, 4, 2, 2, 2},
                                     {1, 6, 3, 2, 2, 1},
                                     {2, 5, 5, 1, 2, 2},
                                     {1, 9, 2, 3, 3, 2}};
  for (const Setup& s : setups) {
    Tensor64 x = random_tensor({s.n, s.h, s.w, s.c}, rng);
    // Strictly distinct values per tensor: ties would make the subgradient
    // choice visible to the finite-difference probe.
    std::vector<double>& data = x.mutable_data();
    for (size_t i = 0; i < data.size(); ++i)
      data[i] += static_cast<double>(i) * 1e-3;
    const int64_t ph = s.ph, pw = s.pw;
    cases.push_back(check_op(
        "max_pool2d",
        "window " + std::to_string(s.ph) + "x" + std::to_string(s.pw), {x},
        {0},
        [ph, pw](std::vector<Tensor64>& v) {
          return nn::max_pool2d(v[0], ph, pw);
        },
        rng));
    cases.push_back(check_op(
        "global_avg_pool", "", {random_tensor({s.n, s.h, s.w, s.c}, rng)},
        {0},
        [](std::vector<Tensor64>& v) { return nn::global_avg_pool(v[0]); },
        rng));
  }
}

void check_dropout(std::vector<GradCheckCase>& cases, Rng& rng) {
  const std::vector<nn::Shape> shapes = {
      {8}, {4, 6}, {2, 3, 5}, {10, 2}, {3, 3, 3}};
  uint64_t salt = 11;
  for (const nn::Shape& shape : shapes) {
    std::vector<Tensor64> in = {random_tensor(shape, rng)};
    const uint64_t case_salt = salt++;
    cases.push_back(check_op(
        "dropout", "rate 0.4 train", in, {0},
        [case_salt](std::vector<Tensor64>& v) {
          return nn::dropout(v[0], 0.4, nn::Mode::train, 123, case_salt);
        },
        rng));
  }
}

void check_attention(std::vector<GradCheckCase>& cases, Rng& rng) {
  struct Setup {
    int64_t n, s, d, heads;
  };
  const std::vector<Setup> setups = {
      {1, 3, 4, 2}, {2, 2, 6, 3}, {1, 5, 4, 4}, {2, 4, 8, 2}, {1, 1, 4, 2}};
  for (const Setup& s : setups) {
    std::vector<Tensor64> in = {
        random_tensor({s.n, s.s, s.d}, rng, -0.5, 0.5),
        random_tensor({s.d, s.d}, rng, -0.5, 0.5),
        random_tensor({s.d}, rng, -0.1, 0.1),
        random_tensor({s.d, s.d}, rng, -0.5, 0.5),
        random_tensor({s.d}, rng, -0.1, 0.1),
        random_tensor({s.d, s.d}, rng, -0.5, 0.5),
        random_tensor({s.d}, rng, -0.1, 0.1),
        random_tensor({s.d, s.d}, rng, -0.5, 0.5),
        random_tensor({s.d}, rng, -0.1, 0.1)};
    const int64_t heads = s.heads;
    cases.push_back(check_op(
        "multi_head_attention", std::to_string(s.heads) + " heads", in,
        {0, 1, 2, 3, 4, 5, 6, 7, 8},
        [heads](std::vector<Tensor64>& v) {
          nn::MhaParamsT<double> p{v[1], v[2], v[3], v[4],
                                   v[5], v[6], v[7], v[8]};
          return nn::multi_head_attention(v[0], v[0], v[0], p, heads);
        },
        rng));
  }
}

void check_losses(std::vector<GradCheckCase>& cases, Rng& rng) {
  const std::vector<std::pair<int64_t, int64_t>> dims = {
      {1, 3}, {4, 5}, {2, 7}, {6, 2}, {3, 4}};
  for (const auto& [n, k] : dims) {
    Tensor64 targets = Tensor64::zeros({n, k});
    for (int64_t i = 0; i < n; ++i)
      targets.mutable_data()[static_cast<size_t>(
          i * k + static_cast<int64_t>(rng.below(
                      static_cast<uint64_t>(k))))] = 1.0;
    std::vector<Tensor64> in = {random_tensor({n, k}, rng, -2.0, 2.0),
                                targets};
    cases.push_back(check_op(
        "cross_entropy", "after softmax", in, {0},
        [](std::vector<Tensor64>& v) {
          return nn::cross_entropy(nn::softmax(v[0]), v[1]);
        },
        rng));
  }
}

void check_reshape(std::vector<GradCheckCase>& cases, Rng& rng) {
  const std::array<std::pair<nn::Shape, nn::Shape>, 5> reshapes = {{
      {{2, 3, 4}, {6, 4}},
      {{12}, {3, 4}},
      {{2, 2, 2, 2}, {4, 4}},
      {{5, 6}, {2, 3, 5}},
      {{7}, {7, 1}},
  }};
  for (const auto& [from, to] : reshapes) {
    std::vector<Tensor64> in = {random_tensor(from, rng)};
    nn::Shape target = to;
    cases.push_back(check_op(
        "reshape", "to " + nn::shape_str(target), in, {0},
        [target](std::vector<Tensor64>& v) {
          return nn::reshape(v[0], target);
        },
        rng));
  }
  const std::array<nn::Shape, 5> flats = {
      {{3, 2, 2}, {6}, {2, 5}, {1, 2, 3, 4}, {4, 1, 3}}};
  for (const nn::Shape& shape : flats) {
    std::vector<Tensor64> in = {random_tensor(shape, rng)};
    cases.push_back(check_op(
        "flatten", "", in, {0},
        [](std::vector<Tensor64>& v) { return nn::flatten(v[0]); }, rng));
  }
  const std::array<std::pair<nn::Shape, nn::Shape>, 5> concats = {{
      {{3, 4}, {3, 2}},
      {{1, 1}, {1, 5}},
      {{4, 2}, {4, 2}},
      {{2, 6}, {2, 1}},
      {{5, 3}, {5, 4}},
  }};
  for (const auto& [left, right] : concats) {
    std::vector<Tensor64> in = {random_tensor(left, rng),
                                random_tensor(right, rng)};
    cases.push_back(check_op(
        "concat_cols", "", in, {0, 1},
        [](std::vector<Tensor64>& v) {
          return nn::concat_cols(v[0], v[1]);
        },
        rng));
  }
  const std::array<std::pair<nn::Shape, int64_t>, 5> splits = {{
      {{2, 4, 6}, 2},
      {{1, 3, 8}, 4},
      {{3, 2, 6}, 3},
      {{1, 5, 4}, 2},
      {{2, 1, 10}, 5},
  }};
  for (const auto& [shape, heads] : splits) {
    std::vector<Tensor64> in = {random_tensor(shape, rng)};
    const int64_t h = heads;
    cases.push_back(check_op(
        "split_heads", std::to_string(h) + " heads", in, {0},
        [h](std::vector<Tensor64>& v) { return nn::split_heads(v[0], h); },
        rng));
    std::vector<Tensor64> merged = {
        random_tensor({shape[0] * h, shape[1], shape[2] / h}, rng)};
    cases.push_back(check_op(
        "merge_heads", std::to_string(h) + " heads", merged, {0},
        [h](std::vector<Tensor64>& v) { return nn::merge_heads(v[0], h); },
        rng));
  }
  const std::array<nn::Shape, 5> biased = {
      {{2, 5}, {1, 3}, {6, 2}, {3, 7}, {4, 4}}};
  for (const nn::Shape& shape : biased) {
    std::vector<Tensor64> in = {random_tensor(shape, rng),
                                random_tensor({shape[1]}, rng)};
    cases.push_back(check_op(
        "add_bias", "", in, {0, 1},
        [](std::vector<Tensor64>& v) { return nn::add_bias(v[0], v[1]); },
        rng));
  }
}

}  // namespace

bool GradCheckReport::all_passed() const {
  for (const GradCheckCase& c : cases)
    if (!c.passed) return false;
  return !cases.empty();
}

nlohmann::json GradCheckReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const GradCheckCase& c : cases)
    rows.push_back({{"op", c.op},
                    {"detail", c.detail},
                    {"max_rel_error", c.max_rel_error},
                    {"passed", c.passed}});
  return nlohmann::json{{"step", step},
                        {"tolerance", tolerance},
                        {"all_passed", all_passed()},
                        {"cases", rows}};
}

GradCheckReport run_gradcheck(uint64_t seed) {
  Rng rng(seed);
  GradCheckReport report;
  report.step = kStep;
  report.tolerance = kTolerance;
  check_elementwise(report.cases, rng);
  check_dense(report.cases, rng);
  check_bmm(report.cases, rng);
  check_softmax(report.cases, rng);
  check_norms(report.cases, rng);
  check_conv(report.cases, rng);
  check_pooling(report.cases, rng);
  check_dropout(report.cases, rng);
  check_attention(report.cases, rng);
  check_losses(report.cases, rng);
  check_reshape(report.cases, rng);
  return report;
}

}  // namespace emoformer
