#include "doctest.h"

#include <cmath>
#include <numeric>

#include "coughgan/adam.hpp"
#include "coughgan/error.hpp"
#include "coughgan/losses.hpp"
#include "gradcheck.hpp"

using namespace coughgan;
using namespace coughgan::nn;
using gradcheck::random_tensor;

namespace {

constexpr double kGradTol = 1e-4;

Layer layer_with_random_params(const LayerSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  Layer l = make_layer(spec, rng);
  for (auto& p : l.params)
    for (double& v : p.data()) v = 0.5 * rng.normal();
  return l;
}

/// y[f, i, j] = b[f] + sum x[c, i*s + a - p, j*s + b - p] * w[f, c, a, b]
Tensor direct_conv(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t f = w.dim(0), k = w.dim(2), p = (k - 1) / 2;
  const std::size_t oh = (h + 2 * p - k) / stride + 1, ow = (wd + 2 * p - k) / stride + 1;
  Tensor y({n, f, oh, ow});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < f; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = bias[o];
          for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t a = 0; a < k; ++a)
              for (std::size_t q = 0; q < k; ++q) {
                const long long r = static_cast<long long>(i * stride + a) - static_cast<long long>(p);
                const long long s = static_cast<long long>(j * stride + q) - static_cast<long long>(p);
                if (r < 0 || s < 0 || r >= static_cast<long long>(h) || s >= static_cast<long long>(wd)) continue;
                acc += x[((b * c + ci) * h + r) * wd + s] * w[((o * c + ci) * k + a) * k + q];
              }
          y[((b * f + o) * oh + i) * ow + j] = acc;
        }
  return y;
}

/// Scatter form: every input pixel adds w[c, o] at (i*s + a - p, j*s + b - p), p = (k - s) / 2.
Tensor direct_transpose(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t f = w.dim(1), k = w.dim(2), p = (k - stride) / 2;
  const std::size_t oh = (h - 1) * stride + k - 2 * p, ow = (wd - 1) * stride + k - 2 * p;
  Tensor y({n, f, oh, ow});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < f; ++o)
      for (std::size_t i = 0; i < oh * ow; ++i) y[(b * f + o) * oh * ow + i] = bias[o];
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < wd; ++j)
          for (std::size_t o = 0; o < f; ++o)
            for (std::size_t a = 0; a < k; ++a)
              for (std::size_t q = 0; q < k; ++q) {
                const long long r = static_cast<long long>(i * stride + a) - static_cast<long long>(p);
                const long long s = static_cast<long long>(j * stride + q) - static_cast<long long>(p);
                if (r < 0 || s < 0 || r >= static_cast<long long>(oh) || s >= static_cast<long long>(ow)) continue;
                y[((b * f + o) * oh + r) * ow + s] +=
                    x[((b * c + ci) * h + i) * wd + j] * w[((ci * f + o) * k + a) * k + q];
              }
  return y;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

}  // namespace

TEST_CASE("elementwise activations") {
  Rng rng(1);
  Layer leaky = make_layer(LayerSpec::leaky_relu(0.2), rng);
  const Tensor x({1, 3}, {-1.0, 0.0, 2.0});
  const Tensor y = forward(leaky, x, Mode::eval, nullptr).output;
  CHECK(y[0] == doctest::Approx(-0.2));
  CHECK(y[1] == 0.0);
  CHECK(y[2] == 2.0);

  Layer relu = make_layer(LayerSpec::activation(LayerKind::relu), rng);
  CHECK(forward(relu, x, Mode::eval, nullptr).output.values() == std::vector<double>{0.0, 0.0, 2.0});

  Layer th = make_layer(LayerSpec::activation(LayerKind::tanh), rng);
  const auto r = forward(th, Tensor({1}, {0.0}), Mode::eval, nullptr);
  CHECK(backward(th, r.cache, Tensor({1}, {1.0})).grad_input[0] == 1.0);

  Layer sig = make_layer(LayerSpec::activation(LayerKind::sigmoid), rng);
  const Tensor big({1, 4}, {-800.0, -40.0, 40.0, 800.0});
  const Tensor squashed = forward(sig, big, Mode::eval, nullptr).output;
  for (double v : squashed.data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }

  Layer sm = make_layer(LayerSpec::activation(LayerKind::softmax), rng);
  const Tensor logits = random_tensor(rng, {6, 5}, 10.0);
  const Tensor p = forward(sm, logits, Mode::eval, nullptr).output;
  for (std::size_t i = 0; i < 6; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 5; ++j) s += p[i * 5 + j];
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("conv2d agrees with direct summation on both kernel paths") {
  Rng rng(2);
  // (in, filters) 2x3 runs the phase-plane kernels, 6x8 runs the GEMM path.
  for (auto [in, out] : {std::pair<std::size_t, std::size_t>{2, 3}, {6, 8}})
    for (std::size_t stride : {1u, 2u}) {
      Layer l = layer_with_random_params(LayerSpec::conv2d(in, out, 3, stride), 10 + in + stride);
      const Tensor x = random_tensor(rng, {2, in, 9, 6});
      const Tensor y = forward(l, x, Mode::eval, nullptr).output;
      CHECK(max_abs_diff(y, direct_conv(x, l.params[0], l.params[1], stride)) < 1e-12);
    }

  Layer id = make_layer(LayerSpec::conv2d(3, 3, 1, 1), rng);
  id.params[0].fill(0.0);
  for (std::size_t c = 0; c < 3; ++c) id.params[0][c * 3 + c] = 1.0;
  const Tensor x = random_tensor(rng, {2, 3, 5, 4});
  CHECK(forward(id, x, Mode::eval, nullptr).output == x);
}

TEST_CASE("conv shape arithmetic follows symmetric same padding") {
  CHECK(conv_output_size(128, 3, 2, Padding::same) == 64);
  CHECK(conv_output_size(24, 3, 2, Padding::same) == 12);
  CHECK(conv_output_size(16, 3, 2, Padding::same) == 8);
  CHECK(conv_output_size(3, 3, 2, Padding::same) == 2);
  CHECK(conv_output_size(128, 3, 1, Padding::same) == 128);
  CHECK(conv_output_size(10, 3, 1, Padding::valid) == 8);
}

TEST_CASE("conv2d_transpose doubles the map and agrees with the scatter form") {
  Rng rng(3);
  for (auto [in, out] : {std::pair<std::size_t, std::size_t>{3, 2}, {8, 6}}) {
    Layer l = layer_with_random_params(LayerSpec::conv2d_transpose(in, out, 4, 2), 20 + in);
    const Tensor x = random_tensor(rng, {2, in, 16, 3});
    const Tensor y = forward(l, x, Mode::eval, nullptr).output;
    CHECK(y.shape() == Shape{2, out, 32, 6});
    CHECK(max_abs_diff(y, direct_transpose(x, l.params[0], l.params[1], 2)) < 1e-12);
  }
}

TEST_CASE("batchnorm normalizes by batch statistics in train mode") {
  Rng rng(4);
  Layer bn = make_layer(LayerSpec::batchnorm(3), rng);
  Tensor x = random_tensor(rng, {5, 3, 4, 2});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 3.0 * x[i] + 7.0;
  const Tensor y = forward(bn, x, Mode::train, nullptr).output;
  for (std::size_t c = 0; c < 3; ++c) {
    double sum = 0.0, sq = 0.0, n = 0.0;
    for (std::size_t b = 0; b < 5; ++b)
      for (std::size_t i = 0; i < 8; ++i) {
        const double v = y[(b * 3 + c) * 8 + i];
        sum += v, sq += v * v, n += 1.0;
      }
    CHECK(std::abs(sum / n) < 1e-6);
    // Epsilon 1e-5 shifts the variance by about eps / var.
    CHECK(std::abs(sq / n - 1.0) < 1e-5 / 9.0 * 2.0 + 1e-6);
  }
  // Running averages moved by 1 - momentum towards the batch statistics.
  double batch_mean = 0.0;
  for (std::size_t b = 0; b < 5; ++b)
    for (std::size_t i = 0; i < 8; ++i) batch_mean += x[(b * 3) * 8 + i] / 40.0;
  CHECK(bn.buffers[0][0] == doctest::Approx(0.01 * batch_mean).epsilon(1e-12));

  Layer fresh = make_layer(LayerSpec::batchnorm(3), rng);
  const Tensor e = forward(fresh, x, Mode::eval, nullptr).output;
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(e[i] == doctest::Approx(x[i] / std::sqrt(1.0 + 1e-5)));
}

TEST_CASE("dropout") {
  Rng rng(5);
  Layer d = make_layer(LayerSpec::dropout(0.5), rng);
  const Tensor x = random_tensor(rng, {4, 50});
  CHECK(forward(d, x, Mode::eval, nullptr).output == x);
  CHECK_THROWS_AS(forward(d, x, Mode::train, nullptr), ContractError);

  Rng a(7), b(7);
  const auto ra = forward(d, x, Mode::train, &a);
  CHECK(ra.output == forward(d, x, Mode::train, &b).output);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK((ra.output[i] == 0.0 || ra.output[i] == 2.0 * x[i]));
  const Tensor g = backward(d, ra.cache, Tensor(x.shape(), 1.0)).grad_input;
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(g[i] == (ra.output[i] == 0.0 ? 0.0 : 2.0));

  // Mean preservation over 10^4 trials of a constant input.
  const Tensor ones({1, 100}, 1.0);
  double total = 0.0;
  for (int t = 0; t < 10000; ++t) {
    const Tensor kept = forward(d, ones, Mode::train, &rng).output;
    for (double v : kept.data()) total += v;
  }
  CHECK(std::abs(total / 1e6 - 1.0) < 0.005);
}

TEST_CASE("dense, embedding and flatten") {
  Rng rng(6);
  Layer dense = make_layer(LayerSpec::dense(3, 2), rng);
  dense.params[0] = Tensor({3, 2}, {1, 2, 3, 4, 5, 6});
  dense.params[1] = Tensor({2}, {0.5, -0.5});
  CHECK(forward(dense, Tensor({1, 3}, {1, 1, 1}), Mode::eval, nullptr).output.values() ==
        std::vector<double>{9.5, 11.5});

  Layer emb = make_layer(LayerSpec::embedding(3, 2), rng);
  const Tensor rows = forward(emb, Tensor({2}, {2.0, 0.0}), Mode::eval, nullptr).output;
  CHECK(rows.shape() == Shape{2, 2});
  CHECK(rows[0] == emb.params[0][4]);
  CHECK(rows[3] == emb.params[0][1]);

  Layer flat = make_layer(LayerSpec::flatten({1, 16, 3}), rng);
  CHECK(forward(flat, Tensor({2, 48}), Mode::eval, nullptr).output.shape() == Shape{2, 1, 16, 3});
  CHECK_THROWS_AS(forward(flat, Tensor({2, 47}), Mode::eval, nullptr), ShapeError);
  CHECK_THROWS_AS(forward(dense, Tensor({1, 4}), Mode::eval, nullptr), ShapeError);
}

TEST_CASE("concat_channels and split_channels") {
  Rng rng(7);
  const Tensor a = random_tensor(rng, {2, 3, 4, 2}), b = random_tensor(rng, {2, 1, 4, 2});
  const Tensor c = concat_channels(a, b);
  CHECK(c.shape() == Shape{2, 4, 4, 2});
  CHECK(c[8 * 3] == b[0]);
  CHECK(c[8 * 4] == a[8 * 3]);
  const auto [ga, gb] = split_channels(c, 3);
  CHECK(ga == a);
  CHECK(gb == b);
  CHECK_THROWS_AS(concat_channels(a, Tensor({2, 1, 4, 3})), ShapeError);
  Layer l = make_layer(LayerSpec::concat_channels(), rng);
  CHECK_THROWS_AS(forward(l, a, Mode::eval, nullptr), ContractError);
}

TEST_CASE("layer gradients pass central finite differences") {
  Rng rng(8);
  struct Case {
    const char* name;
    LayerSpec spec;
    Shape input;
    Mode mode = Mode::train;
  };
  const std::vector<Case> cases{
      {"conv2d phase stride 1", LayerSpec::conv2d(2, 3, 3, 1), {2, 2, 7, 5}},
      {"conv2d phase stride 2", LayerSpec::conv2d(2, 3, 3, 2), {2, 2, 8, 6}},
      {"conv2d gemm stride 1", LayerSpec::conv2d(6, 8, 3, 1), {2, 6, 6, 4}},
      {"conv2d gemm stride 2", LayerSpec::conv2d(6, 8, 3, 2), {2, 6, 7, 5}},
      {"conv2d_transpose phase", LayerSpec::conv2d_transpose(3, 2, 4, 2), {2, 3, 4, 3}},
      {"conv2d_transpose gemm", LayerSpec::conv2d_transpose(8, 6, 4, 2), {2, 8, 4, 3}},
      {"dense", LayerSpec::dense(7, 4), {3, 7}},
      {"batchnorm train", LayerSpec::batchnorm(3), {3, 3, 4, 2}},
      {"batchnorm dense", LayerSpec::batchnorm(5), {4, 5}},
      {"batchnorm eval", LayerSpec::batchnorm(3), {3, 3, 4, 2}, Mode::eval},
      {"leaky_relu", LayerSpec::leaky_relu(0.2), {3, 10}},
      {"relu", LayerSpec::activation(LayerKind::relu), {3, 10}},
      {"tanh", LayerSpec::activation(LayerKind::tanh), {3, 10}},
      {"sigmoid", LayerSpec::activation(LayerKind::sigmoid), {3, 10}},
      {"softmax", LayerSpec::activation(LayerKind::softmax), {3, 6}},
      {"dropout", LayerSpec::dropout(0.5), {3, 10}},
      {"flatten", LayerSpec::flatten(), {2, 3, 2, 2}},
  };
  std::uint64_t seed = 100;
  for (const auto& c : cases) {
    CAPTURE(c.name);
    Layer l = layer_with_random_params(c.spec, ++seed);
    const auto rep = gradcheck::check_layer(l, random_tensor(rng, c.input), c.mode, seed);
    CHECK(rep.input < kGradTol);
    CHECK(rep.params < kGradTol);
  }

  Layer emb = layer_with_random_params(LayerSpec::embedding(4, 3), 77);
  const auto rep = gradcheck::check_layer(emb, Tensor({3}, {3.0, 0.0, 3.0}), Mode::train, 77);
  CHECK(rep.params < kGradTol);
}

TEST_CASE("zero upstream gradient gives zero gradients") {
  Rng rng(9);
  Layer l = layer_with_random_params(LayerSpec::conv2d(2, 3, 3, 2), 3);
  const auto r = forward(l, random_tensor(rng, {2, 2, 6, 4}), Mode::train, nullptr);
  const auto g = backward(l, r.cache, Tensor(r.output.shape()));
  for (double v : g.grad_input.data()) CHECK(v == 0.0);
  for (const auto& p : g.grad_params)
    for (double v : p.data()) CHECK(v == 0.0);
}

TEST_CASE("backward rejects a foreign cache and a misshapen gradient") {
  Rng rng(10);
  Layer a = make_layer(LayerSpec::dense(3, 2), rng), b = make_layer(LayerSpec::dense(3, 2), rng);
  const auto r = forward(a, Tensor({1, 3}, 1.0), Mode::eval, nullptr);
  CHECK_THROWS_AS(backward(b, r.cache, r.output), ContractError);
  CHECK_THROWS_AS(backward(a, r.cache, Tensor({1, 3})), ShapeError);
}

TEST_CASE("binary cross-entropy") {
  CHECK(bce_loss(Tensor({1}, {0.5}), Tensor({1}, {1.0})).loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(bce_loss(Tensor({1}, {0.9}), Tensor({1}, {0.9})).loss ==
        doctest::Approx(-(0.9 * std::log(0.9) + 0.1 * std::log(0.1))).epsilon(1e-12));
  CHECK(bce_loss(Tensor({1}, {0.9}), Tensor({1}, {0.9})).loss == doctest::Approx(0.325083).epsilon(1e-6));
  CHECK_THROWS_AS(bce_loss(Tensor({2}), Tensor({3})), ShapeError);

  Rng rng(11);
  Tensor p({4, 3}), t({4, 3});
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = rng.uniform(0.05, 0.95), t[i] = rng.uniform();
  const auto res = bce_loss(p, t);
  const auto num = oracle::numeric_gradient(p.data(), [&] { return bce_loss(p, t).loss; });
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::abs(res.grad[i] - num[i]) < 1e-6);

  // Gradient is zero inside the clamp.
  CHECK(bce_loss(Tensor({1}, {0.0}), Tensor({1}, {1.0})).grad[0] == 0.0);
}

TEST_CASE("categorical cross-entropy") {
  const Tensor uniform({2, 3}, 1.0 / 3.0);
  CHECK(categorical_ce_loss(uniform, Tensor({2, 3}, {1, 0, 0, 0, 0, 1})).loss ==
        doctest::Approx(std::log(3.0)).epsilon(1e-12));
  CHECK(categorical_ce_loss(Tensor({1, 3}, {0, 1, 0}), Tensor({1, 3}, {0, 1, 0})).loss <= 1e-6);
  CHECK_THROWS_AS(categorical_ce_loss(Tensor({1, 3}, {0.5, 0.4, 0.3}), Tensor({1, 3}, {1, 0, 0})), DomainError);
  CHECK_THROWS_AS(categorical_ce_loss(Tensor({1, 3}, {1.2, -0.2, 0.0}), Tensor({1, 3}, {1, 0, 0})), DomainError);

  Tensor p({2, 3}, {0.2, 0.5, 0.3, 0.6, 0.1, 0.3});
  const Tensor t({2, 3}, {0, 1, 0, 0, 0, 1});
  const auto res = categorical_ce_loss(p, t);
  // Off-simplex perturbations are fine for the gradient of -sum t ln p.
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double want = t[i] == 0.0 ? 0.0 : -1.0 / (2.0 * p[i]);
    CHECK(std::abs(res.grad[i] - want) < 1e-6);
  }
}

TEST_CASE("adam") {
  Tensor theta({1}, {0.0});
  std::vector<ParamRef> params{{"theta", &theta}};
  AdamState st = make_adam({}, params);
  const Tensor g({1}, {1.0});
  const std::vector<const Tensor*> grads{&g};
  adam_step(st, params, grads);
  CHECK(theta[0] == doctest::Approx(-0.001).epsilon(1e-6));
  CHECK(st.step == 1);

  Tensor w({2}, {0.3, -0.7});
  std::vector<ParamRef> wp{{"w", &w}};
  AdamState s2 = make_adam({}, wp);
  const Tensor zero({2});
  const std::vector<const Tensor*> zg{&zero};
  adam_step(s2, wp, zg);
  CHECK(w.values() == std::vector<double>{0.3, -0.7});

  AdamState decay = make_adam({0.1, 0.9, 0.999, 1e-7, 0.5}, wp);
  adam_step(decay, wp, zg);
  CHECK(w[0] == doctest::Approx(0.3 * (1.0 - 0.05)));

  Tensor bad({2}, {0.0, std::nan("")});
  const std::vector<const Tensor*> bg{&bad};
  const Tensor before = w;
  try {
    adam_step(decay, wp, bg);
    FAIL("expected a training error");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("w") != std::string::npos);
  }
  CHECK(w == before);

  auto run = [] {
    Rng rng(3);
    Tensor p = random_tensor(rng, {5});
    std::vector<ParamRef> refs{{"p", &p}};
    AdamState s = make_adam({0.01, 0.9, 0.999, 1e-7, 0.01}, refs);
    for (int i = 0; i < 10; ++i) {
      const Tensor grad = random_tensor(rng, {5});
      const std::vector<const Tensor*> gs{&grad};
      adam_step(s, refs, gs);
    }
    return p;
  };
  CHECK(run() == run());
}

TEST_CASE("gaussian_sample") {
  Rng a(1), b(1);
  const Tensor zeros = gaussian_sample(a, {10, 10}, 0.0, 0.0);
  for (double v : zeros.data()) CHECK(v == 0.0);
  CHECK_THROWS_AS(gaussian_sample(b, {2}, 0.0, -1.0), DomainError);
  Rng c(4), d(4);
  CHECK(gaussian_sample(c, {64}) == gaussian_sample(d, {64}));

  Rng r(2);
  const Tensor x = gaussian_sample(r, {100000});
  const double mean = std::accumulate(x.data().begin(), x.data().end(), 0.0) / 1e5;
  double var = 0.0;
  for (double v : x.data()) var += (v - mean) * (v - mean);
  var /= 1e5;
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.03);

  Rng s(2);
  const Tensor y = gaussian_sample(s, {1000}, 2.0, 0.25);
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(2.0 + 0.5 * x[i]).epsilon(1e-12));
}

TEST_CASE("stacks compose layers") {
  Rng rng(12);
  Stack empty;
  StackCache cache;
  const Tensor x = random_tensor(rng, {3, 4});
  CHECK(model_forward(empty, x, Mode::train, nullptr, cache) == x);

  Stack two;
  two.add(LayerSpec::dense(4, 5), rng).add(LayerSpec::activation(LayerKind::tanh), rng);
  two.add(LayerSpec::dense(5, 2), rng).add(LayerSpec::activation(LayerKind::sigmoid), rng);
  for (auto& l : two.layers)
    for (auto& p : l.params)
      for (double& v : p.data()) v = rng.normal();
  StackCache c;
  const Tensor y = model_forward(two, x, Mode::train, nullptr, c);
  const Tensor r = random_tensor(rng, y.shape());
  StackGrads grads = zero_grads(two);
  Tensor xin = x;
  const Tensor gx = model_backward(two, c, r, grads);
  auto loss = [&] {
    StackCache k;
    return gradcheck::project(model_forward(two, xin, Mode::train, nullptr, k), r);
  };
  std::vector<std::size_t> all(x.size());
  std::iota(all.begin(), all.end(), 0);
  CHECK(gradcheck::compare(xin, gx, loss, all) < kGradTol);
  for (std::size_t i = 0; i < two.layers.size(); ++i)
    for (std::size_t p = 0; p < two.layers[i].params.size(); ++p) {
      std::vector<std::size_t> idx(two.layers[i].params[p].size());
      std::iota(idx.begin(), idx.end(), 0);
      CHECK(gradcheck::compare(two.layers[i].params[p], grads[i][p], loss, idx) < kGradTol);
    }
}
