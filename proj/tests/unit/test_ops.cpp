// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "oracles.hpp"
#include "pecop/ops.hpp"

using namespace pecop;
using TD = BasicTensor<double>;

namespace {

double weighted_sum(const TD& t, const TD& w) {
  double s = 0.0;
  for (size_t i = 0; i < t.size(); ++i) s += t[i] * w[i];
  return s;
}

}  // namespace

TEST_CASE("conv3d forward matches the nested-loop oracle") {
  std::mt19937_64 rng(7);
  struct Case {
    int64_t c, o, groups, k, stride, pad;
  };
  for (const Case& c : {Case{3, 4, 1, 3, 1, 1}, Case{8, 2, 2, 3, 1, 1}, Case{4, 6, 1, 1, 1, 0},
                        Case{3, 5, 1, 3, 2, 1}, Case{6, 6, 3, 3, 1, 1}}) {
    CAPTURE(c.groups);
    CAPTURE(c.stride);
    const TD x = oracle::random_tensor<double>({2, c.c, 4, 5, 6}, rng);
    const TD w = oracle::random_tensor<double>({c.o, c.c / c.groups, c.k, c.k, c.k}, rng);
    ops::ConvGeometry g{c.groups, {c.stride, c.stride, c.stride}, {c.pad, c.pad, c.pad}};
    const TD got = ops::conv3d_forward(x, w, g);
    const TD want = oracle::conv3d(x, w, c.groups, c.stride, c.pad);
    REQUIRE(got.shape() == want.shape());
    CHECK(max_abs_diff(got, want) < 1e-12);
  }
}

TEST_CASE("conv3d float path agrees with double path") {
  std::mt19937_64 rng(8);
  const TD x = oracle::random_tensor<double>({1, 4, 3, 6, 6}, rng);
  const TD w = oracle::random_tensor<double>({4, 4, 3, 3, 3}, rng);
  ops::ConvGeometry g{1, {1, 2, 2}, {1, 1, 1}};
  const Tensor yf = ops::conv3d_forward(x.cast<float>(), w.cast<float>(), g);
  const TD yd = ops::conv3d_forward(x, w, g);
  CHECK(max_abs_diff(yf.cast<double>(), yd) < 1e-5);
}

TEST_CASE("conv3d backward matches finite differences") {
  std::mt19937_64 rng(9);
  TD x = oracle::random_tensor<double>({1, 4, 3, 4, 4}, rng);
  TD w = oracle::random_tensor<double>({4, 2, 3, 3, 3}, rng);
  ops::ConvGeometry g{2, {1, 2, 1}, {1, 1, 1}};
  const TD probe = oracle::random_tensor<double>(ops::conv3d_forward(x, w, g).shape(), rng);
  auto loss = [&] { return weighted_sum(ops::conv3d_forward(x, w, g), probe); };
  TD gx, gw(w.shape());
  ops::conv3d_backward(x, w, probe, g, &gx, &gw);
  CHECK(oracle::relative_error(gx, oracle::numeric_gradient(x, loss)) < 1e-6);
  CHECK(oracle::relative_error(gw, oracle::numeric_gradient(w, loss)) < 1e-6);
}

TEST_CASE("max pool backward routes gradient to the argmax") {
  std::mt19937_64 rng(10);
  TD x = oracle::random_tensor<double>({1, 2, 4, 4, 4}, rng);
  ops::PoolGeometry g{{3, 3, 3}, {2, 2, 2}, {1, 1, 1}};
  std::vector<int64_t> argmax;
  const TD y = ops::max_pool3d_forward(x, g, &argmax);
  CHECK(y.shape() == Shape{1, 2, 2, 2, 2});
  const TD probe = oracle::random_tensor<double>(y.shape(), rng);
  auto loss = [&] { return weighted_sum(ops::max_pool3d_forward(x, g, nullptr), probe); };
  const TD gx = ops::max_pool3d_backward(probe, x.shape(), argmax);
  CHECK(oracle::relative_error(gx, oracle::numeric_gradient(x, loss, 1e-6)) < 1e-6);
}

TEST_CASE("batch norm training backward matches finite differences") {
  std::mt19937_64 rng(11);
  TD x = oracle::random_tensor<double>({3, 2, 2, 3, 3}, rng);
  TD gamma = oracle::random_tensor<double>({2}, rng);
  TD beta = oracle::random_tensor<double>({2}, rng);
  const TD probe = oracle::random_tensor<double>(x.shape(), rng);
  auto loss = [&] {
    return weighted_sum(ops::batch_norm_forward_train<double>(x, gamma, beta, 1e-5, nullptr, nullptr, nullptr), probe);
  };
  ops::BatchNormCache<double> cache;
  ops::batch_norm_forward_train<double>(x, gamma, beta, 1e-5, &cache, nullptr, nullptr);
  TD gx, gg(gamma.shape()), gb(beta.shape());
  ops::batch_norm_backward(probe, gamma, cache, &gx, &gg, &gb);
  CHECK(oracle::relative_error(gx, oracle::numeric_gradient(x, loss)) < 1e-5);
  CHECK(oracle::relative_error(gg, oracle::numeric_gradient(gamma, loss)) < 1e-6);
  CHECK(oracle::relative_error(gb, oracle::numeric_gradient(beta, loss)) < 1e-6);
}

TEST_CASE("batch norm eval mode uses running statistics") {
  TD x({1, 1, 1, 1, 2}, std::vector<double>{1.0, 3.0});
  TD gamma({1}, 2.0), beta({1}, 0.5), mean({1}, 1.0), var({1}, 4.0);
  const TD y = ops::batch_norm_forward_eval<double>(x, gamma, beta, mean, var, 0.0, nullptr);
  CHECK(y[0] == doctest::Approx(0.5));
  CHECK(y[1] == doctest::Approx(2.5));
}

TEST_CASE("linear backward matches finite differences") {
  std::mt19937_64 rng(12);
  TD x = oracle::random_tensor<double>({3, 5}, rng);
  TD w = oracle::random_tensor<double>({4, 5}, rng);
  TD b = oracle::random_tensor<double>({4}, rng);
  const TD probe = oracle::random_tensor<double>({3, 4}, rng);
  auto loss = [&] { return weighted_sum(ops::linear_forward(x, w, &b), probe); };
  TD gx, gw(w.shape()), gb(b.shape());
  ops::linear_backward(x, w, probe, &gx, &gw, &gb);
  CHECK(oracle::relative_error(gx, oracle::numeric_gradient(x, loss)) < 1e-8);
  CHECK(oracle::relative_error(gw, oracle::numeric_gradient(w, loss)) < 1e-8);
  CHECK(oracle::relative_error(gb, oracle::numeric_gradient(b, loss)) < 1e-8);
}

TEST_CASE("global average pool and relu") {
  TD x({1, 2, 1, 1, 2}, std::vector<double>{1, 3, -2, -4});
  const TD p = ops::global_avg_pool_forward(x);
  CHECK(p.shape() == Shape{1, 2});
  CHECK(p[0] == 2.0);
  CHECK(p[1] == -3.0);
  const TD gp = ops::global_avg_pool_backward(TD({1, 2}, std::vector<double>{2, 4}), x.shape());
  CHECK(gp.storage() == std::vector<double>{1, 1, 2, 2});
  const TD r = ops::relu_forward(x);
  CHECK(r.storage() == std::vector<double>{1, 3, 0, 0});
  CHECK(ops::relu_backward(TD(x.shape(), 1.0), r).storage() == std::vector<double>{1, 1, 0, 0});
}

TEST_CASE("channel concat and split round-trip") {
  std::mt19937_64 rng(13);
  const TD a = oracle::random_tensor<double>({2, 1, 2, 2, 2}, rng);
  const TD b = oracle::random_tensor<double>({2, 3, 2, 2, 2}, rng);
  const TD cat = ops::concat_channels<double>({&a, &b});
  CHECK(cat.shape() == Shape{2, 4, 2, 2, 2});
  const auto parts = ops::split_channels(cat, {1, 3});
  CHECK(parts[0] == a);
  CHECK(parts[1] == b);
}

TEST_CASE("shape errors are raised for mismatched operands") {
  TD x({1, 3, 2, 2, 2});
  TD w({4, 2, 1, 1, 1});
  CHECK_THROWS_AS(ops::conv3d_forward(x, w, {}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
}
