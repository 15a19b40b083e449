#include <gtest/gtest.h>

#include "dmd/nn/layers.hpp"
#include "support/gradcheck.hpp"

using namespace dmd;
using dmd::testing::check_param_grads;
using dmd::testing::random_tensor;

namespace {

// Direct 7-loop convolution.
Tensor<double> conv_oracle(const Tensor<double>& x, const nn::Conv2d<double>& conv) {
  const auto& s = conv.spec();
  const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const int oh = s.out_size(h), ow = s.out_size(w);
  const int cin_g = s.in_channels / s.groups, cout_g = s.out_channels / s.groups;
  Tensor<double> y({n, s.out_channels, oh, ow});
  for (int b = 0; b < n; ++b)
    for (int o = 0; o < s.out_channels; ++o) {
      const int g = o / cout_g;
      for (int r = 0; r < oh; ++r)
        for (int c = 0; c < ow; ++c) {
          double acc = s.bias ? conv.bias.value[o] : 0.0;
          for (int i = 0; i < cin_g; ++i)
            for (int ky = 0; ky < s.kernel; ++ky)
              for (int kx = 0; kx < s.kernel; ++kx) {
                const int yy = r * s.stride - s.pad + ky, xx = c * s.stride - s.pad + kx;
                if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                acc += conv.weight.value[((static_cast<std::size_t>(o) * cin_g + i) * s.kernel + ky) * s.kernel + kx] *
                       x.at(b, g * cin_g + i, yy, xx);
              }
          y.at(b, o, r, c) = acc;
        }
    }
  return y;
}

double weighted_sum(const Tensor<double>& y, const Tensor<double>& w) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
  return s;
}

}  // namespace

class ConvShapes : public ::testing::TestWithParam<nn::ConvSpec> {};

TEST_P(ConvShapes, ForwardMatchesLoopOracle) {
  Rng rng(7);
  nn::Conv2d<double> conv("c", GetParam());
  conv.init(rng);
  for (auto& b : conv.bias.value.values()) b = uniform(rng, -1, 1);
  const auto x = random_tensor<double>({2, GetParam().in_channels, 9, 7}, rng);
  const auto y = conv.forward(x);
  const auto ref = conv_oracle(x, conv);
  ASSERT_EQ(y.shape(), ref.shape());
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

TEST_P(ConvShapes, GradientsMatchFiniteDifferences) {
  Rng rng(11);
  nn::Conv2d<double> conv("c", GetParam());
  conv.init(rng);
  auto x = random_tensor<double>({2, GetParam().in_channels, 9, 7}, rng);
  const auto probe = random_tensor<double>(conv.forward(x).shape(), rng);
  nn::ParamList<double> params;
  conv.collect(params);
  dmd::testing::zero_grads(params);
  conv.forward(x);
  const auto dx = conv.backward(probe, true);
  auto loss = [&] { return weighted_sum(conv.forward(x), probe); };
  const auto r = check_param_grads(params, loss, 40, 3);
  EXPECT_LT(r.max_rel, 1e-6) << r.worst;
  for (std::size_t k = 0; k < x.size(); k += 13) {
    const double saved = x[k];
    x[k] = saved + 1e-5;
    const double up = loss();
    x[k] = saved - 1e-5;
    const double down = loss();
    x[k] = saved;
    EXPECT_NEAR(dx[k], (up - down) / 2e-5, 1e-6);
  }
}

INSTANTIATE_TEST_SUITE_P(Specs, ConvShapes,
                         ::testing::Values(nn::ConvSpec{3, 4, 3, 1, 1}, nn::ConvSpec{4, 6, 3, 2, 1},
                                           nn::ConvSpec{4, 4, 1, 1, 0}, nn::ConvSpec{4, 4, 1, 2, 0},
                                           nn::ConvSpec{6, 4, 3, 1, 1, 2, false},
                                           nn::ConvSpec{4, 4, 5, 5, 0, 4, true}),
                         [](const ::testing::TestParamInfo<nn::ConvSpec>& info) {
                           const auto& s = info.param;
                           return "k" + std::to_string(s.kernel) + "s" + std::to_string(s.stride) + "g" +
                                  std::to_string(s.groups) + "_" + std::to_string(s.in_channels) + "to" +
                                  std::to_string(s.out_channels);
                         });

TEST(BatchNorm, TrainingGradientsMatchFiniteDifferences) {
  Rng rng(5);
  nn::BatchNorm2d<double> bn("bn", 3);
  for (auto& v : bn.gamma.value.values()) v = uniform(rng, 0.5, 1.5);
  for (auto& v : bn.beta.value.values()) v = uniform(rng, -0.5, 0.5);
  auto x = random_tensor<double>({4, 3, 3, 3}, rng);
  const auto probe = random_tensor<double>(x.shape(), rng);
  nn::ParamList<double> params;
  bn.collect(params);
  bn.forward(x);
  const auto dx = bn.backward(probe);
  auto loss = [&] {
    const auto saved_m = bn.running_mean, saved_v = bn.running_var;
    const double l = weighted_sum(bn.forward(x), probe);
    bn.running_mean = saved_m;
    bn.running_var = saved_v;
    return l;
  };
  const auto r = check_param_grads(params, loss, 12, 1);
  EXPECT_LT(r.max_rel, 1e-6) << r.worst;
  for (std::size_t k = 0; k < x.size(); k += 5) {
    const double saved = x[k];
    x[k] = saved + 1e-5;
    const double up = loss();
    x[k] = saved - 1e-5;
    const double down = loss();
    x[k] = saved;
    EXPECT_NEAR(dx[k], (up - down) / 2e-5, 1e-6);
  }
}

TEST(BatchNorm, RunningStatisticsUseMomentum) {
  nn::BatchNorm2d<double> bn("bn", 1, 0.9, 1e-5);
  Tensor<double> x({2, 1, 1, 2});
  x[0] = 1;
  x[1] = 3;
  x[2] = 5;
  x[3] = 7;
  bn.forward(x);
  EXPECT_NEAR(bn.running_mean[0], 0.1 * 4.0, 1e-12);
  // unbiased variance of {1,3,5,7} = 20/3
  EXPECT_NEAR(bn.running_var[0], 0.9 + 0.1 * 20.0 / 3.0, 1e-12);
  bn.training = false;
  const auto y = bn.forward(x);
  EXPECT_NEAR(y[0], (1 - bn.running_mean[0]) / std::sqrt(bn.running_var[0] + 1e-5), 1e-12);
}

TEST(MaxPool, ForwardAndRouting) {
  nn::MaxPool2d<double> pool(3, 2, 1);
  Tensor<double> x({1, 1, 4, 4});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i);
  const auto y = pool.forward(x);
  ASSERT_EQ(y.shape(), (std::vector<int>{1, 1, 2, 2}));
  EXPECT_EQ(y[0], 5);
  EXPECT_EQ(y[1], 7);
  EXPECT_EQ(y[2], 13);
  EXPECT_EQ(y[3], 15);
  Tensor<double> dy(y.shape(), 1.0);
  const auto dx = pool.backward(dy);
  EXPECT_EQ(dx[5], 1);
  EXPECT_EQ(dx[15], 1);
  EXPECT_EQ(dx[0], 0);
}

TEST(Linear, GradientsMatchFiniteDifferences) {
  Rng rng(3);
  nn::Linear<double> fc("fc", 5, 3);
  fc.init(rng);
  nn::Mat<double> x = nn::Mat<double>::Random(5, 4);
  nn::Mat<double> probe = nn::Mat<double>::Random(3, 4);
  nn::ParamList<double> params;
  fc.collect(params);
  fc.backward(probe, x);
  auto loss = [&] { return (fc.forward(x).array() * probe.array()).sum(); };
  const auto r = check_param_grads(params, loss, 20, 9);
  EXPECT_LT(r.max_rel, 1e-7) << r.worst;
}

TEST(Channels, ConcatThenSplitRoundTrips) {
  Rng rng(1);
  const auto a = random_tensor<double>({2, 2, 3, 3}, rng);
  const auto b = random_tensor<double>({2, 3, 3, 3}, rng);
  const auto c = nn::concat_channels<double>({&a, &b});
  EXPECT_EQ(c.shape(), (std::vector<int>{2, 5, 3, 3}));
  EXPECT_EQ(c.at(1, 3, 2, 1), b.at(1, 1, 2, 1));
  const auto parts = nn::split_channels(c, {2, 3});
  EXPECT_EQ(parts[0].storage(), a.storage());
  EXPECT_EQ(parts[1].storage(), b.storage());
}
