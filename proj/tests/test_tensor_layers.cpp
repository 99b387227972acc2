#include <gtest/gtest.h>

#include <cmath>

#include "drl/gradcheck.hpp"
#include "drl/layers.hpp"

using namespace drl;

namespace {

Tensor64 random_tensor(Shape shape, Rng& rng, double lo = -1, double hi = 1) {
  Tensor64 t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.storage()) v = d(rng);
  return t;
}

}  // namespace

TEST(Tensor, RejectsMismatchedData) {
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor(Shape{0, 2}), ShapeError);
  EXPECT_EQ(Tensor(Shape{2, 3}).size(), 6u);
}

TEST(Layers, IdentityConvReproducesInput) {
  LayerSpec conv = Conv2d{1, 1, 1, 1, 1};
  Tensor w(Shape{1, 1, 1, 1}, std::vector<float>{1});
  Tensor b(Shape{1});
  Tensor x(Shape{1, 3, 2}, std::vector<float>{1, -2, 3.5f, 4, 0, 7});
  auto [y, cache] = layer_forward<float>(conv, {&w, &b}, x);
  EXPECT_EQ(y, x);
}

TEST(Layers, MaxPoolTakesWindowMax) {
  Tensor x(Shape{1, 2, 2}, std::vector<float>{1, 2, 3, 4});
  auto [y, cache] = layer_forward<float>(MaxPool2d{2, 2}, {}, x);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1}));
  EXPECT_EQ(y[0], 4.0f);
}

TEST(Layers, AllOnesKernelSumsWindow) {
  Tensor w(Shape{1, 1, 2, 2}, 1.0f);
  Tensor b(Shape{1});
  Tensor x(Shape{1, 2, 2}, std::vector<float>{1, 2, 3, 4});
  auto [y, cache] = layer_forward<float>(Conv2d{1, 1, 2, 2, 1}, {&w, &b}, x);
  ASSERT_EQ(y.size(), 1u);
  EXPECT_EQ(y[0], 10.0f);
}

TEST(Layers, SoftmaxOfEqualLogitsIsUniform) {
  auto [y, cache] = layer_forward<float>(Softmax{}, {}, Tensor::vector({0, 0}));
  EXPECT_FLOAT_EQ(y[0], 0.5f);
  EXPECT_FLOAT_EQ(y[1], 0.5f);
}

TEST(Layers, ReluBackwardGatesAtZero) {
  auto [y, cache] = layer_forward<float>(Relu{}, {}, Tensor::vector({-2, 3}));
  auto [dx, pg] = layer_backward<float>(Relu{}, {}, cache, Tensor::vector({1, 1}));
  EXPECT_EQ(dx, Tensor::vector({0, 1}));
}

TEST(Layers, IdentityFullyConnectedPassesGradient) {
  Tensor w(Shape{3, 3}, std::vector<float>{1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor b(Shape{3});
  LayerSpec fc = FullyConnected{3, 3};
  auto [y, cache] = layer_forward<float>(fc, {&w, &b}, Tensor::vector({0.3f, -1, 2}));
  const Tensor up = Tensor::vector({0.5f, -2, 7});
  auto [dx, pg] = layer_backward<float>(fc, {&w, &b}, cache, up);
  EXPECT_EQ(dx, up);
}

TEST(Layers, ValidWindowsDropTrailingRows) {
  EXPECT_EQ(output_shape(Conv2d{1, 2, 3, 3, 2}, {1, 8, 8}), (Shape{2, 3, 3}));
  EXPECT_EQ(output_shape(MaxPool2d{2, 2}, {4, 5, 7}), (Shape{4, 2, 3}));
}

TEST(Layers, ShapeMismatchReportsExpectedAndActual) {
  Tensor w(Shape{2, 4}), b(Shape{2});
  try {
    layer_forward<float>(FullyConnected{4, 2}, {&w, &b}, Tensor(Shape{5}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("expected 4"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[5]"), std::string::npos);
  }
  EXPECT_THROW(layer_forward<float>(Conv2d{2, 1, 3, 3, 1}, {&w, &b}, Tensor(Shape{1, 5, 5})), ShapeError);
}

TEST(Layers, BackwardWithoutMatchingCacheFails) {
  LayerCache<float> empty;
  EXPECT_THROW(layer_backward<float>(Relu{}, {}, empty, Tensor(Shape{2})), UsageError);
  auto [y, cache] = layer_forward<float>(Relu{}, {}, Tensor(Shape{3}));
  EXPECT_THROW(layer_backward<float>(Softmax{}, {}, cache, Tensor(Shape{3})), UsageError);
  EXPECT_THROW(layer_backward<float>(Relu{}, {}, cache, Tensor(Shape{4})), ShapeError);
}

TEST(Layers, NonFiniteInputIsHardError) {
  Tensor x = Tensor::vector({1, std::numeric_limits<float>::infinity()});
  EXPECT_THROW(layer_forward<float>(Relu{}, {}, x), NonFiniteError);
}

// Finite-difference oracle for every layer kind, at 64-bit precision.
struct GradCase {
  const char* name;
  std::vector<LayerSpec> layers;
  Shape input;
};

void PrintTo(const GradCase& c, std::ostream* os) { *os << c.name; }

class LayerGradients : public ::testing::TestWithParam<GradCase> {};

TEST_P(LayerGradients, MatchFiniteDifferences) {
  const auto& c = GetParam();
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    Rng rng(seed);
    auto net = SequentialNet::with_random_params(c.layers, rng);
    const Tensor64 x = random_tensor(c.input, rng);
    Shape out = c.input;
    for (const auto& l : c.layers) out = output_shape(l, out);
    const LossHead head = linear_loss_head(shape_size(out), rng);
    EXPECT_LT(gradient_check(net, x, head), 1e-4) << c.name << " seed " << seed;
    EXPECT_LT(input_gradient_check(net, x, head), 1e-4) << c.name << " seed " << seed;
  }
}

INSTANTIATE_TEST_SUITE_P(
    AllKinds, LayerGradients,
    ::testing::Values(
        GradCase{"conv2d", {Conv2d{2, 3, 3, 2, 1}}, {2, 5, 4}},
        GradCase{"conv2d_stride2", {Conv2d{1, 2, 2, 2, 2}}, {1, 5, 5}},
        GradCase{"maxpool2d", {Conv2d{1, 2, 2, 2, 1}, MaxPool2d{2, 2}}, {1, 5, 5}},
        GradCase{"fully_connected", {FullyConnected{6, 4}}, {6}},
        GradCase{"relu", {FullyConnected{5, 6}, Relu{}, FullyConnected{6, 3}}, {5}},
        GradCase{"softmax", {FullyConnected{4, 5}, Softmax{}}, {4}},
        GradCase{"conv_stack",
                 {Conv2d{2, 3, 3, 3, 1}, Relu{}, MaxPool2d{2, 2}, FullyConnected{12, 4}, Relu{},
                  FullyConnected{4, 3}, Softmax{}},
                 {2, 6, 6}}),
    [](const auto& info) { return std::string(info.param.name); });

TEST(GradientCheck, ZeroParameterNetworkIsVacuous) {
  Rng rng(3);
  auto net = SequentialNet::with_random_params({Relu{}, Softmax{}}, rng);
  EXPECT_EQ(gradient_check(net, random_tensor({4}, rng), linear_loss_head(4, rng)), 0.0);
}

TEST(GradientCheck, DetectsSignFlippedBackward) {
  Rng rng(11);
  auto net = SequentialNet::with_random_params({FullyConnected{4, 3}, Relu{}, FullyConnected{3, 2}}, rng);
  const Tensor64 x = random_tensor({4}, rng);
  const LossHead head = linear_loss_head(2, rng);
  auto analytic = sequential_gradients(net, x, head);
  for (auto& [_, g] : analytic) g *= -1.0;
  const auto numeric = numeric_gradients(
      net.params, [&](const ParamMap<double>& p) { return sequential_loss(net, p, x, head); });
  EXPECT_GT(max_relative_error(analytic, numeric), 0.1);
}

TEST(SoftmaxProperties, SumsToOneAndIsShiftInvariant) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + uniform_index(rng, 8);
    Tensor64 logits = random_tensor({n}, rng, -50, 50);
    auto [p, c1] = layer_forward<double>(Softmax{}, {}, logits);
    double sum = 0;
    for (double v : p.storage()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
    const double shift = std::uniform_real_distribution<double>(-20, 20)(rng);
    Tensor64 shifted = logits;
    for (auto& v : shifted.storage()) v += shift;
    auto [q, c2] = layer_forward<double>(Softmax{}, {}, shifted);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(p[i], q[i], 1e-6);
  }
}

TEST(SoftmaxProperties, ModerateLogitsStayStrictlyInsideUnitInterval) {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    auto [p, c] = layer_forward<double>(Softmax{}, {}, random_tensor({6}, rng, -5, 5));
    for (double v : p.storage()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
}

TEST(SoftmaxProperties, ExtremeLogitsStayFinite) {
  for (float big : {50.0f, -50.0f, 88.0f, 1000.0f}) {
    auto [p, c] = layer_forward<float>(Softmax{}, {}, Tensor::vector({big, -big, 0}));
    EXPECT_TRUE(p.all_finite());
    auto [dx, g] = layer_backward<float>(Softmax{}, {}, c, Tensor::vector({1, -1, 0.5f}));
    EXPECT_TRUE(dx.all_finite());
  }
}

TEST(BackwardProperties, LinearInUpstreamGradient) {
  Rng rng(9);
  const std::vector<LayerSpec> kinds = {Conv2d{2, 2, 2, 2, 1}, MaxPool2d{2, 2}, FullyConnected{18, 3},
                                        Relu{}, Softmax{}};
  for (const auto& kind : kinds) {
    const Shape in = std::holds_alternative<FullyConnected>(kind) ? Shape{2, 3, 3}
                     : std::holds_alternative<Relu>(kind) || std::holds_alternative<Softmax>(kind)
                         ? Shape{7}
                         : Shape{2, 4, 4};
    auto net = SequentialNet::with_random_params({kind}, rng);
    const Tensor64 x = random_tensor(in, rng);
    auto [y, cache] = layer_forward(kind, net.layer_params(0, net.params), x);
    const Tensor64 up = random_tensor(y.shape(), rng);
    const double c = std::uniform_real_distribution<double>(-3, 3)(rng);
    Tensor64 scaled = up;
    scaled *= c;
    auto [dx1, g1] = layer_backward(kind, net.layer_params(0, net.params), cache, up);
    auto [dx2, g2] = layer_backward(kind, net.layer_params(0, net.params), cache, scaled);
    for (std::size_t i = 0; i < dx1.size(); ++i) {
      EXPECT_NEAR(dx2[i], c * dx1[i], 1e-9 * std::max(1.0, std::abs(c * dx1[i]))) << layer_kind(kind);
    }
    for (std::size_t i = 0; i < g1.weight.size(); ++i) {
      EXPECT_NEAR(g2.weight[i], c * g1.weight[i], 1e-9 * std::max(1.0, std::abs(c * g1.weight[i])));
    }
  }
}

TEST(BackwardProperties, ForwardIsDeterministic) {
  Rng rng(21);
  auto net = SequentialNet::with_random_params({Conv2d{1, 2, 2, 2, 1}, Relu{}, FullyConnected{8, 2}}, rng);
  const Tensor64 x = random_tensor({1, 3, 3}, rng);
  const LossHead head = linear_loss_head(2, rng);
  EXPECT_EQ(sequential_loss(net, net.params, x, head), sequential_loss(net, net.params, x, head));
  auto g1 = sequential_gradients(net, x, head);
  auto g2 = sequential_gradients(net, x, head);
  EXPECT_EQ(g1, g2);
}
