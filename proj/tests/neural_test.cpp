#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "physord/liegroup.hpp"
#include "physord/mlp.hpp"

using namespace physord;
using ad::Var;

namespace {

double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

std::vector<double> random_input(std::mt19937_64& rng, int n, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (double& x : v) x = u(rng);
  return v;
}

// Scalar objective sum_k c_k out_k with fixed weights c.
double weighted_sum(const std::vector<double>& out, const std::vector<double>& c) {
  double s = 0.0;
  for (std::size_t k = 0; k < out.size(); ++k) s += c[k] * out[k];
  return s;
}

nn::Mlp random_net(nn::MlpSpec spec, std::uint64_t seed) {
  nn::Mlp net(std::move(spec));
  std::mt19937_64 rng(seed);
  net.init(rng);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (std::size_t l = 0; l < net.layer_count(); ++l)
    for (double& b : net.bias(l)) b = u(rng);
  return net;
}

}  // namespace

TEST(Tape, ElementaryDerivatives) {
  ad::Tape tape;
  ad::TapeScope scope(tape);
  const Var x = tape.variable(0.7);
  const Var y = tape.variable(-1.3);
  const Var f = ad::sin(x) * y + ad::exp(x / y) - ad::tanh(x * x) + 3.0 * ad::sqrt(x);
  tape.backward(f);
  const double xv = 0.7, yv = -1.3;
  const double th = std::tanh(xv * xv);
  const double dfdx = std::cos(xv) * yv + std::exp(xv / yv) / yv - (1 - th * th) * 2 * xv + 1.5 / std::sqrt(xv);
  const double dfdy = std::sin(xv) - std::exp(xv / yv) * xv / (yv * yv);
  EXPECT_NEAR(tape.adjoint(x), dfdx, 1e-14);
  EXPECT_NEAR(tape.adjoint(y), dfdy, 1e-14);
}

TEST(Tape, SecondBackwardThrows) {
  ad::Tape tape;
  ad::TapeScope scope(tape);
  const Var x = tape.variable(2.0);
  const Var f = x * x;
  tape.backward(f);
  EXPECT_TRUE(tape.consumed());
  EXPECT_THROW(tape.backward(f), TapeConsumed);
}

TEST(Tape, ConstantsDoNotRecord) {
  ad::Tape tape;
  ad::TapeScope scope(tape);
  const Var c(3.0);
  const Var d = c * c + 1.0;
  EXPECT_FALSE(d.on_tape());
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Tape, LieGroupPrimitivesMatchFiniteDifferences) {
  std::mt19937_64 rng(21);
  const Mat3d target = lie::exp_so3(Vec3d{0.4, -0.2, 0.9});
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = random_input(rng, 3, 1.2);
    auto f = [&](const auto& phi) {
      using T = std::decay_t<decltype(phi[0])>;
      const Mat3<T> r = lie::exp_so3(Vec3<T>{phi[0], phi[1], phi[2]});
      return lie::squared_geodesic_angle(r, lift<T>(target)) + r(0, 1) * r(2, 2);
    };
    ad::Tape tape;
    ad::TapeScope scope(tape);
    std::array<Var, 3> v{tape.variable(p[0]), tape.variable(p[1]), tape.variable(p[2])};
    tape.backward(f(v));
    for (std::size_t i = 0; i < 3; ++i) {
      std::array<double, 3> a{p[0], p[1], p[2]};
      std::array<double, 3> b = a;
      a[i] += 1e-6;
      b[i] -= 1e-6;
      const double fd = (f(a) - f(b)) / 2e-6;
      EXPECT_LE(rel_err(tape.adjoint(v[i]), fd), 1e-5) << "coord " << i;
    }
  }
}

TEST(MlpSpec, ParameterCountsAndValidation) {
  const nn::MlpSpec force{{{13, 64}, {64, 64}, {64, 6}}, nn::Activation::tanh};
  EXPECT_EQ(force.param_count(), 5446u);
  const nn::MlpSpec pot{{{12, 10}, {10, 12}}, nn::Activation::tanh};
  EXPECT_EQ(pot.param_count(), 262u);
  EXPECT_EQ(force.param_count() + pot.param_count(), 5708u);
  EXPECT_THROW((nn::MlpSpec{{{3, 4}, {5, 2}}, nn::Activation::tanh}.validate()), DimMismatch);
  EXPECT_THROW((nn::MlpSpec{{}, nn::Activation::tanh}.validate()), DimMismatch);
  EXPECT_THROW(nn::Mlp(nn::MlpSpec{{{3, 4}, {5, 2}}, nn::Activation::relu}), DimMismatch);
}

TEST(Mlp, ZeroWeightsGiveZeros) {
  const nn::Mlp net(nn::MlpSpec{{{13, 64}, {64, 64}, {64, 6}}, nn::Activation::tanh});
  const std::vector<double> in(13, 0.7);
  for (double y : net.forward(in)) EXPECT_EQ(y, 0.0);
}

TEST(Mlp, IdentityLayerReturnsInput) {
  nn::Mlp net(nn::MlpSpec{{{4, 4}}, nn::Activation::tanh});
  for (std::size_t i = 0; i < 4; ++i) net.weights(0)[i * 4 + i] = 1.0;
  const std::vector<double> in{1.0, -2.0, 0.5, 3.0};
  EXPECT_EQ(net.forward(in), in);
  EXPECT_THROW(net.forward(std::vector<double>(3, 0.0)), DimMismatch);

  ad::Tape tape;
  ad::TapeScope scope(tape);
  std::vector<Var> x;
  for (double v : in) x.push_back(tape.variable(v));
  const auto y = net.forward(std::span<const Var>(x));
  std::vector<std::pair<Var, double>> seeds;
  for (std::size_t k = 0; k < 4; ++k) seeds.emplace_back(y[k], static_cast<double>(k + 1));
  tape.backward(seeds);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(tape.adjoint(x[k]), static_cast<double>(k + 1));
}

class MlpGradient : public ::testing::TestWithParam<nn::Activation> {};

TEST_P(MlpGradient, WeightsAndInputsMatchCentralDifferences) {
  nn::Mlp net = random_net(nn::MlpSpec{{{5, 7}, {7, 6}, {6, 3}}, GetParam()}, 22);
  std::mt19937_64 rng(23);
  const auto in = random_input(rng, 5);
  const auto c = random_input(rng, 3);

  ad::Tape tape;
  std::vector<Var> x;
  {
    ad::TapeScope scope(tape);
    for (double v : in) x.push_back(tape.variable(v));
    const auto y = net.forward(std::span<const Var>(x));
    Var s(0.0);
    for (std::size_t k = 0; k < y.size(); ++k) s = s + c[k] * y[k];
    EXPECT_NEAR(s.val, weighted_sum(net.forward(in), c), 1e-15);
    tape.backward(s);
  }
  const std::vector<double>& g = *tape.find_param_grad(&net);
  ASSERT_EQ(g.size(), net.param_count());
  const double h = 1e-6;
  for (std::size_t i = 0; i < net.param_count(); ++i) {
    const double keep = net.params()[i];
    net.params()[i] = keep + h;
    const double fp = weighted_sum(net.forward(in), c);
    net.params()[i] = keep - h;
    const double fm = weighted_sum(net.forward(in), c);
    net.params()[i] = keep;
    EXPECT_LE(rel_err(g[i], (fp - fm) / (2 * h), 1e-6), 1e-6) << "param " << i;
  }
  for (std::size_t i = 0; i < in.size(); ++i) {
    auto a = in;
    auto b = in;
    a[i] += h;
    b[i] -= h;
    const double fd = (weighted_sum(net.forward(a), c) - weighted_sum(net.forward(b), c)) / (2 * h);
    EXPECT_LE(rel_err(tape.adjoint(x[i]), fd, 1e-6), 1e-6) << "input " << i;
  }
}

INSTANTIATE_TEST_SUITE_P(Activations, MlpGradient, ::testing::Values(nn::Activation::tanh, nn::Activation::relu));

TEST(Mlp, InputNormalizationIsAppliedAndDifferentiated) {
  nn::Mlp net = random_net(nn::MlpSpec{{{3, 4}, {4, 2}}, nn::Activation::tanh}, 24);
  const std::vector<double> in{0.5, -1.0, 2.0};
  const auto raw = net.forward(in);
  net.set_input_norm({{1.0, 0.0, -1.0}, {0.5, 2.0, 1.0}});
  const auto normed = net.forward(in);
  net.set_input_norm({});
  const auto manual = net.forward(std::vector<double>{-0.25, -2.0, 3.0});
  EXPECT_EQ(normed, manual);
  EXPECT_NE(raw, normed);
  EXPECT_THROW(net.set_input_norm({{1.0}, {1.0}}), DimMismatch);
}

TEST(InputGradient, MatchesFiniteDifferences) {
  const nn::Mlp net = random_net(nn::MlpSpec{{{12, 10}, {10, 1}}, nn::Activation::tanh}, 25);
  std::mt19937_64 rng(26);
  const auto in = random_input(rng, 12);
  const auto g = nn::input_gradient<double>(net, std::span<const double>(in));
  for (std::size_t i = 0; i < in.size(); ++i) {
    auto a = in;
    auto b = in;
    a[i] += 1e-6;
    b[i] -= 1e-6;
    const double fd = (net.forward(a)[0] - net.forward(b)[0]) / 2e-6;
    EXPECT_LE(rel_err(g[i], fd, 1e-6), 1e-6) << i;
  }
}

TEST(InputGradient, SecondOrderThroughTape) {
  // d/dtheta of sum_i c_i dU/dq_i, checked against finite differences of the
  // double-precision input gradient.
  nn::Mlp net = random_net(nn::MlpSpec{{{4, 5}, {5, 1}}, nn::Activation::tanh}, 27);
  std::mt19937_64 rng(28);
  const auto in = random_input(rng, 4);
  const auto c = random_input(rng, 4);
  auto objective = [&]() {
    return weighted_sum(nn::input_gradient<double>(net, std::span<const double>(in)), c);
  };
  ad::Tape tape;
  {
    ad::TapeScope scope(tape);
    std::vector<Var> x(in.begin(), in.end());
    const auto g = nn::input_gradient<Var>(net, std::span<const Var>(x));
    Var s(0.0);
    for (std::size_t i = 0; i < g.size(); ++i) s = s + c[i] * g[i];
    EXPECT_NEAR(s.val, objective(), 1e-15);
    tape.backward(s);
  }
  const std::vector<double>& grad = *tape.find_param_grad(&net);
  for (std::size_t i = 0; i < net.param_count(); ++i) {
    const double keep = net.params()[i];
    net.params()[i] = keep + 1e-6;
    const double fp = objective();
    net.params()[i] = keep - 1e-6;
    const double fm = objective();
    net.params()[i] = keep;
    EXPECT_LE(rel_err(grad[i], (fp - fm) / 2e-6, 1e-6), 1e-6) << i;
  }
}

TEST(Adam, ZeroGradientLeavesParamsAndDecaysMoments) {
  std::vector<double> p{1.0, -2.0};
  nn::AdamState st(2);
  st.m = {0.5, -0.5};
  st.v = {0.25, 0.25};
  const std::vector<double> g{0.0, 0.0};
  nn::adam_step(p, g, st, {0.1, 0.9, 0.999, 1e-8});
  // m decays to 0.45; the step itself is nonzero only through old moments.
  EXPECT_DOUBLE_EQ(st.m[0], 0.45);
  EXPECT_DOUBLE_EQ(st.v[0], 0.25 * 0.999);
  std::vector<double> q{1.0, -2.0};
  nn::AdamState fresh(2);
  nn::adam_step(q, g, fresh, {});
  EXPECT_EQ(q[0], 1.0);
  EXPECT_EQ(q[1], -2.0);
  EXPECT_EQ(fresh.m[0], 0.0);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<double> p{1.0, 1.0};
  nn::AdamState st(2);
  const std::vector<double> g{0.3, -7.0};
  nn::adam_step(p, g, st, {1e-3, 0.9, 0.999, 1e-8});
  EXPECT_NEAR(p[0], 1.0 - 1e-3, 1e-10);
  EXPECT_NEAR(p[1], 1.0 + 1e-3, 1e-10);
  EXPECT_EQ(st.t, 1);
  EXPECT_THROW(nn::adam_step(p, std::vector<double>{1.0}, st, {}), DimMismatch);
}

TEST(Adam, ConvergesOnQuadratic) {
  std::vector<double> w{0.0};
  nn::AdamState st(1);
  for (int i = 0; i < 200; ++i) {
    const std::vector<double> g{2.0 * (w[0] - 3.0)};
    nn::adam_step(w, g, st, {0.1, 0.9, 0.999, 1e-8});
  }
  EXPECT_LT(std::abs(w[0] - 3.0), 0.05);
}

TEST(Mlp, ForwardIsDeterministic) {
  const nn::Mlp a = random_net(nn::MlpSpec{{{13, 64}, {64, 64}, {64, 6}}, nn::Activation::tanh}, 29);
  const nn::Mlp b = random_net(nn::MlpSpec{{{13, 64}, {64, 64}, {64, 6}}, nn::Activation::tanh}, 29);
  std::mt19937_64 rng(30);
  const auto in = random_input(rng, 13);
  EXPECT_EQ(a.forward(in), b.forward(in));
  EXPECT_TRUE(std::equal(a.params().begin(), a.params().end(), b.params().begin()));
}
