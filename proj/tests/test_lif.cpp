#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace sgf;
using sgf::testing::random_tensor;

namespace {

using DTensor = BasicTensor<double>;

// Scalar step-by-step iteration of the neuron, kept independent of the
// tensor implementation.
struct ScalarTrace {
  std::vector<double> u, s, h;
};

ScalarTrace scalar_lif(const std::vector<double>& x, const LifParams& p) {
  ScalarTrace tr;
  double h = p.v_reset;
  for (double xt : x) {
    const double u = h + xt;
    const double s = u >= p.u_th ? 1.0 : 0.0;
    h = p.v_reset * s + p.beta * u * (1.0 - s);
    tr.u.push_back(u);
    tr.s.push_back(s);
    tr.h.push_back(h);
  }
  return tr;
}

double relaxed_objective(const DTensor& x, const DTensor& w, const LifParams& p) {
  LifOutput<double> out = lif_forward(x, p, SpikeMode::relaxed, false);
  double total = 0;
  for (std::size_t i = 0; i < x.size(); ++i) total += w[i] * out.relaxed[i];
  return total;
}

}  // namespace

TEST(Lif, SilentNeuronStaysSilent) {
  LifOutput<float> out = lif_forward(Tensor(Shape{3, 2, 4}), LifParams{});
  EXPECT_EQ(out.spikes.count_ones(), 0u);
  for (float v : out.membrane.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Lif, SuprathresholdSingleStepFires) {
  Tensor x(Shape{1, 3, 5}, 2.0f);
  LifOutput<float> out = lif_forward(x, LifParams{});
  EXPECT_EQ(out.spikes.count_ones(), 15u);
}

TEST(Lif, HandIteration) {
  LifParams p;
  Tensor x(Shape{3, 1, 1}, {0.6f, 0.6f, 0.6f});
  LifOutput<float> out = lif_forward(x, p);
  ScalarTrace tr = scalar_lif({0.6, 0.6, 0.6}, p);
  const double u[] = {0.6, 0.9, 1.05};
  const double s[] = {0, 0, 1};
  const double h[] = {0.3, 0.45, 0.0};
  for (std::size_t t = 0; t < 3; ++t) {
    EXPECT_NEAR(out.membrane[t], u[t], 1e-6);
    EXPECT_NEAR(tr.u[t], u[t], 1e-12);
    EXPECT_EQ(out.spikes.get(t, 0), s[t] == 1.0);
    EXPECT_EQ(tr.s[t], s[t]);
    EXPECT_NEAR(tr.h[t], h[t], 1e-12);
  }
}

TEST(Lif, MatchesScalarOracleOnRandomSequences) {
  Rng rng(31);
  LifParams p;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t t_steps = 1 + rng.below(5);
    BasicTensor<double> x = random_tensor(Shape{t_steps, 3, 4}, rng, -1.0, 2.0).cast<double>();
    LifOutput<double> out = lif_forward(x, p);
    for (std::size_t i = 0; i < 12; ++i) {
      std::vector<double> seq;
      for (std::size_t t = 0; t < t_steps; ++t) seq.push_back(x[t * 12 + i]);
      ScalarTrace tr = scalar_lif(seq, p);
      for (std::size_t t = 0; t < t_steps; ++t) {
        ASSERT_EQ(out.membrane[t * 12 + i], tr.u[t]);
        ASSERT_EQ(out.spikes.get(t * 3 + i / 4, i % 4), tr.s[t] == 1.0);
      }
    }
  }
}

TEST(Lif, SaturatedInputAlwaysFires) {
  Rng rng(32);
  Tensor x = random_tensor(Shape{4, 5, 6}, rng, 1.0, 3.0);
  LifOutput<float> out = lif_forward(x, LifParams{});
  EXPECT_EQ(out.spikes.count_ones(), x.size());
  // H resets to 0 after every spike, so U equals the input each step.
  EXPECT_EQ(out.membrane, x);
}

TEST(Lif, SingleStepIsMonotone) {
  Rng rng(33);
  LifParams p;
  for (int trial = 0; trial < 200; ++trial) {
    Tensor x = random_tensor(Shape{1, 2, 3}, rng, -1.0, 2.0);
    LifOutput<float> before = lif_forward(x, p);
    const std::size_t i = rng.below(6);
    x[i] += static_cast<float>(rng.uniform(0.0, 1.0));
    LifOutput<float> after = lif_forward(x, p);
    if (before.spikes.get(i / 3, i % 3)) {
      EXPECT_TRUE(after.spikes.get(i / 3, i % 3));
    }
  }
}

TEST(Lif, StateDoesNotLeakAcrossCalls) {
  Tensor x(Shape{2, 1, 1}, {0.8f, 0.0f});
  LifOutput<float> a = lif_forward(x, LifParams{});
  LifOutput<float> b = lif_forward(x, LifParams{});
  EXPECT_EQ(a.membrane, b.membrane);
  EXPECT_EQ(a.spikes, b.spikes);
}

TEST(Lif, NonFiniteInputThrows) {
  Tensor x(Shape{1, 1, 1}, {std::nanf("")});
  EXPECT_THROW(lif_forward(x, LifParams{}), NumericError);
}

TEST(Lif, RejectsWrongRank) { EXPECT_THROW(lif_forward(Tensor(Shape{2, 2}), LifParams{}), DimensionError); }

TEST(Lif, ParamValidation) {
  LifParams p;
  p.beta = 1.0;
  EXPECT_THROW(p.validate(), ConfigError);
  p = {};
  p.v_reset = 1.0;
  EXPECT_THROW(p.validate(), ConfigError);
  p = {};
  p.surrogate_width = 0.0;
  EXPECT_THROW(p.validate(), ConfigError);
  EXPECT_NO_THROW(LifParams{}.validate());
}

TEST(LifBackward, ZeroGradientInZeroGradientOut) {
  Rng rng(34);
  Tensor x = random_tensor(Shape{3, 2, 2}, rng, 0.0, 2.0);
  LifOutput<float> out = lif_forward(x, LifParams{});
  Tensor g = lif_backward(Tensor(x.shape()), out.membrane, LifParams{});
  for (float v : g.values()) EXPECT_EQ(v, 0.0f);
}

TEST(LifBackward, DeadZoneBlocksGradient) {
  Tensor x(Shape{1, 1, 1}, {-5.0f});
  LifOutput<float> out = lif_forward(x, LifParams{});
  Tensor g = lif_backward(Tensor(Shape{1, 1, 1}, {1.0f}), out.membrane, LifParams{});
  EXPECT_EQ(g[0], 0.0f);
}

TEST(LifBackward, SurrogateWindowSingleStep) {
  LifParams p;
  Tensor x(Shape{1, 1, 1}, {0.8f});
  LifOutput<float> out = lif_forward(x, p);
  Tensor g = lif_backward(Tensor(Shape{1, 1, 1}, {2.0f}), out.membrane, p);
  EXPECT_FLOAT_EQ(g[0], 2.0f);  // 1/a inside the window
}

TEST(LifBackward, MatchesFiniteDifferencesOfRelaxedForward) {
  Rng rng(35);
  LifParams p;
  std::size_t checked = 0, good = 0;
  for (int trial = 0; trial < 200; ++trial) {
    DTensor x = random_tensor(Shape{2, 1, 1}, rng, -0.5, 2.0).cast<double>();
    DTensor w = random_tensor(Shape{2, 1, 1}, rng).cast<double>();
    LifOutput<double> out = lif_forward(x, p, SpikeMode::relaxed, true);
    // Skip samples sitting on a kink of the ramp.
    bool near_kink = false;
    for (double u : out.membrane.values())
      if (std::abs(std::abs(u - p.u_th) - 0.5 * p.surrogate_width) < 1e-4) near_kink = true;
    if (near_kink) continue;
    DTensor g = lif_backward(w, out.membrane, p, SpikeMode::relaxed);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double h = 1e-6;
      DTensor xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      const double fd = (relaxed_objective(xp, w, p) - relaxed_objective(xm, w, p)) / (2 * h);
      ++checked;
      if (std::abs(fd - g[i]) <= 1e-3 * std::max(1.0, std::abs(fd))) ++good;
    }
  }
  ASSERT_GT(checked, 300u);
  EXPECT_GE(static_cast<double>(good), 0.95 * static_cast<double>(checked));
}

TEST(LifBackward, ShapeMismatchThrows) {
  EXPECT_THROW(lif_backward(Tensor(Shape{1, 1, 2}), Tensor(Shape{1, 1, 1}), LifParams{}), DimensionError);
}

TEST(RepeatTime, SingleStepAddsLeadingAxis) {
  Tensor x(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor r = repeat_time(x, 1);
  EXPECT_EQ(r.shape(), (Shape{1, 2, 3}));
  EXPECT_EQ(r.reshaped(Shape{2, 3}), x);
}

TEST(RepeatTime, SlicesEqualInput) {
  Rng rng(36);
  Tensor x = random_tensor(Shape{4, 5}, rng);
  Tensor r = repeat_time(x, 3);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(r(t, i, c), x(i, c));
}

TEST(RepeatTime, ZeroStepsThrows) { EXPECT_THROW(repeat_time(Tensor(Shape{1, 2}), 0), DimensionError); }
