#include <gtest/gtest.h>

#include <numbers>

#include "fields.hpp"
#include "gradcheck.hpp"
#include "revmap/adam.hpp"
#include "revmap/layers.hpp"
#include "revmap/spectral.hpp"

using namespace revmap;
using revmap::testing::relative_error;

TEST(DenseForward, IdentityWeight) {
  DenseLayer l{{"w", Mat::Identity(2, 2)}, Parameter{"b", Mat::Zero(2, 1)}};
  EXPECT_EQ(dense_forward(l, Vec::LinSpaced(2, 1, 2)), Vec::LinSpaced(2, 1, 2));
}

TEST(DenseForward, DiagonalWeight) {
  Mat w(2, 2);
  w << 2, 0, 0, 3;
  DenseLayer l{{"w", w}, std::nullopt};
  const Vec out = dense_forward(l, Vec::Ones(2));
  EXPECT_EQ(out(0), 2.0);
  EXPECT_EQ(out(1), 3.0);
}

TEST(DenseForward, ShapeMismatch) {
  DenseLayer l{{"w", Mat::Zero(2, 3)}, std::nullopt};
  EXPECT_THROW(dense_forward(l, Vec::Ones(2)), ShapeError);
}

TEST(TensorContract, UnitContraction) {
  TensorLayer l{{"H", Mat::Ones(1, 1)}, std::nullopt, 1, 1, 1};
  EXPECT_EQ(tensor_contract(l, Vec::Ones(1))(0, 0), 1.0);
}

TEST(TensorContract, HandContractionWithAndWithoutBias) {
  Mat h(1, 2);
  h << 2, 3;  // H[0,0,0] = 2, H[0,1,0] = 3
  TensorLayer l{{"H", h}, std::nullopt, 1, 2, 1};
  EXPECT_EQ(tensor_contract(l, Vec::Ones(2))(0, 0), 5.0);
  l.matrix_bias = Parameter{"B", Mat::Ones(1, 1)};
  EXPECT_EQ(tensor_contract(l, Vec::Ones(2))(0, 0), 6.0);
}

TEST(TensorContract, MatchesTapeForward) {
  Rng rng(3);
  TensorLayer l = make_tensor("t", 3, 4, 2, true, rng);
  Vec phi = Vec::Random(4), u = Vec::Random(2);
  ad::Tape t;
  const Mat y = t.value(ad::tensor(t, l, t.constant(row_of(phi)), t.constant(row_of(u))));
  EXPECT_LT((y.transpose() - tensor_contract(l, phi) * u).norm(), 1e-14);
}

TEST(Activation, Values) {
  EXPECT_EQ(activate(Activation::tanh, 0.0), 0.0);
  EXPECT_EQ(activate(Activation::tanh, -0.7), -activate(Activation::tanh, 0.7));
  EXPECT_NEAR(activate(Activation::sin, std::numbers::pi / 2), 1.0, 1e-15);
  EXPECT_EQ(activate(Activation::identity, 0.3), 0.3);
  EXPECT_THROW(parse_activation("relu"), ConfigError);
}

TEST(Backward, LinearMapRowGradient) {
  Rng rng(1);
  DenseLayer l = make_dense("w", 3, 2, false, rng);
  const Vec x = Vec::Random(3);
  for (int i = 0; i < 2; ++i) {
    ad::Tape t;
    ad::Var y = ad::dense(t, l, t.constant(row_of(x)));
    t.backward(y, row_of(Vec::Unit(2, i)));
    Mat expected = Mat::Zero(2, 3);
    expected.row(i) = x.transpose();
    EXPECT_EQ(t.grad(l.weight), expected);
  }
}

TEST(Backward, ConstantOutputHasZeroGradients) {
  Rng rng(1);
  DenseLayer l = make_dense("w", 3, 2, true, rng);
  ad::Tape t;
  ad::Var y = ad::dense(t, l, t.constant(Mat::Zero(1, 3)));
  ad::Var c = ad::scale(t, y, 0.0);
  t.backward(c, Mat::Ones(1, 2));
  EXPECT_EQ(t.grad(l.weight).norm(), 0.0);
  EXPECT_EQ(t.grad(*l.bias).norm(), 0.0);
}

TEST(Backward, TwiceIsUsageError) {
  ad::Tape t;
  ad::Var x = t.input(Mat::Ones(1, 1));
  ad::Var y = ad::sum_squares(t, x);
  t.backward(y);
  EXPECT_THROW(t.backward(y), UsageError);
}

TEST(Backward, SharedParameterAccumulates) {
  Parameter w{"w", Mat::Constant(1, 1, 3.0)};
  ad::Tape t;
  ad::Var a = t.param(w);
  ad::Var b = t.param(w);
  ad::Var y = ad::sum_squares(t, ad::add(t, a, b));  // (2w)^2
  t.backward(y);
  EXPECT_DOUBLE_EQ(t.grad(w)(0, 0), 8.0 * 3.0);
}

// Each primitive against central differences on random inputs.
TEST(Backward, PrimitivesMatchFiniteDifferences) {
  Rng rng(11);
  std::normal_distribution<double> nd;
  auto rnd = [&](Eigen::Index r, Eigen::Index c) {
    Mat m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = nd(rng);
    return m;
  };
  using Build = std::function<ad::Var(ad::Tape&, ad::Var, ad::Var)>;
  struct Case {
    const char* name;
    Mat a, b;
    Build op;
  };
  const Mat w = rnd(4, 3);
  std::vector<Case> cases{
      {"linear", rnd(2, 3), rnd(4, 3), [](ad::Tape& t, ad::Var x, ad::Var y) { return ad::linear(t, x, y); }},
      {"add_bias", rnd(3, 4), rnd(4, 1), [](ad::Tape& t, ad::Var x, ad::Var y) { return ad::add_bias(t, x, y); }},
      {"tanh", rnd(2, 3), rnd(1, 1), [](ad::Tape& t, ad::Var x, ad::Var) { return ad::activation(t, Activation::tanh, x); }},
      {"sin", rnd(2, 3), rnd(1, 1), [](ad::Tape& t, ad::Var x, ad::Var) { return ad::activation(t, Activation::sin, x); }},
      {"identity", rnd(2, 3), rnd(1, 1),
       [](ad::Tape& t, ad::Var x, ad::Var) { return ad::activation(t, Activation::identity, x); }},
      {"concat", rnd(2, 3), rnd(2, 2), [](ad::Tape& t, ad::Var x, ad::Var y) { return ad::concat(t, x, y); }},
      {"outer_flat", rnd(3, 4), rnd(3, 2), [](ad::Tape& t, ad::Var x, ad::Var y) { return ad::outer_flat(t, x, y); }},
      {"batched_matvec", rnd(3, 6), rnd(3, 2),
       [](ad::Tape& t, ad::Var x, ad::Var y) { return ad::batched_matvec(t, x, y, 3, 2); }},
      {"add", rnd(2, 3), rnd(2, 3), [](ad::Tape& t, ad::Var x, ad::Var y) { return ad::add(t, x, y); }},
      {"sub", rnd(2, 3), rnd(2, 3), [](ad::Tape& t, ad::Var x, ad::Var y) { return ad::sub(t, x, y); }},
      {"neg", rnd(2, 3), rnd(1, 1), [](ad::Tape& t, ad::Var x, ad::Var) { return ad::neg(t, x); }},
      {"scale", rnd(2, 3), rnd(1, 1), [](ad::Tape& t, ad::Var x, ad::Var) { return ad::scale(t, x, -1.7); }},
      {"sum_squares", rnd(2, 3), rnd(1, 1), [](ad::Tape& t, ad::Var x, ad::Var) { return ad::sum_squares(t, x); }},
  };
  const double h = 1e-6;
  for (auto& c : cases) {
    Mat seed;
    {
      ad::Tape t;
      seed = rnd(t.value(c.op(t, t.constant(c.a), t.constant(c.b))).rows(),
                 t.value(c.op(t, t.constant(c.a), t.constant(c.b))).cols());
    }
    auto scalar = [&](const Mat& a, const Mat& b) {
      ad::Tape t;
      return t.value(c.op(t, t.constant(a), t.constant(b))).cwiseProduct(seed).sum();
    };
    ad::Tape t;
    ad::Var a = t.input(c.a), b = t.input(c.b);
    t.backward(c.op(t, a, b), seed);
    for (int which = 0; which < 2; ++which) {
      Mat base = which == 0 ? c.a : c.b;
      Mat fd(base.rows(), base.cols());
      for (Eigen::Index i = 0; i < base.size(); ++i) {
        Mat p = base, m = base;
        p(i) += h;
        m(i) -= h;
        fd(i) = which == 0 ? (scalar(p, c.b) - scalar(m, c.b)) / (2 * h) : (scalar(c.a, p) - scalar(c.a, m)) / (2 * h);
      }
      EXPECT_LT(relative_error(t.grad(which == 0 ? a : b), fd, 1e-4), 1e-6) << c.name << " operand " << which;
    }
  }
}

TEST(Backward, RandomModelsMatchFiniteDifferences) {
  for (std::uint64_t s = 0; s < 40; ++s) {
    const auto r = revmap::testing::check_gradients(1000 + s);
    EXPECT_LE(r.worst, 1e-6) << r.config << " at " << r.where;
  }
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Parameter p{"p", Mat::Constant(2, 2, 0.5)};
  AdamState s;
  std::vector<Parameter*> ps{&p};
  std::vector<Mat> gs{Mat::Zero(2, 2)};
  adam_step(ps, gs, s);
  EXPECT_EQ(p.value, Mat::Constant(2, 2, 0.5));
  EXPECT_EQ(s.step, 1);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Parameter p{"p", Mat::Constant(1, 1, 1.0)};
  AdamState s(AdamConfig{0.001});
  std::vector<Parameter*> ps{&p};
  std::vector<Mat> gs{Mat::Ones(1, 1)};
  adam_step(ps, gs, s);
  // m_hat = 1, v_hat = 1: step = lr / (1 + eps)
  EXPECT_NEAR(1.0 - p.value(0, 0), 0.001 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, NonfiniteGradientIsTrainingError) {
  Parameter p{"p", Mat::Constant(1, 1, 1.0)};
  AdamState s;
  std::vector<Parameter*> ps{&p};
  std::vector<Mat> gs{Mat::Constant(1, 1, std::nan(""))};
  EXPECT_THROW(adam_step(ps, gs, s), TrainingError);
  EXPECT_EQ(p.value(0, 0), 1.0);
}

TEST(SpectralNorm, Examples) {
  EXPECT_NEAR(spectral_norm(Mat::Identity(3, 3)), 1.0, 1e-12);
  Mat d = Mat::Zero(2, 2);
  d(0, 0) = 3;
  d(1, 1) = 1;
  EXPECT_NEAR(spectral_norm(d), 3.0, 1e-8 * 3.0);
  EXPECT_EQ(spectral_norm(Mat::Zero(3, 2)), 0.0);
  EXPECT_THROW(spectral_norm(d, 1), ConfigError);
}

TEST(SpectralNorm, MatchesSvdOracle) {
  Rng rng(5);
  std::normal_distribution<double> nd;
  for (int k = 0; k < 50; ++k) {
    Mat m(8, 5);
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = nd(rng);
    const double oracle = Eigen::BDCSVD<Mat>(m).singularValues()(0);
    EXPECT_NEAR(spectral_norm(m), oracle, 1e-6 * oracle);
  }
}

TEST(SpectralNorm, ReportsConvergence) {
  Mat d = Mat::Zero(3, 3);
  d(0, 0) = 2.0;
  d(1, 1) = 2.0 * (1.0 - 1e-9);
  d(2, 2) = 1.0;
  bool converged = true;
  spectral_norm(d, nullptr, {1, 3, 1e-14}, &converged);
  EXPECT_FALSE(converged);
  spectral_norm(Mat::Identity(2, 2), nullptr, {}, &converged);
  EXPECT_TRUE(converged);
  EXPECT_NEAR(spectral_norm_exact(d), 2.0, 1e-15);
  EXPECT_EQ(spectral_norm_exact(Mat::Zero(2, 3)), 0.0);
}

TEST(SpectralNorm, WarmStartConverges) {
  Mat m = Mat::Random(6, 4);
  Vec warm;
  const double a = spectral_norm(m, &warm);
  EXPECT_EQ(warm.size(), 4);
  EXPECT_NEAR(spectral_norm(m, &warm), a, 2e-8 * a);
}
