#include <gtest/gtest.h>

#include "fields.hpp"
#include "revmap/action_maps.hpp"

using namespace revmap;
using revmap::testing::relative_error;

namespace {

Architecture small(DecoderFamily f, bool strict_odd = true) {
  Architecture a;
  a.family = f;
  a.state_dim = 4;
  a.action_dim = 2;
  a.encoder_hidden = {8};
  a.decoder_hidden = {8, 8};
  a.feature_width = 6;
  a.tensor_hidden = {5, 5};
  a.strict_odd = strict_odd;
  return a;
}

Vec rnd(Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> nd;
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = nd(rng);
  return v;
}

template <class Fn>
Mat fd_jacobian(Fn&& fn, const Vec& at, Eigen::Index rows, double h = 1e-6) {
  Mat j(rows, at.size());
  for (Eigen::Index i = 0; i < at.size(); ++i) {
    Vec p = at, m = at;
    p(i) += h;
    m(i) -= h;
    j.col(i) = (fn(p) - fn(m)) / (2 * h);
  }
  return j;
}

void zero_all(Model& m) {
  for (Parameter* p : m.parameters()) p->value.setZero();
}

}  // namespace

TEST(Encode, ShapeAndZeroWeights) {
  Model m = Model::build("ae", small(DecoderFamily::ae), 1);
  Rng rng(2);
  EXPECT_EQ(encode(m.encoder, rnd(4, rng), rnd(4, rng)).size(), 2);
  zero_all(m);
  EXPECT_EQ(encode(m.encoder, rnd(4, rng), rnd(4, rng)), Vec::Zero(2));
  EXPECT_THROW(encode(m.encoder, rnd(3, rng), rnd(4, rng)), ShapeError);
}

TEST(Encode, GradientMatchesFiniteDifferences) {
  Model m = Model::build("ae", small(DecoderFamily::ae), 3);
  Rng rng(4);
  const Vec x = rnd(4, rng), xd = rnd(4, rng);
  ad::Tape t;
  ad::Var xv = t.input(row_of(x)), xdv = t.input(row_of(xd));
  const Vec u = rnd(2, rng);
  t.backward(ad::encode(t, m.encoder, xv, xdv), row_of(u));
  const Mat jx = fd_jacobian([&](const Vec& p) { return encode(m.encoder, p, xd); }, x, 2);
  const Mat jxd = fd_jacobian([&](const Vec& p) { return encode(m.encoder, x, p); }, xd, 2);
  EXPECT_LT(relative_error(t.grad(xv).transpose(), jx.transpose() * u), 1e-6);
  EXPECT_LT(relative_error(t.grad(xdv).transpose(), jxd.transpose() * u), 1e-6);
}

TEST(DecodeAe, UntrainedIsNotOdd) {
  Model m = Model::build("ae", small(DecoderFamily::ae), 5);
  const auto& dec = std::get<AeDecoder>(m.decoder);
  Rng rng(6);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const Vec x = rnd(4, rng), a = rnd(2, rng);
    worst = std::max(worst, (decode_ae(dec, x, -a) + decode_ae(dec, x, a)).norm());
  }
  EXPECT_GT(worst, 1e-3);
}

TEST(DecodeAe, GradientMatchesFiniteDifferences) {
  Model m = Model::build("ae", small(DecoderFamily::ae), 7);
  const DecoderField f(m.decoder);
  Rng rng(8);
  const Vec x = rnd(4, rng), a = rnd(2, rng), u = rnd(4, rng);
  const FieldGrad g = f.vjp(x, a, u);
  EXPECT_LT(relative_error(g.state, fd_jacobian([&](const Vec& p) { return f(p, a); }, x, 4).transpose() * u), 1e-6);
  EXPECT_LT(relative_error(g.action, fd_jacobian([&](const Vec& p) { return f(x, p); }, a, 4).transpose() * u), 1e-6);
}

TEST(DecodeHyperlinear, HandProduct) {
  // One linear layer whose output ignores x: H(x) = [[1,0],[0,2],[0,0]].
  HyperLinearDecoder dec;
  dec.state_dim = 3;
  dec.action_dim = 2;
  Rng rng(1);
  dec.net = Mlp::make("h", {3, 6}, Activation::identity, true, false, rng);
  dec.net.layers[0].weight.value.setZero();
  dec.net.layers[0].bias->value << 1, 0, 0, 2, 0, 0;
  const Vec out = decode_hyperlinear(dec, Vec::Random(3), Vec::Ones(2), false);
  EXPECT_EQ(out, (Vec(3) << 1, 2, 0).finished());
}

TEST(DecodeHyperlinear, ZeroActionAndOrthonormalDeploy) {
  Model m = Model::build("scl", small(DecoderFamily::hyperlinear), 9);
  const auto& dec = std::get<HyperLinearDecoder>(m.decoder);
  Rng rng(10);
  for (int i = 0; i < 20; ++i) {
    const Vec x = rnd(4, rng);
    EXPECT_EQ(decode_hyperlinear(dec, x, Vec::Zero(2), false), Vec::Zero(4));
    EXPECT_EQ(decode_hyperlinear(dec, x, Vec::Zero(2), true), Vec::Zero(4));
    const Mat q = gram_schmidt(hyper_matrix(dec, x));
    EXPECT_LT((q.transpose() * q - Mat::Identity(2, 2)).norm(), 1e-10);
  }
}

TEST(DecodeHyperlinear, DependentColumnsAreDegenerate) {
  Mat h(3, 2);
  h << 1, 2, 0, 0, 0, 0;
  EXPECT_THROW(gram_schmidt(h), DegeneracyError);
}

TEST(DecodeScn, ExactlyOdd) {
  Model m = Model::build("scn", small(DecoderFamily::scn), 11);
  const auto& dec = std::get<ScnDecoder>(m.decoder);
  Rng rng(12);
  for (int i = 0; i < 1000; ++i) {
    const Vec x = rnd(4, rng), a = rnd(2, rng);
    EXPECT_EQ(decode_scn(dec, x, Vec::Zero(2)), Vec::Zero(4));
    EXPECT_LE((decode_scn(dec, x, -a) + decode_scn(dec, x, a)).lpNorm<Eigen::Infinity>(), 1e-12);
  }
}

// B multiplies the action path like H does, so it changes the map but keeps it odd.
TEST(DecodeScn, MatrixBiasKeepsOddness) {
  Model with = Model::build("scn", small(DecoderFamily::scn, false), 11);
  Model without = Model::build("scn", small(DecoderFamily::scn, true), 11);
  const auto& dec = std::get<ScnDecoder>(with.decoder);
  ASSERT_TRUE(dec.layers.front().matrix_bias.has_value());
  Rng rng(13);
  for (int i = 0; i < 100; ++i) {
    const Vec x = rnd(4, rng), a = rnd(2, rng);
    EXPECT_LE((decode_scn(dec, x, -a) + decode_scn(dec, x, a)).lpNorm<Eigen::Infinity>(), 1e-12);
    EXPECT_EQ(decode_scn(dec, x, Vec::Zero(2)), Vec::Zero(4));
  }
  const Vec x = rnd(4, rng), a = rnd(2, rng);
  EXPECT_GT((decode_scn(dec, x, a) - decode_scn(std::get<ScnDecoder>(without.decoder), x, a)).norm(), 1e-6);
}

TEST(DecodeScn, SingleLayerHandContraction) {
  ScnDecoder dec;
  dec.state_dim = 1;
  dec.action_dim = 1;
  dec.act = Activation::identity;
  Rng rng(1);
  // phi(x) = [1, 1] from a zero-weight layer with unit bias and identity activation.
  dec.features = Mlp::make("phi", {1, 2}, Activation::identity, true, true, rng);
  dec.features.layers[0].weight.value.setZero();
  dec.features.layers[0].bias->value.setOnes();
  Mat h(1, 2);
  h << 2, 3;
  dec.layers.push_back(TensorLayer{{"H", h}, std::nullopt, 1, 2, 1});
  EXPECT_EQ(decode_scn(dec, Vec::Constant(1, 0.3), Vec::Ones(1))(0), 5.0);
}

TEST(JacobianAtZero, HyperlinearEqualsH) {
  Model m = Model::build("scl", small(DecoderFamily::hyperlinear), 14);
  const auto& dec = std::get<HyperLinearDecoder>(m.decoder);
  Rng rng(15);
  const Vec x = rnd(4, rng);
  EXPECT_LT((jacobian_at_zero(m.decoder, x) - hyper_matrix(dec, x)).norm(), 1e-14);
}

TEST(JacobianAtZero, MatchesFiniteDifferences) {
  for (auto fam : {DecoderFamily::ae, DecoderFamily::scn}) {
    Model m = Model::build("m", small(fam), 16);
    const DecoderField f(m.decoder);
    Rng rng(17);
    const Vec x = rnd(4, rng);
    const Mat fd = fd_jacobian([&](const Vec& a) { return f(x, a); }, Vec::Zero(2), 4);
    EXPECT_LT(relative_error(jacobian_at_zero(f, x), fd), 1e-5) << to_string(fam);
  }
}

TEST(JacobianAtZero, ZeroWeightScn) {
  Model m = Model::build("scn", small(DecoderFamily::scn), 18);
  zero_all(m);
  EXPECT_EQ(jacobian_at_zero(m.decoder, Vec::Ones(4)), Mat::Zero(4, 2));
}

TEST(LinearizationGap, AnchorsAndLinearity) {
  Model scl = Model::build("scl", small(DecoderFamily::hyperlinear), 19);
  Model scn = Model::build("scn", small(DecoderFamily::scn), 19);
  Rng rng(20);
  Mat states(5, 4);
  for (Eigen::Index r = 0; r < 5; ++r) states.row(r) = rnd(4, rng).transpose();
  const std::vector<double> ms{0.0, 0.5, 1.0, 2.0};
  for (const auto& rec : linearization_gap(DecoderField(scl.decoder), states, ms, {8, 1})) EXPECT_LT(rec.gap, 1e-28);
  const auto rows = linearization_gap(DecoderField(scn.decoder), states, ms, {8, 1});
  EXPECT_EQ(rows[0].gap, 0.0);
  EXPECT_GT(rows[3].gap, 0.0);
}

TEST(LinearizationGap, ExactlyZeroAtOriginForEveryFamily) {
  Rng rng(23);
  Mat states(40, 4);
  for (Eigen::Index r = 0; r < 40; ++r) states.row(r) = rnd(4, rng).transpose();
  for (const auto fam : {DecoderFamily::ae, DecoderFamily::hyperlinear, DecoderFamily::scn}) {
    Model m = Model::build(fam == DecoderFamily::ae ? "ae" : fam == DecoderFamily::scn ? "scn" : "scl", small(fam), 24);
    for (const bool deploy : {false, true})
      EXPECT_EQ(linearization_gap(DecoderField(m.decoder, deploy), states, {0.0, 1.0}, {16, 5})[0].gap, 0.0);
  }
}

TEST(LinearizationGap, QuadraticRemainder) {
  const revmap::testing::QuadraticToy f;
  const Mat states = Mat::Random(3, 2);
  for (const auto& rec : linearization_gap(f, states, {0.0, 0.25, 0.5, 1.0, 2.0}, {16, 2}))
    EXPECT_NEAR(rec.gap, std::pow(rec.magnitude, 4), 1e-12 * std::max(1.0, std::pow(rec.magnitude, 4)));
}

TEST(LinearizationGap, RemainderScalingBounded) {
  Model m = Model::build("scn", small(DecoderFamily::scn), 21);
  Rng rng(22);
  Mat states(4, 4);
  for (Eigen::Index r = 0; r < 4; ++r) states.row(r) = rnd(4, rng).transpose();
  std::vector<double> ms;
  for (int i = 1; i <= 10; ++i) ms.push_back(0.05 * i);
  double lo = 1e300, hi = 0.0;
  for (const auto& rec : linearization_gap(DecoderField(m.decoder), states, ms, {8, 3})) {
    const double ratio = rec.gap / std::pow(rec.magnitude, 4);
    lo = std::min(lo, ratio);
    hi = std::max(hi, ratio);
  }
  EXPECT_TRUE(std::isfinite(hi));
  EXPECT_LT(hi / lo, 100.0);
}

TEST(LinearizationGap, Errors) {
  Model m = Model::build("scn", small(DecoderFamily::scn), 1);
  EXPECT_THROW(linearization_gap(DecoderField(m.decoder), Mat(0, 4), {0.0}), InputError);
  EXPECT_THROW(linearization_gap(DecoderField(m.decoder), Mat::Zero(1, 4), {1.0, 0.5}), InputError);
}

TEST(ClampAction, Examples) {
  const ActionSpace unit{2, 1.0, 10.0};
  const Vec inside = (Vec(2) << 0.3, -0.2).finished();
  EXPECT_EQ(clamp_action(unit, inside), inside);
  EXPECT_EQ(clamp_action(unit, (Vec(2) << 2, 0).finished()), (Vec(2) << 1, 0).finished());
  const Vec n = clamp_action(ActionSpace{2, 1.0, 1.0}, Vec::Ones(2));
  EXPECT_NEAR(n(0), 1 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(n(1), 1 / std::sqrt(2.0), 1e-15);
}

TEST(Architecture, ValidatesActionSpace) {
  Architecture a = small(DecoderFamily::scn);
  a.action_space.n = 3;
  EXPECT_THROW(Model::build("scn", a, 0), ConfigError);
  EXPECT_THROW(parse_family("mlp"), ConfigError);
}

TEST(Model, SeededBuildIsDeterministic) {
  Model a = Model::build("scn", small(DecoderFamily::scn), 42);
  Model b = Model::build("scn", small(DecoderFamily::scn), 42);
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value, pb[i]->value);
}
